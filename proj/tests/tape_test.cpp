#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <functional>
#include <stdexcept>
#include <vector>

#include "oslolab/rng.hpp"
#include "oslolab/tape.hpp"
#include "oslolab/tensor.hpp"

using namespace oslolab;

namespace {

Tensor randn(Rng& rng, std::vector<int64_t> shape, double s = 1.0) {
  Tensor t(std::move(shape));
  for (double& v : t.data) v = s * rng.normal();
  return t;
}

// Max relative error on coordinates with non-negligible analytic gradient.
double max_rel_err(const Tensor& got, const Tensor& want) {
  double worst = 0;
  for (size_t i = 0; i < got.data.size(); ++i) {
    const double denom = std::max(std::abs(want.data[i]), 1e-6);
    worst = std::max(worst, std::abs(got.data[i] - want.data[i]) / denom);
  }
  return worst;
}

// FD-checks d(loss)/d(x) for a scalar-valued tape program rebuilt per probe.
void check_grad(const std::function<Var(Tape&, Var)>& program, const Tensor& x0,
                double tol = 1e-6) {
  Tape t;
  Var x = t.leaf(x0);
  Var loss = program(t, x);
  REQUIRE(t.value(loss).numel() == 1);
  t.backward(loss);
  const Tensor g = t.grad(x);

  const Tensor fd = finite_diff_grad(
      [&](const Tensor& probe) {
        Tape tt;
        Var xx = tt.leaf(probe);
        return tt.value(program(tt, xx))[0];
      },
      x0, 1e-5);
  CHECK(max_rel_err(g, fd) < tol);
}

}  // namespace

TEST_CASE("frozen softmax and cross-entropy values") {
  Tape t;
  Var z = t.leaf(Tensor({2, 3}, {1.0, 2.0, 3.0, 0.5, -0.5, 0.0}));
  Var p = t.softmax(z);
  const Tensor& pv = t.value(p);
  // oracle: scipy.special.softmax row 0
  CHECK(pv[0] == doctest::Approx(0.09003057317038046).epsilon(1e-14));
  CHECK(pv[1] == doctest::Approx(0.24472847105479764).epsilon(1e-14));
  CHECK(pv[2] == doctest::Approx(0.6652409557748218).epsilon(1e-14));

  Var ce = t.cross_entropy_logits(z, {2, 0});
  // oracle: mean of -log softmax picks, computed with numpy
  CHECK(t.value(ce)[0] == doctest::Approx(0.5439378175430576).epsilon(1e-14));
}

TEST_CASE("one-hot confidence oracle") {
  Tensor z({1, 10});
  z[4] = 5.0;
  Tape t;
  const Tensor p = t.value(t.softmax(t.leaf(z)));
  CHECK(p[4] == doctest::Approx(0.9428256185740148).epsilon(1e-14));
}

TEST_CASE("matmul gradient") {
  Rng rng(1);
  const Tensor a0 = randn(rng, {3, 4});
  const Tensor b0 = randn(rng, {4, 5});
  check_grad([&](Tape& t, Var x) { return t.mean(t.matmul(x, t.constant(b0))); }, a0);
  check_grad([&](Tape& t, Var x) { return t.mean(t.matmul(t.constant(a0), x)); }, b0);
}

TEST_CASE("conv2d gradient, padded and unpadded") {
  Rng rng(2);
  for (int pad : {0, 1, 2}) {
    const Tensor x0 = randn(rng, {2, 3, 6, 6});
    const Tensor w0 = randn(rng, {4, 3, 3, 3}, 0.5);
    const Tensor b0 = randn(rng, {4});
    check_grad(
        [&](Tape& t, Var x) { return t.mean(t.conv2d(x, t.constant(w0), t.constant(b0), pad)); },
        x0);
    check_grad(
        [&](Tape& t, Var w) { return t.mean(t.conv2d(t.constant(x0), w, t.constant(b0), pad)); },
        w0);
    check_grad(
        [&](Tape& t, Var b) { return t.mean(t.conv2d(t.constant(x0), t.constant(w0), b, pad)); },
        b0);
  }
  // 5x5 kernel path
  const Tensor x5 = randn(rng, {1, 2, 8, 8});
  const Tensor w5 = randn(rng, {3, 2, 5, 5}, 0.3);
  const Tensor b5 = randn(rng, {3});
  check_grad(
      [&](Tape& t, Var x) { return t.mean(t.conv2d(x, t.constant(w5), t.constant(b5), 2)); }, x5);
  check_grad(
      [&](Tape& t, Var w) { return t.mean(t.conv2d(t.constant(x5), w, t.constant(b5), 2)); }, w5);
}

TEST_CASE("conv2d forward matches direct summation") {
  Rng rng(3);
  const Tensor x = randn(rng, {2, 3, 5, 7});
  const Tensor w = randn(rng, {4, 3, 3, 3});
  const Tensor b = randn(rng, {4});
  const int pad = 1;
  const Tensor y = kernels::conv2d_fwd(x, w, b, pad);
  const int64_t B = 2, Ci = 3, H = 5, W = 7, Co = 4, kh = 3, kw = 3;
  const int64_t Ho = H + 2 * pad - kh + 1, Wo = W + 2 * pad - kw + 1;
  REQUIRE(y.shape == std::vector<int64_t>({B, Co, Ho, Wo}));
  Rng pick(4);
  for (int probe = 0; probe < 40; ++probe) {
    const int64_t n = pick.uniform_int(0, B - 1), co = pick.uniform_int(0, Co - 1);
    const int64_t oh = pick.uniform_int(0, Ho - 1), ow = pick.uniform_int(0, Wo - 1);
    double acc = b[co];
    for (int64_t ci = 0; ci < Ci; ++ci)
      for (int64_t ki = 0; ki < kh; ++ki)
        for (int64_t kj = 0; kj < kw; ++kj) {
          const int64_t ih = oh + ki - pad, iw = ow + kj - pad;
          if (ih < 0 || ih >= H || iw < 0 || iw >= W) continue;
          acc += x[((n * Ci + ci) * H + ih) * W + iw] * w[((co * Ci + ci) * kh + ki) * kw + kj];
        }
    CHECK(y[((n * Co + co) * Ho + oh) * Wo + ow] == doctest::Approx(acc).epsilon(1e-12));
  }
}

TEST_CASE("relu, maxpool, mean, reshape gradients") {
  Rng rng(5);
  const Tensor x0 = randn(rng, {2, 3, 4, 4});
  check_grad([&](Tape& t, Var x) { return t.mean(t.relu(x)); }, x0);
  check_grad([&](Tape& t, Var x) { return t.mean(t.maxpool2(x)); }, x0);
  check_grad([&](Tape& t, Var x) { return t.mean(t.reshape(x, {2, 48})); }, x0);
  check_grad([&](Tape& t, Var x) { return t.mean(t.scale(x, -2.5)); }, x0);
}

TEST_CASE("maxpool forward picks block maxima") {
  Tensor x({1, 1, 2, 4}, {1.0, 2.0, 5.0, 4.0, 3.0, 0.0, -1.0, 6.0});
  std::vector<int64_t> argmax;
  const Tensor y = kernels::maxpool2_fwd(x, &argmax);
  REQUIRE(y.shape == std::vector<int64_t>({1, 1, 1, 2}));
  CHECK(y[0] == 3.0);
  CHECK(y[1] == 6.0);
  CHECK(argmax[0] == 4);
  CHECK(argmax[1] == 7);
}

TEST_CASE("bias_add, add, mul, clamp, l1 gradients") {
  Rng rng(6);
  const Tensor a0 = randn(rng, {4, 3});
  const Tensor b0 = randn(rng, {3});
  const Tensor c0 = randn(rng, {4, 3});
  check_grad([&](Tape& t, Var x) { return t.mean(t.bias_add(x, t.constant(b0))); }, a0);
  check_grad([&](Tape& t, Var b) { return t.mean(t.bias_add(t.constant(a0), b)); }, b0);
  check_grad([&](Tape& t, Var x) { return t.mean(t.add(x, t.constant(c0))); }, a0);
  check_grad([&](Tape& t, Var x) { return t.mean(t.mul(x, t.constant(c0))); }, a0);
  // keep probes clear of clamp kinks and the |x| kink at 0
  Tensor far = a0;
  for (double& v : far.data) v = (v < 0 ? -1.0 : 1.0) * (0.3 + std::abs(v));
  check_grad([&](Tape& t, Var x) { return t.mean(t.clamp(x, -20.0, 20.0)); }, far);
  check_grad([&](Tape& t, Var x) { return t.l1_norm(x); }, far);
}

TEST_CASE("softmax and cross-entropy gradients") {
  Rng rng(7);
  const Tensor z0 = randn(rng, {3, 5});
  check_grad([&](Tape& t, Var z) { return t.mean(t.softmax(z)); }, z0, 1e-5);
  check_grad([&](Tape& t, Var z) { return t.cross_entropy_logits(z, {1, 4, 0}); }, z0, 1e-5);
}

TEST_CASE("remap gathers and scatters") {
  Tensor x({4}, {10.0, 20.0, 30.0, 40.0});
  Tape t;
  Var v = t.leaf(x);
  Var r = t.remap(v, {3, -1, 0, 0}, {4});
  const Tensor& rv = t.value(r);
  CHECK(rv[0] == 40.0);
  CHECK(rv[1] == 0.0);  // -1 pads with zero
  CHECK(rv[2] == 10.0);
  CHECK(rv[3] == 10.0);
  t.backward(t.mean(r));
  const Tensor g = t.grad(v);
  CHECK(g[0] == doctest::Approx(0.5));   // gathered twice
  CHECK(g[1] == 0.0);
  CHECK(g[3] == doctest::Approx(0.25));
}

TEST_CASE("sign has zero gradient; clamp blocks outside range") {
  Tape t;
  Var x = t.leaf(Tensor({3}, {-2.0, 0.5, 3.0}));
  t.backward(t.mean(t.sign(x)));
  for (double v : t.grad(x).data) CHECK(v == 0.0);

  Tape t2;
  Var x2 = t2.leaf(Tensor({3}, {-2.0, 0.5, 3.0}));
  t2.backward(t2.mean(t2.clamp(x2, 0.0, 1.0)));
  const Tensor g2 = t2.grad(x2);
  CHECK(g2[0] == 0.0);
  CHECK(g2[1] == doctest::Approx(1.0 / 3.0));
  CHECK(g2[2] == 0.0);
}

TEST_CASE("backward demands a scalar and grads accumulate") {
  Tape t;
  Var x = t.leaf(Tensor({2, 2}, {1.0, 2.0, 3.0, 4.0}));
  CHECK_THROWS_AS(t.backward(x), std::invalid_argument);

  // x used twice: gradient contributions add
  Tape t2;
  Var v = t2.leaf(Tensor({2}, {1.0, 2.0}));
  Var s = t2.mean(t2.add(v, v));
  t2.backward(s);
  CHECK(t2.grad(v)[0] == doctest::Approx(1.0));
}

TEST_CASE("constants receive no gradient") {
  Tape t;
  Var x = t.leaf(Tensor({2}, {1.0, 2.0}));
  Var c = t.constant(Tensor({2}, {5.0, 5.0}));
  t.backward(t.mean(t.mul(x, c)));
  const Tensor gc = t.grad(c);
  for (double v : gc.data) CHECK(v == 0.0);
  CHECK(t.grad(x)[0] == doctest::Approx(2.5));
}

TEST_CASE("backward is run-to-run deterministic") {
  Rng rng(8);
  const Tensor x0 = randn(rng, {4, 2, 8, 8});
  const Tensor w0 = randn(rng, {8, 2, 3, 3}, 0.4);
  const Tensor b0 = randn(rng, {8});
  auto run = [&]() {
    Tape t;
    Var x = t.leaf(x0);
    Var y = t.conv2d(x, t.leaf(w0), t.leaf(b0), 1);
    Var loss = t.mean(t.relu(y));
    t.backward(loss);
    return t.grad(x);
  };
  const Tensor g1 = run(), g2 = run();
  CHECK(g1.data == g2.data);  // bit-identical
}

TEST_CASE("shape errors throw") {
  Tape t;
  Var a = t.leaf(Tensor({2, 3}));
  Var b = t.leaf(Tensor({3, 2}));
  CHECK_THROWS_AS(t.add(a, b), std::invalid_argument);
  CHECK_THROWS_AS(t.matmul(a, a), std::invalid_argument);
  Var x = t.leaf(Tensor({1, 2, 4, 4}));
  Var w = t.leaf(Tensor({3, 5, 3, 3}));  // Ci mismatch
  CHECK_THROWS_AS(t.conv2d(x, w, t.leaf(Tensor({3})), 1), std::invalid_argument);
  CHECK_THROWS_AS(t.reshape(a, {7}), std::invalid_argument);
}
