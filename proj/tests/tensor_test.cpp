#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <stdexcept>

#include "oslolab/tensor.hpp"

using namespace oslolab;

TEST_CASE("construction and shape") {
  Tensor t({2, 3});
  CHECK(t.numel() == 6);
  CHECK(t.rank() == 2);
  CHECK(t.dim(1) == 3);
  for (int64_t i = 0; i < 6; ++i) CHECK(t[i] == 0.0);

  Tensor f = Tensor::full({2, 2}, 1.5);
  CHECK(f.numel() == 4);
  CHECK(f[3] == 1.5);

  CHECK(Tensor::scalar(7.0).numel() == 1);
  CHECK_THROWS_AS(Tensor({2, 2}, {1.0, 2.0, 3.0}), std::invalid_argument);
}

TEST_CASE("shape_numel and same_shape") {
  CHECK(shape_numel({4, 5, 6}) == 120);
  CHECK(shape_numel({}) == 1);
  Tensor a({2, 3}), b({2, 3}), c({3, 2});
  CHECK(a.same_shape(b));
  CHECK_FALSE(a.same_shape(c));
  CHECK_THROWS_AS(require_same_shape(a, c, "op"), std::invalid_argument);
}

TEST_CASE("arithmetic") {
  Tensor a({3}, {1.0, -2.0, 3.0});
  Tensor b({3}, {0.5, 0.5, -1.0});
  CHECK(add(a, b)[0] == 1.5);
  CHECK(sub(a, b)[1] == -2.5);
  CHECK(mul(a, b)[2] == -3.0);
  CHECK(scale(a, 2.0)[2] == 6.0);

  Tensor y({3}, {0.0, 0.0, 0.0});
  axpy(2.0, a, y);
  CHECK(y[0] == 2.0);
  CHECK(y[1] == -4.0);

  Tensor s = sign(Tensor({3}, {-0.2, 0.0, 5.0}));
  CHECK(s[0] == -1.0);
  CHECK(s[1] == 0.0);  // sign(0) = 0
  CHECK(s[2] == 1.0);
}

TEST_CASE("clamp family") {
  Tensor a({4}, {-1.0, 0.3, 0.7, 2.0});
  Tensor c = clamp(a, 0.0, 1.0);
  CHECK(c[0] == 0.0);
  CHECK(c[1] == 0.3);
  CHECK(c[3] == 1.0);

  Tensor d = a;
  clamp_inplace(d, 0.0, 1.0);
  CHECK(d[0] == 0.0);
  CHECK(d[3] == 1.0);

  Tensor ref({4}, {0.0, 0.0, 0.0, 0.0});
  Tensor e = a;
  clamp_ball_inplace(e, ref, 0.5);
  CHECK(e[0] == -0.5);
  CHECK(e[1] == 0.3);
  CHECK(e[3] == 0.5);
}

TEST_CASE("norms and distances") {
  Tensor a({3}, {3.0, -4.0, 0.0});
  CHECK(l1_norm(a) == 7.0);
  CHECK(l2_norm(a) == doctest::Approx(5.0));
  CHECK(max_abs(a) == 4.0);
  Tensor b({3}, {0.0, 0.0, 0.0});
  CHECK(linf_dist(a, b) == 4.0);
}

TEST_CASE("all_finite") {
  Tensor a({2}, {1.0, 2.0});
  CHECK(a.all_finite());
  a[1] = std::nan("");
  CHECK_FALSE(a.all_finite());
  a[1] = std::numeric_limits<double>::infinity();
  CHECK_FALSE(a.all_finite());
}

TEST_CASE("format_double round-trips") {
  for (double v : {0.0, 1.0, -1.5, 1.0 / 3.0, 80.0 / 255.0, 1e-12, 123456.789}) {
    const std::string s = format_double(v);
    CHECK(std::stod(s) == v);
  }
  CHECK(format_double(0.5) == "0.5");
}
