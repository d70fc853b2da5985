#include "oslolab/tape.hpp"

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

namespace oslolab {

namespace {

void check(bool ok, const std::string& msg) {
  if (!ok) throw std::invalid_argument(msg);
}

// out[R][M] += a[R][P] * b[P][M], accumulated in a fixed order so results are
// run-to-run identical. The 4x32 register tile is what makes conv fast here.
void gemm_acc(const double* __restrict a, const double* __restrict b,
              double* __restrict out, int64_t R, int64_t P, int64_t M) {
  constexpr int64_t RB = 4, MB = 32;
  for (int64_t r0 = 0; r0 < R; r0 += RB) {
    const int64_t rb = std::min(RB, R - r0);
    for (int64_t m0 = 0; m0 < M; m0 += MB) {
      const int64_t mb = std::min(MB, M - m0);
      if (rb == RB && mb == MB) {
        double acc[RB][MB] = {};
        for (int64_t p = 0; p < P; ++p) {
          const double* __restrict br = b + p * M + m0;
          for (int r = 0; r < RB; ++r) {
            const double av = a[(r0 + r) * P + p];
            for (int m = 0; m < MB; ++m) acc[r][m] += av * br[m];
          }
        }
        for (int r = 0; r < RB; ++r) {
          double* __restrict orow = out + (r0 + r) * M + m0;
          for (int m = 0; m < MB; ++m) orow[m] += acc[r][m];
        }
      } else {
        for (int64_t r = 0; r < rb; ++r) {
          double* __restrict orow = out + (r0 + r) * M + m0;
          for (int64_t p = 0; p < P; ++p) {
            const double av = a[(r0 + r) * P + p];
            const double* __restrict br = b + p * M + m0;
            for (int64_t m = 0; m < mb; ++m) orow[m] += av * br[m];
          }
        }
      }
    }
  }
}

// col[(ci*kh+ki)*kw+kj][oh*Wo+ow] = xpad[ci][oh+ki][ow+kj]
void im2col(const double* __restrict xpad, double* __restrict col, int64_t Ci,
            int64_t Hp, int64_t Wp, int64_t kh, int64_t kw, int64_t Ho, int64_t Wo) {
  int64_t p = 0;
  for (int64_t ci = 0; ci < Ci; ++ci)
    for (int64_t ki = 0; ki < kh; ++ki)
      for (int64_t kj = 0; kj < kw; ++kj, ++p) {
        double* __restrict dst = col + p * Ho * Wo;
        for (int64_t oh = 0; oh < Ho; ++oh)
          std::copy_n(xpad + (ci * Hp + oh + ki) * Wp + kj, Wo, dst + oh * Wo);
      }
}

void pack_padded(const double* __restrict src, double* __restrict xpad, int64_t Ci,
                 int64_t H, int64_t W, int64_t pad) {
  const int64_t Hp = H + 2 * pad, Wp = W + 2 * pad;
  if (pad) std::fill(xpad, xpad + Ci * Hp * Wp, 0.0);
  for (int64_t ci = 0; ci < Ci; ++ci)
    for (int64_t ih = 0; ih < H; ++ih)
      std::copy_n(src + (ci * H + ih) * W, W, xpad + (ci * Hp + ih + pad) * Wp + pad);
}

void transpose(const double* __restrict a, double* __restrict at, int64_t R, int64_t C) {
  constexpr int64_t BLK = 32;
  for (int64_t r0 = 0; r0 < R; r0 += BLK)
    for (int64_t c0 = 0; c0 < C; c0 += BLK) {
      const int64_t r1 = std::min(R, r0 + BLK), c1 = std::min(C, c0 + BLK);
      for (int64_t r = r0; r < r1; ++r)
        for (int64_t c = c0; c < c1; ++c) at[c * R + r] = a[r * C + c];
    }
}

}  // namespace

namespace kernels {

Tensor matmul_fwd(const Tensor& a, const Tensor& b) {
  check(a.rank() == 2 && b.rank() == 2,
        "matmul: need rank-2 operands, got " + a.shape_str() + " x " + b.shape_str());
  check(a.shape[1] == b.shape[0],
        "matmul: inner dims differ, " + a.shape_str() + " x " + b.shape_str());
  const int64_t m = a.shape[0], k = a.shape[1], n = b.shape[1];
  Tensor out = Tensor::zeros({m, n});
  for (int64_t i = 0; i < m; ++i) {
    const double* arow = &a.data[static_cast<size_t>(i * k)];
    double* orow = &out.data[static_cast<size_t>(i * n)];
    for (int64_t p = 0; p < k; ++p) {
      const double av = arow[p];
      if (av == 0.0) continue;
      const double* brow = &b.data[static_cast<size_t>(p * n)];
      for (int64_t j = 0; j < n; ++j) orow[j] += av * brow[j];
    }
  }
  return out;
}

Tensor conv2d_fwd(const Tensor& x, const Tensor& w, const Tensor& b, int pad) {
  check(x.rank() == 4, "conv2d: input must be [B,C,H,W], got " + x.shape_str());
  check(w.rank() == 4, "conv2d: weight must be [Co,Ci,kh,kw], got " + w.shape_str());
  check(x.shape[1] == w.shape[1], "conv2d: channel mismatch, input " + x.shape_str() +
                                      " vs weight " + w.shape_str());
  check(b.rank() == 1 && b.shape[0] == w.shape[0],
        "conv2d: bias must be [Co], got " + b.shape_str());
  check(pad >= 0, "conv2d: pad must be >= 0");
  const int64_t B = x.shape[0], Ci = x.shape[1], H = x.shape[2], W = x.shape[3];
  const int64_t Co = w.shape[0], kh = w.shape[2], kw = w.shape[3];
  const int64_t Ho = H + 2 * pad - kh + 1, Wo = W + 2 * pad - kw + 1;
  check(Ho > 0 && Wo > 0, "conv2d: kernel larger than padded input");
  Tensor y = Tensor::zeros({B, Co, Ho, Wo});
  // Lowered to a per-sample GEMM over an im2col buffer; short 3x3 taps don't
  // vectorize, long contiguous rows do.
  const int64_t Hp = H + 2 * pad, Wp = W + 2 * pad;
  const int64_t M = Ho * Wo, P = Ci * kh * kw;
  std::vector<double> xpad(static_cast<size_t>(Ci * Hp * Wp));
  std::vector<double> col(static_cast<size_t>(P * M));
  for (int64_t n = 0; n < B; ++n) {
    pack_padded(&x.data[static_cast<size_t>(n * Ci * H * W)], xpad.data(), Ci, H, W, pad);
    im2col(xpad.data(), col.data(), Ci, Hp, Wp, kh, kw, Ho, Wo);
    double* yc = &y.data[static_cast<size_t>(n * Co * M)];
    for (int64_t co = 0; co < Co; ++co)
      std::fill(yc + co * M, yc + (co + 1) * M, b.data[static_cast<size_t>(co)]);
    gemm_acc(w.data.data(), col.data(), yc, Co, P, M);
  }
  return y;
}

Tensor maxpool2_fwd(const Tensor& x, std::vector<int64_t>* argmax) {
  check(x.rank() == 4, "maxpool2: input must be [B,C,H,W], got " + x.shape_str());
  const int64_t B = x.shape[0], C = x.shape[1], H = x.shape[2], W = x.shape[3];
  const int64_t Ho = H / 2, Wo = W / 2;
  check(Ho > 0 && Wo > 0, "maxpool2: spatial dims too small in " + x.shape_str());
  Tensor y = Tensor::zeros({B, C, Ho, Wo});
  if (argmax) argmax->assign(static_cast<size_t>(y.numel()), 0);
  for (int64_t n = 0; n < B * C; ++n) {
    const double* xc = &x.data[static_cast<size_t>(n * H * W)];
    double* yc = &y.data[static_cast<size_t>(n * Ho * Wo)];
    for (int64_t oh = 0; oh < Ho; ++oh) {
      for (int64_t ow = 0; ow < Wo; ++ow) {
        int64_t best = (2 * oh) * W + 2 * ow;
        double bv = xc[best];
        const int64_t cand[3] = {(2 * oh) * W + 2 * ow + 1, (2 * oh + 1) * W + 2 * ow,
                                 (2 * oh + 1) * W + 2 * ow + 1};
        for (int64_t idx : cand) {
          if (xc[idx] > bv) {
            bv = xc[idx];
            best = idx;
          }
        }
        yc[oh * Wo + ow] = bv;
        if (argmax) (*argmax)[static_cast<size_t>(n * Ho * Wo + oh * Wo + ow)] = n * H * W + best;
      }
    }
  }
  return y;
}

Tensor softmax_fwd(const Tensor& z) {
  check(z.rank() >= 1, "softmax: need at least rank 1");
  const int64_t C = z.shape.back();
  const int64_t rows = z.numel() / C;
  Tensor out = Tensor::zeros(z.shape);
  for (int64_t r = 0; r < rows; ++r) {
    const double* zr = &z.data[static_cast<size_t>(r * C)];
    double* or_ = &out.data[static_cast<size_t>(r * C)];
    double m = zr[0];
    for (int64_t j = 1; j < C; ++j) m = std::max(m, zr[j]);
    double s = 0;
    for (int64_t j = 0; j < C; ++j) {
      or_[j] = std::exp(zr[j] - m);
      s += or_[j];
    }
    for (int64_t j = 0; j < C; ++j) or_[j] /= s;
  }
  return out;
}

}  // namespace kernels

const Tensor& Var::value() const {
  check(tape != nullptr && id >= 0, "Var: unbound handle");
  return tape->value(*this);
}

int Tape::push(Node n) {
  nodes_.push_back(std::move(n));
  return static_cast<int>(nodes_.size()) - 1;
}

const Tensor& Tape::value(Var v) const {
  check(v.tape == this, "Tape::value: handle belongs to another tape");
  check(v.id >= 0 && v.id < static_cast<int>(nodes_.size()), "Tape::value: bad id");
  return nodes_[static_cast<size_t>(v.id)].value;
}

Tensor Tape::grad(Var v) const {
  check(v.tape == this, "Tape::grad: handle belongs to another tape");
  check(v.id >= 0 && v.id < static_cast<int>(nodes_.size()), "Tape::grad: bad id");
  check(!grads_.empty(), "Tape::grad: call backward first");
  const Tensor& g = grads_[static_cast<size_t>(v.id)];
  if (g.numel() == 0) return Tensor::zeros(nodes_[static_cast<size_t>(v.id)].value.shape);
  return g;
}

Var Tape::leaf(Tensor v, bool needs_grad) {
  Node n;
  n.op = OpKind::kLeaf;
  n.value = std::move(v);
  n.needs_grad = needs_grad;
  return wrap(push(std::move(n)));
}

Var Tape::add(Var a, Var b) {
  const Tensor& av = value(a);
  const Tensor& bv = value(b);
  require_same_shape(av, bv, "add");
  Node n;
  n.op = OpKind::kAdd;
  n.a = a.id;
  n.b = b.id;
  n.needs_grad = needs(a.id) || needs(b.id);
  n.value = oslolab::add(av, bv);
  return wrap(push(std::move(n)));
}

Var Tape::bias_add(Var a, Var bias) {
  const Tensor& av = value(a);
  const Tensor& bv = value(bias);
  check(av.rank() == 2 && bv.rank() == 1 && av.shape[1] == bv.shape[0],
        "bias_add: need [B,C] + [C], got " + av.shape_str() + " + " + bv.shape_str());
  Node n;
  n.op = OpKind::kBiasAdd;
  n.a = a.id;
  n.b = bias.id;
  n.needs_grad = needs(a.id) || needs(bias.id);
  Tensor out = av;
  const int64_t B = av.shape[0], C = av.shape[1];
  for (int64_t i = 0; i < B; ++i)
    for (int64_t j = 0; j < C; ++j) out.data[static_cast<size_t>(i * C + j)] += bv.data[static_cast<size_t>(j)];
  n.value = std::move(out);
  return wrap(push(std::move(n)));
}

Var Tape::mul(Var a, Var b) {
  const Tensor& av = value(a);
  const Tensor& bv = value(b);
  require_same_shape(av, bv, "mul");
  Node n;
  n.op = OpKind::kMul;
  n.a = a.id;
  n.b = b.id;
  n.needs_grad = needs(a.id) || needs(b.id);
  n.value = oslolab::mul(av, bv);
  return wrap(push(std::move(n)));
}

Var Tape::scale(Var a, double c) {
  Node n;
  n.op = OpKind::kScale;
  n.a = a.id;
  n.lo = c;
  n.needs_grad = needs(a.id);
  n.value = oslolab::scale(value(a), c);
  return wrap(push(std::move(n)));
}

Var Tape::matmul(Var a, Var b) {
  Node n;
  n.op = OpKind::kMatmul;
  n.a = a.id;
  n.b = b.id;
  n.needs_grad = needs(a.id) || needs(b.id);
  n.value = kernels::matmul_fwd(value(a), value(b));
  return wrap(push(std::move(n)));
}

Var Tape::conv2d(Var x, Var w, Var b, int pad) {
  Node n;
  n.op = OpKind::kConv2d;
  n.a = x.id;
  n.b = w.id;
  n.c = b.id;
  n.lo = pad;
  n.needs_grad = needs(x.id) || needs(w.id) || needs(b.id);
  n.value = kernels::conv2d_fwd(value(x), value(w), value(b), pad);
  return wrap(push(std::move(n)));
}

Var Tape::relu(Var a) {
  Node n;
  n.op = OpKind::kRelu;
  n.a = a.id;
  n.needs_grad = needs(a.id);
  Tensor out = value(a);
  for (double& v : out.data) v = v > 0 ? v : 0.0;
  n.value = std::move(out);
  return wrap(push(std::move(n)));
}

Var Tape::maxpool2(Var a) {
  Node n;
  n.op = OpKind::kMaxPool2;
  n.a = a.id;
  n.needs_grad = needs(a.id);
  n.in_shape = value(a).shape;
  n.value = kernels::maxpool2_fwd(value(a), &n.iaux);
  return wrap(push(std::move(n)));
}

Var Tape::mean(Var a) {
  const Tensor& av = value(a);
  check(av.numel() > 0, "mean: empty tensor");
  Node n;
  n.op = OpKind::kMean;
  n.a = a.id;
  n.needs_grad = needs(a.id);
  double s = 0;
  for (double v : av.data) s += v;
  n.value = Tensor::scalar(s / static_cast<double>(av.numel()));
  n.in_shape = av.shape;
  return wrap(push(std::move(n)));
}

Var Tape::softmax(Var a) {
  Node n;
  n.op = OpKind::kSoftmax;
  n.a = a.id;
  n.needs_grad = needs(a.id);
  n.value = kernels::softmax_fwd(value(a));
  return wrap(push(std::move(n)));
}

Var Tape::cross_entropy_logits(Var logits, const std::vector<int64_t>& labels) {
  const Tensor& z = value(logits);
  check(z.rank() == 2, "cross_entropy: logits must be [B,C], got " + z.shape_str());
  const int64_t B = z.shape[0], C = z.shape[1];
  check(static_cast<int64_t>(labels.size()) == B,
        "cross_entropy: " + std::to_string(labels.size()) + " labels for batch " +
            std::to_string(B));
  for (int64_t y : labels)
    check(y >= 0 && y < C, "cross_entropy: label " + std::to_string(y) + " out of range [0," +
                               std::to_string(C) + ")");
  Node n;
  n.op = OpKind::kCrossEntropyLogits;
  n.a = logits.id;
  n.needs_grad = needs(logits.id);
  n.iaux = labels;
  n.in_shape = z.shape;
  double total = 0;
  for (int64_t i = 0; i < B; ++i) {
    const double* zr = &z.data[static_cast<size_t>(i * C)];
    double m = zr[0];
    for (int64_t j = 1; j < C; ++j) m = std::max(m, zr[j]);
    double s = 0;
    for (int64_t j = 0; j < C; ++j) s += std::exp(zr[j] - m);
    total += m + std::log(s) - zr[labels[static_cast<size_t>(i)]];
  }
  n.value = Tensor::scalar(total / static_cast<double>(B));
  return wrap(push(std::move(n)));
}

Var Tape::clamp(Var a, double lo, double hi) {
  check(lo <= hi, "clamp: lo > hi");
  Node n;
  n.op = OpKind::kClamp;
  n.a = a.id;
  n.lo = lo;
  n.hi = hi;
  n.needs_grad = needs(a.id);
  n.value = oslolab::clamp(value(a), lo, hi);
  return wrap(push(std::move(n)));
}

Var Tape::sign(Var a) {
  Node n;
  n.op = OpKind::kSign;
  n.a = a.id;
  n.needs_grad = needs(a.id);  // propagates zeros; keeps graph connected
  n.value = oslolab::sign(value(a));
  return wrap(push(std::move(n)));
}

Var Tape::l1_norm(Var a) {
  Node n;
  n.op = OpKind::kL1Norm;
  n.a = a.id;
  n.needs_grad = needs(a.id);
  n.value = Tensor::scalar(oslolab::l1_norm(value(a)));
  n.in_shape = value(a).shape;
  return wrap(push(std::move(n)));
}

Var Tape::reshape(Var a, std::vector<int64_t> shape) {
  const Tensor& av = value(a);
  int64_t count = 1;
  for (int64_t d : shape) count *= d;
  check(count == av.numel(), "reshape: cannot view " + av.shape_str() + " as requested shape");
  Node n;
  n.op = OpKind::kReshape;
  n.a = a.id;
  n.needs_grad = needs(a.id);
  n.in_shape = av.shape;
  n.value = Tensor(std::move(shape), av.data);
  return wrap(push(std::move(n)));
}

Var Tape::remap(Var a, std::vector<int64_t> idx, std::vector<int64_t> out_shape) {
  const Tensor& av = value(a);
  int64_t count = 1;
  for (int64_t d : out_shape) count *= d;
  check(static_cast<int64_t>(idx.size()) == count, "remap: index size != output numel");
  for (int64_t i : idx)
    check(i >= -1 && i < av.numel(), "remap: index " + std::to_string(i) + " out of range");
  Node n;
  n.op = OpKind::kRemap;
  n.a = a.id;
  n.needs_grad = needs(a.id);
  n.in_shape = av.shape;
  Tensor out = Tensor::zeros(out_shape);
  for (size_t i = 0; i < idx.size(); ++i)
    if (idx[i] >= 0) out.data[i] = av.data[static_cast<size_t>(idx[i])];
  n.iaux = std::move(idx);
  n.value = std::move(out);
  return wrap(push(std::move(n)));
}

void Tape::accumulate(int id, const Tensor& g) {
  if (!needs(id)) return;
  Tensor& slot = grads_[static_cast<size_t>(id)];
  if (slot.numel() == 0) {
    slot = g;
  } else {
    for (size_t i = 0; i < slot.data.size(); ++i) slot.data[i] += g.data[i];
  }
}

void Tape::backward(Var loss) {
  check(loss.tape == this, "backward: handle belongs to another tape");
  check(loss.id >= 0 && loss.id < static_cast<int>(nodes_.size()), "backward: bad id");
  check(value(loss).numel() == 1, "backward: loss must be scalar, got " +
                                      value(loss).shape_str());
  grads_.assign(nodes_.size(), Tensor());
  grads_[static_cast<size_t>(loss.id)] = Tensor(value(loss).shape, {1.0});
  for (int id = loss.id; id >= 0; --id) {
    if (grads_[static_cast<size_t>(id)].numel() == 0) continue;
    if (!nodes_[static_cast<size_t>(id)].needs_grad) continue;
    step_backward(id);
  }
}

void Tape::step_backward(int id) {
  const Node& n = nodes_[static_cast<size_t>(id)];
  const Tensor& g = grads_[static_cast<size_t>(id)];
  switch (n.op) {
    case OpKind::kLeaf:
      break;
    case OpKind::kAdd:
      accumulate(n.a, g);
      accumulate(n.b, g);
      break;
    case OpKind::kBiasAdd: {
      accumulate(n.a, g);
      if (needs(n.b)) {
        const int64_t B = n.value.shape[0], C = n.value.shape[1];
        Tensor gb = Tensor::zeros({C});
        for (int64_t i = 0; i < B; ++i)
          for (int64_t j = 0; j < C; ++j)
            gb.data[static_cast<size_t>(j)] += g.data[static_cast<size_t>(i * C + j)];
        accumulate(n.b, gb);
      }
      break;
    }
    case OpKind::kMul: {
      if (needs(n.a)) accumulate(n.a, oslolab::mul(g, nodes_[static_cast<size_t>(n.b)].value));
      if (needs(n.b)) accumulate(n.b, oslolab::mul(g, nodes_[static_cast<size_t>(n.a)].value));
      break;
    }
    case OpKind::kScale:
      accumulate(n.a, oslolab::scale(g, n.lo));
      break;
    case OpKind::kMatmul: {
      const Tensor& av = nodes_[static_cast<size_t>(n.a)].value;
      const Tensor& bv = nodes_[static_cast<size_t>(n.b)].value;
      const int64_t m = av.shape[0], k = av.shape[1], nn = bv.shape[1];
      if (needs(n.a)) {
        Tensor ga = Tensor::zeros(av.shape);  // g [m,n] x b^T [n,k]
        for (int64_t i = 0; i < m; ++i)
          for (int64_t j = 0; j < nn; ++j) {
            const double gv = g.data[static_cast<size_t>(i * nn + j)];
            if (gv == 0.0) continue;
            for (int64_t p = 0; p < k; ++p)
              ga.data[static_cast<size_t>(i * k + p)] += gv * bv.data[static_cast<size_t>(p * nn + j)];
          }
        accumulate(n.a, ga);
      }
      if (needs(n.b)) {
        Tensor gb = Tensor::zeros(bv.shape);  // a^T [k,m] x g [m,n]
        for (int64_t i = 0; i < m; ++i)
          for (int64_t p = 0; p < k; ++p) {
            const double av_ = av.data[static_cast<size_t>(i * k + p)];
            if (av_ == 0.0) continue;
            for (int64_t j = 0; j < nn; ++j)
              gb.data[static_cast<size_t>(p * nn + j)] += av_ * g.data[static_cast<size_t>(i * nn + j)];
          }
        accumulate(n.b, gb);
      }
      break;
    }
    case OpKind::kConv2d: {
      const Tensor& xv = nodes_[static_cast<size_t>(n.a)].value;
      const Tensor& wv = nodes_[static_cast<size_t>(n.b)].value;
      const int pad = static_cast<int>(n.lo);
      const int64_t B = xv.shape[0], Ci = xv.shape[1], H = xv.shape[2], W = xv.shape[3];
      const int64_t Co = wv.shape[0], kh = wv.shape[2], kw = wv.shape[3];
      const int64_t Ho = n.value.shape[2], Wo = n.value.shape[3];
      const int64_t Hp = H + 2 * pad, Wp = W + 2 * pad;
      const int64_t M = Ho * Wo, P = Ci * kh * kw;
      if (needs(n.a)) {
        Tensor gx = Tensor::zeros(xv.shape);
        // dcol[P][M] = W^T[P][Co] * g[Co][M], then col2im scatter-add.
        std::vector<double> wt(static_cast<size_t>(P * Co));
        transpose(wv.data.data(), wt.data(), Co, P);
        std::vector<double> dcol(static_cast<size_t>(P * M));
        std::vector<double> gxpad(static_cast<size_t>(Ci * Hp * Wp));
        for (int64_t nb = 0; nb < B; ++nb) {
          std::fill(dcol.begin(), dcol.end(), 0.0);
          gemm_acc(wt.data(), &g.data[static_cast<size_t>(nb * Co * M)], dcol.data(), P, Co, M);
          std::fill(gxpad.begin(), gxpad.end(), 0.0);
          int64_t p = 0;
          for (int64_t ci = 0; ci < Ci; ++ci)
            for (int64_t ki = 0; ki < kh; ++ki)
              for (int64_t kj = 0; kj < kw; ++kj, ++p)
                for (int64_t oh = 0; oh < Ho; ++oh) {
                  double* __restrict dst = &gxpad[static_cast<size_t>((ci * Hp + oh + ki) * Wp + kj)];
                  const double* __restrict src = &dcol[static_cast<size_t>(p * M + oh * Wo)];
                  for (int64_t t = 0; t < Wo; ++t) dst[t] += src[t];
                }
          for (int64_t ci = 0; ci < Ci; ++ci)
            for (int64_t ih = 0; ih < H; ++ih)
              std::copy_n(&gxpad[static_cast<size_t>((ci * Hp + ih + pad) * Wp + pad)], W,
                          &gx.data[static_cast<size_t>(((nb * Ci) + ci) * H * W + ih * W)]);
        }
        accumulate(n.a, gx);
      }
      if (needs(n.b)) {
        Tensor gw = Tensor::zeros(wv.shape);
        // dW[Co][P] += g[Co][M] * col^T[M][P], accumulated across the batch.
        std::vector<double> xpad(static_cast<size_t>(Ci * Hp * Wp));
        std::vector<double> col(static_cast<size_t>(P * M));
        std::vector<double> colt(static_cast<size_t>(M * P));
        for (int64_t nb = 0; nb < B; ++nb) {
          pack_padded(&xv.data[static_cast<size_t>(nb * Ci * H * W)], xpad.data(), Ci, H, W, pad);
          im2col(xpad.data(), col.data(), Ci, Hp, Wp, kh, kw, Ho, Wo);
          transpose(col.data(), colt.data(), P, M);
          gemm_acc(&g.data[static_cast<size_t>(nb * Co * M)], colt.data(), gw.data.data(), Co, M, P);
        }
        accumulate(n.b, gw);
      }
      if (needs(n.c)) {
        Tensor gb = Tensor::zeros({Co});
        for (int64_t nb = 0; nb < B; ++nb)
          for (int64_t co = 0; co < Co; ++co) {
            const double* gc = &g.data[static_cast<size_t>(((nb * Co) + co) * Ho * Wo)];
            double acc = 0;
            for (int64_t i = 0; i < Ho * Wo; ++i) acc += gc[i];
            gb.data[static_cast<size_t>(co)] += acc;
          }
        accumulate(n.c, gb);
      }
      break;
    }
    case OpKind::kRelu: {
      const Tensor& av = nodes_[static_cast<size_t>(n.a)].value;
      Tensor ga = Tensor::zeros(av.shape);
      for (size_t i = 0; i < av.data.size(); ++i)
        ga.data[i] = av.data[i] > 0 ? g.data[i] : 0.0;
      accumulate(n.a, ga);
      break;
    }
    case OpKind::kMaxPool2: {
      Tensor ga = Tensor::zeros(n.in_shape);
      for (size_t i = 0; i < n.iaux.size(); ++i)
        ga.data[static_cast<size_t>(n.iaux[i])] += g.data[i];
      accumulate(n.a, ga);
      break;
    }
    case OpKind::kMean: {
      Tensor ga = Tensor::zeros(n.in_shape);
      const double gv = g.data[0] / static_cast<double>(ga.numel());
      for (double& v : ga.data) v = gv;
      accumulate(n.a, ga);
      break;
    }
    case OpKind::kSoftmax: {
      // d softmax: s .* (g - <g,s> per row)
      const Tensor& s = n.value;
      const int64_t C = s.shape.back();
      const int64_t rows = s.numel() / C;
      Tensor ga = Tensor::zeros(s.shape);
      for (int64_t r = 0; r < rows; ++r) {
        const double* sr = &s.data[static_cast<size_t>(r * C)];
        const double* gr = &g.data[static_cast<size_t>(r * C)];
        double dot = 0;
        for (int64_t j = 0; j < C; ++j) dot += gr[j] * sr[j];
        double* ar = &ga.data[static_cast<size_t>(r * C)];
        for (int64_t j = 0; j < C; ++j) ar[j] = sr[j] * (gr[j] - dot);
      }
      accumulate(n.a, ga);
      break;
    }
    case OpKind::kCrossEntropyLogits: {
      const Tensor& z = nodes_[static_cast<size_t>(n.a)].value;
      const int64_t B = z.shape[0], C = z.shape[1];
      Tensor ga = kernels::softmax_fwd(z);
      const double gv = g.data[0] / static_cast<double>(B);
      for (int64_t i = 0; i < B; ++i) {
        double* row = &ga.data[static_cast<size_t>(i * C)];
        row[n.iaux[static_cast<size_t>(i)]] -= 1.0;
        for (int64_t j = 0; j < C; ++j) row[j] *= gv;
      }
      accumulate(n.a, ga);
      break;
    }
    case OpKind::kClamp: {
      const Tensor& av = nodes_[static_cast<size_t>(n.a)].value;
      Tensor ga = Tensor::zeros(av.shape);
      for (size_t i = 0; i < av.data.size(); ++i)
        ga.data[i] = (av.data[i] >= n.lo && av.data[i] <= n.hi) ? g.data[i] : 0.0;
      accumulate(n.a, ga);
      break;
    }
    case OpKind::kSign:
      accumulate(n.a, Tensor::zeros(nodes_[static_cast<size_t>(n.a)].value.shape));
      break;
    case OpKind::kL1Norm: {
      const Tensor& av = nodes_[static_cast<size_t>(n.a)].value;
      Tensor ga = oslolab::sign(av);
      for (double& v : ga.data) v *= g.data[0];
      accumulate(n.a, ga);
      break;
    }
    case OpKind::kReshape:
      accumulate(n.a, Tensor(n.in_shape, g.data));
      break;
    case OpKind::kRemap: {
      Tensor ga = Tensor::zeros(n.in_shape);
      for (size_t i = 0; i < n.iaux.size(); ++i)
        if (n.iaux[i] >= 0) ga.data[static_cast<size_t>(n.iaux[i])] += g.data[i];
      accumulate(n.a, ga);
      break;
    }
  }
}

Tensor finite_diff_grad(const std::function<double(const Tensor&)>& fn, const Tensor& x,
                        double step) {
  check(step > 0, "finite_diff_grad: step must be > 0");
  Tensor g = Tensor::zeros(x.shape);
  Tensor probe = x;
  for (size_t i = 0; i < x.data.size(); ++i) {
    const double orig = probe.data[i];
    probe.data[i] = orig + step;
    const double hi = fn(probe);
    probe.data[i] = orig - step;
    const double lo = fn(probe);
    probe.data[i] = orig;
    g.data[i] = (hi - lo) / (2 * step);
  }
  return g;
}

}  // namespace oslolab
