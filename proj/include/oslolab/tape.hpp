#ifndef OSLOLAB_TAPE_HPP
#define OSLOLAB_TAPE_HPP

#include <functional>
#include <vector>

#include "oslolab/tensor.hpp"

namespace oslolab {

class Tape;

/// Handle to a node recorded on a tape.
struct Var {
  Tape* tape = nullptr;
  int id = -1;
  const Tensor& value() const;
};

enum class OpKind {
  kLeaf,
  kAdd,
  kBiasAdd,
  kMul,
  kScale,
  kMatmul,
  kConv2d,
  kRelu,
  kMaxPool2,
  kMean,
  kSoftmax,
  kCrossEntropyLogits,
  kClamp,
  kSign,
  kL1Norm,
  kReshape,
  kRemap,
};

/// Reverse-mode gradient tape. Forward calls record nodes; backward walks
/// them once in reverse creation order (creation order is topological).
/// One tape per forward pass; tapes on different threads are independent.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// Leaf input. Gradients are accumulated for it unless needs_grad=false.
  Var leaf(Tensor v, bool needs_grad = true);
  /// Leaf that never receives a gradient (weights during attacks, masks).
  Var constant(Tensor v) { return leaf(std::move(v), false); }

  Var add(Var a, Var b);           // same shape
  Var bias_add(Var a, Var bias);   // [B,C] + [C], bias broadcast over rows
  Var mul(Var a, Var b);           // elementwise, same shape
  Var scale(Var a, double c);
  Var matmul(Var a, Var b);        // [m,k] x [k,n]
  /// 2-D convolution, stride 1, zero padding. x:[B,Ci,H,W] w:[Co,Ci,kh,kw]
  /// b:[Co]. Output [B,Co,H+2p-kh+1,W+2p-kw+1].
  Var conv2d(Var x, Var w, Var b, int pad);
  Var relu(Var a);                 // gradient at exactly 0 is 0
  Var maxpool2(Var a);             // 2x2 stride 2 on [B,C,H,W]; floor on odd dims
  Var mean(Var a);                 // full reduction to scalar
  Var softmax(Var a);              // along last dim
  /// Mean cross-entropy of logits [B,C] against integer labels; scalar out.
  Var cross_entropy_logits(Var logits, const std::vector<int64_t>& labels);
  Var clamp(Var a, double lo, double hi);  // gradient passes on [lo, hi]
  Var sign(Var a);                 // zero gradient everywhere
  Var l1_norm(Var a);              // sum |x| -> scalar
  Var reshape(Var a, std::vector<int64_t> shape);
  /// Linear gather: out[i] = idx[i] < 0 ? 0 : a[idx[i]]. Backward scatters.
  /// Carries resize/pad/translate transforms through the gradient.
  Var remap(Var a, std::vector<int64_t> idx, std::vector<int64_t> out_shape);

  /// Reverse pass from a scalar loss. Rejects non-scalar losses.
  void backward(Var loss);

  const Tensor& value(Var v) const;
  /// Accumulated gradient for v; zeros if v never influenced the loss.
  Tensor grad(Var v) const;

  size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    OpKind op;
    int a = -1, b = -1, c = -1;  // parents
    Tensor value;
    bool needs_grad = false;
    std::vector<int64_t> iaux;   // op-specific: argmax, labels, remap index
    double lo = 0, hi = 0;       // clamp bounds / scale factor
    std::vector<int64_t> in_shape;
  };

  int push(Node n);
  Var wrap(int id) { return Var{this, id}; }
  bool needs(int id) const { return id >= 0 && nodes_[static_cast<size_t>(id)].needs_grad; }
  void accumulate(int id, const Tensor& g);
  void step_backward(int id);

  std::vector<Node> nodes_;
  std::vector<Tensor> grads_;
};

/// Central finite differences: independent gradient oracle for any
/// tensor->scalar function. step must be > 0.
Tensor finite_diff_grad(const std::function<double(const Tensor&)>& fn, const Tensor& x,
                        double step);

namespace kernels {
// Raw forward kernels shared by the tape and the no-grad inference path.
Tensor conv2d_fwd(const Tensor& x, const Tensor& w, const Tensor& b, int pad);
Tensor matmul_fwd(const Tensor& a, const Tensor& b);
Tensor maxpool2_fwd(const Tensor& x, std::vector<int64_t>* argmax);
Tensor softmax_fwd(const Tensor& z);
}  // namespace kernels

}  // namespace oslolab

#endif  // OSLOLAB_TAPE_HPP
