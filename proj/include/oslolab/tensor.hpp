#ifndef OSLOLAB_TENSOR_HPP
#define OSLOLAB_TENSOR_HPP

#include <cstdint>
#include <string>
#include <vector>

namespace oslolab {

/// Dense row-major array of doubles. Shapes are small (desk-scale images
/// and weight blocks), so everything lives in one flat vector.
struct Tensor {
  std::vector<int64_t> shape;
  std::vector<double> data;

  Tensor() = default;
  Tensor(std::vector<int64_t> s, std::vector<double> d);
  explicit Tensor(std::vector<int64_t> s);  // zero-filled

  static Tensor zeros(std::vector<int64_t> s) { return Tensor(std::move(s)); }
  static Tensor full(std::vector<int64_t> s, double v);
  static Tensor scalar(double v) { return Tensor({1}, {v}); }

  int64_t numel() const { return static_cast<int64_t>(data.size()); }
  int64_t dim(int i) const { return shape[static_cast<size_t>(i)]; }
  int rank() const { return static_cast<int>(shape.size()); }
  bool same_shape(const Tensor& o) const { return shape == o.shape; }

  double& operator[](int64_t i) { return data[static_cast<size_t>(i)]; }
  double operator[](int64_t i) const { return data[static_cast<size_t>(i)]; }

  bool all_finite() const;
  std::string shape_str() const;
};

int64_t shape_numel(const std::vector<int64_t>& shape);
void require_same_shape(const Tensor& a, const Tensor& b, const char* op);

// Plain (non-recorded) tensor arithmetic used by optimizers and attack loops.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double c);
void axpy(double c, const Tensor& x, Tensor& y);  // y += c*x
Tensor sign(const Tensor& a);                     // sign(0) = 0
Tensor clamp(const Tensor& a, double lo, double hi);
void clamp_inplace(Tensor& a, double lo, double hi);
// elementwise clamp of a into [ref-r, ref+r]
void clamp_ball_inplace(Tensor& a, const Tensor& ref, double r);
double l1_norm(const Tensor& a);
double l2_norm(const Tensor& a);
double linf_dist(const Tensor& a, const Tensor& b);
double max_abs(const Tensor& a);

// Shortest decimal string that round-trips the value (used by CSV writers).
std::string format_double(double v);

}  // namespace oslolab

#endif  // OSLOLAB_TENSOR_HPP
