#include "oslolab/tensor.hpp"

#include <charconv>
#include <cmath>
#include <sstream>
#include <stdexcept>

namespace oslolab {

int64_t shape_numel(const std::vector<int64_t>& shape) {
  int64_t n = 1;
  for (int64_t d : shape) n *= d;
  return n;
}

Tensor::Tensor(std::vector<int64_t> s, std::vector<double> d)
    : shape(std::move(s)), data(std::move(d)) {
  if (shape_numel(shape) != static_cast<int64_t>(data.size()))
    throw std::invalid_argument("tensor: shape " + shape_str() + " does not match data length " +
                                std::to_string(data.size()));
}

Tensor::Tensor(std::vector<int64_t> s) : shape(std::move(s)) {
  data.assign(static_cast<size_t>(shape_numel(shape)), 0.0);
}

Tensor Tensor::full(std::vector<int64_t> s, double v) {
  Tensor t(std::move(s));
  for (auto& x : t.data) x = v;
  return t;
}

bool Tensor::all_finite() const {
  for (double v : data)
    if (!std::isfinite(v)) return false;
  return true;
}

std::string Tensor::shape_str() const {
  std::ostringstream os;
  os << "[";
  for (size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << "]";
  return os.str();
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (!a.same_shape(b))
    throw std::invalid_argument(std::string(op) + ": shape mismatch " + a.shape_str() + " vs " +
                                b.shape_str());
}

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  Tensor out = a;
  for (int64_t i = 0; i < out.numel(); ++i) out[i] += b[i];
  return out;
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  Tensor out = a;
  for (int64_t i = 0; i < out.numel(); ++i) out[i] -= b[i];
  return out;
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  Tensor out = a;
  for (int64_t i = 0; i < out.numel(); ++i) out[i] *= b[i];
  return out;
}

Tensor scale(const Tensor& a, double c) {
  Tensor out = a;
  for (auto& v : out.data) v *= c;
  return out;
}

void axpy(double c, const Tensor& x, Tensor& y) {
  require_same_shape(x, y, "axpy");
  for (int64_t i = 0; i < y.numel(); ++i) y[i] += c * x[i];
}

Tensor sign(const Tensor& a) {
  Tensor out = a;
  for (auto& v : out.data) v = (v > 0.0) ? 1.0 : (v < 0.0 ? -1.0 : 0.0);
  return out;
}

Tensor clamp(const Tensor& a, double lo, double hi) {
  Tensor out = a;
  clamp_inplace(out, lo, hi);
  return out;
}

void clamp_inplace(Tensor& a, double lo, double hi) {
  for (auto& v : a.data) v = v < lo ? lo : (v > hi ? hi : v);
}

void clamp_ball_inplace(Tensor& a, const Tensor& ref, double r) {
  require_same_shape(a, ref, "clamp_ball");
  for (int64_t i = 0; i < a.numel(); ++i) {
    double lo = ref[i] - r, hi = ref[i] + r;
    a[i] = a[i] < lo ? lo : (a[i] > hi ? hi : a[i]);
  }
}

double l1_norm(const Tensor& a) {
  double s = 0;
  for (double v : a.data) s += std::abs(v);
  return s;
}

double l2_norm(const Tensor& a) {
  double s = 0;
  for (double v : a.data) s += v * v;
  return std::sqrt(s);
}

double linf_dist(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "linf_dist");
  double m = 0;
  for (int64_t i = 0; i < a.numel(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

double max_abs(const Tensor& a) {
  double m = 0;
  for (double v : a.data) m = std::max(m, std::abs(v));
  return m;
}

std::string format_double(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

}  // namespace oslolab
