#include "msvit/tensor.hpp"

#include <cmath>
#include <sstream>

namespace msvit {

int64_t shape_numel(const Shape& s) {
  int64_t n = 1;
  for (int64_t d : s) {
    MSVIT_CHECK(d >= 0, "negative extent in shape ", shape_str(s));
    n *= d;
  }
  return n;
}

std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (size_t i = 0; i < s.size(); ++i) {
    if (i) os << ',';
    os << s[i];
  }
  os << ']';
  return os.str();
}

bool same_shape(const Shape& a, const Shape& b) { return a == b; }

Tensor::Tensor(Shape shape) : shape_(std::move(shape)) {
  data_.assign(static_cast<size_t>(shape_numel(shape_)), 0.0);
}

Tensor::Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
  MSVIT_CHECK(shape_numel(shape_) == static_cast<int64_t>(data_.size()),
              "shape ", shape_str(shape_), " wants ", shape_numel(shape_),
              " elements, got ", data_.size());
}

Tensor Tensor::full(Shape shape, double v) {
  Tensor t(std::move(shape));
  t.fill(v);
  return t;
}

Tensor Tensor::randn(Shape shape, Rng& rng, double stddev) {
  Tensor t(std::move(shape));
  std::normal_distribution<double> d(0.0, stddev);
  for (int64_t i = 0; i < t.numel(); ++i) t[i] = d(rng);
  return t;
}

Tensor Tensor::uniform(Shape shape, Rng& rng, double lo, double hi) {
  MSVIT_CHECK(lo <= hi, "uniform bounds reversed: ", lo, " > ", hi);
  Tensor t(std::move(shape));
  std::uniform_real_distribution<double> d(lo, hi);
  for (int64_t i = 0; i < t.numel(); ++i) t[i] = d(rng);
  return t;
}

Tensor Tensor::reshaped(Shape shape) const {
  MSVIT_CHECK(shape_numel(shape) == numel(), "reshape ", shape_str(shape_), " -> ",
              shape_str(shape), " changes element count");
  Tensor t;
  t.shape_ = std::move(shape);
  t.data_ = data_;
  return t;
}

bool Tensor::all_finite() const {
  for (double v : data_)
    if (!std::isfinite(v)) return false;
  return true;
}

double Tensor::sum() const {
  double s = 0;
  for (double v : data_) s += v;
  return s;
}

double Tensor::abs_max() const {
  double m = 0;
  for (double v : data_) m = std::max(m, std::fabs(v));
  return m;
}

void Tensor::fill(double v) {
  for (auto& x : data_) x = v;
}

void Tensor::add_(const Tensor& other) {
  MSVIT_CHECK(same_shape(shape_, other.shape_), "add_: shape mismatch ",
              shape_str(shape_), " vs ", shape_str(other.shape_));
  for (size_t i = 0; i < data_.size(); ++i) data_[i] += other.data_[i];
}

void Tensor::add_scaled_(const Tensor& other, double s) {
  MSVIT_CHECK(same_shape(shape_, other.shape_), "add_scaled_: shape mismatch ",
              shape_str(shape_), " vs ", shape_str(other.shape_));
  for (size_t i = 0; i < data_.size(); ++i) data_[i] += s * other.data_[i];
}

void Tensor::scale_(double s) {
  for (auto& x : data_) x *= s;
}

}  // namespace msvit
