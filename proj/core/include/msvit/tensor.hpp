#pragma once

#include <cstdint>
#include <initializer_list>
#include <vector>

#include "msvit/common.hpp"

namespace msvit {

using Shape = std::vector<int64_t>;

int64_t shape_numel(const Shape& s);
std::string shape_str(const Shape& s);
bool same_shape(const Shape& a, const Shape& b);

// Dense row-major tensor of doubles. Carries pre-neuron currents, weights,
// membrane potentials and gradients; spikes travel as SpikeTensor instead.
class Tensor {
public:
  Tensor() = default;
  explicit Tensor(Shape shape);  // zero-filled
  Tensor(Shape shape, std::vector<double> data);

  static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }
  static Tensor full(Shape shape, double v);
  static Tensor scalar(double v) { return Tensor({1}, {v}); }
  // Fan-in-scaled normal draw, N(0, (gain/sqrt(fan_in))^2).
  static Tensor randn(Shape shape, Rng& rng, double stddev = 1.0);
  static Tensor uniform(Shape shape, Rng& rng, double lo, double hi);

  const Shape& shape() const { return shape_; }
  int64_t dim(size_t i) const { return shape_.at(i); }
  size_t rank() const { return shape_.size(); }
  int64_t numel() const { return static_cast<int64_t>(data_.size()); }
  bool empty() const { return data_.empty(); }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  double& operator[](int64_t i) { return data_[static_cast<size_t>(i)]; }
  double operator[](int64_t i) const { return data_[static_cast<size_t>(i)]; }

  // Same data, new shape; element count must match.
  Tensor reshaped(Shape shape) const;

  bool all_finite() const;
  double sum() const;
  double abs_max() const;

  void fill(double v);
  void add_(const Tensor& other);            // elementwise +=
  void add_scaled_(const Tensor& other, double s);
  void scale_(double s);

private:
  Shape shape_;
  std::vector<double> data_;
};

}  // namespace msvit
