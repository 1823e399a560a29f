#pragma once

#include <cstdint>
#include <vector>

#include "msvit/tensor.hpp"

namespace msvit {

// Layout of a spike tensor: token form is (T, B, N, D), image form is
// (T, B, C, H, W). The leading axis is always the timestep.
enum class SpikeForm { Tokens, Image };

// Activation tensor between spiking layers. Elements are small non-negative
// integers: binary out of every spiking-neuron layer, up to the number of
// summed branches right after a residual addition. One byte per element.
class SpikeTensor {
public:
  SpikeTensor() = default;
  SpikeTensor(Shape shape, SpikeForm form);  // zero-filled

  // Validates that every element of `t` is an integer in [0, max_value].
  static SpikeTensor from_analog(const Tensor& t, SpikeForm form, int max_value = 1);
  Tensor to_analog() const;

  const Shape& shape() const { return shape_; }
  SpikeForm form() const { return form_; }
  int64_t numel() const { return static_cast<int64_t>(data_.size()); }

  uint8_t* data() { return data_.data(); }
  const uint8_t* data() const { return data_.data(); }
  uint8_t operator[](int64_t i) const { return data_[static_cast<size_t>(i)]; }
  uint8_t& operator[](int64_t i) { return data_[static_cast<size_t>(i)]; }

  int64_t timesteps() const { return shape_[0]; }
  int64_t batch() const { return shape_[1]; }
  // Token form accessors.
  int64_t tokens() const;
  int64_t channels() const;  // D in token form, C in image form
  // Image form accessors.
  int64_t height() const;
  int64_t width() const;

  bool is_binary() const;
  int max_value() const;
  int64_t spike_count() const;  // sum of element values

private:
  void validate() const;

  Shape shape_;
  std::vector<uint8_t> data_;
  SpikeForm form_ = SpikeForm::Tokens;
};

// Lossless view changes between the two layouts. Token n maps to the grid
// cell (n / W, n % W) in row-major order; channels map D <-> C.
SpikeTensor tokens_to_image(const SpikeTensor& t, int64_t h, int64_t w);
SpikeTensor image_to_tokens(const SpikeTensor& t);

// Same permutations on analog tensors (used by the differentiable path).
Tensor analog_tokens_to_image(const Tensor& t, int64_t h, int64_t w);
Tensor analog_image_to_tokens(const Tensor& t);

}  // namespace msvit
