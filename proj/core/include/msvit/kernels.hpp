#pragma once

#include <optional>

#include "msvit/spike.hpp"
#include "msvit/tensor.hpp"

namespace msvit {

// What one kernel invocation did: static MAC count (the dense ANN cost,
// per invocation) and the accumulate operations actually performed, where a
// residual input of value k costs k accumulates.
struct OpStats {
  int64_t flops = 0;          // MACs of the dense equivalent
  int64_t sops = 0;           // realized accumulate ops
  int64_t in_spikes = 0;      // sum of input element values
  int64_t in_elems = 0;       // input element count
};

// y[..., j] = sum_i x[..., i] * w[i, j] + b[j], accumulated in input-index
// order so the result is bit-identical to the dense product oracle.
Tensor spike_linear(const SpikeTensor& x, const Tensor& w,
                    const Tensor* bias = nullptr, OpStats* stats = nullptr);
Tensor linear_forward(const Tensor& x, const Tensor& w,
                      const Tensor* bias = nullptr, OpStats* stats = nullptr);

// Cross-correlation over image-form (T, B, C, H, W) input with weights
// (C_out, C_in, k, k). Accumulation order: c_in, then kernel row, column.
Tensor spike_conv2d(const SpikeTensor& x, const Tensor& w, const Tensor* bias,
                    int64_t stride, int64_t pad, OpStats* stats = nullptr);
Tensor conv2d_forward(const Tensor& x, const Tensor& w, const Tensor* bias,
                      int64_t stride, int64_t pad, OpStats* stats = nullptr);

// 2x2/stride-2 max pooling over image-form input. Odd extents are padded
// with zeros on the bottom/right edge. On binary input this is an OR.
SpikeTensor maxpool2d(const SpikeTensor& x);
// Analog variant; if `argmax` is non-null it receives, per output element,
// the flat input index the maximum was taken from (first-wins on ties).
Tensor maxpool2d_analog(const Tensor& x, std::vector<int64_t>* argmax = nullptr);

// Shape helper shared by conv and its backward.
int64_t conv_out_extent(int64_t in, int64_t k, int64_t stride, int64_t pad);

// Backward kernels for the differentiable path.
Tensor linear_backward_input(const Tensor& grad_out, const Tensor& w);
void linear_backward_params(const Tensor& x, const Tensor& grad_out,
                            Tensor& grad_w, Tensor* grad_b);
Tensor conv2d_backward_input(const Tensor& grad_out, const Tensor& w,
                             const Shape& in_shape, int64_t stride, int64_t pad);
void conv2d_backward_params(const Tensor& x, const Tensor& grad_out,
                            Tensor& grad_w, Tensor* grad_b, int64_t stride, int64_t pad);

}  // namespace msvit
