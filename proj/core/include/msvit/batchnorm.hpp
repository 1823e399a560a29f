#pragma once

#include "msvit/tensor.hpp"

namespace msvit {

// Per-channel batch normalization. The channel axis is D (last) in token
// form and C (axis 2) in image form; everything else is reduced over.
struct BatchNormParams {
  Tensor gamma;         // [C]
  Tensor beta;          // [C]
  Tensor running_mean;  // [C]
  Tensor running_var;   // [C]
  double epsilon = 1e-5;
  double momentum = 0.1;

  static BatchNormParams identity(int64_t channels);
  void validate() const;
};

enum class BnMode { Train, Infer };

// Saved forward context for the backward pass (train mode statistics).
struct BnCache {
  Tensor x_hat;      // normalized input
  Tensor mean;       // batch mean [C]
  Tensor inv_std;    // 1/sqrt(var + eps) [C]
  int64_t channel_axis = 0;
  int64_t reduce_count = 0;
};

// Train mode normalizes by batch statistics and updates the running ones;
// infer mode uses the frozen running statistics only.
Tensor bn_forward(const Tensor& x, BatchNormParams& p, BnMode mode,
                  int64_t channel_axis, BnCache* cache = nullptr);

// Gradients for train-mode BN (through the batch statistics).
Tensor bn_backward(const Tensor& grad_out, const BnCache& cache,
                   const BatchNormParams& p, Tensor& grad_gamma, Tensor& grad_beta);
// Infer mode: x never feeds the statistics, so the input grad is elementwise.
Tensor bn_backward_infer(const Tensor& grad_out, const BatchNormParams& p,
                         int64_t channel_axis, Tensor& grad_gamma, Tensor& grad_beta,
                         const Tensor& x);

}  // namespace msvit
