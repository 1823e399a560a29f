#pragma once

#include <vector>

#include "msvit/layers.hpp"

namespace msvit {

// Linear warmup to the scaled base rate, then half-cosine decay to zero.
// The runtime rate scales linearly with batch size against a 256 reference.
struct LrSchedule {
  double base_lr = 6e-4;
  int64_t batch = 256;
  int64_t warmup_steps = 0;
  int64_t total_steps = 1;

  double peak() const { return base_lr * static_cast<double>(batch) / 256.0; }
  double at(int64_t step) const;  // step counts from 0
};

// Decoupled weight decay Adam. Moments are kept per parameter in creation
// order; `step` applies one update with the given rate. A step whose grads
// contain any non-finite value is skipped entirely (counted, optimizer
// state untouched).
class AdamW {
public:
  struct Hyper {
    double beta1 = 0.9, beta2 = 0.999;
    double epsilon = 1e-8;
    double weight_decay = 0.0;
  };

  AdamW(std::vector<ag::Var> params, Hyper h);

  // Returns false when the step was skipped on non-finite grads.
  bool step(double lr);
  void zero_grad();
  int64_t steps_taken() const { return steps_; }
  int64_t steps_skipped() const { return skipped_; }

private:
  std::vector<ag::Var> params_;
  std::vector<Tensor> m_, v_;
  Hyper h_;
  int64_t steps_ = 0, skipped_ = 0;
};

}  // namespace msvit
