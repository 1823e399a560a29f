#pragma once

#include <string>
#include <unordered_map>

#include "msvit/spike.hpp"
#include "msvit/tensor.hpp"

namespace msvit {

// Leaky integrate-and-fire constants. The update is, per timestep,
//   H[t] = V[t-1] + (X[t] - (V[t-1] - v_reset)) / tau
//   S[t] = heaviside(H[t] - v_th)
//   V[t] = H[t] * (1 - S[t]) + v_reset * S[t]      (hard reset)
// with the reset term kept inside the leak exactly as written.
struct LifParams {
  double tau = 2.0;
  double v_th = 1.0;
  double v_reset = 0.0;
  double surrogate_alpha = 2.0;

  void validate() const;
};

// Per-neuron membrane state carried across timesteps.
struct LifState {
  Tensor v;          // membrane potential, one per neuron
  int64_t step = 0;  // timesteps consumed so far

  static LifState initial(Shape neuron_shape, const LifParams& p);
};

// Runs the LIF update over the leading T axis of `current` ([T, ...]).
// `state.v` must match the trailing shape; it is updated in place so that
// chained calls over time slices reproduce a single full-length call.
// If `saved_h` is non-null the pre-threshold membranes H[t] are stored there
// (shape of `current`), as needed by the surrogate backward pass.
SpikeTensor lif_forward(const Tensor& current, const LifParams& p, LifState& state,
                        SpikeForm form, Tensor* saved_h = nullptr);

// Arctangent surrogate used in place of the Heaviside derivative:
//   d/dh = alpha / (2 * (1 + (pi * alpha * (h - v_th) / 2)^2))
double surrogate_grad(double h, const LifParams& p);
// Its primitive, a smooth step in [0, 1] centred on v_th ("smoothed mode").
double surrogate_primitive(double h, const LifParams& p);

// Per-step threshold gradient: grad_h = grad_spike * surrogate'(h).
// The reset path's dependence on the spike is treated as constant.
Tensor lif_surrogate_backward(const Tensor& grad_spike, const Tensor& saved_h,
                              const LifParams& p);

// Full backward through the T-step recursion (spiking mode, reset detached).
// Needs H and S saved from the forward pass; returns grad wrt the current.
Tensor lif_backward(const Tensor& saved_h, const SpikeTensor& spikes,
                    const Tensor& grad_spike, const LifParams& p);

// Smoothed mode: the Heaviside is replaced by the surrogate primitive in the
// forward pass and the backward is its exact derivative (nothing detached).
// Exists solely for gradient verification; outputs are not spikes.
Tensor lif_forward_smooth(const Tensor& current, const LifParams& p, Tensor* saved_h);
Tensor lif_backward_smooth(const Tensor& saved_h, const Tensor& grad_out, const LifParams& p);

// Named membrane states for streaming inference: a model driven one timestep
// at a time keeps each neuron layer's state here between calls.
class LifStateBank {
public:
  // Returns the state for `path`, creating it at rest if absent. An existing
  // state must match `neuron_shape`.
  LifState& get(const std::string& path, const Shape& neuron_shape, const LifParams& p);
  void reset();
  size_t size() const { return states_.size(); }

private:
  std::unordered_map<std::string, LifState> states_;
};

}  // namespace msvit
