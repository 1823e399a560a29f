#include "msvit/lif.hpp"

#include <cmath>

namespace msvit {

void LifParams::validate() const {
  MSVIT_CHECK(tau > 1.0, "membrane time constant must exceed 1, got ", tau);
  MSVIT_CHECK(v_th > v_reset, "threshold ", v_th, " must exceed reset ", v_reset);
  MSVIT_CHECK(surrogate_alpha > 0.0, "surrogate alpha must be positive, got ", surrogate_alpha);
}

LifState LifState::initial(Shape neuron_shape, const LifParams& p) {
  LifState s;
  s.v = Tensor::full(std::move(neuron_shape), p.v_reset);
  s.step = 0;
  return s;
}

SpikeTensor lif_forward(const Tensor& current, const LifParams& p, LifState& state,
                        SpikeForm form, Tensor* saved_h) {
  p.validate();
  MSVIT_CHECK(current.rank() >= 2, "lif_forward wants a [T,...] tensor, got ",
              shape_str(current.shape()));
  MSVIT_CHECK(current.all_finite(), "lif_forward got a non-finite input current");
  const int64_t T = current.dim(0);
  const int64_t n = current.numel() / T;
  Shape neuron_shape(current.shape().begin() + 1, current.shape().end());
  MSVIT_CHECK(same_shape(state.v.shape(), neuron_shape), "membrane state shape ",
              shape_str(state.v.shape()), " does not match input slice ",
              shape_str(neuron_shape));

  SpikeTensor out(current.shape(), form);
  if (saved_h) *saved_h = Tensor(current.shape());
  double* v = state.v.data();
  const double* x = current.data();
  uint8_t* s = out.data();

  for (int64_t t = 0; t < T; ++t) {
    const double* xt = x + t * n;
    uint8_t* st = s + t * n;
    double* ht = saved_h ? saved_h->data() + t * n : nullptr;
    for (int64_t i = 0; i < n; ++i) {
      double h = v[i] + (xt[i] - (v[i] - p.v_reset)) / p.tau;
      if (ht) ht[i] = h;
      if (h >= p.v_th) {  // fires at threshold
        st[i] = 1;
        v[i] = p.v_reset;
      } else {
        st[i] = 0;
        v[i] = h;
      }
    }
  }
  state.step += T;
  return out;
}

double surrogate_grad(double h, const LifParams& p) {
  double u = M_PI * p.surrogate_alpha * (h - p.v_th) / 2.0;
  return p.surrogate_alpha / (2.0 * (1.0 + u * u));
}

double surrogate_primitive(double h, const LifParams& p) {
  double u = M_PI * p.surrogate_alpha * (h - p.v_th) / 2.0;
  return std::atan(u) / M_PI + 0.5;
}

Tensor lif_surrogate_backward(const Tensor& grad_spike, const Tensor& saved_h,
                              const LifParams& p) {
  MSVIT_CHECK(same_shape(grad_spike.shape(), saved_h.shape()),
              "surrogate backward shape mismatch");
  Tensor g(grad_spike.shape());
  for (int64_t i = 0; i < g.numel(); ++i)
    g[i] = grad_spike[i] * surrogate_grad(saved_h[i], p);
  return g;
}

// Reverse of the T-step recursion. The only spike pathway is the threshold
// (via the surrogate); the reset's use of S is treated as constant, so the
// carried membrane grad simply dies wherever the neuron fired.
Tensor lif_backward(const Tensor& saved_h, const SpikeTensor& spikes,
                    const Tensor& grad_spike, const LifParams& p) {
  MSVIT_CHECK(same_shape(saved_h.shape(), grad_spike.shape()) &&
                  same_shape(saved_h.shape(), spikes.shape()),
              "lif_backward shape mismatch");
  const int64_t T = saved_h.dim(0);
  const int64_t n = saved_h.numel() / T;
  Tensor grad_x(saved_h.shape());
  std::vector<double> gv(static_cast<size_t>(n), 0.0);
  const double leak = 1.0 - 1.0 / p.tau;

  for (int64_t t = T - 1; t >= 0; --t) {
    const double* h = saved_h.data() + t * n;
    const uint8_t* s = spikes.data() + t * n;
    const double* gs = grad_spike.data() + t * n;
    double* gx = grad_x.data() + t * n;
    for (int64_t i = 0; i < n; ++i) {
      double gh = gs[i] * surrogate_grad(h[i], p) + (s[i] ? 0.0 : gv[static_cast<size_t>(i)]);
      gx[i] = gh / p.tau;
      gv[static_cast<size_t>(i)] = gh * leak;
    }
  }
  return grad_x;
}

Tensor lif_forward_smooth(const Tensor& current, const LifParams& p, Tensor* saved_h) {
  p.validate();
  MSVIT_CHECK(current.rank() >= 2, "lif_forward_smooth wants a [T,...] tensor");
  const int64_t T = current.dim(0);
  const int64_t n = current.numel() / T;
  Tensor out(current.shape());
  if (saved_h) *saved_h = Tensor(current.shape());
  std::vector<double> v(static_cast<size_t>(n), p.v_reset);

  for (int64_t t = 0; t < T; ++t) {
    const double* xt = current.data() + t * n;
    double* ot = out.data() + t * n;
    double* ht = saved_h ? saved_h->data() + t * n : nullptr;
    for (int64_t i = 0; i < n; ++i) {
      double h = v[static_cast<size_t>(i)] + (xt[i] - (v[static_cast<size_t>(i)] - p.v_reset)) / p.tau;
      if (ht) ht[i] = h;
      double s = surrogate_primitive(h, p);
      ot[i] = s;
      v[static_cast<size_t>(i)] = h * (1.0 - s) + p.v_reset * s;
    }
  }
  return out;
}

// Exact reverse of the smooth recursion: V[t] = H(1-s) + v_reset*s with
// s = primitive(H), so dV/dH = (1 - s) + (v_reset - H) * primitive'(H).
Tensor lif_backward_smooth(const Tensor& saved_h, const Tensor& grad_out, const LifParams& p) {
  MSVIT_CHECK(same_shape(saved_h.shape(), grad_out.shape()),
              "lif_backward_smooth shape mismatch");
  const int64_t T = saved_h.dim(0);
  const int64_t n = saved_h.numel() / T;
  Tensor grad_x(saved_h.shape());
  std::vector<double> gv(static_cast<size_t>(n), 0.0);
  const double leak = 1.0 - 1.0 / p.tau;

  for (int64_t t = T - 1; t >= 0; --t) {
    const double* h = saved_h.data() + t * n;
    const double* go = grad_out.data() + t * n;
    double* gx = grad_x.data() + t * n;
    for (int64_t i = 0; i < n; ++i) {
      double sg = surrogate_grad(h[i], p);
      double s = surrogate_primitive(h[i], p);
      double dv_dh = (1.0 - s) + (p.v_reset - h[i]) * sg;
      double gh = go[i] * sg + gv[static_cast<size_t>(i)] * dv_dh;
      gx[i] = gh / p.tau;
      gv[static_cast<size_t>(i)] = gh * leak;
    }
  }
  return grad_x;
}

LifState& LifStateBank::get(const std::string& path, const Shape& neuron_shape,
                            const LifParams& p) {
  auto it = states_.find(path);
  if (it == states_.end()) {
    it = states_.emplace(path, LifState::initial(neuron_shape, p)).first;
  } else {
    MSVIT_CHECK(same_shape(it->second.v.shape(), neuron_shape), "membrane state '", path,
                "' has shape ", shape_str(it->second.v.shape()), ", expected ",
                shape_str(neuron_shape));
  }
  return it->second;
}

void LifStateBank::reset() { states_.clear(); }

}  // namespace msvit
