#pragma once

#include <string>
#include <vector>

#include "msvit/autograd.hpp"
#include "msvit/profiler.hpp"

namespace msvit {

// Ordered registry of a model's parameters and buffers, keyed by a stable
// dotted path ("stage1.block0.smlp.fc1.w"). Order is creation order and is
// part of the checkpoint contract.
class ParamStore {
public:
  struct Entry {
    std::string path;
    ag::Var var;
    bool buffer;  // saved and restored but never optimized (BN running stats)
  };

  ag::Var add_param(const std::string& path, Tensor init);
  ag::Var add_buffer(const std::string& path, Tensor init);

  const std::vector<Entry>& entries() const { return entries_; }
  ag::Var find(const std::string& path) const;  // undefined Var when absent
  std::vector<ag::Var> trainable() const;
  int64_t param_count() const;  // trainable elements only
  void zero_grad();

private:
  std::vector<Entry> entries_;
};

// Layers own their parameters (as Vars registered in a ParamStore), their
// path, and their profiling hookup. Forward methods take Ctx and Vars.

struct LinearLayer {
  std::string path;
  ag::Var w, b;
  int64_t d_in = 0, d_out = 0;
  bool analog_input = false;  // entrance layer for the energy model

  static LinearLayer create(ParamStore& ps, const std::string& path, int64_t d_in,
                            int64_t d_out, bool bias, Rng& rng);
  ag::Var forward(Ctx& ctx, ag::Var x) const;
};

struct ConvLayer {
  std::string path;
  ag::Var w, b;
  int64_t c_in = 0, c_out = 0, kernel = 1, stride = 1, pad = 0;
  bool analog_input = false;

  static ConvLayer create(ParamStore& ps, const std::string& path, int64_t c_in,
                          int64_t c_out, int64_t kernel, int64_t stride, int64_t pad,
                          bool bias, Rng& rng);
  ag::Var forward(Ctx& ctx, ag::Var x) const;
};

struct BatchNormLayer {
  std::string path;
  ag::Var gamma, beta, running_mean, running_var;
  double epsilon = 1e-5;
  double momentum = 0.1;

  static BatchNormLayer create(ParamStore& ps, const std::string& path, int64_t channels);
  // channel_axis: 2 for [T,B,C,H,W], 3 for [T,B,N,D].
  ag::Var forward(Ctx& ctx, ag::Var x, int64_t channel_axis) const;
};

struct LifLayer {
  std::string path;
  LifParams params;

  static LifLayer create(const std::string& path, const LifParams& p);
  // Emits binary spikes (audited); smoothed mode under gradient checks.
  ag::Var forward(Ctx& ctx, ag::Var current, SpikeForm form) const;
};

}  // namespace msvit
