#include "msvit/layers.hpp"

#include <cmath>

#include "msvit/batchnorm.hpp"

namespace msvit {

ag::Var ParamStore::add_param(const std::string& path, Tensor init) {
  MSVIT_CHECK(!find(path).defined(), "duplicate parameter path '", path, "'");
  ag::Var v = ag::Var::leaf(std::move(init), true);
  entries_.push_back({path, v, false});
  return v;
}

ag::Var ParamStore::add_buffer(const std::string& path, Tensor init) {
  MSVIT_CHECK(!find(path).defined(), "duplicate parameter path '", path, "'");
  ag::Var v = ag::Var::leaf(std::move(init), false);
  entries_.push_back({path, v, true});
  return v;
}

ag::Var ParamStore::find(const std::string& path) const {
  for (const auto& e : entries_)
    if (e.path == path) return e.var;
  return {};
}

std::vector<ag::Var> ParamStore::trainable() const {
  std::vector<ag::Var> out;
  for (const auto& e : entries_)
    if (!e.buffer) out.push_back(e.var);
  return out;
}

int64_t ParamStore::param_count() const {
  int64_t n = 0;
  for (const auto& e : entries_)
    if (!e.buffer) n += e.var.value().numel();
  return n;
}

void ParamStore::zero_grad() {
  for (const auto& e : entries_) {
    ag::Var v = e.var;
    v.zero_grad();
  }
}

namespace {

// Shape of the batch a layer input represents: token tensors are
// [T,B,N,D], image tensors [T,B,C,H,W], head inputs [B,D].
struct BatchDims {
  int64_t timesteps, samples, tokens;
};

BatchDims batch_dims(const Tensor& x) {
  switch (x.rank()) {
    case 2: return {1, x.dim(0), 1};
    case 4: return {x.dim(0), x.dim(1), x.dim(2)};
    case 5: return {x.dim(0), x.dim(1), 1};
    default:
      raise("unsupported input rank ", x.rank(), " for a profiled layer: ",
            shape_str(x.shape()));
  }
}

void strip_spike_stats(OpStats& st) {
  st.in_spikes = 0;
  st.in_elems = 0;
  st.sops = 0;
}

}  // namespace

LinearLayer LinearLayer::create(ParamStore& ps, const std::string& path, int64_t d_in,
                                int64_t d_out, bool bias, Rng& rng) {
  MSVIT_CHECK(d_in >= 1 && d_out >= 1, "linear '", path, "': bad dims ", d_in, "->", d_out);
  LinearLayer l;
  l.path = path;
  l.d_in = d_in;
  l.d_out = d_out;
  l.w = ps.add_param(path + ".w",
                     Tensor::randn({d_in, d_out}, rng, std::sqrt(2.0 / static_cast<double>(d_in))));
  if (bias) l.b = ps.add_param(path + ".b", Tensor::zeros({d_out}));
  return l;
}

ag::Var LinearLayer::forward(Ctx& ctx, ag::Var x) const {
  OpStats st;
  ag::Var y = ag::ops::linear(ctx, x, w, b, ctx.prof ? &st : nullptr);
  if (ctx.prof) {
    BatchDims bd = batch_dims(x.value());
    if (analog_input) strip_spike_stats(st);
    ctx.prof->record(path, LayerKind::Linear, count_flops(LinearDesc{d_in, d_out, bd.tokens}),
                     st, bd.timesteps, bd.samples, analog_input);
  }
  return y;
}

ConvLayer ConvLayer::create(ParamStore& ps, const std::string& path, int64_t c_in,
                            int64_t c_out, int64_t kernel, int64_t stride, int64_t pad,
                            bool bias, Rng& rng) {
  MSVIT_CHECK(c_in >= 1 && c_out >= 1 && kernel >= 1, "conv '", path, "': bad geometry");
  ConvLayer l;
  l.path = path;
  l.c_in = c_in;
  l.c_out = c_out;
  l.kernel = kernel;
  l.stride = stride;
  l.pad = pad;
  double stddev = std::sqrt(2.0 / static_cast<double>(c_in * kernel * kernel));
  l.w = ps.add_param(path + ".w", Tensor::randn({c_out, c_in, kernel, kernel}, rng, stddev));
  if (bias) l.b = ps.add_param(path + ".b", Tensor::zeros({c_out}));
  return l;
}

ag::Var ConvLayer::forward(Ctx& ctx, ag::Var x) const {
  OpStats st;
  ag::Var y = ag::ops::conv2d(ctx, x, w, b, stride, pad, ctx.prof ? &st : nullptr);
  if (ctx.prof) {
    BatchDims bd = batch_dims(x.value());
    if (analog_input) strip_spike_stats(st);
    ConvDesc d{kernel, c_in, c_out, y.value().dim(3), y.value().dim(4)};
    ctx.prof->record(path, LayerKind::Conv, count_flops(d), st, bd.timesteps, bd.samples,
                     analog_input);
  }
  return y;
}

BatchNormLayer BatchNormLayer::create(ParamStore& ps, const std::string& path,
                                      int64_t channels) {
  BatchNormParams init = BatchNormParams::identity(channels);
  BatchNormLayer l;
  l.path = path;
  l.gamma = ps.add_param(path + ".gamma", std::move(init.gamma));
  l.beta = ps.add_param(path + ".beta", std::move(init.beta));
  l.running_mean = ps.add_buffer(path + ".running_mean", std::move(init.running_mean));
  l.running_var = ps.add_buffer(path + ".running_var", std::move(init.running_var));
  return l;
}

ag::Var BatchNormLayer::forward(Ctx& ctx, ag::Var x, int64_t channel_axis) const {
  return ag::ops::batchnorm(ctx, x, gamma, beta, running_mean, running_var, epsilon, momentum,
                            channel_axis);
}

LifLayer LifLayer::create(const std::string& path, const LifParams& p) {
  p.validate();
  LifLayer l;
  l.path = path;
  l.params = p;
  return l;
}

ag::Var LifLayer::forward(Ctx& ctx, ag::Var current, SpikeForm form) const {
  ag::Var s = ag::ops::lif(ctx, current, params, form, path);
  // Smoothed activations are deliberately fractional; auditing them would
  // only report that fact.
  if (ctx.audit && !ctx.smoothed) ctx.audit->check_binary(path, s.value());
  return s;
}

}  // namespace msvit
