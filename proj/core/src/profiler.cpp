#include "msvit/profiler.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <sstream>

namespace msvit {

const char* layer_kind_name(LayerKind k) {
  switch (k) {
    case LayerKind::Conv: return "conv";
    case LayerKind::Linear: return "linear";
    case LayerKind::MssaColumnSum: return "mssa_colsum";
    case LayerKind::MssaGate: return "mssa_gate";
    case LayerKind::SsaQk: return "ssa_qk";
    case LayerKind::SsaAv: return "ssa_av";
  }
  return "?";
}

namespace {
void check_positive(int64_t v, const char* what) {
  MSVIT_CHECK(v >= 1, "flop counting: ", what, " must be >= 1, got ", v);
}
}  // namespace

int64_t count_flops(const ConvDesc& d) {
  check_positive(d.kernel, "kernel");
  check_positive(d.c_in, "c_in");
  check_positive(d.c_out, "c_out");
  check_positive(d.h_out, "h_out");
  check_positive(d.w_out, "w_out");
  return d.kernel * d.kernel * d.c_in * d.c_out * d.h_out * d.w_out;
}

int64_t count_flops(const LinearDesc& d) {
  check_positive(d.d_in, "d_in");
  check_positive(d.d_out, "d_out");
  check_positive(d.tokens, "tokens");
  return d.d_in * d.d_out * d.tokens;
}

int64_t count_flops(const MssaColumnSumDesc& d) {
  check_positive(d.tokens, "tokens");
  check_positive(d.dim, "dim");
  check_positive(d.branches, "branches");
  return d.tokens * d.dim * d.branches;
}

int64_t count_flops(const MssaGateDesc& d) {
  check_positive(d.tokens, "tokens");
  check_positive(d.dim, "dim");
  return d.tokens * d.dim;
}

int64_t count_flops(const SsaQkDesc& d) {
  check_positive(d.tokens, "tokens");
  check_positive(d.dim, "dim");
  return d.tokens * d.tokens * d.dim;
}

int64_t count_flops(const SsaAvDesc& d) {
  check_positive(d.tokens, "tokens");
  check_positive(d.dim, "dim");
  return d.tokens * d.tokens * d.dim;
}

std::optional<double> LayerCounter::firing_rate() const {
  if (in_elems == 0) return std::nullopt;
  return static_cast<double>(in_spikes) / static_cast<double>(in_elems);
}

double LayerCounter::sops_per_sample() const {
  if (samples == 0) return 0.0;
  return static_cast<double>(sops) / static_cast<double>(samples);
}

LayerCounter& Profiler::counter(const std::string& path, LayerKind kind,
                                int64_t flops_per_sample, bool analog_input) {
  for (auto& c : layers_)
    if (c.path == path) {
      MSVIT_CHECK(c.kind == kind && c.flops_per_sample == flops_per_sample &&
                      c.analog_input == analog_input,
                  "layer '", path, "' recorded with inconsistent descriptors");
      return c;
    }
  LayerCounter c;
  c.path = path;
  c.kind = kind;
  c.flops_per_sample = flops_per_sample;
  c.analog_input = analog_input;
  layers_.push_back(std::move(c));
  return layers_.back();
}

void Profiler::record(const std::string& path, LayerKind kind, int64_t flops_per_sample,
                      const OpStats& stats, int64_t timesteps, int64_t samples,
                      bool analog_input) {
  MSVIT_CHECK(timesteps >= 1 && samples >= 1, "profiler record needs T,B >= 1");
  MSVIT_CHECK(stats.flops == flops_per_sample * timesteps * samples,
              "layer '", path, "': kernel reported ", stats.flops,
              " MACs, descriptor says ", flops_per_sample * timesteps * samples);
  LayerCounter& c = counter(path, kind, flops_per_sample, analog_input);
  MSVIT_CHECK(c.timesteps == 0 || c.timesteps == timesteps, "layer '", path,
              "' profiled at different timestep counts");
  c.timesteps = timesteps;
  c.samples += samples;
  c.in_spikes += static_cast<uint64_t>(stats.in_spikes);
  c.in_elems += static_cast<uint64_t>(stats.in_elems);
  c.sops += static_cast<uint64_t>(stats.sops);
}

const LayerCounter* Profiler::find(const std::string& path) const {
  for (const auto& c : layers_)
    if (c.path == path) return &c;
  return nullptr;
}

void Profiler::merge(const Profiler& other) {
  for (const auto& o : other.layers_) {
    LayerCounter& c = counter(o.path, o.kind, o.flops_per_sample, o.analog_input);
    MSVIT_CHECK(c.timesteps == 0 || o.timesteps == 0 || c.timesteps == o.timesteps,
                "merge: layer '", o.path, "' timestep mismatch");
    if (o.timesteps) c.timesteps = o.timesteps;
    c.samples += o.samples;
    c.in_spikes += o.in_spikes;
    c.in_elems += o.in_elems;
    c.sops += o.sops;
  }
}

void Profiler::clear() { layers_.clear(); }

uint64_t Profiler::total_sops() const {
  uint64_t s = 0;
  for (const auto& c : layers_) s += c.sops;
  return s;
}

uint64_t Profiler::total_spiking_sops() const {
  uint64_t s = 0;
  for (const auto& c : layers_)
    if (!c.analog_input) s += c.sops;
  return s;
}

std::optional<double> Profiler::model_firing_rate() const {
  uint64_t spikes = 0, elems = 0;
  for (const auto& c : layers_) {
    if (c.analog_input) continue;
    spikes += c.in_spikes;
    elems += c.in_elems;
  }
  if (elems == 0) return std::nullopt;
  return static_cast<double>(spikes) / static_cast<double>(elems);
}

EnergyReport compute_energy(const Profiler& prof, const EnergyConstants& k) {
  EnergyReport r;
  r.constants = k;
  for (const auto& c : prof.layers()) {
    MSVIT_CHECK(c.samples > 0, "layer '", c.path, "' has no recorded activity");
    LayerEnergy e;
    e.path = c.path;
    e.kind = layer_kind_name(c.kind);
    e.flops = c.flops_per_sample;
    e.timesteps = c.timesteps;
    e.entrance = c.analog_input;
    double flops = static_cast<double>(c.flops_per_sample);
    if (c.analog_input) {
      // Entrance layer: real-valued input, multiply-accumulate hardware.
      e.energy_pj = k.e_mac_pj * flops;
      r.mac_pj += e.energy_pj;
    } else {
      auto fr = c.firing_rate();
      MSVIT_CHECK(fr.has_value(), "spiking layer '", c.path,
                  "' has no firing rate; profile a forward pass first");
      e.firing_rate = fr;
      e.sops = *fr * static_cast<double>(c.timesteps) * flops;
      e.energy_pj = k.e_ac_pj * e.sops;
      r.ac_pj += e.energy_pj;
    }
    r.ann_pj += k.e_mac_pj * flops;
    r.layers.push_back(std::move(e));
  }
  r.total_pj = r.ac_pj + r.mac_pj;
  r.model_firing_rate = prof.model_firing_rate();
  return r;
}

namespace {
std::string fmt(double v, int prec) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(prec) << v;
  return os.str();
}
}  // namespace

std::string EnergyReport::to_json() const {
  std::ostringstream os;
  os << "{\n";
  os << "  \"constants\": {\"mac_pj\": " << fmt(constants.e_mac_pj, 3)
     << ", \"ac_pj\": " << fmt(constants.e_ac_pj, 3) << "},\n";
  os << "  \"layers\": [\n";
  for (size_t i = 0; i < layers.size(); ++i) {
    const auto& l = layers[i];
    os << "    {\"path\": \"" << l.path << "\", \"kind\": \"" << l.kind
       << "\", \"flops\": " << l.flops << ", \"timesteps\": " << l.timesteps
       << ", \"entrance\": " << (l.entrance ? "true" : "false");
    if (l.firing_rate) os << ", \"firing_rate\": " << fmt(*l.firing_rate, 6);
    os << ", \"sops\": " << fmt(l.sops, 1) << ", \"energy_pj\": " << fmt(l.energy_pj, 3)
       << "}" << (i + 1 < layers.size() ? "," : "") << "\n";
  }
  os << "  ],\n";
  os << "  \"ac_pj\": " << fmt(ac_pj, 3) << ",\n";
  os << "  \"mac_pj\": " << fmt(mac_pj, 3) << ",\n";
  os << "  \"total_pj\": " << fmt(total_pj, 3) << ",\n";
  os << "  \"total_mj\": " << fmt(total_mj(), 9) << ",\n";
  os << "  \"ann_pj\": " << fmt(ann_pj, 3) << ",\n";
  os << "  \"ann_mj\": " << fmt(ann_mj(), 9) << ",\n";
  if (model_firing_rate)
    os << "  \"model_firing_rate\": " << fmt(*model_firing_rate, 6) << ",\n";
  os << "  \"energy_ratio_vs_ann\": " << fmt(ann_pj > 0 ? total_pj / ann_pj : 0.0, 6) << "\n";
  os << "}\n";
  return os.str();
}

std::string EnergyReport::to_table() const {
  size_t wpath = 5;
  for (const auto& l : layers) wpath = std::max(wpath, l.path.size());
  std::ostringstream os;
  os << std::left << std::setw(static_cast<int>(wpath + 2)) << "layer" << std::right
     << std::setw(12) << "kind" << std::setw(14) << "flops" << std::setw(4) << "T"
     << std::setw(10) << "fr" << std::setw(16) << "sops" << std::setw(16) << "pJ" << "\n";
  for (const auto& l : layers) {
    os << std::left << std::setw(static_cast<int>(wpath + 2)) << l.path << std::right
       << std::setw(12) << l.kind << std::setw(14) << l.flops << std::setw(4) << l.timesteps
       << std::setw(10) << (l.firing_rate ? fmt(*l.firing_rate, 4) : std::string("-"))
       << std::setw(16) << fmt(l.sops, 0) << std::setw(16) << fmt(l.energy_pj, 1) << "\n";
  }
  os << "total: " << fmt(total_mj(), 9) << " mJ/sample"
     << " (spiking " << fmt(ac_pj, 1) << " pJ + entrance " << fmt(mac_pj, 1) << " pJ)";
  os << "; dense-equivalent " << fmt(ann_mj(), 9) << " mJ/sample\n";
  return os.str();
}

void SpikeAudit::check_integer(const std::string& path, const Tensor& t, int cap,
                               const char* cls) {
  ++checks_;
  for (int64_t i = 0; i < t.numel(); ++i) {
    double v = t[i];
    if (v > observed_max_) observed_max_ = v;
    if (!(v == std::floor(v) && v >= 0.0 && v <= static_cast<double>(cap))) {
      std::ostringstream os;
      os << path << ": " << cls << " edge holds " << v << " at flat index " << i
         << " (allowed integers 0.." << cap << ")";
      failures_.push_back(os.str());
      return;  // one report per edge is enough
    }
  }
}

void SpikeAudit::check_binary(const std::string& path, const Tensor& t) {
  check_integer(path, t, 1, "binary");
}

void SpikeAudit::check_residual(const std::string& path, const Tensor& t) {
  check_integer(path, t, cap_, "residual");
}

}  // namespace msvit
