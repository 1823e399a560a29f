#pragma once

#include <optional>
#include <string>
#include <vector>

#include "msvit/kernels.hpp"

namespace msvit {

// Charged layer kinds. BN, pooling and the LIF update itself carry no cost;
// only synaptic work is counted.
enum class LayerKind { Conv, Linear, MssaColumnSum, MssaGate, SsaQk, SsaAv };
const char* layer_kind_name(LayerKind k);

// Static dense cost of one layer, in MACs (or additions for the attention
// arithmetic), per sample per timestep.
struct ConvDesc { int64_t kernel, c_in, c_out, h_out, w_out; };
struct LinearDesc { int64_t d_in, d_out, tokens; };
struct MssaColumnSumDesc { int64_t tokens, dim, branches; };
struct MssaGateDesc { int64_t tokens, dim; };
struct SsaQkDesc { int64_t tokens, dim; };
struct SsaAvDesc { int64_t tokens, dim; };

int64_t count_flops(const ConvDesc& d);
int64_t count_flops(const LinearDesc& d);
int64_t count_flops(const MssaColumnSumDesc& d);
int64_t count_flops(const MssaGateDesc& d);
int64_t count_flops(const SsaQkDesc& d);
int64_t count_flops(const SsaAvDesc& d);

// Accumulated activity of one layer across a run.
struct LayerCounter {
  std::string path;
  LayerKind kind = LayerKind::Linear;
  int64_t flops_per_sample = 0;  // dense MACs per sample per timestep
  int64_t timesteps = 0;
  int64_t samples = 0;           // batch items seen
  uint64_t in_spikes = 0;        // sum of input element values
  uint64_t in_elems = 0;
  uint64_t sops = 0;             // realized accumulate operations
  bool analog_input = false;     // entrance layer, charged at MAC cost

  // spikes / elements; absent when the layer never saw input.
  std::optional<double> firing_rate() const;
  double sops_per_sample() const;
};

// Collects per-layer counters over instrumented forward passes. Counters
// merge associatively, so per-run profilers can be combined in any order.
class Profiler {
public:
  void record(const std::string& path, LayerKind kind, int64_t flops_per_sample,
              const OpStats& stats, int64_t timesteps, int64_t samples, bool analog_input);

  const std::vector<LayerCounter>& layers() const { return layers_; }
  const LayerCounter* find(const std::string& path) const;
  void merge(const Profiler& other);
  void clear();

  uint64_t total_sops() const;
  uint64_t total_spiking_sops() const;  // excludes entrance layers
  // Model-wide firing rate: total input spikes over total input elements.
  std::optional<double> model_firing_rate() const;

private:
  LayerCounter& counter(const std::string& path, LayerKind kind,
                        int64_t flops_per_sample, bool analog_input);
  std::vector<LayerCounter> layers_;  // insertion order
};

// 45nm per-op energies.
struct EnergyConstants {
  double e_mac_pj = 4.6;
  double e_ac_pj = 0.9;
};

struct LayerEnergy {
  std::string path;
  std::string kind;
  int64_t flops = 0;              // per sample per timestep
  std::optional<double> firing_rate;
  int64_t timesteps = 0;
  double sops = 0;                // fr * T * flops, per sample
  double energy_pj = 0;
  bool entrance = false;
};

// Per-sample energy model: spiking layers cost e_ac per SOP with
// SOP = fr * T * FLOPs; entrance (analog-input) layers cost e_mac per MAC.
// The ANN-equivalent figure charges every layer at e_mac * FLOPs once.
struct EnergyReport {
  std::vector<LayerEnergy> layers;
  EnergyConstants constants;
  double ac_pj = 0;
  double mac_pj = 0;
  double total_pj = 0;
  double ann_pj = 0;
  std::optional<double> model_firing_rate;

  double total_mj() const { return total_pj * 1e-9; }
  double ann_mj() const { return ann_pj * 1e-9; }
  std::string to_json() const;
  std::string to_table() const;
};

EnergyReport compute_energy(const Profiler& prof, const EnergyConstants& c = {});

// Audit hook for spike purity. Forward passes report every inter-layer
// tensor; binary edges must be exactly {0,1} and residual edges integers
// within the cap.
class SpikeAudit {
public:
  explicit SpikeAudit(int residual_cap = 4) : cap_(residual_cap) {}

  void check_binary(const std::string& path, const Tensor& t);
  void check_residual(const std::string& path, const Tensor& t);

  bool ok() const { return failures_.empty(); }
  const std::vector<std::string>& failures() const { return failures_; }
  int64_t checks() const { return checks_; }
  double observed_max() const { return observed_max_; }

private:
  void check_integer(const std::string& path, const Tensor& t, int cap, const char* cls);
  int cap_;
  int64_t checks_ = 0;
  double observed_max_ = 0;
  std::vector<std::string> failures_;
};

}  // namespace msvit
