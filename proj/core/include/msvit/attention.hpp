#pragma once

#include <optional>
#include <string>
#include <vector>

#include "msvit/layers.hpp"

namespace msvit {

// Which spatial scales feed the multi-scale gate. Each entry is one score
// branch: a 1x1 (point) or 3x3 (local) conv stack producing a spike map.
enum class BranchScale { Point, Local };
enum class MssaVariant { PQ, PP, QQ, P, Q };

MssaVariant mssa_variant_from_string(const std::string& s);
const char* mssa_variant_name(MssaVariant v);
std::vector<BranchScale> mssa_variant_branches(MssaVariant v);

// --- pure spike kernels -------------------------------------------------
//
// The attention arithmetic on already-built spike maps, token form
// [T,B,N,D]. These are what the instrumented modules must agree with and
// what complexity studies drive directly.

struct MssaAttendResult {
  SpikeTensor out;    // gated V, binary
  SpikeTensor gate;   // [T,B,N,1] token gate
  Tensor alpha;       // summed scores [T,B,N], integers
};

// Per-token score: alpha = sum over channels of every score map. The gate
// neuron integrates alpha across time; gated output is gate AND V.
MssaAttendResult mssa_attend(const std::vector<SpikeTensor>& scores, const SpikeTensor& v,
                             const LifParams& gate, Profiler* prof = nullptr,
                             const std::string& path = "mssa");

// Per-timestep, per-head: A = Q K^T (integer), out = SN((A V) * scale).
// Heads split the channel axis; D must divide by `heads`.
SpikeTensor ssa_attend(const SpikeTensor& q, const SpikeTensor& k, const SpikeTensor& v,
                       double scale, int64_t heads, const LifParams& sn,
                       Profiler* prof = nullptr, const std::string& path = "ssa");

// --- modules -------------------------------------------------------------

// conv -> BN -> LIF producing one spike map, image form.
struct SpikeConvBranch {
  ConvLayer conv;
  BatchNormLayer bn;
  LifLayer sn;

  static SpikeConvBranch create(ParamStore& ps, const std::string& path, int64_t dim,
                                BranchScale scale, const LifParams& lif, Rng& rng);
  ag::Var forward(Ctx& ctx, ag::Var x_image) const;
};

// Multi-scale spiking attention. Token-form interface [T,B,N,D]; internally
// image-form on the stage grid.
struct Mssa {
  std::string path;
  int64_t dim = 0, grid_h = 0, grid_w = 0;
  std::vector<SpikeConvBranch> score_branches;
  SpikeConvBranch v_branch;
  LifLayer gate_sn;
  std::optional<SpikeConvBranch> proj;  // 1x1 output projection

  static Mssa create(ParamStore& ps, const std::string& path, int64_t dim,
                     int64_t grid_h, int64_t grid_w, MssaVariant variant, bool with_proj,
                     const LifParams& lif, Rng& rng);
  ag::Var forward(Ctx& ctx, ag::Var x_tokens) const;
};

// Spiking self-attention: linear Q/K/V over tokens, integer QK^T scores.
struct Ssa {
  std::string path;
  int64_t dim = 0, heads = 8;
  double scale = 0.125;
  LinearLayer wq, wk, wv, wo;
  BatchNormLayer bnq, bnk, bnv, bno;
  LifLayer snq, snk, snv, sn_attn, sno;

  static Ssa create(ParamStore& ps, const std::string& path, int64_t dim, int64_t heads,
                    double scale, const LifParams& lif, Rng& rng);
  ag::Var forward(Ctx& ctx, ag::Var x_tokens) const;
};

// Two spiking linear stages, D -> ratio*D -> D.
struct Smlp {
  std::string path;
  int64_t dim = 0, hidden = 0;
  LinearLayer fc1, fc2;
  BatchNormLayer bn1, bn2;
  LifLayer sn1, sn2;

  static Smlp create(ParamStore& ps, const std::string& path, int64_t dim, int64_t ratio,
                     const LifParams& lif, Rng& rng);
  ag::Var forward(Ctx& ctx, ag::Var x_tokens) const;
};

enum class AttentionKind { Mssa, Ssa };

// One transformer block: y' = mixer(x) + x; y = smlp(y') + y'.
// Residuals add spike trains elementwise, so block outputs are small
// non-negative integers rather than binary.
struct MsformerBlock {
  std::string path;
  AttentionKind kind = AttentionKind::Mssa;
  std::optional<Mssa> mssa;
  std::optional<Ssa> ssa;
  Smlp smlp;

  static MsformerBlock create(ParamStore& ps, const std::string& path, AttentionKind kind,
                              int64_t dim, int64_t grid_h, int64_t grid_w,
                              MssaVariant variant, bool mssa_proj, int64_t smlp_ratio,
                              int64_t ssa_heads, double ssa_scale, const LifParams& lif,
                              Rng& rng);
  ag::Var forward(Ctx& ctx, ag::Var x_tokens) const;
};

}  // namespace msvit
