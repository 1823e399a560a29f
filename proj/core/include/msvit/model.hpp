#pragma once

#include <array>
#include <memory>
#include <string>
#include <vector>

#include "msvit/attention.hpp"
#include "msvit/embedding.hpp"

namespace msvit {

// Everything that determines the network graph and its weights' shapes.
// Two configs with equal canonical text are checkpoint-compatible.
struct ModelConfig {
  int64_t timesteps = 4;
  int64_t in_channels = 3;
  int64_t height = 32, width = 32;
  int64_t classes = 10;
  std::array<int64_t, 3> dims{96, 192, 384};
  std::array<int64_t, 3> depths{1, 1, 2};
  std::array<AttentionKind, 3> attention{AttentionKind::Mssa, AttentionKind::Mssa,
                                         AttentionKind::Ssa};
  MssaVariant mssa_variant = MssaVariant::PQ;
  bool mssa_proj = true;
  int64_t smlp_ratio = 4;
  int64_t ssa_heads = 8;
  double ssa_scale = 0.125;
  GPipeline embed_pipeline = GPipeline::PoolMid;
  LifParams lif;
  uint64_t seed = 42;

  // Collects every problem (dims, divisibility, ranges) into one error.
  void validate() const;
  // Stable key=value listing, one per line, sorted: the checkpoint identity.
  // The init seed is excluded — it never affects shapes.
  std::string canonical_text() const;
  uint64_t hash() const;
};

struct StageInfo {
  int64_t index = 0;
  int64_t dim = 0, depth = 0;
  int64_t grid_h = 0, grid_w = 0;
  int64_t tokens() const { return grid_h * grid_w; }
  AttentionKind kind = AttentionKind::Mssa;
};

// Stage grids for a config: H/4 after stage-1 embedding, then /2 per stage.
std::vector<StageInfo> stage_schedule(const ModelConfig& cfg);

class Model {
public:
  static std::unique_ptr<Model> build(const ModelConfig& cfg);

  // input: [T,B,C,H,W] analog (first embedding is the entrance layer).
  // Returns logits [B,classes].
  ag::Var forward(Ctx& ctx, const Tensor& input);

  // Body only: final-stage token features [T,B,N,D] before the head. With
  // ctx.states set, T may be any prefix length — feeding one timestep at a
  // time reproduces the full-sequence features slice for slice.
  ag::Var forward_features(Ctx& ctx, const Tensor& input);

  const ModelConfig& config() const { return cfg_; }
  ParamStore& params() { return params_; }
  const ParamStore& params() const { return params_; }
  int64_t param_count() const { return params_.param_count(); }
  const std::vector<StageInfo>& stages() const { return stages_; }

private:
  Model() = default;
  ModelConfig cfg_;
  ParamStore params_;
  std::vector<StageInfo> stages_;
  std::vector<StageEmbed> embeds_;               // one per stage
  std::vector<std::vector<MsformerBlock>> blocks_;  // per stage
  LinearLayer head_;
};

}  // namespace msvit
