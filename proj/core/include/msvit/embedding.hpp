#pragma once

#include <string>

#include "msvit/layers.hpp"

namespace msvit {

// Order of the pooling stage inside the two-conv branch:
//   PoolMid:  conv-BN-pool-SN-conv-BN-SN
//   PoolLate: conv-BN-SN-conv-BN-pool-SN
enum class GPipeline { PoolMid, PoolLate };

GPipeline g_pipeline_from_string(const std::string& s);
const char* g_pipeline_name(GPipeline g);

// Multi-scale-fusion patch embedding block. Two parallel downsampling paths
// over image input [T,B,C_in,H,W] -> [T,B,C_out,H/2,W/2]:
//   F: 1x1 stride-2 conv + BN + SN         (point path)
//   G: two 3x3 stride-1 convs with a 2x2/2 max pool between their BN/SN
//      stages (placement per GPipeline)    (local path)
// fused by elementwise OR of the spike maps.
struct SpemsfBlock {
  std::string path;
  int64_t c_in = 0, c_out = 0;
  GPipeline pipeline = GPipeline::PoolMid;
  ConvLayer f_conv;
  BatchNormLayer f_bn;
  LifLayer f_sn;
  ConvLayer g_conv1, g_conv2;
  BatchNormLayer g_bn1, g_bn2;
  LifLayer g_sn1, g_sn2;

  static SpemsfBlock create(ParamStore& ps, const std::string& path, int64_t c_in,
                            int64_t c_out, GPipeline pipeline, bool analog_input,
                            const LifParams& lif, Rng& rng);
  ag::Var forward(Ctx& ctx, ag::Var x_image) const;
};

// Stage embeddings: stage 1 chains two blocks (C_in -> C/2 -> C, net /4);
// later stages use a single block (C_prev -> C, net /2).
struct StageEmbed {
  std::string path;
  std::vector<SpemsfBlock> blocks;

  static StageEmbed create_first(ParamStore& ps, const std::string& path, int64_t c_in,
                                 int64_t c_out, GPipeline g, const LifParams& lif, Rng& rng);
  static StageEmbed create_down(ParamStore& ps, const std::string& path, int64_t c_in,
                                int64_t c_out, GPipeline g, const LifParams& lif, Rng& rng);
  ag::Var forward(Ctx& ctx, ag::Var x_image) const;
};

}  // namespace msvit
