#include "msvit/embedding.hpp"

namespace msvit {

GPipeline g_pipeline_from_string(const std::string& s) {
  if (s == "pool_mid") return GPipeline::PoolMid;
  if (s == "pool_late") return GPipeline::PoolLate;
  raise("unknown embedding pipeline '", s, "' (expected pool_mid or pool_late)");
}

const char* g_pipeline_name(GPipeline g) {
  return g == GPipeline::PoolMid ? "pool_mid" : "pool_late";
}

SpemsfBlock SpemsfBlock::create(ParamStore& ps, const std::string& path, int64_t c_in,
                                int64_t c_out, GPipeline pipeline, bool analog_input,
                                const LifParams& lif, Rng& rng) {
  SpemsfBlock b;
  b.path = path;
  b.c_in = c_in;
  b.c_out = c_out;
  b.pipeline = pipeline;
  b.f_conv = ConvLayer::create(ps, path + ".f.conv", c_in, c_out, 1, 2, 0, false, rng);
  b.f_bn = BatchNormLayer::create(ps, path + ".f.bn", c_out);
  b.f_sn = LifLayer::create(path + ".f.sn", lif);
  b.g_conv1 = ConvLayer::create(ps, path + ".g.conv1", c_in, c_out, 3, 1, 1, false, rng);
  b.g_bn1 = BatchNormLayer::create(ps, path + ".g.bn1", c_out);
  b.g_sn1 = LifLayer::create(path + ".g.sn1", lif);
  b.g_conv2 = ConvLayer::create(ps, path + ".g.conv2", c_out, c_out, 3, 1, 1, false, rng);
  b.g_bn2 = BatchNormLayer::create(ps, path + ".g.bn2", c_out);
  b.g_sn2 = LifLayer::create(path + ".g.sn2", lif);
  // Both paths see the raw input; only they carry the entrance cost.
  b.f_conv.analog_input = analog_input;
  b.g_conv1.analog_input = analog_input;
  return b;
}

// F is a strided 1x1; G reaches the same half resolution through its 2x2
// max pool, so the two spike maps always align for the OR fusion.
ag::Var SpemsfBlock::forward(Ctx& ctx, ag::Var x_image) const {
  const Tensor& xv = x_image.value();
  MSVIT_CHECK(xv.rank() == 5 && xv.dim(2) == c_in, "embedding '", path, "' wants [T,B,",
              c_in, ",H,W], got ", shape_str(xv.shape()));
  MSVIT_CHECK(xv.dim(3) % 2 == 0 && xv.dim(4) % 2 == 0, "embedding '", path,
              "' needs even spatial extents, got ", shape_str(xv.shape()));

  ag::Var f = f_conv.forward(ctx, x_image);
  f = f_bn.forward(ctx, f, 2);
  f = f_sn.forward(ctx, f, SpikeForm::Image);

  ag::Var g = g_conv1.forward(ctx, x_image);
  g = g_bn1.forward(ctx, g, 2);
  if (pipeline == GPipeline::PoolMid) g = ag::ops::maxpool2x2(ctx, g);
  g = g_sn1.forward(ctx, g, SpikeForm::Image);
  g = g_conv2.forward(ctx, g);
  g = g_bn2.forward(ctx, g, 2);
  if (pipeline == GPipeline::PoolLate) g = ag::ops::maxpool2x2(ctx, g);
  g = g_sn2.forward(ctx, g, SpikeForm::Image);

  ag::Var fused = ag::ops::or_fuse(ctx, f, g);
  if (ctx.audit && !ctx.smoothed) ctx.audit->check_binary(path + ".fused", fused.value());
  return fused;
}

StageEmbed StageEmbed::create_first(ParamStore& ps, const std::string& path, int64_t c_in,
                                    int64_t c_out, GPipeline g, const LifParams& lif,
                                    Rng& rng) {
  MSVIT_CHECK(c_out % 2 == 0, "stage-1 embedding needs an even channel target, got ", c_out);
  StageEmbed e;
  e.path = path;
  e.blocks.push_back(SpemsfBlock::create(ps, path + ".down1", c_in, c_out / 2, g, true, lif, rng));
  e.blocks.push_back(SpemsfBlock::create(ps, path + ".down2", c_out / 2, c_out, g, false, lif, rng));
  return e;
}

StageEmbed StageEmbed::create_down(ParamStore& ps, const std::string& path, int64_t c_in,
                                   int64_t c_out, GPipeline g, const LifParams& lif,
                                   Rng& rng) {
  StageEmbed e;
  e.path = path;
  e.blocks.push_back(SpemsfBlock::create(ps, path + ".down1", c_in, c_out, g, false, lif, rng));
  return e;
}

ag::Var StageEmbed::forward(Ctx& ctx, ag::Var x_image) const {
  ag::Var x = x_image;
  for (const auto& b : blocks) x = b.forward(ctx, x);
  return x;
}

}  // namespace msvit
