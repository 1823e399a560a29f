#include "msvit/model.hpp"

#include <sstream>

namespace msvit {

void ModelConfig::validate() const {
  std::vector<std::string> bad;
  auto complain = [&](std::string msg) { bad.push_back(std::move(msg)); };

  if (timesteps < 1) complain("timesteps must be >= 1");
  if (in_channels < 1) complain("in_channels must be >= 1");
  if (classes < 2) complain("classes must be >= 2");
  if (height < 16 || width < 16 || height % 16 || width % 16)
    complain("input extent must be a positive multiple of 16 (three /2 stages after a /4)");
  if (dims[0] % 2) complain("dims[0] must be even (stage-1 embedding steps through dims[0]/2)");
  for (size_t s = 0; s < 3; ++s) {
    if (dims[s] < 1) complain("dims[" + std::to_string(s) + "] must be >= 1");
    if (depths[s] < 0) complain("depths[" + std::to_string(s) + "] must be >= 0");
    if (attention[s] == AttentionKind::Ssa && dims[s] % ssa_heads)
      complain("stage " + std::to_string(s + 1) + " uses ssa but dims[" + std::to_string(s) +
               "]=" + std::to_string(dims[s]) + " is not divisible by " +
               std::to_string(ssa_heads) + " heads");
  }
  if (smlp_ratio < 1) complain("smlp_ratio must be >= 1");
  if (ssa_heads < 1) complain("ssa_heads must be >= 1");
  if (!(ssa_scale > 0)) complain("ssa_scale must be positive");
  try {
    lif.validate();
  } catch (const Error& e) {
    complain(e.what());
  }

  if (!bad.empty()) {
    std::ostringstream os;
    os << "invalid model config (" << bad.size() << " problem" << (bad.size() > 1 ? "s" : "")
       << "):";
    for (const auto& b : bad) os << "\n  - " << b;
    throw Error(os.str());
  }
}

std::vector<StageInfo> stage_schedule(const ModelConfig& cfg) {
  std::vector<StageInfo> out;
  int64_t h = cfg.height / 4, w = cfg.width / 4;
  for (int64_t s = 0; s < 3; ++s) {
    StageInfo info;
    info.index = s;
    info.dim = cfg.dims[static_cast<size_t>(s)];
    info.depth = cfg.depths[static_cast<size_t>(s)];
    info.kind = cfg.attention[static_cast<size_t>(s)];
    info.grid_h = h;
    info.grid_w = w;
    out.push_back(info);
    h /= 2;
    w /= 2;
  }
  return out;
}

std::unique_ptr<Model> Model::build(const ModelConfig& cfg) {
  cfg.validate();
  auto model = std::unique_ptr<Model>(new Model());
  model->cfg_ = cfg;
  model->stages_ = stage_schedule(cfg);
  Rng rng = make_rng(cfg.seed, /*salt=*/0x6d73766974ull);  // weight stream

  ParamStore& ps = model->params_;
  model->embeds_.push_back(StageEmbed::create_first(ps, "embed1", cfg.in_channels,
                                                    cfg.dims[0], cfg.embed_pipeline, cfg.lif,
                                                    rng));
  model->embeds_.push_back(StageEmbed::create_down(ps, "embed2", cfg.dims[0], cfg.dims[1],
                                                   cfg.embed_pipeline, cfg.lif, rng));
  model->embeds_.push_back(StageEmbed::create_down(ps, "embed3", cfg.dims[1], cfg.dims[2],
                                                   cfg.embed_pipeline, cfg.lif, rng));

  model->blocks_.resize(3);
  for (size_t s = 0; s < 3; ++s) {
    const StageInfo& st = model->stages_[s];
    for (int64_t b = 0; b < st.depth; ++b) {
      std::string path = "stage" + std::to_string(s + 1) + ".block" + std::to_string(b);
      model->blocks_[s].push_back(MsformerBlock::create(
          ps, path, st.kind, st.dim, st.grid_h, st.grid_w, cfg.mssa_variant, cfg.mssa_proj,
          cfg.smlp_ratio, cfg.ssa_heads, cfg.ssa_scale, cfg.lif, rng));
    }
  }

  model->head_ = LinearLayer::create(ps, "head", cfg.dims[2], cfg.classes, true, rng);
  model->head_.analog_input = true;  // mean spike rates are real-valued
  return model;
}

ag::Var Model::forward_features(Ctx& ctx, const Tensor& input) {
  MSVIT_CHECK(input.rank() == 5, "model input must be [T,B,C,H,W], got ",
              shape_str(input.shape()));
  MSVIT_CHECK(input.dim(2) == cfg_.in_channels && input.dim(3) == cfg_.height &&
                  input.dim(4) == cfg_.width,
              "model built for [T,B,", cfg_.in_channels, ",", cfg_.height, ",", cfg_.width,
              "], got ", shape_str(input.shape()));
  MSVIT_CHECK(input.dim(0) >= 1 && input.dim(1) >= 1, "empty batch");

  ag::Var x = ag::Var::leaf(input, false);
  ag::Var tokens;
  for (size_t s = 0; s < 3; ++s) {
    x = embeds_[s].forward(ctx, x);
    tokens = ag::ops::image_to_tokens(ctx, x);
    for (const auto& block : blocks_[s]) tokens = block.forward(ctx, tokens);
    if (s + 1 < 3 && !blocks_[s].empty())
      x = ag::ops::tokens_to_image(ctx, tokens, stages_[s].grid_h, stages_[s].grid_w);
  }
  return tokens;
}

ag::Var Model::forward(Ctx& ctx, const Tensor& input) {
  ag::Var features = forward_features(ctx, input);
  ag::Var pooled = ag::ops::time_token_mean(ctx, features);
  return head_.forward(ctx, pooled);
}

}  // namespace msvit
