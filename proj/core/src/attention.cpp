#include "msvit/attention.hpp"

#include <cmath>

namespace msvit {

MssaVariant mssa_variant_from_string(const std::string& s) {
  if (s == "pq") return MssaVariant::PQ;
  if (s == "pp") return MssaVariant::PP;
  if (s == "qq") return MssaVariant::QQ;
  if (s == "p") return MssaVariant::P;
  if (s == "q") return MssaVariant::Q;
  raise("unknown attention variant '", s, "' (expected pq, pp, qq, p or q)");
}

const char* mssa_variant_name(MssaVariant v) {
  switch (v) {
    case MssaVariant::PQ: return "pq";
    case MssaVariant::PP: return "pp";
    case MssaVariant::QQ: return "qq";
    case MssaVariant::P: return "p";
    case MssaVariant::Q: return "q";
  }
  return "?";
}

// P branches look at a 3x3 neighborhood, Q branches at the token itself.
std::vector<BranchScale> mssa_variant_branches(MssaVariant v) {
  switch (v) {
    case MssaVariant::PQ: return {BranchScale::Local, BranchScale::Point};
    case MssaVariant::PP: return {BranchScale::Local, BranchScale::Local};
    case MssaVariant::QQ: return {BranchScale::Point, BranchScale::Point};
    case MssaVariant::P: return {BranchScale::Local};
    case MssaVariant::Q: return {BranchScale::Point};
  }
  raise("bad variant");
}

MssaAttendResult mssa_attend(const std::vector<SpikeTensor>& scores, const SpikeTensor& v,
                             const LifParams& gate, Profiler* prof, const std::string& path) {
  MSVIT_CHECK(!scores.empty(), "mssa_attend needs at least one score map");
  MSVIT_CHECK(v.form() == SpikeForm::Tokens, "mssa_attend wants token form");
  for (const auto& s : scores)
    MSVIT_CHECK(s.form() == SpikeForm::Tokens && same_shape(s.shape(), v.shape()),
                "score map shape ", shape_str(s.shape()), " does not match V ",
                shape_str(v.shape()));
  const int64_t T = v.timesteps(), B = v.batch(), N = v.tokens(), D = v.channels();

  // Per-token importance: total spikes across channels of every score map.
  Tensor alpha({T, B, N});
  int64_t score_spikes = 0;
  for (const auto& s : scores) {
    score_spikes += s.spike_count();
    for (int64_t r = 0; r < T * B * N; ++r) {
      int64_t acc = 0;
      for (int64_t d = 0; d < D; ++d) acc += s[r * D + d];
      alpha[r] += static_cast<double>(acc);
    }
  }

  // The gate is itself a neuron: it integrates token importance over time.
  LifState st = LifState::initial({B, N, 1}, gate);
  Tensor gate_current = alpha.reshaped({T, B, N, 1});
  SpikeTensor gate_s = lif_forward(gate_current, gate, st, SpikeForm::Tokens);

  MssaAttendResult r{SpikeTensor(v.shape(), SpikeForm::Tokens), gate_s, std::move(alpha)};
  for (int64_t row = 0; row < T * B * N; ++row) {
    if (!gate_s[row]) continue;
    for (int64_t d = 0; d < D; ++d) r.out[row * D + d] = v[row * D + d];
  }

  if (prof) {
    const int64_t branches = static_cast<int64_t>(scores.size());
    OpStats sum_st;
    sum_st.flops = T * B * N * D * branches;
    sum_st.sops = score_spikes;
    sum_st.in_spikes = score_spikes;
    sum_st.in_elems = v.numel() * branches;
    prof->record(path + ".score_sum", LayerKind::MssaColumnSum,
                 count_flops(MssaColumnSumDesc{N, D, branches}), sum_st, T, B, false);
    OpStats gate_st;
    gate_st.flops = T * B * N * D;
    gate_st.sops = r.out.spike_count();
    gate_st.in_spikes = v.spike_count();
    gate_st.in_elems = v.numel();
    prof->record(path + ".gate_apply", LayerKind::MssaGate, count_flops(MssaGateDesc{N, D}),
                 gate_st, T, B, false);
  }
  return r;
}

SpikeTensor ssa_attend(const SpikeTensor& q, const SpikeTensor& k, const SpikeTensor& v,
                       double scale, int64_t heads, const LifParams& sn, Profiler* prof,
                       const std::string& path) {
  MSVIT_CHECK(q.form() == SpikeForm::Tokens && k.form() == SpikeForm::Tokens &&
                  v.form() == SpikeForm::Tokens,
              "ssa_attend wants token form");
  MSVIT_CHECK(same_shape(q.shape(), k.shape()) && same_shape(q.shape(), v.shape()),
              "Q/K/V shapes disagree");
  const int64_t T = q.timesteps(), B = q.batch(), N = q.tokens(), D = q.channels();
  MSVIT_CHECK(heads >= 1 && D % heads == 0, "head count ", heads, " must divide D=", D);
  const int64_t dh = D / heads;

  Tensor current({T, B, N, D});
  int64_t qk_sops = 0, av_sops = 0;
  std::vector<int64_t> a(static_cast<size_t>(N * N));
  for (int64_t tb = 0; tb < T * B; ++tb) {
    const uint8_t* qp = q.data() + tb * N * D;
    const uint8_t* kp = k.data() + tb * N * D;
    const uint8_t* vp = v.data() + tb * N * D;
    double* yp = current.data() + tb * N * D;
    for (int64_t hd = 0; hd < heads; ++hd) {
      const int64_t off = hd * dh;
      for (int64_t n = 0; n < N; ++n)
        for (int64_t m = 0; m < N; ++m) {
          int64_t acc = 0;
          for (int64_t d = 0; d < dh; ++d) acc += qp[n * D + off + d] * kp[m * D + off + d];
          a[static_cast<size_t>(n * N + m)] = acc;
          qk_sops += acc;
        }
      for (int64_t n = 0; n < N; ++n)
        for (int64_t d = 0; d < dh; ++d) {
          int64_t acc = 0;
          for (int64_t m = 0; m < N; ++m) {
            int64_t prod = a[static_cast<size_t>(n * N + m)] * vp[m * D + off + d];
            acc += prod;
            av_sops += prod;
          }
          yp[n * D + off + d] = static_cast<double>(acc) * scale;
        }
    }
  }

  if (prof) {
    OpStats qk_st;
    qk_st.flops = T * B * N * N * D;
    qk_st.sops = qk_sops;
    qk_st.in_spikes = q.spike_count() + k.spike_count();
    qk_st.in_elems = q.numel() + k.numel();
    prof->record(path + ".qk", LayerKind::SsaQk, count_flops(SsaQkDesc{N, D}), qk_st, T, B,
                 false);
    OpStats av_st;
    av_st.flops = T * B * N * N * D;
    av_st.sops = av_sops;
    av_st.in_spikes = v.spike_count();
    av_st.in_elems = v.numel();
    prof->record(path + ".av", LayerKind::SsaAv, count_flops(SsaAvDesc{N, D}), av_st, T, B,
                 false);
  }

  LifState st = LifState::initial({B, N, D}, sn);
  return lif_forward(current, sn, st, SpikeForm::Tokens);
}

SpikeConvBranch SpikeConvBranch::create(ParamStore& ps, const std::string& path, int64_t dim,
                                        BranchScale scale, const LifParams& lif, Rng& rng) {
  SpikeConvBranch b;
  const int64_t k = scale == BranchScale::Local ? 3 : 1;
  b.conv = ConvLayer::create(ps, path + ".conv", dim, dim, k, 1, k / 2, false, rng);
  b.bn = BatchNormLayer::create(ps, path + ".bn", dim);
  b.sn = LifLayer::create(path + ".sn", lif);
  return b;
}

ag::Var SpikeConvBranch::forward(Ctx& ctx, ag::Var x_image) const {
  ag::Var y = conv.forward(ctx, x_image);
  y = bn.forward(ctx, y, 2);
  return sn.forward(ctx, y, SpikeForm::Image);
}

Mssa Mssa::create(ParamStore& ps, const std::string& path, int64_t dim, int64_t grid_h,
                  int64_t grid_w, MssaVariant variant, bool with_proj, const LifParams& lif,
                  Rng& rng) {
  Mssa m;
  m.path = path;
  m.dim = dim;
  m.grid_h = grid_h;
  m.grid_w = grid_w;
  auto branches = mssa_variant_branches(variant);
  for (size_t i = 0; i < branches.size(); ++i)
    m.score_branches.push_back(SpikeConvBranch::create(
        ps, path + ".score" + std::to_string(i), dim, branches[i], lif, rng));
  m.v_branch = SpikeConvBranch::create(ps, path + ".v", dim, BranchScale::Point, lif, rng);
  m.gate_sn = LifLayer::create(path + ".gate", lif);
  if (with_proj)
    m.proj = SpikeConvBranch::create(ps, path + ".proj", dim, BranchScale::Point, lif, rng);
  return m;
}

ag::Var Mssa::forward(Ctx& ctx, ag::Var x_tokens) const {
  const Tensor& xv = x_tokens.value();
  MSVIT_CHECK(xv.rank() == 4 && xv.dim(2) == grid_h * grid_w && xv.dim(3) == dim,
              "attention '", path, "' wants [T,B,", grid_h * grid_w, ",", dim, "], got ",
              shape_str(xv.shape()));
  const int64_t T = xv.dim(0), B = xv.dim(1), N = grid_h * grid_w, D = dim;

  ag::Var img = ag::ops::tokens_to_image(ctx, x_tokens, grid_h, grid_w);
  ag::Var v = v_branch.forward(ctx, img);

  // alpha = per-pixel channel totals of every score map, summed.
  ag::Var alpha;
  OpStats sum_st;
  for (const auto& br : score_branches) {
    ag::Var s = br.forward(ctx, img);
    if (ctx.prof) {
      sum_st.in_spikes += static_cast<int64_t>(std::llround(s.value().sum()));
      sum_st.in_elems += s.value().numel();
    }
    ag::Var part = ag::ops::channel_sum(ctx, s);
    alpha = alpha.defined() ? ag::ops::add(ctx, alpha, part) : part;
  }
  if (ctx.prof) {
    const int64_t branches = static_cast<int64_t>(score_branches.size());
    sum_st.flops = T * B * N * D * branches;
    sum_st.sops = sum_st.in_spikes;
    ctx.prof->record(path + ".score_sum", LayerKind::MssaColumnSum,
                     count_flops(MssaColumnSumDesc{N, D, branches}), sum_st, T, B, false);
  }

  ag::Var gate_in = ag::ops::reshape(ctx, alpha, {T, B, N, 1});
  ag::Var gate = gate_sn.forward(ctx, gate_in, SpikeForm::Tokens);
  ag::Var gate_img = ag::ops::reshape(ctx, gate, {T, B, grid_h, grid_w});

  ag::Var gated = ag::ops::gate_apply(ctx, gate_img, v);
  if (ctx.prof) {
    OpStats gate_st;
    gate_st.flops = T * B * N * D;
    gate_st.sops = static_cast<int64_t>(std::llround(gated.value().sum()));
    gate_st.in_spikes = static_cast<int64_t>(std::llround(v.value().sum()));
    gate_st.in_elems = v.value().numel();
    ctx.prof->record(path + ".gate_apply", LayerKind::MssaGate,
                     count_flops(MssaGateDesc{N, D}), gate_st, T, B, false);
  }

  ag::Var out = proj ? proj->forward(ctx, gated) : gated;
  return ag::ops::image_to_tokens(ctx, out);
}

Ssa Ssa::create(ParamStore& ps, const std::string& path, int64_t dim, int64_t heads,
                double scale, const LifParams& lif, Rng& rng) {
  MSVIT_CHECK(heads >= 1 && dim % heads == 0, "attention '", path, "': heads ", heads,
              " must divide dim ", dim);
  Ssa s;
  s.path = path;
  s.dim = dim;
  s.heads = heads;
  s.scale = scale;
  s.wq = LinearLayer::create(ps, path + ".wq", dim, dim, false, rng);
  s.wk = LinearLayer::create(ps, path + ".wk", dim, dim, false, rng);
  s.wv = LinearLayer::create(ps, path + ".wv", dim, dim, false, rng);
  s.wo = LinearLayer::create(ps, path + ".wo", dim, dim, false, rng);
  s.bnq = BatchNormLayer::create(ps, path + ".bnq", dim);
  s.bnk = BatchNormLayer::create(ps, path + ".bnk", dim);
  s.bnv = BatchNormLayer::create(ps, path + ".bnv", dim);
  s.bno = BatchNormLayer::create(ps, path + ".bno", dim);
  s.snq = LifLayer::create(path + ".snq", lif);
  s.snk = LifLayer::create(path + ".snk", lif);
  s.snv = LifLayer::create(path + ".snv", lif);
  s.sn_attn = LifLayer::create(path + ".sn_attn", lif);
  s.sno = LifLayer::create(path + ".sno", lif);
  return s;
}

ag::Var Ssa::forward(Ctx& ctx, ag::Var x_tokens) const {
  const Tensor& xv = x_tokens.value();
  MSVIT_CHECK(xv.rank() == 4 && xv.dim(3) == dim, "attention '", path, "' wants [T,B,N,",
              dim, "], got ", shape_str(xv.shape()));
  const int64_t T = xv.dim(0), B = xv.dim(1), N = xv.dim(2);

  auto spike_proj = [&](const LinearLayer& w, const BatchNormLayer& bn, const LifLayer& sn,
                        ag::Var in) {
    ag::Var y = w.forward(ctx, in);
    y = bn.forward(ctx, y, 3);
    return sn.forward(ctx, y, SpikeForm::Tokens);
  };
  ag::Var q = spike_proj(wq, bnq, snq, x_tokens);
  ag::Var k = spike_proj(wk, bnk, snk, x_tokens);
  ag::Var v = spike_proj(wv, bnv, snv, x_tokens);

  OpStats qk_st, av_st;
  ag::Var current = ag::ops::ssa_scores(ctx, q, k, v, scale, heads,
                                        ctx.prof ? &qk_st : nullptr,
                                        ctx.prof ? &av_st : nullptr);
  if (ctx.prof) {
    ctx.prof->record(path + ".qk", LayerKind::SsaQk, count_flops(SsaQkDesc{N, dim}), qk_st,
                     T, B, false);
    ctx.prof->record(path + ".av", LayerKind::SsaAv, count_flops(SsaAvDesc{N, dim}), av_st,
                     T, B, false);
  }
  ag::Var attn = sn_attn.forward(ctx, current, SpikeForm::Tokens);
  return spike_proj(wo, bno, sno, attn);
}

Smlp Smlp::create(ParamStore& ps, const std::string& path, int64_t dim, int64_t ratio,
                  const LifParams& lif, Rng& rng) {
  MSVIT_CHECK(ratio >= 1, "mlp ratio must be >= 1, got ", ratio);
  Smlp m;
  m.path = path;
  m.dim = dim;
  m.hidden = dim * ratio;
  m.fc1 = LinearLayer::create(ps, path + ".fc1", dim, m.hidden, false, rng);
  m.fc2 = LinearLayer::create(ps, path + ".fc2", m.hidden, dim, false, rng);
  m.bn1 = BatchNormLayer::create(ps, path + ".bn1", m.hidden);
  m.bn2 = BatchNormLayer::create(ps, path + ".bn2", dim);
  m.sn1 = LifLayer::create(path + ".sn1", lif);
  m.sn2 = LifLayer::create(path + ".sn2", lif);
  return m;
}

ag::Var Smlp::forward(Ctx& ctx, ag::Var x_tokens) const {
  ag::Var y = fc1.forward(ctx, x_tokens);
  y = bn1.forward(ctx, y, 3);
  y = sn1.forward(ctx, y, SpikeForm::Tokens);
  y = fc2.forward(ctx, y);
  y = bn2.forward(ctx, y, 3);
  return sn2.forward(ctx, y, SpikeForm::Tokens);
}

MsformerBlock MsformerBlock::create(ParamStore& ps, const std::string& path,
                                    AttentionKind kind, int64_t dim, int64_t grid_h,
                                    int64_t grid_w, MssaVariant variant, bool mssa_proj,
                                    int64_t smlp_ratio, int64_t ssa_heads, double ssa_scale,
                                    const LifParams& lif, Rng& rng) {
  MsformerBlock b;
  b.path = path;
  b.kind = kind;
  if (kind == AttentionKind::Mssa)
    b.mssa = Mssa::create(ps, path + ".attn", dim, grid_h, grid_w, variant, mssa_proj, lif, rng);
  else
    b.ssa = Ssa::create(ps, path + ".attn", dim, ssa_heads, ssa_scale, lif, rng);
  b.smlp = Smlp::create(ps, path + ".smlp", dim, smlp_ratio, lif, rng);
  return b;
}

ag::Var MsformerBlock::forward(Ctx& ctx, ag::Var x_tokens) const {
  ag::Var mix = kind == AttentionKind::Mssa ? mssa->forward(ctx, x_tokens)
                                            : ssa->forward(ctx, x_tokens);
  ag::Var y1 = ag::ops::add(ctx, mix, x_tokens);
  if (ctx.audit && !ctx.smoothed) ctx.audit->check_residual(path + ".res1", y1.value());
  ag::Var y2 = ag::ops::add(ctx, smlp.forward(ctx, y1), y1);
  if (ctx.audit && !ctx.smoothed) ctx.audit->check_residual(path + ".res2", y2.value());
  return y2;
}

}  // namespace msvit
