#include "msvit/autograd.hpp"

#include <cmath>

#include "msvit/batchnorm.hpp"
#include "msvit/kernels.hpp"

namespace msvit::ag {

void accumulate_grad(Node& n, const Tensor& g) {
  if (!n.requires_grad) return;
  MSVIT_CHECK(same_shape(g.shape(), n.value.shape()), "gradient shape ", shape_str(g.shape()),
              " does not match value ", shape_str(n.value.shape()));
  if (n.grad.empty()) n.grad = Tensor(n.value.shape());
  n.grad.add_(g);
}

Var Var::leaf(Tensor value, bool requires_grad) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  n->requires_grad = requires_grad;
  return Var(std::move(n));
}

const Tensor& Var::value() const {
  MSVIT_CHECK(node_, "use of an undefined Var");
  return node_->value;
}

Tensor& Var::value() {
  MSVIT_CHECK(node_, "use of an undefined Var");
  return node_->value;
}

const Tensor& Var::grad() const {
  MSVIT_CHECK(node_, "use of an undefined Var");
  MSVIT_CHECK(node_->has_grad(), "no gradient present; run backward first");
  return node_->grad;
}

void Var::zero_grad() {
  if (node_) node_->grad = Tensor();
}

Var Tape::record(Tensor value, std::vector<Var> parents, std::function<void(Node&)> bw) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  bool needs = false;
  for (const auto& p : parents) needs = needs || p.requires_grad();
  if (!needs) return Var(std::move(n));  // constant subgraph: detach
  n->requires_grad = true;
  n->parents.reserve(parents.size());
  for (auto& p : parents) n->parents.push_back(p.node());
  n->backward = std::move(bw);
  n->tape = this;
  ops_.push_back(n);
  return Var(std::move(n));
}

void Tape::backward(const Var& loss) {
  MSVIT_CHECK(!ran_backward_, "backward already ran on this tape");
  MSVIT_CHECK(loss.defined(), "backward on an undefined Var");
  MSVIT_CHECK(loss.node()->tape == this,
              "the loss was not recorded on this tape; run a forward pass first");
  MSVIT_CHECK(loss.value().numel() == 1, "loss must be scalar, got ",
              shape_str(loss.value().shape()));
  loss.node()->grad = Tensor::scalar(1.0);
  for (auto it = ops_.rbegin(); it != ops_.rend(); ++it) {
    Node& n = **it;
    if (n.has_grad() && n.backward) n.backward(n);
  }
  ran_backward_ = true;
}

namespace ops {

namespace {
Var finish(Ctx& ctx, Tensor y, std::vector<Var> parents, std::function<void(Node&)> bw) {
  if (!ctx.tape) return Var::leaf(std::move(y), false);
  return ctx.tape->record(std::move(y), std::move(parents), std::move(bw));
}
}  // namespace

Var add(Ctx& ctx, Var a, Var b) {
  MSVIT_CHECK(same_shape(a.shape(), b.shape()), "add: ", shape_str(a.shape()), " vs ",
              shape_str(b.shape()));
  Tensor y = a.value();
  y.add_(b.value());
  return finish(ctx, std::move(y), {a, b}, [](Node& n) {
    accumulate_grad(*n.parents[0], n.grad);
    accumulate_grad(*n.parents[1], n.grad);
  });
}

Var scale(Ctx& ctx, Var a, double s) {
  Tensor y = a.value();
  y.scale_(s);
  return finish(ctx, std::move(y), {a}, [s](Node& n) {
    Tensor g = n.grad;
    g.scale_(s);
    accumulate_grad(*n.parents[0], g);
  });
}

Var reshape(Ctx& ctx, Var a, Shape shape) {
  Tensor y = a.value().reshaped(std::move(shape));
  return finish(ctx, std::move(y), {a}, [](Node& n) {
    accumulate_grad(*n.parents[0], n.grad.reshaped(n.parents[0]->value.shape()));
  });
}

Var or_fuse(Ctx& ctx, Var a, Var b) {
  MSVIT_CHECK(same_shape(a.shape(), b.shape()), "or_fuse: ", shape_str(a.shape()), " vs ",
              shape_str(b.shape()));
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  Tensor y(av.shape());
  for (int64_t i = 0; i < y.numel(); ++i) y[i] = av[i] + bv[i] - av[i] * bv[i];
  return finish(ctx, std::move(y), {a, b}, [](Node& n) {
    const Tensor& av = n.parents[0]->value;
    const Tensor& bv = n.parents[1]->value;
    Tensor ga(av.shape()), gb(bv.shape());
    for (int64_t i = 0; i < av.numel(); ++i) {
      ga[i] = n.grad[i] * (1.0 - bv[i]);
      gb[i] = n.grad[i] * (1.0 - av[i]);
    }
    accumulate_grad(*n.parents[0], ga);
    accumulate_grad(*n.parents[1], gb);
  });
}

Var linear(Ctx& ctx, Var x, Var w, Var b, OpStats* stats) {
  const Tensor* bias = b.defined() ? &b.value() : nullptr;
  Tensor y = linear_forward(x.value(), w.value(), bias, stats);
  std::vector<Var> parents = b.defined() ? std::vector<Var>{x, w, b} : std::vector<Var>{x, w};
  return finish(ctx, std::move(y), std::move(parents), [](Node& n) {
    const Tensor& xv = n.parents[0]->value;
    const Tensor& wv = n.parents[1]->value;
    if (n.parents[0]->requires_grad)
      accumulate_grad(*n.parents[0], linear_backward_input(n.grad, wv));
    bool want_b = n.parents.size() > 2 && n.parents[2]->requires_grad;
    if (n.parents[1]->requires_grad || want_b) {
      Tensor gw(wv.shape());
      Tensor gb = want_b ? Tensor(n.parents[2]->value.shape()) : Tensor();
      linear_backward_params(xv, n.grad, gw, want_b ? &gb : nullptr);
      accumulate_grad(*n.parents[1], gw);
      if (want_b) accumulate_grad(*n.parents[2], gb);
    }
  });
}

Var conv2d(Ctx& ctx, Var x, Var w, Var b, int64_t stride, int64_t pad, OpStats* stats) {
  const Tensor* bias = b.defined() ? &b.value() : nullptr;
  Tensor y = conv2d_forward(x.value(), w.value(), bias, stride, pad, stats);
  std::vector<Var> parents = b.defined() ? std::vector<Var>{x, w, b} : std::vector<Var>{x, w};
  return finish(ctx, std::move(y), std::move(parents), [stride, pad](Node& n) {
    const Tensor& xv = n.parents[0]->value;
    const Tensor& wv = n.parents[1]->value;
    if (n.parents[0]->requires_grad)
      accumulate_grad(*n.parents[0],
                      conv2d_backward_input(n.grad, wv, xv.shape(), stride, pad));
    bool want_b = n.parents.size() > 2 && n.parents[2]->requires_grad;
    if (n.parents[1]->requires_grad || want_b) {
      Tensor gw(wv.shape());
      Tensor gb = want_b ? Tensor(n.parents[2]->value.shape()) : Tensor();
      conv2d_backward_params(xv, n.grad, gw, want_b ? &gb : nullptr, stride, pad);
      accumulate_grad(*n.parents[1], gw);
      if (want_b) accumulate_grad(*n.parents[2], gb);
    }
  });
}

Var batchnorm(Ctx& ctx, Var x, Var gamma, Var beta, Var running_mean, Var running_var,
              double epsilon, double momentum, int64_t channel_axis) {
  BatchNormParams p;
  p.gamma = gamma.value();
  p.beta = beta.value();
  p.running_mean = running_mean.value();
  p.running_var = running_var.value();
  p.epsilon = epsilon;
  p.momentum = momentum;
  const BnMode mode = ctx.train_bn ? BnMode::Train : BnMode::Infer;
  const bool rec =
      ctx.tape && (x.requires_grad() || gamma.requires_grad() || beta.requires_grad());
  BnCache cache;
  Tensor y = bn_forward(x.value(), p, mode, channel_axis,
                        rec && mode == BnMode::Train ? &cache : nullptr);
  if (mode == BnMode::Train) {
    running_mean.value() = p.running_mean;
    running_var.value() = p.running_var;
  }
  if (!ctx.tape) return Var::leaf(std::move(y), false);
  return ctx.tape->record(
      std::move(y), {x, gamma, beta},
      [cache = std::move(cache), p = std::move(p), mode, channel_axis](Node& n) {
        Tensor ggamma, gbeta, gx;
        if (mode == BnMode::Train) {
          gx = bn_backward(n.grad, cache, p, ggamma, gbeta);
        } else {
          gx = bn_backward_infer(n.grad, p, channel_axis, ggamma, gbeta,
                                 n.parents[0]->value);
        }
        accumulate_grad(*n.parents[0], gx);
        accumulate_grad(*n.parents[1], ggamma);
        accumulate_grad(*n.parents[2], gbeta);
      });
}

Var lif(Ctx& ctx, Var current, const LifParams& p, SpikeForm form,
        const std::string& state_key) {
  const Tensor& x = current.value();
  MSVIT_CHECK(x.rank() >= 2, "lif op wants a [T,...] tensor");
  const bool rec = ctx.tape && current.requires_grad();

  if (ctx.smoothed) {
    MSVIT_CHECK(!ctx.states, "smoothed mode does not support streaming state");
    Tensor h;
    Tensor y = lif_forward_smooth(x, p, rec ? &h : nullptr);
    return finish(ctx, std::move(y), {current}, [h = std::move(h), p](Node& n) {
      accumulate_grad(*n.parents[0], lif_backward_smooth(h, n.grad, p));
    });
  }

  Shape neuron_shape(x.shape().begin() + 1, x.shape().end());
  LifState local = LifState::initial(neuron_shape, p);
  LifState& st = ctx.states ? ctx.states->get(state_key, neuron_shape, p) : local;
  Tensor h;
  SpikeTensor s = lif_forward(x, p, st, form, rec ? &h : nullptr);
  Tensor y = s.to_analog();
  return finish(ctx, std::move(y), {current},
                [h = std::move(h), s = std::move(s), p](Node& n) {
                  accumulate_grad(*n.parents[0], lif_backward(h, s, n.grad, p));
                });
}

Var image_to_tokens(Ctx& ctx, Var x) {
  const int64_t h = x.value().dim(3), w = x.value().dim(4);
  Tensor y = analog_image_to_tokens(x.value());
  return finish(ctx, std::move(y), {x}, [h, w](Node& n) {
    accumulate_grad(*n.parents[0], analog_tokens_to_image(n.grad, h, w));
  });
}

Var tokens_to_image(Ctx& ctx, Var x, int64_t h, int64_t w) {
  Tensor y = analog_tokens_to_image(x.value(), h, w);
  return finish(ctx, std::move(y), {x}, [](Node& n) {
    accumulate_grad(*n.parents[0], analog_image_to_tokens(n.grad));
  });
}

Var channel_sum(Ctx& ctx, Var x) {
  const Tensor& xv = x.value();
  MSVIT_CHECK(xv.rank() == 5, "channel_sum wants [T,B,C,H,W], got ", shape_str(xv.shape()));
  const int64_t tb = xv.dim(0) * xv.dim(1), c_n = xv.dim(2), hw = xv.dim(3) * xv.dim(4);
  Tensor y({xv.dim(0), xv.dim(1), xv.dim(3), xv.dim(4)});
  for (int64_t i = 0; i < tb; ++i)
    for (int64_t c = 0; c < c_n; ++c)
      for (int64_t px = 0; px < hw; ++px) y[i * hw + px] += xv[(i * c_n + c) * hw + px];
  return finish(ctx, std::move(y), {x}, [](Node& n) {
    const Shape& xs = n.parents[0]->value.shape();
    const int64_t tb = xs[0] * xs[1], c_n = xs[2], hw = xs[3] * xs[4];
    Tensor gx(xs);
    for (int64_t i = 0; i < tb; ++i)
      for (int64_t c = 0; c < c_n; ++c)
        for (int64_t px = 0; px < hw; ++px) gx[(i * c_n + c) * hw + px] = n.grad[i * hw + px];
    accumulate_grad(*n.parents[0], gx);
  });
}

Var gate_apply(Ctx& ctx, Var gate, Var v) {
  const Tensor& gv = gate.value();
  const Tensor& vv = v.value();
  MSVIT_CHECK(gv.rank() == 4 && vv.rank() == 5, "gate_apply wants gate [T,B,H,W] and value [T,B,C,H,W]");
  MSVIT_CHECK(gv.dim(0) == vv.dim(0) && gv.dim(1) == vv.dim(1) && gv.dim(2) == vv.dim(3) &&
                  gv.dim(3) == vv.dim(4),
              "gate shape ", shape_str(gv.shape()), " does not match value ",
              shape_str(vv.shape()));
  const int64_t tb = vv.dim(0) * vv.dim(1), c_n = vv.dim(2), hw = vv.dim(3) * vv.dim(4);
  Tensor y(vv.shape());
  for (int64_t i = 0; i < tb; ++i)
    for (int64_t c = 0; c < c_n; ++c)
      for (int64_t px = 0; px < hw; ++px)
        y[(i * c_n + c) * hw + px] = gv[i * hw + px] * vv[(i * c_n + c) * hw + px];
  return finish(ctx, std::move(y), {gate, v}, [](Node& n) {
    const Tensor& gv = n.parents[0]->value;
    const Tensor& vv = n.parents[1]->value;
    const int64_t tb = vv.dim(0) * vv.dim(1), c_n = vv.dim(2), hw = vv.dim(3) * vv.dim(4);
    if (n.parents[0]->requires_grad) {
      Tensor gg(gv.shape());
      for (int64_t i = 0; i < tb; ++i)
        for (int64_t c = 0; c < c_n; ++c)
          for (int64_t px = 0; px < hw; ++px)
            gg[i * hw + px] += n.grad[(i * c_n + c) * hw + px] * vv[(i * c_n + c) * hw + px];
      accumulate_grad(*n.parents[0], gg);
    }
    if (n.parents[1]->requires_grad) {
      Tensor gvv(vv.shape());
      for (int64_t i = 0; i < tb; ++i)
        for (int64_t c = 0; c < c_n; ++c)
          for (int64_t px = 0; px < hw; ++px)
            gvv[(i * c_n + c) * hw + px] = n.grad[(i * c_n + c) * hw + px] * gv[i * hw + px];
      accumulate_grad(*n.parents[1], gvv);
    }
  });
}

Var maxpool2x2(Ctx& ctx, Var x) {
  std::vector<int64_t> argmax;
  const bool rec = ctx.tape && x.requires_grad();
  Tensor y = maxpool2d_analog(x.value(), rec ? &argmax : nullptr);
  return finish(ctx, std::move(y), {x}, [argmax = std::move(argmax)](Node& n) {
    Tensor gx(n.parents[0]->value.shape());
    for (int64_t o = 0; o < n.grad.numel(); ++o) {
      int64_t src = argmax[static_cast<size_t>(o)];
      if (src >= 0) gx[src] += n.grad[o];
    }
    accumulate_grad(*n.parents[0], gx);
  });
}

Var ssa_scores(Ctx& ctx, Var q, Var k, Var v, double scale, int64_t heads, OpStats* qk,
               OpStats* av) {
  const Tensor& qv = q.value();
  const Tensor& kv = k.value();
  const Tensor& vv = v.value();
  MSVIT_CHECK(qv.rank() == 4, "ssa_scores wants [T,B,N,D] tokens");
  MSVIT_CHECK(same_shape(qv.shape(), kv.shape()) && same_shape(qv.shape(), vv.shape()),
              "Q/K/V shapes disagree");
  const int64_t T = qv.dim(0), B = qv.dim(1), N = qv.dim(2), D = qv.dim(3);
  MSVIT_CHECK(heads >= 1 && D % heads == 0, "head count ", heads, " must divide D=", D);
  const int64_t dh = D / heads;

  // A holds all [N,N] integer score maps: [T,B,heads,N,N].
  Tensor a({T, B, heads, N, N});
  Tensor y({T, B, N, D});
  int64_t qk_sops = 0, av_sops = 0;
  for (int64_t tb = 0; tb < T * B; ++tb) {
    const double* qp = qv.data() + tb * N * D;
    const double* kp = kv.data() + tb * N * D;
    const double* vp = vv.data() + tb * N * D;
    double* yp = y.data() + tb * N * D;
    for (int64_t hd = 0; hd < heads; ++hd) {
      double* ap = a.data() + (tb * heads + hd) * N * N;
      const int64_t off = hd * dh;
      for (int64_t n = 0; n < N; ++n)
        for (int64_t m = 0; m < N; ++m) {
          double acc = 0;
          for (int64_t d = 0; d < dh; ++d) {
            double prod = qp[n * D + off + d] * kp[m * D + off + d];
            acc += prod;
            if (prod != 0.0) qk_sops += static_cast<int64_t>(prod);
          }
          ap[n * N + m] = acc;
        }
      for (int64_t n = 0; n < N; ++n)
        for (int64_t d = 0; d < dh; ++d) {
          double acc = 0;
          for (int64_t m = 0; m < N; ++m) {
            double prod = ap[n * N + m] * vp[m * D + off + d];
            acc += prod;
            if (prod != 0.0) av_sops += static_cast<int64_t>(prod);
          }
          yp[n * D + off + d] = acc * scale;
        }
    }
  }
  if (qk) {
    qk->flops += T * B * N * N * D;
    qk->sops += qk_sops;
    qk->in_spikes += static_cast<int64_t>(std::llround(qv.sum() + kv.sum()));
    qk->in_elems += qv.numel() + kv.numel();
  }
  if (av) {
    av->flops += T * B * N * N * D;
    av->sops += av_sops;
    av->in_spikes += static_cast<int64_t>(std::llround(vv.sum()));
    av->in_elems += vv.numel();
  }
  return finish(ctx, std::move(y), {q, k, v},
                [a = std::move(a), scale, heads, dh](Node& n) {
                  const Tensor& qv = n.parents[0]->value;
                  const Tensor& kv = n.parents[1]->value;
                  const Tensor& vv = n.parents[2]->value;
                  const int64_t T = qv.dim(0), B = qv.dim(1), N = qv.dim(2), D = qv.dim(3);
                  Tensor gq(qv.shape()), gk(kv.shape()), gv(vv.shape());
                  for (int64_t tb = 0; tb < T * B; ++tb) {
                    const double* qp = qv.data() + tb * N * D;
                    const double* kp = kv.data() + tb * N * D;
                    const double* vp = vv.data() + tb * N * D;
                    const double* gy = n.grad.data() + tb * N * D;
                    for (int64_t hd = 0; hd < heads; ++hd) {
                      const double* ap = a.data() + (tb * heads + hd) * N * N;
                      const int64_t off = hd * dh;
                      // gA = scale * gY V^T ; gV = scale * A^T gY
                      std::vector<double> ga(static_cast<size_t>(N * N), 0.0);
                      for (int64_t nn = 0; nn < N; ++nn)
                        for (int64_t m = 0; m < N; ++m) {
                          double acc = 0;
                          for (int64_t d = 0; d < dh; ++d)
                            acc += gy[nn * D + off + d] * vp[m * D + off + d];
                          ga[static_cast<size_t>(nn * N + m)] = acc * scale;
                        }
                      for (int64_t m = 0; m < N; ++m)
                        for (int64_t d = 0; d < dh; ++d) {
                          double acc = 0;
                          for (int64_t nn = 0; nn < N; ++nn)
                            acc += ap[nn * N + m] * gy[nn * D + off + d];
                          gv.data()[tb * N * D + m * D + off + d] = acc * scale;
                        }
                      // gQ = gA K ; gK = gA^T Q
                      for (int64_t nn = 0; nn < N; ++nn)
                        for (int64_t d = 0; d < dh; ++d) {
                          double acc = 0;
                          for (int64_t m = 0; m < N; ++m)
                            acc += ga[static_cast<size_t>(nn * N + m)] * kp[m * D + off + d];
                          gq.data()[tb * N * D + nn * D + off + d] = acc;
                        }
                      for (int64_t m = 0; m < N; ++m)
                        for (int64_t d = 0; d < dh; ++d) {
                          double acc = 0;
                          for (int64_t nn = 0; nn < N; ++nn)
                            acc += ga[static_cast<size_t>(nn * N + m)] * qp[nn * D + off + d];
                          gk.data()[tb * N * D + m * D + off + d] = acc;
                        }
                    }
                  }
                  accumulate_grad(*n.parents[0], gq);
                  accumulate_grad(*n.parents[1], gk);
                  accumulate_grad(*n.parents[2], gv);
                });
}

Var time_token_mean(Ctx& ctx, Var x) {
  const Tensor& xv = x.value();
  MSVIT_CHECK(xv.rank() == 4, "time_token_mean wants [T,B,N,D], got ", shape_str(xv.shape()));
  const int64_t T = xv.dim(0), B = xv.dim(1), N = xv.dim(2), D = xv.dim(3);
  Tensor y({B, D});
  for (int64_t t = 0; t < T; ++t)
    for (int64_t b = 0; b < B; ++b)
      for (int64_t n = 0; n < N; ++n)
        for (int64_t d = 0; d < D; ++d) y[b * D + d] += xv[((t * B + b) * N + n) * D + d];
  y.scale_(1.0 / static_cast<double>(T * N));
  return finish(ctx, std::move(y), {x}, [](Node& n) {
    const Shape& xs = n.parents[0]->value.shape();
    const int64_t T = xs[0], B = xs[1], N = xs[2], D = xs[3];
    const double inv = 1.0 / static_cast<double>(T * N);
    Tensor gx(xs);
    for (int64_t t = 0; t < T; ++t)
      for (int64_t b = 0; b < B; ++b)
        for (int64_t nn = 0; nn < N; ++nn)
          for (int64_t d = 0; d < D; ++d)
            gx[((t * B + b) * N + nn) * D + d] = n.grad[b * D + d] * inv;
    accumulate_grad(*n.parents[0], gx);
  });
}

Var cross_entropy(Ctx& ctx, Var logits, const std::vector<int64_t>& labels) {
  const Tensor& z = logits.value();
  MSVIT_CHECK(z.rank() == 2, "cross_entropy wants [B,K] logits, got ", shape_str(z.shape()));
  const int64_t B = z.dim(0), K = z.dim(1);
  MSVIT_CHECK(static_cast<int64_t>(labels.size()) == B, "got ", labels.size(),
              " labels for batch of ", B);
  Tensor probs({B, K});
  double loss = 0;
  for (int64_t b = 0; b < B; ++b) {
    const double* row = z.data() + b * K;
    int64_t y = labels[static_cast<size_t>(b)];
    MSVIT_CHECK(y >= 0 && y < K, "label ", y, " out of range 0..", K - 1);
    double mx = row[0];
    for (int64_t k = 1; k < K; ++k) mx = std::max(mx, row[k]);
    double denom = 0;
    for (int64_t k = 0; k < K; ++k) denom += std::exp(row[k] - mx);
    double lse = mx + std::log(denom);
    for (int64_t k = 0; k < K; ++k) probs[b * K + k] = std::exp(row[k] - lse);
    loss += lse - row[y];
  }
  loss /= static_cast<double>(B);
  return finish(ctx, Tensor::scalar(loss), {logits},
                [probs = std::move(probs), labels](Node& n) {
                  const int64_t B = probs.dim(0), K = probs.dim(1);
                  const double g = n.grad[0] / static_cast<double>(B);
                  Tensor gz({B, K});
                  for (int64_t b = 0; b < B; ++b)
                    for (int64_t k = 0; k < K; ++k) {
                      double onehot = labels[static_cast<size_t>(b)] == k ? 1.0 : 0.0;
                      gz[b * K + k] = g * (probs[b * K + k] - onehot);
                    }
                  accumulate_grad(*n.parents[0], gz);
                });
}

}  // namespace ops
}  // namespace msvit::ag
