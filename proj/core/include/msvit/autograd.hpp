#pragma once

#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "msvit/context.hpp"
#include "msvit/kernels.hpp"
#include "msvit/lif.hpp"
#include "msvit/tensor.hpp"

namespace msvit::ag {

class Tape;

struct Node {
  Tensor value;
  Tensor grad;  // empty until the first accumulation
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  // Pulls this node's grad and pushes contributions into the parents.
  std::function<void(Node&)> backward;
  const Tape* tape = nullptr;  // recorder, null for leaves

  bool has_grad() const { return !grad.empty(); }
};

using NodePtr = std::shared_ptr<Node>;

// Adds `g` into `n.grad`, allocating zeros on first touch. No-op when the
// node does not require grad.
void accumulate_grad(Node& n, const Tensor& g);

// Handle to a node in the graph. Copying shares the node.
class Var {
public:
  Var() = default;
  explicit Var(NodePtr n) : node_(std::move(n)) {}

  static Var leaf(Tensor value, bool requires_grad);

  bool defined() const { return node_ != nullptr; }
  const Tensor& value() const;
  Tensor& value();  // for optimizer updates and running-stat buffers
  const Shape& shape() const { return value().shape(); }
  bool requires_grad() const { return node_ && node_->requires_grad; }
  bool has_grad() const { return node_ && node_->has_grad(); }
  const Tensor& grad() const;
  void zero_grad();
  NodePtr node() const { return node_; }

private:
  NodePtr node_;
};

// Records ops in execution order; backward replays them reversed. One tape
// per training step.
class Tape {
public:
  // Wraps `value` in a node. When some parent requires grad the op is
  // recorded and `bw` will run during backward; otherwise the result is a
  // detached leaf and `bw` is dropped.
  Var record(Tensor value, std::vector<Var> parents, std::function<void(Node&)> bw);

  // Seeds d(loss)/d(loss) = 1 and runs every recorded op in reverse.
  // `loss` must be a scalar recorded on this tape.
  void backward(const Var& loss);

  size_t size() const { return ops_.size(); }
  bool ran_backward() const { return ran_backward_; }

private:
  std::vector<NodePtr> ops_;
  bool ran_backward_ = false;
};

// --- differentiable ops -----------------------------------------------
//
// Each op computes eagerly and, when ctx.tape is set, records its backward.
// Layer bookkeeping (profiling, spike audits) lives in the layer classes;
// these are the raw ops.

namespace ops {

Var add(Ctx& ctx, Var a, Var b);
Var scale(Ctx& ctx, Var a, double s);
Var reshape(Ctx& ctx, Var a, Shape shape);
// Saturating spike-train union: a + b - a*b. Identity on {0,1} pairs.
Var or_fuse(Ctx& ctx, Var a, Var b);

// x: [..., d_in] against w: [d_in, d_out], bias [d_out] optional
// (pass an undefined Var for none).
Var linear(Ctx& ctx, Var x, Var w, Var b, OpStats* stats = nullptr);

// x: [T,B,C,H,W], w: [C_out,C_in,k,k].
Var conv2d(Ctx& ctx, Var x, Var w, Var b, int64_t stride, int64_t pad,
           OpStats* stats = nullptr);

// Batch norm over every axis except `channel_axis`. In training mode (uses
// batch statistics) the running buffers are updated in place; gradients
// flow through the batch statistics. Inference mode normalizes by the
// running buffers.
Var batchnorm(Ctx& ctx, Var x, Var gamma, Var beta, Var running_mean, Var running_var,
              double epsilon, double momentum, int64_t channel_axis);

// LIF over the leading T axis. Spiking mode emits {0,1} and uses the
// surrogate in backward with the reset detached; smoothed mode
// (ctx.smoothed) replaces the threshold with the surrogate primitive and
// differentiates the whole recursion exactly. `state_key` names the layer's
// membrane slot when ctx.states is set.
Var lif(Ctx& ctx, Var current, const LifParams& p, SpikeForm form,
        const std::string& state_key);

// [T,B,C,H,W] -> [T,B,H*W,C] and back.
Var image_to_tokens(Ctx& ctx, Var x);
Var tokens_to_image(Ctx& ctx, Var x, int64_t h, int64_t w);

// [T,B,C,H,W] -> [T,B,H,W]: per-pixel sum over channels.
Var channel_sum(Ctx& ctx, Var x);

// gate: [T,B,H,W] applied multiplicatively across the channels of
// v: [T,B,C,H,W].
Var gate_apply(Ctx& ctx, Var gate, Var v);

// 2x2/2 max pool on [T,B,C,H,W]; odd extents zero-padded, first-wins ties.
Var maxpool2x2(Ctx& ctx, Var x);

// Per-timestep, per-head spike attention on token tensors [T,B,N,D]:
// A = Q K^T per head, out = (A V) * scale, heads concatenated. The result
// is an analog current; feed it to a LIF op. Head counters for the two
// matrix products are returned via `qk`/`av` when given.
Var ssa_scores(Ctx& ctx, Var q, Var k, Var v, double scale, int64_t heads,
               OpStats* qk = nullptr, OpStats* av = nullptr);

// [T,B,N,D] -> [B,D]: mean over timesteps and tokens.
Var time_token_mean(Ctx& ctx, Var x);

// Mean softmax cross-entropy of logits [B,K] against integer labels.
Var cross_entropy(Ctx& ctx, Var logits, const std::vector<int64_t>& labels);

}  // namespace ops
}  // namespace msvit::ag
