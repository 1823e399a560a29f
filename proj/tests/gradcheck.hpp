#pragma once

// Finite-difference verification harness for tape ops. A test provides the
// leaf variables and a forward closure; the harness dots the output against
// fixed probe weights to get a scalar, backpropagates it, and compares every
// leaf gradient against central differences of the same scalar.

#include <functional>
#include <vector>

#include "doctest.h"
#include "msvit/autograd.hpp"

namespace gradcheck {

using msvit::Ctx;
using msvit::Tensor;

// Scalar probe: sum_i y_i * w_i, recorded on the tape.
inline msvit::ag::Var dot_probe(Ctx& ctx, msvit::ag::Var y, const Tensor& w) {
  REQUIRE(y.value().numel() == w.numel());
  double acc = 0;
  for (int64_t i = 0; i < w.numel(); ++i) acc += y.value()[i] * w[i];
  return ctx.tape->record(Tensor::scalar(acc), {y}, [w](msvit::ag::Node& n) {
    Tensor g(n.parents[0]->value.shape());
    for (int64_t i = 0; i < w.numel(); ++i) g[i] = n.grad[0] * w[i];
    msvit::ag::accumulate_grad(*n.parents[0], g);
  });
}

struct Options {
  double eps = 1e-5;
  double tol = 1e-6;  // |analytic - fd| <= tol * max(1, |fd|)
  bool smoothed = false;
};

// `forward` runs the op(s) under test inside the given context and returns
// the output Var built from the leaves. Leaves must require grad.
inline void check(std::vector<msvit::ag::Var> leaves,
                  const std::function<msvit::ag::Var(Ctx&)>& forward,
                  Options opt = {}) {
  msvit::Rng rng = msvit::make_rng(0xfd, 0xfd);
  Tensor probe_w;

  auto loss_value = [&]() {
    msvit::ag::Tape tape;
    Ctx ctx;
    ctx.tape = &tape;
    ctx.smoothed = opt.smoothed;
    msvit::ag::Var y = forward(ctx);
    if (probe_w.empty()) probe_w = Tensor::uniform(y.value().shape(), rng, -1.0, 1.0);
    double acc = 0;
    for (int64_t i = 0; i < probe_w.numel(); ++i) acc += y.value()[i] * probe_w[i];
    return acc;
  };
  (void)loss_value();  // materialize probe weights

  // Analytic pass.
  msvit::ag::Tape tape;
  Ctx ctx;
  ctx.tape = &tape;
  ctx.smoothed = opt.smoothed;
  msvit::ag::Var y = forward(ctx);
  msvit::ag::Var loss = dot_probe(ctx, y, probe_w);
  tape.backward(loss);

  for (auto& leaf : leaves) {
    REQUIRE(leaf.requires_grad());
    Tensor analytic = leaf.has_grad() ? leaf.grad() : Tensor::zeros(leaf.shape());
    Tensor& v = leaf.value();
    for (int64_t i = 0; i < v.numel(); ++i) {
      const double keep = v[i];
      v[i] = keep + opt.eps;
      const double up = loss_value();
      v[i] = keep - opt.eps;
      const double down = loss_value();
      v[i] = keep;
      const double fd = (up - down) / (2.0 * opt.eps);
      const double scale = std::max(1.0, std::abs(fd));
      REQUIRE(std::abs(analytic[i] - fd) <= opt.tol * scale);
    }
  }
}

}  // namespace gradcheck
