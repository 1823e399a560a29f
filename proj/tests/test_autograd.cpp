#include <cmath>

#include "doctest.h"
#include "gradcheck.hpp"
#include "msvit/autograd.hpp"
#include "oracles.hpp"

using namespace msvit;
using ag::Var;

TEST_SUITE("autograd") {

TEST_CASE("tape mechanics") {
  ag::Tape tape;
  Ctx ctx;
  ctx.tape = &tape;

  Var a = Var::leaf(Tensor::scalar(2.0), true);
  Var b = Var::leaf(Tensor::scalar(3.0), true);
  Var c = ag::ops::add(ctx, a, b);
  Var d = ag::ops::add(ctx, c, a);  // fan-out: a used twice
  CHECK(d.value()[0] == 7.0);
  tape.backward(ag::ops::scale(ctx, d, 2.0));
  CHECK(a.grad()[0] == 4.0);  // both uses accumulate
  CHECK(b.grad()[0] == 2.0);
}

TEST_CASE("backward demands a scalar recorded on this tape") {
  ag::Tape tape;
  Ctx ctx;
  ctx.tape = &tape;
  Var a = Var::leaf(Tensor::zeros({2}), true);
  Var y = ag::ops::scale(ctx, a, 1.0);
  CHECK_THROWS_AS(tape.backward(y), Error);  // not scalar

  Var detached = Var::leaf(Tensor::scalar(0.0), true);
  CHECK_THROWS_AS(tape.backward(detached), Error);  // never recorded
}

TEST_CASE("no-grad graphs record nothing") {
  ag::Tape tape;
  Ctx ctx;
  ctx.tape = &tape;
  Var a = Var::leaf(Tensor::scalar(1.0), false);
  Var y = ag::ops::scale(ctx, a, 5.0);
  CHECK(y.value()[0] == 5.0);
  CHECK(tape.size() == 0);
  CHECK_FALSE(y.requires_grad());
}

TEST_CASE("zero upstream grad yields zero parameter grads") {
  ag::Tape tape;
  Ctx ctx;
  ctx.tape = &tape;
  Var a = Var::leaf(Tensor::scalar(1.5), true);
  Var y = ag::ops::scale(ctx, a, 0.0);  // dy/da = 0
  tape.backward(y);
  CHECK(a.grad()[0] == 0.0);
}

TEST_CASE("add, scale, reshape, or_fuse gradients") {
  Rng rng = make_rng(41, 0);
  Var a = Var::leaf(Tensor::uniform({2, 3}, rng, -1, 1), true);
  Var b = Var::leaf(Tensor::uniform({2, 3}, rng, -1, 1), true);
  gradcheck::check({a, b}, [&](Ctx& ctx) {
    Var s = ag::ops::add(ctx, a, b);
    Var r = ag::ops::reshape(ctx, s, {6});
    return ag::ops::scale(ctx, r, 1.7);
  });
  Var f = Var::leaf(Tensor::uniform({4}, rng, 0.1, 0.9), true);
  Var g = Var::leaf(Tensor::uniform({4}, rng, 0.1, 0.9), true);
  gradcheck::check({f, g},
                   [&](Ctx& ctx) { return ag::ops::or_fuse(ctx, f, g); });
}

TEST_CASE("or_fuse values on binary input") {
  Ctx ctx;  // no tape: eager only
  Var a = Var::leaf(Tensor({4}, {0, 0, 1, 1}), false);
  Var b = Var::leaf(Tensor({4}, {0, 1, 0, 1}), false);
  ag::Tape tape;
  ctx.tape = &tape;
  Var y = ag::ops::or_fuse(ctx, a, b);
  CHECK(y.value()[0] == 0);
  CHECK(y.value()[1] == 1);
  CHECK(y.value()[2] == 1);
  CHECK(y.value()[3] == 1);
}

TEST_CASE("linear gradients") {
  Rng rng = make_rng(42, 0);
  Var x = Var::leaf(Tensor::uniform({1, 1, 3, 4}, rng, -1, 1), true);
  Var w = Var::leaf(Tensor::randn({4, 2}, rng), true);
  Var b = Var::leaf(Tensor::randn({2}, rng), true);
  gradcheck::check({x, w, b},
                   [&](Ctx& ctx) { return ag::ops::linear(ctx, x, w, b); });
}

TEST_CASE("conv2d gradients") {
  Rng rng = make_rng(43, 0);
  Var x = Var::leaf(Tensor::uniform({2, 1, 2, 4, 4}, rng, -1, 1), true);
  Var w = Var::leaf(Tensor::randn({3, 2, 3, 3}, rng), true);
  Var b = Var::leaf(Tensor::randn({3}, rng), true);
  gradcheck::check({x, w, b}, [&](Ctx& ctx) {
    return ag::ops::conv2d(ctx, x, w, b, 2, 1);
  });
}

TEST_CASE("batchnorm gradients in train mode") {
  Rng rng = make_rng(44, 0);
  Var x = Var::leaf(Tensor::uniform({2, 1, 5, 3}, rng, -1, 1), true);
  Var gamma = Var::leaf(Tensor::uniform({3}, rng, 0.5, 1.5), true);
  Var beta = Var::leaf(Tensor::uniform({3}, rng, -0.5, 0.5), true);
  Var rm = Var::leaf(Tensor::zeros({3}), false);
  Var rv = Var::leaf(Tensor::full({3}, 1.0), false);
  gradcheck::check({x, gamma, beta}, [&](Ctx& ctx) {
    ctx.train_bn = true;
    return ag::ops::batchnorm(ctx, x, gamma, beta, rm, rv, 1e-5, 0.1, 3);
  });
}

TEST_CASE("batchnorm gradients in inference mode") {
  Rng rng = make_rng(45, 0);
  Var x = Var::leaf(Tensor::uniform({1, 1, 4, 2}, rng, -1, 1), true);
  Var gamma = Var::leaf(Tensor::uniform({2}, rng, 0.5, 1.5), true);
  Var beta = Var::leaf(Tensor::uniform({2}, rng, -0.5, 0.5), true);
  Var rm = Var::leaf(Tensor({2}, {0.2, -0.1}), false);
  Var rv = Var::leaf(Tensor({2}, {1.5, 0.7}), false);
  gradcheck::check({x, gamma, beta}, [&](Ctx& ctx) {
    ctx.train_bn = false;
    return ag::ops::batchnorm(ctx, x, gamma, beta, rm, rv, 1e-5, 0.1, 3);
  });
}

TEST_CASE("smoothed lif gradients differentiate the full recursion") {
  Rng rng = make_rng(46, 0);
  Var x = Var::leaf(Tensor::uniform({3, 1, 2, 3}, rng, -0.5, 2.0), true);
  LifParams p;
  gradcheck::Options opt;
  opt.smoothed = true;
  opt.tol = 1e-5;
  gradcheck::check({x}, [&](Ctx& ctx) {
    return ag::ops::lif(ctx, x, p, SpikeForm::Tokens, "t");
  }, opt);
}

TEST_CASE("spiking lif backward follows the surrogate recursion") {
  // Hand-rolled two-step check: gH2 = g2 * sg(H2); gH1 = g1*sg(H1) +
  // gH2*(1-1/tau)*(1-S1); gX_t = gH_t / tau.
  LifParams p;
  Tensor x({2, 1, 1, 1}, {2.0, 0.4});
  ag::Tape tape;
  Ctx ctx;
  ctx.tape = &tape;
  Var xv = Var::leaf(x, true);
  Var s = ag::ops::lif(ctx, xv, p, SpikeForm::Tokens, "t");
  CHECK(s.value()[0] == 1.0);
  CHECK(s.value()[1] == 0.0);
  Tensor probe({2, 1, 1, 1}, {1.0, 1.0});
  tape.backward(gradcheck::dot_probe(ctx, s, probe));

  const double h1 = 1.0, h2 = 0.2;  // membranes: fire resets, then 0.4/2
  const double g2 = surrogate_grad(h2, p);
  const double g1 = surrogate_grad(h1, p);  // reset path detached: no v-grad from step 1
  CHECK(xv.grad()[1] == doctest::Approx(g2 / p.tau).epsilon(1e-12));
  CHECK(xv.grad()[0] == doctest::Approx(g1 / p.tau).epsilon(1e-12));

  // Without a spike at step 1 the membrane path contributes too.
  Tensor x2({2, 1, 1, 1}, {0.6, 0.4});
  ag::Tape tape2;
  Ctx ctx2;
  ctx2.tape = &tape2;
  Var xv2 = Var::leaf(x2, true);
  Var s2 = ag::ops::lif(ctx2, xv2, p, SpikeForm::Tokens, "t");
  tape2.backward(gradcheck::dot_probe(ctx2, s2, probe));
  const double h1b = 0.3, h2b = 0.35;
  const double gh2 = surrogate_grad(h2b, p);
  const double gh1 = surrogate_grad(h1b, p) + gh2 * (1.0 - 1.0 / p.tau);
  CHECK(xv2.grad()[0] == doctest::Approx(gh1 / p.tau).epsilon(1e-12));
  CHECK(xv2.grad()[1] == doctest::Approx(gh2 / p.tau).epsilon(1e-12));
}

TEST_CASE("permutation ops gradients") {
  Rng rng = make_rng(47, 0);
  Var x = Var::leaf(Tensor::uniform({2, 1, 3, 2, 2}, rng, -1, 1), true);
  gradcheck::check({x}, [&](Ctx& ctx) { return ag::ops::image_to_tokens(ctx, x); });
  Var t = Var::leaf(Tensor::uniform({2, 1, 4, 3}, rng, -1, 1), true);
  gradcheck::check({t}, [&](Ctx& ctx) { return ag::ops::tokens_to_image(ctx, t, 2, 2); });
}

TEST_CASE("channel_sum and gate_apply gradients") {
  Rng rng = make_rng(48, 0);
  Var x = Var::leaf(Tensor::uniform({1, 1, 3, 2, 2}, rng, -1, 1), true);
  gradcheck::check({x}, [&](Ctx& ctx) { return ag::ops::channel_sum(ctx, x); });
  Var gate = Var::leaf(Tensor::uniform({1, 1, 2, 2}, rng, 0, 1), true);
  Var v = Var::leaf(Tensor::uniform({1, 1, 3, 2, 2}, rng, -1, 1), true);
  gradcheck::check({gate, v},
                   [&](Ctx& ctx) { return ag::ops::gate_apply(ctx, gate, v); });
}

TEST_CASE("maxpool2x2 gradients route to the argmax") {
  Rng rng = make_rng(49, 0);
  Var x = Var::leaf(Tensor::uniform({1, 1, 2, 4, 4}, rng, -1, 1), true);
  gradcheck::check({x}, [&](Ctx& ctx) { return ag::ops::maxpool2x2(ctx, x); });
}

TEST_CASE("ssa_scores gradients") {
  Rng rng = make_rng(50, 0);
  Var q = Var::leaf(Tensor::uniform({2, 1, 3, 4}, rng, 0, 1), true);
  Var k = Var::leaf(Tensor::uniform({2, 1, 3, 4}, rng, 0, 1), true);
  Var v = Var::leaf(Tensor::uniform({2, 1, 3, 4}, rng, -1, 1), true);
  gradcheck::check({q, k, v}, [&](Ctx& ctx) {
    return ag::ops::ssa_scores(ctx, q, k, v, 0.125, 2);
  });
}

TEST_CASE("time_token_mean gradients and value") {
  Rng rng = make_rng(51, 0);
  Var x = Var::leaf(Tensor::uniform({2, 3, 4, 2}, rng, -1, 1), true);
  gradcheck::check({x}, [&](Ctx& ctx) { return ag::ops::time_token_mean(ctx, x); });

  Tensor ones = Tensor::full({2, 1, 4, 3}, 1.0);
  ag::Tape tape;
  Ctx ctx;
  ctx.tape = &tape;
  Var y = ag::ops::time_token_mean(ctx, Var::leaf(ones, false));
  REQUIRE(same_shape(y.value().shape(), {1, 3}));
  for (int64_t i = 0; i < 3; ++i) CHECK(y.value()[i] == 1.0);
}

TEST_CASE("cross_entropy equals the closed form") {
  Rng rng = make_rng(52, 0);
  Tensor logits = Tensor::uniform({2, 5}, rng, -2, 2);
  std::vector<int64_t> labels{3, 0};

  ag::Tape tape;
  Ctx ctx;
  ctx.tape = &tape;
  Var z = Var::leaf(logits, true);
  Var loss = ag::ops::cross_entropy(ctx, z, labels);

  double want = 0;
  for (int64_t b = 0; b < 2; ++b) {
    std::vector<double> row(5);
    for (int64_t k = 0; k < 5; ++k) row[static_cast<size_t>(k)] = logits[b * 5 + k];
    want += oracle::softmax_ce(row, labels[static_cast<size_t>(b)]);
  }
  want /= 2.0;
  CHECK(loss.value()[0] == doctest::Approx(want).epsilon(1e-12));

  tape.backward(loss);
  for (int64_t b = 0; b < 2; ++b) {
    std::vector<double> row(5);
    for (int64_t k = 0; k < 5; ++k) row[static_cast<size_t>(k)] = logits[b * 5 + k];
    auto g = oracle::softmax_ce_grad(row, labels[static_cast<size_t>(b)]);
    for (int64_t k = 0; k < 5; ++k)
      CHECK(z.grad()[b * 5 + k] == doctest::Approx(g[static_cast<size_t>(k)] / 2.0).epsilon(1e-9));
  }
}

TEST_CASE("cross_entropy rejects bad labels") {
  ag::Tape tape;
  Ctx ctx;
  ctx.tape = &tape;
  Var z = Var::leaf(Tensor::zeros({1, 3}), false);
  CHECK_THROWS_AS(ag::ops::cross_entropy(ctx, z, {3}), Error);
  CHECK_THROWS_AS(ag::ops::cross_entropy(ctx, z, {0, 1}), Error);
}

}  // TEST_SUITE
