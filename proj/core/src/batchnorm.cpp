#include "msvit/batchnorm.hpp"

#include <cmath>

namespace msvit {

BatchNormParams BatchNormParams::identity(int64_t channels) {
  MSVIT_CHECK(channels >= 1, "batch norm needs >= 1 channel, got ", channels);
  BatchNormParams p;
  p.gamma = Tensor::full({channels}, 1.0);
  p.beta = Tensor::zeros({channels});
  p.running_mean = Tensor::zeros({channels});
  p.running_var = Tensor::full({channels}, 1.0);
  return p;
}

void BatchNormParams::validate() const {
  MSVIT_CHECK(gamma.rank() == 1 && !gamma.empty(), "gamma must be a [C] vector");
  const int64_t c = gamma.dim(0);
  MSVIT_CHECK(beta.shape() == Shape{c} && running_mean.shape() == Shape{c} &&
                  running_var.shape() == Shape{c},
              "batch norm parameter shapes disagree");
  MSVIT_CHECK(epsilon > 0, "epsilon must be positive, got ", epsilon);
  MSVIT_CHECK(momentum >= 0 && momentum <= 1, "momentum out of [0,1]: ", momentum);
}

namespace {

struct Axes {
  int64_t channels;
  int64_t inner;  // elements between consecutive channel increments
};

Axes channel_axes(const Tensor& x, int64_t channel_axis) {
  MSVIT_CHECK(channel_axis >= 0 && channel_axis < static_cast<int64_t>(x.rank()),
              "channel axis ", channel_axis, " out of range for ", shape_str(x.shape()));
  Axes a{x.dim(static_cast<size_t>(channel_axis)), 1};
  for (size_t i = static_cast<size_t>(channel_axis) + 1; i < x.rank(); ++i) a.inner *= x.dim(i);
  return a;
}

}  // namespace

Tensor bn_forward(const Tensor& x, BatchNormParams& p, BnMode mode, int64_t channel_axis,
                  BnCache* cache) {
  p.validate();
  Axes ax = channel_axes(x, channel_axis);
  MSVIT_CHECK(ax.channels == p.gamma.dim(0), "input has ", ax.channels,
              " channels, batch norm has ", p.gamma.dim(0));
  const int64_t n = x.numel();
  const int64_t count = n / ax.channels;  // reduced elements per channel
  Tensor y(x.shape());

  auto channel_of = [&](int64_t e) { return (e / ax.inner) % ax.channels; };

  if (mode == BnMode::Infer) {
    std::vector<double> scale(static_cast<size_t>(ax.channels)), shift(static_cast<size_t>(ax.channels));
    for (int64_t c = 0; c < ax.channels; ++c) {
      double inv = 1.0 / std::sqrt(p.running_var[c] + p.epsilon);
      scale[static_cast<size_t>(c)] = p.gamma[c] * inv;
      shift[static_cast<size_t>(c)] = p.beta[c] - p.running_mean[c] * scale[static_cast<size_t>(c)];
    }
    for (int64_t e = 0; e < n; ++e) {
      int64_t c = channel_of(e);
      y[e] = x[e] * scale[static_cast<size_t>(c)] + shift[static_cast<size_t>(c)];
    }
    return y;
  }

  MSVIT_CHECK(count >= 2, "training-mode batch norm needs >= 2 values per channel, got ",
              count);
  Tensor mean({ax.channels}), var({ax.channels});
  for (int64_t e = 0; e < n; ++e) mean[channel_of(e)] += x[e];
  for (int64_t c = 0; c < ax.channels; ++c) mean[c] /= static_cast<double>(count);
  for (int64_t e = 0; e < n; ++e) {
    double d = x[e] - mean[channel_of(e)];
    var[channel_of(e)] += d * d;
  }
  for (int64_t c = 0; c < ax.channels; ++c) var[c] /= static_cast<double>(count);

  Tensor inv_std({ax.channels});
  for (int64_t c = 0; c < ax.channels; ++c) inv_std[c] = 1.0 / std::sqrt(var[c] + p.epsilon);

  Tensor x_hat(x.shape());
  for (int64_t e = 0; e < n; ++e) {
    int64_t c = channel_of(e);
    x_hat[e] = (x[e] - mean[c]) * inv_std[c];
    y[e] = p.gamma[c] * x_hat[e] + p.beta[c];
  }

  // Normalization uses the biased variance; the running estimate keeps the
  // unbiased one, the convention inference checkpoints expect.
  for (int64_t c = 0; c < ax.channels; ++c) {
    double unbiased = var[c] * static_cast<double>(count) / static_cast<double>(count - 1);
    p.running_mean[c] = (1.0 - p.momentum) * p.running_mean[c] + p.momentum * mean[c];
    p.running_var[c] = (1.0 - p.momentum) * p.running_var[c] + p.momentum * unbiased;
  }

  if (cache) {
    cache->x_hat = std::move(x_hat);
    cache->mean = std::move(mean);
    cache->inv_std = std::move(inv_std);
    cache->channel_axis = channel_axis;
    cache->reduce_count = count;
  }
  return y;
}

Tensor bn_backward(const Tensor& grad_out, const BnCache& cache, const BatchNormParams& p,
                   Tensor& grad_gamma, Tensor& grad_beta) {
  const Tensor& x_hat = cache.x_hat;
  MSVIT_CHECK(same_shape(grad_out.shape(), x_hat.shape()), "bn_backward shape mismatch");
  Axes ax = channel_axes(x_hat, cache.channel_axis);
  const int64_t n = x_hat.numel();
  const double count = static_cast<double>(cache.reduce_count);
  auto channel_of = [&](int64_t e) { return (e / ax.inner) % ax.channels; };

  grad_gamma = Tensor({ax.channels});
  grad_beta = Tensor({ax.channels});
  for (int64_t e = 0; e < n; ++e) {
    int64_t c = channel_of(e);
    grad_gamma[c] += grad_out[e] * x_hat[e];
    grad_beta[c] += grad_out[e];
  }

  // gx = gamma * inv_std / m * (m*go - sum(go) - x_hat * sum(go*x_hat))
  Tensor gx(x_hat.shape());
  for (int64_t e = 0; e < n; ++e) {
    int64_t c = channel_of(e);
    gx[e] = p.gamma[c] * cache.inv_std[c] / count *
            (count * grad_out[e] - grad_beta[c] - x_hat[e] * grad_gamma[c]);
  }
  return gx;
}

Tensor bn_backward_infer(const Tensor& grad_out, const BatchNormParams& p,
                         int64_t channel_axis, Tensor& grad_gamma, Tensor& grad_beta,
                         const Tensor& x) {
  MSVIT_CHECK(same_shape(grad_out.shape(), x.shape()), "bn_backward_infer shape mismatch");
  Axes ax = channel_axes(x, channel_axis);
  const int64_t n = x.numel();
  auto channel_of = [&](int64_t e) { return (e / ax.inner) % ax.channels; };

  grad_gamma = Tensor({ax.channels});
  grad_beta = Tensor({ax.channels});
  Tensor gx(x.shape());
  std::vector<double> inv(static_cast<size_t>(ax.channels));
  for (int64_t c = 0; c < ax.channels; ++c)
    inv[static_cast<size_t>(c)] = 1.0 / std::sqrt(p.running_var[c] + p.epsilon);
  for (int64_t e = 0; e < n; ++e) {
    int64_t c = channel_of(e);
    double x_hat = (x[e] - p.running_mean[c]) * inv[static_cast<size_t>(c)];
    grad_gamma[c] += grad_out[e] * x_hat;
    grad_beta[c] += grad_out[e];
    gx[e] = grad_out[e] * p.gamma[c] * inv[static_cast<size_t>(c)];
  }
  return gx;
}

}  // namespace msvit
