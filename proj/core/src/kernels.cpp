#include "msvit/kernels.hpp"

#include <algorithm>
#include <cmath>

namespace msvit {

namespace {

// Skipping a zero input term is bit-identical to adding it: every partial
// sum here starts at +0.0 and x >= 0, so no accumulator is ever -0.0 and
// `acc + (+/-0.0) == acc` exactly.
void linear_rows(const double* x, const uint8_t* xs, int64_t rows, int64_t d_in,
                 int64_t d_out, const Tensor& w, const Tensor* bias, Tensor& y) {
  const double* wp = w.data();
  parallel_for(rows, 64, [&](int64_t r0, int64_t r1) {
    for (int64_t r = r0; r < r1; ++r) {
      double* yr = y.data() + r * d_out;
      if (bias) {
        const double* b = bias->data();
        for (int64_t j = 0; j < d_out; ++j) yr[j] = b[j];
      }
      for (int64_t i = 0; i < d_in; ++i) {
        double xv = xs ? static_cast<double>(xs[r * d_in + i]) : x[r * d_in + i];
        if (xv == 0.0) continue;
        const double* wi = wp + i * d_out;
        if (xv == 1.0) {
          for (int64_t j = 0; j < d_out; ++j) yr[j] += wi[j];
        } else {
          for (int64_t j = 0; j < d_out; ++j) yr[j] += xv * wi[j];
        }
      }
    }
  });
}

}  // namespace

Tensor spike_linear(const SpikeTensor& x, const Tensor& w, const Tensor* bias,
                    OpStats* stats) {
  MSVIT_CHECK(x.form() == SpikeForm::Tokens, "spike_linear wants token form, got image");
  const int64_t d_in = x.channels();
  MSVIT_CHECK(w.rank() == 2 && w.dim(0) == d_in, "weight ", shape_str(w.shape()),
              " does not accept ", d_in, " inputs");
  const int64_t d_out = w.dim(1);
  if (bias)
    MSVIT_CHECK(bias->rank() == 1 && bias->dim(0) == d_out, "bias shape ",
                shape_str(bias->shape()), " wants [", d_out, "]");
  const int64_t rows = x.numel() / d_in;
  Shape out_shape = x.shape();
  out_shape.back() = d_out;
  Tensor y(out_shape);
  linear_rows(nullptr, x.data(), rows, d_in, d_out, w, bias, y);
  if (stats) {
    stats->flops += rows * d_in * d_out;
    stats->sops += x.spike_count() * d_out;
    stats->in_spikes += x.spike_count();
    stats->in_elems += x.numel();
  }
  return y;
}

Tensor linear_forward(const Tensor& x, const Tensor& w, const Tensor* bias, OpStats* stats) {
  MSVIT_CHECK(x.rank() >= 1, "linear_forward on empty tensor");
  const int64_t d_in = x.shape().back();
  MSVIT_CHECK(w.rank() == 2 && w.dim(0) == d_in, "weight ", shape_str(w.shape()),
              " does not accept ", d_in, " inputs");
  const int64_t d_out = w.dim(1);
  const int64_t rows = x.numel() / d_in;
  Shape out_shape = x.shape();
  out_shape.back() = d_out;
  Tensor y(out_shape);
  linear_rows(x.data(), nullptr, rows, d_in, d_out, w, bias, y);
  if (stats) {
    int64_t in_spikes = static_cast<int64_t>(std::llround(x.sum()));
    stats->flops += rows * d_in * d_out;
    stats->sops += in_spikes * d_out;  // exact for integer-valued (spike) inputs
    stats->in_spikes += in_spikes;
    stats->in_elems += x.numel();
  }
  return y;
}

int64_t conv_out_extent(int64_t in, int64_t k, int64_t stride, int64_t pad) {
  MSVIT_CHECK(stride >= 1 && k >= 1 && pad >= 0, "bad conv geometry k=", k, " stride=",
              stride, " pad=", pad);
  int64_t span = in + 2 * pad - k;
  MSVIT_CHECK(span >= 0, "kernel ", k, " larger than padded input ", in + 2 * pad);
  return span / stride + 1;
}

namespace {

// Gather conv shared by the spike and analog paths. Accumulation runs over
// (c_in, kh, kw) ascending for every output element — the oracle's order.
template <typename Get>
Tensor conv_gather(const Shape& xshape, Get get, const Tensor& w, const Tensor* bias,
                   int64_t stride, int64_t pad, int64_t* sops) {
  const int64_t T = xshape[0], B = xshape[1], C = xshape[2], H = xshape[3], W = xshape[4];
  MSVIT_CHECK(w.rank() == 4 && w.dim(1) == C, "conv weight ", shape_str(w.shape()),
              " does not accept ", C, " channels");
  const int64_t co_n = w.dim(0), k = w.dim(2);
  MSVIT_CHECK(w.dim(3) == k, "conv kernel must be square, got ", shape_str(w.shape()));
  if (bias)
    MSVIT_CHECK(bias->rank() == 1 && bias->dim(0) == co_n, "conv bias shape ",
                shape_str(bias->shape()), " wants [", co_n, "]");
  const int64_t oh_n = conv_out_extent(H, k, stride, pad);
  const int64_t ow_n = conv_out_extent(W, k, stride, pad);
  Tensor y({T, B, co_n, oh_n, ow_n});
  const double* wp = w.data();
  std::vector<int64_t> sops_per_image(static_cast<size_t>(T * B), 0);

  parallel_for(T * B, 1, [&](int64_t tb0, int64_t tb1) {
    for (int64_t tb = tb0; tb < tb1; ++tb) {
      int64_t local_sops = 0;
      for (int64_t co = 0; co < co_n; ++co) {
        double* yp = y.data() + ((tb * co_n + co) * oh_n) * ow_n;
        const double bias_v = bias ? (*bias)[co] : 0.0;
        for (int64_t oh = 0; oh < oh_n; ++oh) {
          for (int64_t ow = 0; ow < ow_n; ++ow) {
            double acc = bias_v;
            for (int64_t ci = 0; ci < C; ++ci) {
              for (int64_t kh = 0; kh < k; ++kh) {
                int64_t ih = oh * stride - pad + kh;
                if (ih < 0 || ih >= H) continue;
                for (int64_t kw = 0; kw < k; ++kw) {
                  int64_t iw = ow * stride - pad + kw;
                  if (iw < 0 || iw >= W) continue;
                  double xv = get(((tb * C + ci) * H + ih) * W + iw);
                  if (xv == 0.0) continue;
                  acc += xv * wp[((co * C + ci) * k + kh) * k + kw];
                  local_sops += static_cast<int64_t>(xv);
                }
              }
            }
            yp[oh * ow_n + ow] = acc;
          }
        }
      }
      sops_per_image[static_cast<size_t>(tb)] = local_sops;
    }
  });
  if (sops) {
    *sops = 0;
    for (int64_t v : sops_per_image) *sops += v;
  }
  return y;
}

}  // namespace

Tensor spike_conv2d(const SpikeTensor& x, const Tensor& w, const Tensor* bias,
                    int64_t stride, int64_t pad, OpStats* stats) {
  MSVIT_CHECK(x.form() == SpikeForm::Image, "spike_conv2d wants image form, got tokens");
  const uint8_t* xp = x.data();
  int64_t sops = 0;
  Tensor y = conv_gather(x.shape(), [xp](int64_t i) { return static_cast<double>(xp[i]); },
                         w, bias, stride, pad, &sops);
  if (stats) {
    const int64_t k = w.dim(2);
    stats->flops += y.dim(0) * y.dim(1) * w.dim(0) * x.channels() * k * k * y.dim(3) * y.dim(4);
    stats->sops += sops;  // the gather already visits every (c_out, window) pair
    stats->in_spikes += x.spike_count();
    stats->in_elems += x.numel();
  }
  return y;
}

Tensor conv2d_forward(const Tensor& x, const Tensor& w, const Tensor* bias, int64_t stride,
                      int64_t pad, OpStats* stats) {
  MSVIT_CHECK(x.rank() == 5, "conv2d_forward wants [T,B,C,H,W], got ", shape_str(x.shape()));
  const double* xp = x.data();
  int64_t sops = 0;
  Tensor y = conv_gather(x.shape(), [xp](int64_t i) { return xp[i]; }, w, bias, stride, pad,
                         stats ? &sops : nullptr);
  if (stats) {
    const int64_t k = w.dim(2);
    stats->flops += y.dim(0) * y.dim(1) * w.dim(0) * x.dim(2) * k * k * y.dim(3) * y.dim(4);
    stats->sops += sops;  // exact for integer-valued (spike) inputs
    stats->in_spikes += static_cast<int64_t>(std::llround(x.sum()));
    stats->in_elems += x.numel();
  }
  return y;
}

SpikeTensor maxpool2d(const SpikeTensor& x) {
  MSVIT_CHECK(x.form() == SpikeForm::Image, "maxpool2d wants image form");
  const int64_t planes = x.timesteps() * x.batch() * x.channels();
  const int64_t H = x.height(), W = x.width();
  const int64_t oh_n = (H + 1) / 2, ow_n = (W + 1) / 2;
  SpikeTensor y({x.timesteps(), x.batch(), x.channels(), oh_n, ow_n}, SpikeForm::Image);
  for (int64_t pl = 0; pl < planes; ++pl) {
    const uint8_t* in = x.data() + pl * H * W;
    uint8_t* out = y.data() + pl * oh_n * ow_n;
    for (int64_t oh = 0; oh < oh_n; ++oh)
      for (int64_t ow = 0; ow < ow_n; ++ow) {
        uint8_t best = 0;
        for (int64_t kh = 0; kh < 2; ++kh)
          for (int64_t kw = 0; kw < 2; ++kw) {
            int64_t ih = oh * 2 + kh, iw = ow * 2 + kw;
            if (ih >= H || iw >= W) continue;  // zero pad never wins on spikes
            best = std::max(best, in[ih * W + iw]);
          }
        out[oh * ow_n + ow] = best;
      }
  }
  return y;
}

Tensor maxpool2d_analog(const Tensor& x, std::vector<int64_t>* argmax) {
  MSVIT_CHECK(x.rank() == 5, "maxpool2d_analog wants [T,B,C,H,W], got ", shape_str(x.shape()));
  const int64_t planes = x.dim(0) * x.dim(1) * x.dim(2);
  const int64_t H = x.dim(3), W = x.dim(4);
  const int64_t oh_n = (H + 1) / 2, ow_n = (W + 1) / 2;
  Tensor y({x.dim(0), x.dim(1), x.dim(2), oh_n, ow_n});
  if (argmax) argmax->assign(static_cast<size_t>(y.numel()), -1);
  for (int64_t pl = 0; pl < planes; ++pl) {
    const double* in = x.data() + pl * H * W;
    double* out = y.data() + pl * oh_n * ow_n;
    for (int64_t oh = 0; oh < oh_n; ++oh)
      for (int64_t ow = 0; ow < ow_n; ++ow) {
        // Padded cells count as 0.0 and, like ties, never displace an
        // earlier max (first-wins, window scanned row-major).
        double best = 0;
        int64_t best_i = -1;
        bool first = true;
        for (int64_t kh = 0; kh < 2; ++kh)
          for (int64_t kw = 0; kw < 2; ++kw) {
            int64_t ih = oh * 2 + kh, iw = ow * 2 + kw;
            double v;
            int64_t idx;
            if (ih >= H || iw >= W) {
              v = 0.0;
              idx = -1;
            } else {
              idx = ih * W + iw;
              v = in[idx];
            }
            if (first || v > best) {
              best = v;
              best_i = idx;
              first = false;
            }
          }
        out[oh * ow_n + ow] = best;
        if (argmax && best_i >= 0)
          (*argmax)[static_cast<size_t>(pl * oh_n * ow_n + oh * ow_n + ow)] = pl * H * W + best_i;
      }
  }
  return y;
}

Tensor linear_backward_input(const Tensor& grad_out, const Tensor& w) {
  const int64_t d_out = grad_out.shape().back();
  MSVIT_CHECK(w.rank() == 2 && w.dim(1) == d_out, "weight ", shape_str(w.shape()),
              " does not produce ", d_out, " outputs");
  const int64_t d_in = w.dim(0);
  const int64_t rows = grad_out.numel() / d_out;
  Shape in_shape = grad_out.shape();
  in_shape.back() = d_in;
  Tensor gx(in_shape);
  parallel_for(rows, 64, [&](int64_t r0, int64_t r1) {
    for (int64_t r = r0; r < r1; ++r) {
      const double* go = grad_out.data() + r * d_out;
      double* g = gx.data() + r * d_in;
      for (int64_t i = 0; i < d_in; ++i) {
        const double* wi = w.data() + i * d_out;
        double acc = 0;
        for (int64_t j = 0; j < d_out; ++j) acc += go[j] * wi[j];
        g[i] = acc;
      }
    }
  });
  return gx;
}

void linear_backward_params(const Tensor& x, const Tensor& grad_out, Tensor& grad_w,
                            Tensor* grad_b) {
  const int64_t d_in = x.shape().back();
  const int64_t d_out = grad_out.shape().back();
  MSVIT_CHECK(grad_w.rank() == 2 && grad_w.dim(0) == d_in && grad_w.dim(1) == d_out,
              "grad_w shape ", shape_str(grad_w.shape()), " wants [", d_in, ",", d_out, "]");
  const int64_t rows = x.numel() / d_in;
  MSVIT_CHECK(grad_out.numel() / d_out == rows, "linear backward row mismatch");
  for (int64_t r = 0; r < rows; ++r) {
    const double* xr = x.data() + r * d_in;
    const double* go = grad_out.data() + r * d_out;
    for (int64_t i = 0; i < d_in; ++i) {
      double xv = xr[i];
      if (xv == 0.0) continue;
      double* gw = grad_w.data() + i * d_out;
      for (int64_t j = 0; j < d_out; ++j) gw[j] += xv * go[j];
    }
    if (grad_b)
      for (int64_t j = 0; j < d_out; ++j) (*grad_b)[j] += go[j];
  }
}

Tensor conv2d_backward_input(const Tensor& grad_out, const Tensor& w, const Shape& in_shape,
                             int64_t stride, int64_t pad) {
  const int64_t T = in_shape[0], B = in_shape[1], C = in_shape[2], H = in_shape[3],
                W = in_shape[4];
  const int64_t co_n = w.dim(0), k = w.dim(2);
  const int64_t oh_n = grad_out.dim(3), ow_n = grad_out.dim(4);
  Tensor gx(in_shape);
  parallel_for(T * B, 1, [&](int64_t tb0, int64_t tb1) {
    for (int64_t tb = tb0; tb < tb1; ++tb)
      for (int64_t co = 0; co < co_n; ++co) {
        const double* go = grad_out.data() + ((tb * co_n + co) * oh_n) * ow_n;
        for (int64_t oh = 0; oh < oh_n; ++oh)
          for (int64_t ow = 0; ow < ow_n; ++ow) {
            double g = go[oh * ow_n + ow];
            if (g == 0.0) continue;
            for (int64_t ci = 0; ci < C; ++ci)
              for (int64_t kh = 0; kh < k; ++kh) {
                int64_t ih = oh * stride - pad + kh;
                if (ih < 0 || ih >= H) continue;
                for (int64_t kw = 0; kw < k; ++kw) {
                  int64_t iw = ow * stride - pad + kw;
                  if (iw < 0 || iw >= W) continue;
                  gx.data()[((tb * C + ci) * H + ih) * W + iw] +=
                      g * w.data()[((co * C + ci) * k + kh) * k + kw];
                }
              }
          }
      }
  });
  return gx;
}

void conv2d_backward_params(const Tensor& x, const Tensor& grad_out, Tensor& grad_w,
                            Tensor* grad_b, int64_t stride, int64_t pad) {
  const int64_t T = x.dim(0), B = x.dim(1), C = x.dim(2), H = x.dim(3), W = x.dim(4);
  const int64_t co_n = grad_w.dim(0), k = grad_w.dim(2);
  const int64_t oh_n = grad_out.dim(3), ow_n = grad_out.dim(4);
  for (int64_t tb = 0; tb < T * B; ++tb)
    for (int64_t co = 0; co < co_n; ++co) {
      const double* go = grad_out.data() + ((tb * co_n + co) * oh_n) * ow_n;
      for (int64_t oh = 0; oh < oh_n; ++oh)
        for (int64_t ow = 0; ow < ow_n; ++ow) {
          double g = go[oh * ow_n + ow];
          if (g == 0.0) continue;
          if (grad_b) (*grad_b)[co] += g;
          for (int64_t ci = 0; ci < C; ++ci)
            for (int64_t kh = 0; kh < k; ++kh) {
              int64_t ih = oh * stride - pad + kh;
              if (ih < 0 || ih >= H) continue;
              for (int64_t kw = 0; kw < k; ++kw) {
                int64_t iw = ow * stride - pad + kw;
                if (iw < 0 || iw >= W) continue;
                double xv = x.data()[((tb * C + ci) * H + ih) * W + iw];
                if (xv == 0.0) continue;
                grad_w.data()[((co * C + ci) * k + kh) * k + kw] += xv * g;
              }
            }
        }
    }
}

}  // namespace msvit
