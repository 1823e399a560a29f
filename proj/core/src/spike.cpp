#include "msvit/spike.hpp"

#include <cmath>

namespace msvit {

namespace {
size_t expected_rank(SpikeForm form) { return form == SpikeForm::Tokens ? 4 : 5; }
const char* form_name(SpikeForm form) { return form == SpikeForm::Tokens ? "token" : "image"; }
}  // namespace

SpikeTensor::SpikeTensor(Shape shape, SpikeForm form) : shape_(std::move(shape)), form_(form) {
  data_.assign(static_cast<size_t>(shape_numel(shape_)), 0);
  validate();
}

void SpikeTensor::validate() const {
  MSVIT_CHECK(shape_.size() == expected_rank(form_), form_name(form_),
              "-form spike tensor must be rank ", expected_rank(form_), ", got shape ",
              shape_str(shape_));
  for (int64_t d : shape_)
    MSVIT_CHECK(d >= 1, "degenerate extent in spike tensor shape ", shape_str(shape_));
}

SpikeTensor SpikeTensor::from_analog(const Tensor& t, SpikeForm form, int max_value) {
  MSVIT_CHECK(max_value >= 1, "max_value must be >= 1, got ", max_value);
  SpikeTensor s;
  s.shape_ = t.shape();
  s.form_ = form;
  s.validate();
  s.data_.resize(static_cast<size_t>(t.numel()));
  for (int64_t i = 0; i < t.numel(); ++i) {
    double v = t[i];
    MSVIT_CHECK(v == std::floor(v) && v >= 0.0 && v <= static_cast<double>(max_value),
                "non-spike value ", v, " at flat index ", i, " (allowed integers 0..",
                max_value, ")");
    s.data_[static_cast<size_t>(i)] = static_cast<uint8_t>(v);
  }
  return s;
}

Tensor SpikeTensor::to_analog() const {
  Tensor t(shape_);
  for (size_t i = 0; i < data_.size(); ++i) t[static_cast<int64_t>(i)] = data_[i];
  return t;
}

int64_t SpikeTensor::tokens() const {
  MSVIT_CHECK(form_ == SpikeForm::Tokens, "tokens() on image-form tensor");
  return shape_[2];
}

int64_t SpikeTensor::channels() const {
  return form_ == SpikeForm::Tokens ? shape_[3] : shape_[2];
}

int64_t SpikeTensor::height() const {
  MSVIT_CHECK(form_ == SpikeForm::Image, "height() on token-form tensor");
  return shape_[3];
}

int64_t SpikeTensor::width() const {
  MSVIT_CHECK(form_ == SpikeForm::Image, "width() on token-form tensor");
  return shape_[4];
}

bool SpikeTensor::is_binary() const {
  for (uint8_t v : data_)
    if (v > 1) return false;
  return true;
}

int SpikeTensor::max_value() const {
  uint8_t m = 0;
  for (uint8_t v : data_) m = v > m ? v : m;
  return m;
}

int64_t SpikeTensor::spike_count() const {
  int64_t n = 0;
  for (uint8_t v : data_) n += v;
  return n;
}

// Token n <-> grid (n / W, n % W); channel D <-> C. Pure index shuffle.
SpikeTensor tokens_to_image(const SpikeTensor& t, int64_t h, int64_t w) {
  MSVIT_CHECK(t.form() == SpikeForm::Tokens, "tokens_to_image wants token form");
  const int64_t T = t.timesteps(), B = t.batch(), N = t.tokens(), D = t.channels();
  MSVIT_CHECK(h * w == N, "grid ", h, "x", w, " does not hold ", N, " tokens");
  SpikeTensor out({T, B, D, h, w}, SpikeForm::Image);
  for (int64_t tb = 0; tb < T * B; ++tb)
    for (int64_t n = 0; n < N; ++n)
      for (int64_t d = 0; d < D; ++d)
        out[(tb * D + d) * N + n] = t[(tb * N + n) * D + d];
  return out;
}

SpikeTensor image_to_tokens(const SpikeTensor& t) {
  MSVIT_CHECK(t.form() == SpikeForm::Image, "image_to_tokens wants image form");
  const int64_t T = t.timesteps(), B = t.batch(), C = t.channels();
  const int64_t N = t.height() * t.width();
  SpikeTensor out({T, B, N, C}, SpikeForm::Tokens);
  for (int64_t tb = 0; tb < T * B; ++tb)
    for (int64_t c = 0; c < C; ++c)
      for (int64_t n = 0; n < N; ++n)
        out[(tb * N + n) * C + c] = t[(tb * C + c) * N + n];
  return out;
}

Tensor analog_tokens_to_image(const Tensor& t, int64_t h, int64_t w) {
  MSVIT_CHECK(t.rank() == 4, "token tensor must be rank 4, got ", shape_str(t.shape()));
  const int64_t T = t.dim(0), B = t.dim(1), N = t.dim(2), D = t.dim(3);
  MSVIT_CHECK(h * w == N, "grid ", h, "x", w, " does not hold ", N, " tokens");
  Tensor out({T, B, D, h, w});
  for (int64_t tb = 0; tb < T * B; ++tb)
    for (int64_t n = 0; n < N; ++n)
      for (int64_t d = 0; d < D; ++d)
        out[(tb * D + d) * N + n] = t[(tb * N + n) * D + d];
  return out;
}

Tensor analog_image_to_tokens(const Tensor& t) {
  MSVIT_CHECK(t.rank() == 5, "image tensor must be rank 5, got ", shape_str(t.shape()));
  const int64_t T = t.dim(0), B = t.dim(1), C = t.dim(2), N = t.dim(3) * t.dim(4);
  Tensor out({T, B, N, C});
  for (int64_t tb = 0; tb < T * B; ++tb)
    for (int64_t c = 0; c < C; ++c)
      for (int64_t n = 0; n < N; ++n)
        out[(tb * N + n) * C + c] = t[(tb * C + c) * N + n];
  return out;
}

}  // namespace msvit
