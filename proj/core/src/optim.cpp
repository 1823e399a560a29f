#include "msvit/optim.hpp"

#include <cmath>

namespace msvit {

double LrSchedule::at(int64_t step) const {
  MSVIT_CHECK(total_steps >= 1, "schedule needs at least one step");
  MSVIT_CHECK(warmup_steps >= 0 && warmup_steps <= total_steps,
              "warmup must fit inside the schedule");
  const double top = peak();
  if (step < warmup_steps)
    return top * (static_cast<double>(step) + 1.0) / static_cast<double>(warmup_steps);
  if (step >= total_steps) return 0.0;
  const int64_t span = total_steps - warmup_steps;
  if (span == 0) return 0.0;
  const double progress = static_cast<double>(step - warmup_steps) / static_cast<double>(span);
  return top * 0.5 * (1.0 + std::cos(M_PI * progress));
}

AdamW::AdamW(std::vector<ag::Var> params, Hyper h) : params_(std::move(params)), h_(h) {
  MSVIT_CHECK(h_.beta1 > 0 && h_.beta1 < 1 && h_.beta2 > 0 && h_.beta2 < 1,
              "betas must lie in (0,1)");
  MSVIT_CHECK(h_.epsilon > 0, "epsilon must be positive");
  m_.reserve(params_.size());
  v_.reserve(params_.size());
  for (auto& p : params_) {
    MSVIT_CHECK(p.requires_grad(), "optimizer was handed a non-trainable tensor");
    m_.push_back(Tensor::zeros(p.shape()));
    v_.push_back(Tensor::zeros(p.shape()));
  }
}

bool AdamW::step(double lr) {
  MSVIT_CHECK(std::isfinite(lr) && lr >= 0, "learning rate must be finite and non-negative");
  for (auto& p : params_) {
    if (!p.has_grad()) continue;  // untouched parameter this step: grad is zero
    if (!p.grad().all_finite()) {
      ++skipped_;
      return false;
    }
  }
  ++steps_;
  const double t = static_cast<double>(steps_);
  const double correct1 = 1.0 - std::pow(h_.beta1, t);
  const double correct2 = 1.0 - std::pow(h_.beta2, t);
  for (size_t i = 0; i < params_.size(); ++i) {
    Tensor& w = params_[i].value();
    double* wd = w.data();
    double* md = m_[i].data();
    double* vd = v_[i].data();
    const bool has = params_[i].has_grad();
    const double* gd = has ? params_[i].grad().data() : nullptr;
    const int64_t n = w.numel();
    for (int64_t j = 0; j < n; ++j) {
      const double g = has ? gd[j] : 0.0;
      md[j] = h_.beta1 * md[j] + (1.0 - h_.beta1) * g;
      vd[j] = h_.beta2 * vd[j] + (1.0 - h_.beta2) * g * g;
      const double m_hat = md[j] / correct1;
      const double v_hat = vd[j] / correct2;
      wd[j] -= lr * (m_hat / (std::sqrt(v_hat) + h_.epsilon) + h_.weight_decay * wd[j]);
    }
  }
  return true;
}

void AdamW::zero_grad() {
  for (auto& p : params_) p.zero_grad();
}

}  // namespace msvit
