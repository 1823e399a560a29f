#pragma once

#include <functional>
#include <ostream>
#include <string>
#include <vector>

#include "msvit/data.hpp"
#include "msvit/model.hpp"
#include "msvit/optim.hpp"

namespace msvit {

struct TrainOptions {
  int64_t epochs = 1;
  int64_t batch = 32;
  int64_t grad_accum = 1;     // simulated batch = batch * grad_accum
  double base_lr = 6e-4;
  double weight_decay = 0.01;
  double warmup_frac = 0.05;  // of total optimizer steps
  uint64_t seed = 42;
  bool deterministic = false;  // zero wall-clock fields for stable output
  // Abort threshold: a non-finite loss or loss above this diverges the run.
  double divergence_loss = 50.0;
};

// Raised when training diverges (distinct from config/runtime failures so
// callers can map it to its own exit status).
class DivergenceError : public Error {
public:
  using Error::Error;
};

struct EpochMetrics {
  int64_t epoch = 0;
  std::string split;  // "train" or "eval"
  double loss = 0;
  double accuracy = 0;
  double firing_rate = 0;
  int64_t wall_ms = 0;
};

struct EvalResult {
  double loss = 0;
  double accuracy = 0;       // top-1
  double accuracy_top5 = 0;  // 1.0 whenever classes <= 5
  Profiler profiler;         // activity of the evaluated samples
};

struct TrainResult {
  std::vector<EpochMetrics> history;
  double final_accuracy = 0;
  int64_t optimizer_steps = 0;
  int64_t skipped_steps = 0;
};

// One full training run: per epoch, optimize over `train` then evaluate on
// `eval`; metrics for both are appended to the history. `log` (optional)
// receives one line per epoch.
TrainResult train_model(Model& model, const Dataset& train, const Dataset& eval,
                        const TrainOptions& opt, std::ostream* log = nullptr);

// Forward-only pass over a dataset; profiler captures firing activity.
EvalResult evaluate(Model& model, const Dataset& data, int64_t batch, int64_t timesteps);

// metrics.csv: header + one row per entry, fixed formatting.
void write_metrics_csv(const std::string& file, const std::vector<EpochMetrics>& history);

}  // namespace msvit
