#include "msvit/train.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "msvit/autograd.hpp"
#include "msvit/context.hpp"

namespace msvit {

namespace {

int64_t correct_topk(const Tensor& logits, const std::vector<int64_t>& labels, int64_t k) {
  const int64_t B = logits.dim(0), K = logits.dim(1);
  int64_t hits = 0;
  for (int64_t b = 0; b < B; ++b) {
    const double* row = logits.data() + b * K;
    const double target = row[labels[static_cast<size_t>(b)]];
    // Rank of the target score; ties resolved in the target's favor keeps
    // the count stable under logit permutations.
    int64_t above = 0;
    for (int64_t j = 0; j < K; ++j)
      if (row[j] > target) ++above;
    if (above < k) ++hits;
  }
  return hits;
}

std::string format_metric(double v) {
  std::ostringstream out;
  out << std::fixed << std::setprecision(6) << v;
  return out.str();
}

int64_t now_ms() {
  return std::chrono::duration_cast<std::chrono::milliseconds>(
             std::chrono::steady_clock::now().time_since_epoch())
      .count();
}

}  // namespace

TrainResult train_model(Model& model, const Dataset& train, const Dataset& eval,
                        const TrainOptions& opt, std::ostream* log) {
  MSVIT_CHECK(opt.epochs >= 1, "need at least one epoch");
  MSVIT_CHECK(opt.grad_accum >= 1, "gradient accumulation factor must be >= 1");
  MSVIT_CHECK(train.size() > 0, "training set is empty");
  MSVIT_CHECK(train.classes == model.config().classes,
              "dataset has ", train.classes, " classes, model head expects ",
              model.config().classes);

  const int64_t timesteps = model.config().timesteps;
  Batcher batcher(train, opt.batch, timesteps, opt.seed, /*shuffle=*/true);

  const int64_t micro_per_epoch = batcher.batches_per_epoch();
  const int64_t steps_per_epoch = (micro_per_epoch + opt.grad_accum - 1) / opt.grad_accum;
  LrSchedule schedule;
  schedule.base_lr = opt.base_lr;
  schedule.batch = opt.batch * opt.grad_accum;
  schedule.total_steps = std::max<int64_t>(1, opt.epochs * steps_per_epoch);
  schedule.warmup_steps =
      std::llround(opt.warmup_frac * static_cast<double>(schedule.total_steps));

  AdamW::Hyper hyper;
  hyper.weight_decay = opt.weight_decay;
  AdamW optimizer(model.params().trainable(), hyper);

  TrainResult result;
  int64_t step = 0;
  for (int64_t epoch = 0; epoch < opt.epochs; ++epoch) {
    const int64_t t0 = now_ms();
    batcher.start_epoch(epoch);
    Profiler epoch_prof;
    double loss_sum = 0;
    int64_t seen = 0, correct = 0, pending = 0;

    Batch batch;
    while (batcher.next(batch)) {
      ag::Tape tape;
      Ctx ctx;
      ctx.tape = &tape;
      ctx.prof = &epoch_prof;
      ctx.train_bn = true;
      ag::Var logits = model.forward(ctx, batch.input);
      ag::Var loss = ag::ops::cross_entropy(ctx, logits, batch.labels);

      const double loss_value = loss.value()[0];
      if (!std::isfinite(loss_value) || loss_value > opt.divergence_loss) {
        std::ostringstream msg;
        msg << "training diverged at epoch " << epoch << " after " << seen
            << " examples: loss " << loss_value << " (abort threshold "
            << opt.divergence_loss << ")";
        throw DivergenceError(msg.str());
      }

      const int64_t b = static_cast<int64_t>(batch.labels.size());
      loss_sum += loss_value * static_cast<double>(b);
      correct += correct_topk(logits.value(), batch.labels, 1);
      seen += b;

      // Micro-batch losses are averaged so k accumulated steps match one
      // k-times-larger batch.
      ag::Var scaled = ag::ops::scale(ctx, loss, 1.0 / static_cast<double>(opt.grad_accum));
      tape.backward(scaled);
      ++pending;
      if (pending == opt.grad_accum) {
        optimizer.step(schedule.at(step));
        optimizer.zero_grad();
        ++step;
        pending = 0;
      }
    }
    if (pending > 0) {  // short tail group still steps
      optimizer.step(schedule.at(step));
      optimizer.zero_grad();
      ++step;
    }

    EpochMetrics tm;
    tm.epoch = epoch;
    tm.split = "train";
    tm.loss = loss_sum / static_cast<double>(seen);
    tm.accuracy = static_cast<double>(correct) / static_cast<double>(seen);
    tm.firing_rate = epoch_prof.model_firing_rate().value_or(0.0);
    tm.wall_ms = opt.deterministic ? 0 : now_ms() - t0;
    result.history.push_back(tm);

    EpochMetrics em;
    em.epoch = epoch;
    em.split = "eval";
    if (eval.size() > 0) {
      const int64_t e0 = now_ms();
      EvalResult er = evaluate(model, eval, opt.batch, timesteps);
      em.loss = er.loss;
      em.accuracy = er.accuracy;
      em.firing_rate = er.profiler.model_firing_rate().value_or(0.0);
      em.wall_ms = opt.deterministic ? 0 : now_ms() - e0;
      result.final_accuracy = er.accuracy;
    }
    result.history.push_back(em);

    if (log) {
      *log << "epoch " << epoch << ": train loss " << format_metric(tm.loss) << " acc "
           << format_metric(tm.accuracy) << " | eval loss " << format_metric(em.loss)
           << " acc " << format_metric(em.accuracy) << " | fr "
           << format_metric(tm.firing_rate) << "\n";
    }
  }
  result.optimizer_steps = optimizer.steps_taken();
  result.skipped_steps = optimizer.steps_skipped();
  return result;
}

EvalResult evaluate(Model& model, const Dataset& data, int64_t batch, int64_t timesteps) {
  MSVIT_CHECK(data.size() > 0, "evaluation set is empty");
  Batcher batcher(data, batch, timesteps, /*seed=*/0, /*shuffle=*/false);
  EvalResult result;
  double loss_sum = 0;
  int64_t seen = 0, top1 = 0, top5 = 0;
  Batch b;
  while (batcher.next(b)) {
    Ctx ctx;
    ctx.prof = &result.profiler;
    ag::Var logits = model.forward(ctx, b.input);
    ag::Var loss = ag::ops::cross_entropy(ctx, logits, b.labels);
    const int64_t n = static_cast<int64_t>(b.labels.size());
    loss_sum += loss.value()[0] * static_cast<double>(n);
    top1 += correct_topk(logits.value(), b.labels, 1);
    top5 += correct_topk(logits.value(), b.labels, 5);
    seen += n;
  }
  result.loss = loss_sum / static_cast<double>(seen);
  result.accuracy = static_cast<double>(top1) / static_cast<double>(seen);
  result.accuracy_top5 = static_cast<double>(top5) / static_cast<double>(seen);
  return result;
}

void write_metrics_csv(const std::string& file, const std::vector<EpochMetrics>& history) {
  std::ofstream out(file, std::ios::trunc);
  if (!out) raise("cannot write '" + file + "'");
  out << "epoch,split,loss,accuracy,firing_rate,wall_ms\n";
  for (const auto& m : history)
    out << m.epoch << ',' << m.split << ',' << format_metric(m.loss) << ','
        << format_metric(m.accuracy) << ',' << format_metric(m.firing_rate) << ','
        << m.wall_ms << '\n';
  out.flush();
  if (!out) raise("writing '" + file + "' failed");
}

}  // namespace msvit
