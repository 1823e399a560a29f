#pragma once

namespace msvit {

class Profiler;
class SpikeAudit;
class LifStateBank;

namespace ag {
class Tape;
}

// Everything a forward pass may plug into. All pointers are optional:
// a null tape means inference (no graph is recorded), a null profiler or
// audit disables that instrumentation, and `states` enables streaming
// inference with membrane state carried across calls.
struct Ctx {
  ag::Tape* tape = nullptr;
  Profiler* prof = nullptr;
  SpikeAudit* audit = nullptr;
  LifStateBank* states = nullptr;
  bool train_bn = false;  // batch statistics + running-stat updates
  bool smoothed = false;  // soft thresholds everywhere, for gradient checks

  bool recording() const { return tape != nullptr; }
};

}  // namespace msvit
