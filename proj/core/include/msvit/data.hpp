#pragma once

#include <string>
#include <vector>

#include "msvit/spike.hpp"
#include "msvit/tensor.hpp"

namespace msvit {

// One example: either a static image [C,H,W] (normalized analog) or a
// pre-binned event tensor of binary frames (image form, batch axis 1).
struct Sample {
  Tensor image;        // empty for event data
  SpikeTensor frames;  // [T,1,2,H,W]; empty for static data
  int64_t label = 0;
};

struct Dataset {
  std::vector<Sample> samples;
  int64_t classes = 0;
  int64_t channels = 0, height = 0, width = 0;
  int64_t timesteps = 0;  // 0 for static data
  bool event_data = false;

  int64_t size() const { return static_cast<int64_t>(samples.size()); }
};

// --- CIFAR-10 binary ------------------------------------------------------

// The binary layout: per record 1 label byte then 3072 bytes of
// channel-planar RGB rows. Train split is data_batch_1..5.bin, test split
// test_batch.bin, under `dir`.
enum class Split { Train, Test };

struct CifarOptions {
  int64_t limit = 0;              // keep first N examples, 0 = all
  std::vector<int64_t> classes;   // keep only these labels, empty = all
  bool normalize = true;          // per-channel mean/std from the train split
};

Dataset load_cifar10(const std::string& dir, Split split, const CifarOptions& opt = {});

// Per-channel statistics of a directory's train split, computed on load and
// reused to normalize the test split.
struct ChannelStats {
  std::vector<double> mean, stddev;
};
ChannelStats cifar10_train_stats(const std::string& dir);

// --- synthetic event streams ----------------------------------------------

struct Event {
  int64_t t = 0;  // microseconds
  int64_t x = 0, y = 0;
  int64_t polarity = 0;  // 0 negative, 1 positive
};

struct EventStream {
  std::vector<Event> events;  // ordered by t
  int64_t sensor_h = 0, sensor_w = 0;
  int64_t label = 0;
};

// Six gesture-like classes: a bright bar sweeping up/down/left/right and a
// dot orbiting clockwise/counterclockwise. Deterministic per (label, seed).
inline constexpr int64_t kSynthEventClasses = 6;
EventStream synth_event_stream(int64_t label, uint64_t seed, int64_t sensor = 32);

// CSV with one header line, rows t,x,y,p.
void write_events_csv(const EventStream& s, const std::string& file);
EventStream read_events_csv(const std::string& file, int64_t sensor_h, int64_t sensor_w);

// Bins events into T equal time windows over [t_min, t_max]; a pixel-bin is
// 1 when any event of that polarity lands in it. Channel 0 carries positive
// polarity, channel 1 negative. Sensor coordinates scale to the target grid.
SpikeTensor events_to_frames(const EventStream& s, int64_t timesteps, int64_t height,
                             int64_t width);

// A ready dataset of binned synthetic streams, `per_class` examples each.
Dataset synth_event_dataset(int64_t per_class, uint64_t seed, int64_t timesteps,
                            int64_t height, int64_t width);

// Writes streams as CSV files under dir/<split>/ with an index file
// (filename,label per line); loads them back binned.
void write_event_dataset(const std::string& dir, const std::string& split,
                         int64_t per_class, uint64_t seed, int64_t sensor);
Dataset load_event_dataset(const std::string& dir, const std::string& split,
                           int64_t timesteps, int64_t height, int64_t width,
                           int64_t sensor);

// --- batching ---------------------------------------------------------------

struct Batch {
  Tensor input;  // [T,B,C,H,W]; static images replicated across T
  std::vector<int64_t> labels;
};

// Deterministic batching: the visit order is a function of (seed, epoch)
// only. The final short batch is kept.
class Batcher {
public:
  Batcher(const Dataset& data, int64_t batch, int64_t timesteps, uint64_t seed,
          bool shuffle);

  void start_epoch(int64_t epoch);
  bool next(Batch& out);
  int64_t batches_per_epoch() const;

private:
  const Dataset* data_;
  int64_t batch_, timesteps_;
  uint64_t seed_;
  bool shuffle_;
  std::vector<int64_t> order_;
  int64_t cursor_ = 0;
};

}  // namespace msvit
