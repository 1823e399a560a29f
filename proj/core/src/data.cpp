#include "msvit/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <mutex>
#include <numbers>
#include <sstream>

namespace msvit {

namespace fs = std::filesystem;

// --- CIFAR-10 binary --------------------------------------------------------

namespace {

constexpr int64_t kCifarDim = 32;
constexpr int64_t kCifarRecord = 1 + 3 * kCifarDim * kCifarDim;

std::vector<std::string> cifar_files(const std::string& dir, Split split) {
  std::vector<std::string> files;
  if (split == Split::Train) {
    for (int i = 1; i <= 5; ++i)
      files.push_back(dir + "/data_batch_" + std::to_string(i) + ".bin");
  } else {
    files.push_back(dir + "/test_batch.bin");
  }
  return files;
}

// Raw records of one file: label + [0,1]-scaled channel-planar pixels.
void read_cifar_file(const std::string& file, std::vector<Sample>& out) {
  std::ifstream in(file, std::ios::binary);
  if (!in) raise("cannot open CIFAR-10 file '" + file + "'");
  in.seekg(0, std::ios::end);
  const int64_t bytes = static_cast<int64_t>(in.tellg());
  in.seekg(0);
  if (bytes <= 0 || bytes % kCifarRecord != 0)
    raise("'" + file + "' is " + std::to_string(bytes) +
          " bytes, not a whole number of 3073-byte records");
  const int64_t records = bytes / kCifarRecord;
  std::vector<unsigned char> buf(static_cast<size_t>(kCifarRecord));
  for (int64_t r = 0; r < records; ++r) {
    in.read(reinterpret_cast<char*>(buf.data()), kCifarRecord);
    MSVIT_CHECK(in.gcount() == kCifarRecord, "short read from '" + file + "'");
    const int label = buf[0];
    if (label > 9)
      raise("'" + file + "' record " + std::to_string(r) + " has label byte " +
            std::to_string(label) + " (valid range 0-9)");
    Sample s;
    s.label = label;
    s.image = Tensor::zeros({3, kCifarDim, kCifarDim});
    double* img = s.image.data();
    for (int64_t i = 0; i < 3 * kCifarDim * kCifarDim; ++i)
      img[i] = static_cast<double>(buf[static_cast<size_t>(1 + i)]) / 255.0;
    out.push_back(std::move(s));
  }
}

ChannelStats compute_train_stats(const std::string& dir) {
  std::vector<Sample> raw;
  for (const auto& f : cifar_files(dir, Split::Train)) read_cifar_file(f, raw);
  MSVIT_CHECK(!raw.empty(), "train split under '" + dir + "' is empty");
  const int64_t plane = kCifarDim * kCifarDim;
  ChannelStats st;
  st.mean.assign(3, 0.0);
  st.stddev.assign(3, 0.0);
  const double count = static_cast<double>(raw.size() * plane);
  for (const auto& s : raw)
    for (int64_t c = 0; c < 3; ++c)
      for (int64_t i = 0; i < plane; ++i) st.mean[c] += s.image[c * plane + i];
  for (auto& m : st.mean) m /= count;
  for (const auto& s : raw)
    for (int64_t c = 0; c < 3; ++c)
      for (int64_t i = 0; i < plane; ++i) {
        const double d = s.image[c * plane + i] - st.mean[c];
        st.stddev[c] += d * d;
      }
  for (auto& v : st.stddev) v = std::sqrt(std::max(v / count, 1e-12));
  return st;
}

}  // namespace

ChannelStats cifar10_train_stats(const std::string& dir) {
  static std::mutex mu;
  static std::map<std::string, ChannelStats> cache;
  std::lock_guard<std::mutex> lock(mu);
  auto it = cache.find(dir);
  if (it == cache.end()) it = cache.emplace(dir, compute_train_stats(dir)).first;
  return it->second;
}

Dataset load_cifar10(const std::string& dir, Split split, const CifarOptions& opt) {
  std::vector<Sample> raw;
  for (const auto& f : cifar_files(dir, split)) read_cifar_file(f, raw);

  // Class filter remaps labels to 0..k-1 in the order given, so a two-class
  // subset trains against a two-way head directly.
  std::map<int64_t, int64_t> remap;
  for (size_t i = 0; i < opt.classes.size(); ++i) {
    MSVIT_CHECK(opt.classes[i] >= 0 && opt.classes[i] <= 9, "class filter entries must be 0-9");
    MSVIT_CHECK(!remap.count(opt.classes[i]), "class filter repeats a label");
    remap[opt.classes[i]] = static_cast<int64_t>(i);
  }

  Dataset data;
  data.classes = remap.empty() ? 10 : static_cast<int64_t>(remap.size());
  data.channels = 3;
  data.height = data.width = kCifarDim;

  ChannelStats st;
  if (opt.normalize) st = cifar10_train_stats(dir);
  const int64_t plane = kCifarDim * kCifarDim;
  for (auto& s : raw) {
    if (!remap.empty()) {
      auto it = remap.find(s.label);
      if (it == remap.end()) continue;
      s.label = it->second;
    }
    if (opt.normalize)
      for (int64_t c = 0; c < 3; ++c)
        for (int64_t i = 0; i < plane; ++i)
          s.image[c * plane + i] = (s.image[c * plane + i] - st.mean[c]) / st.stddev[c];
    data.samples.push_back(std::move(s));
    if (opt.limit > 0 && data.size() >= opt.limit) break;
  }
  return data;
}

// --- synthetic event streams ------------------------------------------------

namespace {

constexpr int64_t kStreamTicks = 64;
constexpr int64_t kStreamUs = 100'000;  // 100 ms per stream

double unit(Rng& rng) {
  return std::uniform_real_distribution<double>(0.0, 1.0)(rng);
}

void emit(EventStream& s, int64_t t, int64_t x, int64_t y, int64_t polarity) {
  if (x < 0 || x >= s.sensor_w || y < 0 || y >= s.sensor_h) return;
  s.events.push_back({t, x, y, polarity});
}

}  // namespace

EventStream synth_event_stream(int64_t label, uint64_t seed, int64_t sensor) {
  MSVIT_CHECK(label >= 0 && label < kSynthEventClasses,
              "event class must be in [0, " + std::to_string(kSynthEventClasses) + ")");
  MSVIT_CHECK(sensor >= 8, "sensor side must be at least 8");
  Rng rng = make_rng(seed, 0x65766e74u + static_cast<uint64_t>(label));

  EventStream s;
  s.sensor_h = s.sensor_w = sensor;
  s.label = label;

  const int64_t step_us = kStreamUs / kStreamTicks;
  const double lo = 3.0 + unit(rng);
  const double hi = static_cast<double>(sensor) - 4.0 - unit(rng);

  if (label < 4) {
    // A full-length bar sweeping across the sensor. ON events trace the
    // leading edge, OFF events the trailing edge two pixels behind.
    //   0: up (y decreasing)  1: down  2: left (x decreasing)  3: right
    const bool horizontal_motion = label >= 2;  // moves along x
    const bool increasing = (label == 1 || label == 3);
    for (int64_t tick = 0; tick < kStreamTicks; ++tick) {
      const double f = static_cast<double>(tick) / static_cast<double>(kStreamTicks - 1);
      const double pos = increasing ? lo + (hi - lo) * f : hi - (hi - lo) * f;
      const int64_t lead = std::llround(pos);
      const int64_t trail = lead + (increasing ? -2 : 2);
      const int64_t t = tick * step_us;
      for (int64_t i = 0; i < sensor; ++i) {
        if (unit(rng) < 0.75) {
          if (horizontal_motion)
            emit(s, t, lead, i, 1);
          else
            emit(s, t, i, lead, 1);
        }
        if (unit(rng) < 0.75) {
          if (horizontal_motion)
            emit(s, t, trail, i, 0);
          else
            emit(s, t, i, trail, 0);
        }
      }
      if (unit(rng) < 0.3)
        emit(s, t, static_cast<int64_t>(unit(rng) * sensor),
             static_cast<int64_t>(unit(rng) * sensor), unit(rng) < 0.5 ? 1 : 0);
    }
  } else {
    // A dot making one full orbit; the sign of the sweep separates the two
    // rotation classes. ON events at the dot, OFF events where it just was.
    const double dir = (label == 4) ? 1.0 : -1.0;
    const double cx = sensor / 2.0 + unit(rng) - 0.5;
    const double cy = sensor / 2.0 + unit(rng) - 0.5;
    const double radius = sensor / 4.0 + 2.0 * (unit(rng) - 0.5);
    const double phase = 2.0 * std::numbers::pi * unit(rng);
    double prev_x = 0, prev_y = 0;
    for (int64_t tick = 0; tick < kStreamTicks; ++tick) {
      const double theta =
          phase + dir * 2.0 * std::numbers::pi * static_cast<double>(tick) / kStreamTicks;
      const double dx = cx + radius * std::cos(theta);
      const double dy = cy + radius * std::sin(theta);
      const int64_t t = tick * step_us;
      for (int64_t oy = 0; oy <= 1; ++oy)
        for (int64_t ox = 0; ox <= 1; ++ox) {
          if (unit(rng) < 0.85)
            emit(s, t, std::llround(dx) + ox, std::llround(dy) + oy, 1);
          if (tick > 0 && unit(rng) < 0.6)
            emit(s, t, std::llround(prev_x) + ox, std::llround(prev_y) + oy, 0);
        }
      if (unit(rng) < 0.3)
        emit(s, t, static_cast<int64_t>(unit(rng) * sensor),
             static_cast<int64_t>(unit(rng) * sensor), unit(rng) < 0.5 ? 1 : 0);
      prev_x = dx;
      prev_y = dy;
    }
  }
  return s;
}

void write_events_csv(const EventStream& s, const std::string& file) {
  std::ofstream out(file, std::ios::trunc);
  if (!out) raise("cannot write '" + file + "'");
  out << "t,x,y,p\n";
  for (const auto& e : s.events)
    out << e.t << ',' << e.x << ',' << e.y << ',' << e.polarity << '\n';
  out.flush();
  if (!out) raise("writing '" + file + "' failed");
}

EventStream read_events_csv(const std::string& file, int64_t sensor_h, int64_t sensor_w) {
  std::ifstream in(file);
  if (!in) raise("cannot open '" + file + "'");
  EventStream s;
  s.sensor_h = sensor_h;
  s.sensor_w = sensor_w;
  std::string line;
  if (!std::getline(in, line) || line != "t,x,y,p")
    raise("'" + file + "' does not start with the t,x,y,p header");
  int64_t row = 1, prev_t = -1;
  while (std::getline(in, line)) {
    ++row;
    if (line.empty()) continue;
    long long t = 0, x = 0, y = 0, p = 0;
    char extra;
    if (std::sscanf(line.c_str(), "%lld,%lld,%lld,%lld%c", &t, &x, &y, &p, &extra) != 4)
      raise("'" + file + "' line " + std::to_string(row) + " is not t,x,y,p");
    Event e{t, x, y, p};
    if (e.x < 0 || e.x >= sensor_w || e.y < 0 || e.y >= sensor_h)
      raise("'" + file + "' line " + std::to_string(row) + " has out-of-range coordinates");
    if (e.polarity != 0 && e.polarity != 1)
      raise("'" + file + "' line " + std::to_string(row) + " has polarity outside {0,1}");
    if (e.t < prev_t)
      raise("'" + file + "' line " + std::to_string(row) + " breaks timestamp order");
    prev_t = e.t;
    s.events.push_back(e);
  }
  return s;
}

SpikeTensor events_to_frames(const EventStream& s, int64_t timesteps, int64_t height,
                             int64_t width) {
  MSVIT_CHECK(timesteps >= 1, "need at least one time bin");
  MSVIT_CHECK(height >= 1 && width >= 1, "target grid must be non-empty");
  MSVIT_CHECK(s.sensor_h >= 1 && s.sensor_w >= 1, "event stream lacks sensor dimensions");
  SpikeTensor frames({timesteps, 1, 2, height, width}, SpikeForm::Image);
  if (s.events.empty()) return frames;

  const int64_t t_min = s.events.front().t;
  const int64_t t_max = s.events.back().t;
  const int64_t span = t_max - t_min + 1;
  for (const auto& e : s.events) {
    const int64_t bin = (e.t - t_min) * timesteps / span;
    const int64_t x = e.x * width / s.sensor_w;
    const int64_t y = e.y * height / s.sensor_h;
    const int64_t c = e.polarity == 1 ? 0 : 1;
    frames[((bin * 2 + c) * height + y) * width + x] = 1;
  }
  return frames;
}

Dataset synth_event_dataset(int64_t per_class, uint64_t seed, int64_t timesteps,
                            int64_t height, int64_t width) {
  MSVIT_CHECK(per_class >= 1, "need at least one example per class");
  Dataset data;
  data.classes = kSynthEventClasses;
  data.channels = 2;
  data.height = height;
  data.width = width;
  data.timesteps = timesteps;
  data.event_data = true;
  for (int64_t label = 0; label < kSynthEventClasses; ++label)
    for (int64_t i = 0; i < per_class; ++i) {
      EventStream s = synth_event_stream(label, seed + static_cast<uint64_t>(i));
      Sample sample;
      sample.label = label;
      sample.frames = events_to_frames(s, timesteps, height, width);
      data.samples.push_back(std::move(sample));
    }
  return data;
}

void write_event_dataset(const std::string& dir, const std::string& split,
                         int64_t per_class, uint64_t seed, int64_t sensor) {
  const fs::path root = fs::path(dir) / split;
  std::error_code ec;
  fs::create_directories(root, ec);
  if (ec) raise("cannot create '" + root.string() + "': " + ec.message());
  std::ofstream index(root / "index.txt", std::ios::trunc);
  if (!index) raise("cannot write '" + (root / "index.txt").string() + "'");
  for (int64_t label = 0; label < kSynthEventClasses; ++label)
    for (int64_t i = 0; i < per_class; ++i) {
      EventStream s = synth_event_stream(label, seed + static_cast<uint64_t>(i), sensor);
      const std::string name =
          "class" + std::to_string(label) + "_" + std::to_string(i) + ".csv";
      write_events_csv(s, (root / name).string());
      index << name << ',' << label << '\n';
    }
  index.flush();
  if (!index) raise("writing the event index under '" + root.string() + "' failed");
}

Dataset load_event_dataset(const std::string& dir, const std::string& split,
                           int64_t timesteps, int64_t height, int64_t width,
                           int64_t sensor) {
  const fs::path root = fs::path(dir) / split;
  std::ifstream index(root / "index.txt");
  if (!index) raise("cannot open '" + (root / "index.txt").string() + "'");
  Dataset data;
  data.channels = 2;
  data.height = height;
  data.width = width;
  data.timesteps = timesteps;
  data.event_data = true;
  std::string line;
  int64_t max_label = -1;
  while (std::getline(index, line)) {
    if (line.empty()) continue;
    const auto comma = line.rfind(',');
    if (comma == std::string::npos)
      raise("'" + (root / "index.txt").string() + "' has a row without a label");
    Sample sample;
    sample.label = std::stoll(line.substr(comma + 1));
    EventStream s = read_events_csv((root / line.substr(0, comma)).string(), sensor, sensor);
    sample.frames = events_to_frames(s, timesteps, height, width);
    max_label = std::max(max_label, sample.label);
    data.samples.push_back(std::move(sample));
  }
  MSVIT_CHECK(max_label >= 0, "event dataset under '" + root.string() + "' is empty");
  data.classes = max_label + 1;
  return data;
}

// --- batching ----------------------------------------------------------------

Batcher::Batcher(const Dataset& data, int64_t batch, int64_t timesteps, uint64_t seed,
                 bool shuffle)
    : data_(&data), batch_(batch), timesteps_(timesteps), seed_(seed), shuffle_(shuffle) {
  MSVIT_CHECK(batch_ >= 1, "batch size must be at least 1");
  MSVIT_CHECK(timesteps_ >= 1, "need at least one timestep");
  if (data.event_data)
    MSVIT_CHECK(data.timesteps == timesteps_,
                "event dataset was binned with T=" + std::to_string(data.timesteps) +
                    ", batcher wants T=" + std::to_string(timesteps_));
  order_.resize(static_cast<size_t>(data.size()));
  start_epoch(0);
}

void Batcher::start_epoch(int64_t epoch) {
  for (size_t i = 0; i < order_.size(); ++i) order_[i] = static_cast<int64_t>(i);
  if (shuffle_) {
    // Explicit Fisher-Yates so the order depends only on (seed, epoch), not
    // on a library's distribution implementation.
    Rng rng = make_rng(seed_, 0x73687566u + static_cast<uint64_t>(epoch));
    for (size_t i = order_.size(); i > 1; --i) {
      const size_t j = static_cast<size_t>(rng() % i);
      std::swap(order_[i - 1], order_[j]);
    }
  }
  cursor_ = 0;
}

int64_t Batcher::batches_per_epoch() const {
  return (data_->size() + batch_ - 1) / batch_;
}

bool Batcher::next(Batch& out) {
  if (cursor_ >= data_->size()) return false;
  const int64_t b = std::min(batch_, data_->size() - cursor_);
  const int64_t c = data_->channels, h = data_->height, w = data_->width;
  const int64_t chw = c * h * w;
  out.input = Tensor::zeros({timesteps_, b, c, h, w});
  out.labels.assign(static_cast<size_t>(b), 0);
  double* dst = out.input.data();
  for (int64_t k = 0; k < b; ++k) {
    const Sample& s = data_->samples[static_cast<size_t>(order_[static_cast<size_t>(cursor_ + k)])];
    out.labels[static_cast<size_t>(k)] = s.label;
    if (data_->event_data) {
      const uint8_t* src = s.frames.data();  // [T,1,C,H,W]
      for (int64_t t = 0; t < timesteps_; ++t)
        for (int64_t i = 0; i < chw; ++i)
          dst[(t * b + k) * chw + i] = static_cast<double>(src[t * chw + i]);
    } else {
      // Static frame repeated every timestep; membrane dynamics downstream
      // make the steps differ.
      const double* src = s.image.data();
      for (int64_t t = 0; t < timesteps_; ++t)
        for (int64_t i = 0; i < chw; ++i) dst[(t * b + k) * chw + i] = src[i];
    }
  }
  cursor_ += b;
  return true;
}

}  // namespace msvit
