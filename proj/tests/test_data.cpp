#include <unistd.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <set>
#include <vector>

#include "doctest.h"
#include "msvit/data.hpp"

using namespace msvit;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  TempDir() {
    static int counter = 0;
    path = fs::temp_directory_path() / ("msvit-data-" + std::to_string(::getpid()) + "-" +
                                        std::to_string(counter++));
    fs::create_directories(path);
  }
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(path, ec);
  }
  std::string file(const std::string& name) const { return (path / name).string(); }
};

// One record: label byte + three 1024-byte channel planes.
std::vector<unsigned char> cifar_record(unsigned char label, unsigned char base) {
  std::vector<unsigned char> rec(3073);
  rec[0] = label;
  for (size_t i = 1; i < rec.size(); ++i)
    rec[i] = static_cast<unsigned char>((base + i * 7) % 256);
  return rec;
}

void write_bytes(const std::string& file, const std::vector<unsigned char>& bytes) {
  std::ofstream out(file, std::ios::binary | std::ios::trunc);
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
}

// A miniature five-batch train split plus a test batch, two records each.
void write_cifar_dir(const TempDir& dir) {
  for (int b = 1; b <= 5; ++b) {
    std::vector<unsigned char> bytes;
    auto r1 = cifar_record(static_cast<unsigned char>(b % 10), static_cast<unsigned char>(b));
    auto r2 = cifar_record(static_cast<unsigned char>((b + 3) % 10),
                           static_cast<unsigned char>(b + 40));
    bytes.insert(bytes.end(), r1.begin(), r1.end());
    bytes.insert(bytes.end(), r2.begin(), r2.end());
    write_bytes(dir.file("data_batch_" + std::to_string(b) + ".bin"), bytes);
  }
  auto t1 = cifar_record(7, 99);
  write_bytes(dir.file("test_batch.bin"), std::vector<unsigned char>(t1.begin(), t1.end()));
}

uint64_t stream_hash(const EventStream& s) {
  uint64_t h = 1469598103934665603ull;
  auto mix = [&](int64_t v) {
    h ^= static_cast<uint64_t>(v);
    h *= 1099511628211ull;
  };
  for (const auto& e : s.events) {
    mix(e.t);
    mix(e.x);
    mix(e.y);
    mix(e.polarity);
  }
  return h;
}

double mean_on_x(const EventStream& s, int64_t t_lo, int64_t t_hi) {
  double sum = 0;
  int64_t n = 0;
  for (const auto& e : s.events)
    if (e.polarity == 1 && e.t >= t_lo && e.t < t_hi) {
      sum += static_cast<double>(e.x);
      ++n;
    }
  REQUIRE(n > 0);
  return sum / static_cast<double>(n);
}

}  // namespace

TEST_SUITE("data") {

TEST_CASE("cifar records decode plane by plane") {
  TempDir dir;
  write_cifar_dir(dir);

  CifarOptions raw;
  raw.normalize = false;
  Dataset train = load_cifar10(dir.path.string(), Split::Train, raw);
  REQUIRE(train.size() == 10);
  CHECK(train.classes == 10);
  CHECK(train.channels == 3);
  CHECK(train.height == 32);
  CHECK(train.width == 32);
  CHECK_FALSE(train.event_data);

  // First record of data_batch_1: label 1, pixel k at byte (1 + k*7) % 256.
  const Sample& s = train.samples[0];
  CHECK(s.label == 1);
  REQUIRE(s.image.shape() == Shape{3, 32, 32});
  for (int64_t k = 0; k < 3072; ++k) {
    const double want = static_cast<double>((1 + (k + 1) * 7) % 256) / 255.0;
    CHECK(s.image[k] == doctest::Approx(want).epsilon(1e-12));
  }

  Dataset test = load_cifar10(dir.path.string(), Split::Test, raw);
  REQUIRE(test.size() == 1);
  CHECK(test.samples[0].label == 7);
}

TEST_CASE("normalization uses the train-split statistics for both splits") {
  TempDir dir;
  write_cifar_dir(dir);

  ChannelStats stats = cifar10_train_stats(dir.path.string());
  REQUIRE(stats.mean.size() == 3);

  // Oracle: per-channel population moments over all ten train records.
  CifarOptions raw;
  raw.normalize = false;
  Dataset train_raw = load_cifar10(dir.path.string(), Split::Train, raw);
  for (int64_t c = 0; c < 3; ++c) {
    double sum = 0, sq = 0;
    int64_t n = 0;
    for (const auto& s : train_raw.samples)
      for (int64_t k = 0; k < 1024; ++k) {
        const double v = s.image[c * 1024 + k];
        sum += v;
        sq += v * v;
        ++n;
      }
    const double mean = sum / static_cast<double>(n);
    const double var = sq / static_cast<double>(n) - mean * mean;
    CHECK(stats.mean[static_cast<size_t>(c)] == doctest::Approx(mean).epsilon(1e-9));
    CHECK(stats.stddev[static_cast<size_t>(c)] ==
          doctest::Approx(std::sqrt(std::max(var, 0.0))).epsilon(1e-6));
  }

  Dataset test_raw = load_cifar10(dir.path.string(), Split::Test, raw);
  Dataset test_norm = load_cifar10(dir.path.string(), Split::Test, CifarOptions{});
  for (int64_t c = 0; c < 3; ++c)
    for (int64_t k = 0; k < 1024; ++k) {
      const double want = (test_raw.samples[0].image[c * 1024 + k] -
                           stats.mean[static_cast<size_t>(c)]) /
                          stats.stddev[static_cast<size_t>(c)];
      CHECK(test_norm.samples[0].image[c * 1024 + k] == doctest::Approx(want).epsilon(1e-9));
    }
}

TEST_CASE("class filter remaps labels in the order given") {
  TempDir dir;
  write_cifar_dir(dir);
  // Train labels are 1,4, 2,5, 3,6, 4,7, 5,8 across the five files.
  CifarOptions opt;
  opt.normalize = false;
  opt.classes = {4, 5};
  Dataset two = load_cifar10(dir.path.string(), Split::Train, opt);
  REQUIRE(two.size() == 4);
  CHECK(two.classes == 2);
  std::vector<int64_t> labels;
  for (const auto& s : two.samples) labels.push_back(s.label);
  CHECK(labels == std::vector<int64_t>{0, 1, 0, 1});

  opt.limit = 3;
  Dataset limited = load_cifar10(dir.path.string(), Split::Train, opt);
  CHECK(limited.size() == 3);
}

TEST_CASE("malformed cifar files are rejected") {
  TempDir dir;
  write_cifar_dir(dir);

  SUBCASE("missing file") {
    TempDir empty;
    CHECK_THROWS_AS(load_cifar10(empty.path.string(), Split::Train, CifarOptions{}), Error);
  }
  SUBCASE("truncated record") {
    auto bytes = cifar_record(0, 1);
    bytes.pop_back();
    write_bytes(dir.file("data_batch_3.bin"), bytes);
    CifarOptions raw;
    raw.normalize = false;
    CHECK_THROWS_AS(load_cifar10(dir.path.string(), Split::Train, raw), Error);
  }
  SUBCASE("label byte out of range") {
    auto bytes = cifar_record(0, 1);
    bytes[0] = 255;
    write_bytes(dir.file("data_batch_3.bin"), bytes);
    CifarOptions raw;
    raw.normalize = false;
    CHECK_THROWS_AS(load_cifar10(dir.path.string(), Split::Train, raw), Error);
  }
}

TEST_CASE("event streams are deterministic per class and seed") {
  EventStream a = synth_event_stream(2, 5);
  EventStream b = synth_event_stream(2, 5);
  REQUIRE(a.events.size() == b.events.size());
  CHECK(stream_hash(a) == stream_hash(b));
  CHECK(stream_hash(a) != stream_hash(synth_event_stream(2, 6)));
  CHECK(stream_hash(a) != stream_hash(synth_event_stream(3, 5)));
  CHECK(std::is_sorted(a.events.begin(), a.events.end(),
                       [](const Event& x, const Event& y) { return x.t < y.t; }));
  CHECK_THROWS_AS(synth_event_stream(6, 0), Error);
  CHECK_THROWS_AS(synth_event_stream(-1, 0), Error);
}

TEST_CASE("bar classes actually move in their direction") {
  // Class 3 sweeps right: the ON-edge mean x climbs across the stream.
  EventStream right = synth_event_stream(3, 12);
  const int64_t span = right.events.back().t + 1;
  const double early = mean_on_x(right, 0, span / 3);
  const double late = mean_on_x(right, 2 * span / 3, span);
  CHECK(late > early + 5.0);

  EventStream left = synth_event_stream(2, 12);
  const int64_t lspan = left.events.back().t + 1;
  CHECK(mean_on_x(left, 2 * lspan / 3, lspan) < mean_on_x(left, 0, lspan / 3) - 5.0);
}

TEST_CASE("a large stream population has no collisions") {
  std::set<uint64_t> hashes;
  for (int64_t label = 0; label < 6; ++label)
    for (uint64_t seed = 0; seed < 200; ++seed)
      hashes.insert(stream_hash(synth_event_stream(label, seed)));
  CHECK(hashes.size() == 1200);
}

TEST_CASE("a single event lands in bin zero of the positive channel") {
  EventStream s;
  s.sensor_h = s.sensor_w = 32;
  s.events.push_back(Event{5000, 8, 16, 1});
  SpikeTensor frames = events_to_frames(s, 4, 16, 16);
  REQUIRE(frames.shape() == Shape{4, 1, 2, 16, 16});
  // x 8/32 -> 4, y 16/32 -> 8 on the 16-wide target grid.
  CHECK(frames[(0 * 2 + 0) * 256 + 8 * 16 + 4] == 1);
  CHECK(frames.spike_count() == 1);
}

TEST_CASE("binning splits the time span evenly and by polarity") {
  EventStream s;
  s.sensor_h = s.sensor_w = 8;
  s.events = {Event{0, 0, 0, 1}, Event{49, 1, 0, 0}, Event{50, 2, 0, 1}, Event{99, 3, 0, 1}};
  SpikeTensor frames = events_to_frames(s, 2, 8, 8);
  auto at = [&](int64_t t, int64_t c, int64_t y, int64_t x) {
    return frames[((t * 2 + c) * 8 + y) * 8 + x];
  };
  CHECK(at(0, 0, 0, 0) == 1);  // t=0 on
  CHECK(at(0, 1, 0, 1) == 1);  // t=49 off, still the first half
  CHECK(at(1, 0, 0, 2) == 1);  // t=50 opens the second half
  CHECK(at(1, 0, 0, 3) == 1);  // t=99 = t_max stays in the last bin
  CHECK(frames.spike_count() == 4);
  CHECK(frames.is_binary());

  EventStream empty;
  empty.sensor_h = empty.sensor_w = 8;
  CHECK(events_to_frames(empty, 2, 8, 8).spike_count() == 0);
}

TEST_CASE("event csv round-trips and rejects malformed rows") {
  TempDir dir;
  EventStream s = synth_event_stream(4, 3, 16);
  const std::string file = dir.file("events.csv");
  write_events_csv(s, file);
  EventStream back = read_events_csv(file, 16, 16);
  REQUIRE(back.events.size() == s.events.size());
  CHECK(stream_hash(back) == stream_hash(s));
  CHECK(back.sensor_w == 16);

  auto write_text = [&](const std::string& text) {
    std::ofstream out(dir.file("bad.csv"), std::ios::trunc);
    out << text;
  };
  write_text("t,x,y\n1,2,3\n");
  CHECK_THROWS_AS(read_events_csv(dir.file("bad.csv"), 16, 16), Error);
  write_text("t,x,y,p\n1,2,3,7\n");
  CHECK_THROWS_AS(read_events_csv(dir.file("bad.csv"), 16, 16), Error);
  write_text("t,x,y,p\n1,99,3,1\n");
  CHECK_THROWS_AS(read_events_csv(dir.file("bad.csv"), 16, 16), Error);
  write_text("t,x,y,p\n50,2,3,1\n10,2,3,1\n");
  CHECK_THROWS_AS(read_events_csv(dir.file("bad.csv"), 16, 16), Error);
  write_text("t,x,y,p\n1,2,junk,1\n");
  CHECK_THROWS_AS(read_events_csv(dir.file("bad.csv"), 16, 16), Error);
}

TEST_CASE("the synthetic dataset is label-major and binary") {
  Dataset d = synth_event_dataset(2, 9, 8, 16, 16);
  REQUIRE(d.size() == 12);
  CHECK(d.classes == 6);
  CHECK(d.timesteps == 8);
  CHECK(d.event_data);
  for (int64_t i = 0; i < d.size(); ++i) {
    CHECK(d.samples[i].label == i / 2);
    REQUIRE(d.samples[i].frames.shape() == Shape{8, 1, 2, 16, 16});
    CHECK(d.samples[i].frames.is_binary());
    CHECK(d.samples[i].frames.spike_count() > 0);
  }
}

TEST_CASE("written event datasets load back identically") {
  TempDir dir;
  write_event_dataset(dir.path.string(), "train", 2, 77, 32);
  Dataset loaded = load_event_dataset(dir.path.string(), "train", 8, 16, 16, 32);
  Dataset direct = synth_event_dataset(2, 77, 8, 16, 16);
  REQUIRE(loaded.size() == direct.size());
  CHECK(loaded.classes == direct.classes);
  for (int64_t i = 0; i < loaded.size(); ++i) {
    CHECK(loaded.samples[i].label == direct.samples[i].label);
    REQUIRE(loaded.samples[i].frames.numel() == direct.samples[i].frames.numel());
    CHECK(std::memcmp(loaded.samples[i].frames.data(), direct.samples[i].frames.data(),
                      static_cast<size_t>(loaded.samples[i].frames.numel())) == 0);
  }
  CHECK_THROWS_AS(load_event_dataset(dir.path.string(), "nope", 8, 16, 16, 32), Error);
}

TEST_CASE("batching keeps the short tail and replicates static images") {
  Dataset d;
  d.classes = 2;
  d.channels = 1;
  d.height = d.width = 4;
  for (int64_t i = 0; i < 10; ++i) {
    Sample s;
    s.label = i % 2;
    s.image = Tensor::full({1, 4, 4}, static_cast<double>(i));
    d.samples.push_back(std::move(s));
  }

  Batcher batcher(d, 4, 3, 5, true);
  batcher.start_epoch(0);
  CHECK(batcher.batches_per_epoch() == 3);
  std::vector<int64_t> sizes;
  std::vector<double> seen;
  Batch b;
  while (batcher.next(b)) {
    const int64_t B = b.input.dim(1);
    sizes.push_back(B);
    REQUIRE(b.input.dim(0) == 3);
    const int64_t row = b.input.numel() / (3 * B);
    for (int64_t i = 0; i < B; ++i) {
      seen.push_back(b.input[i * row]);
      // replicated across timesteps
      for (int64_t t = 1; t < 3; ++t)
        CHECK(std::memcmp(b.input.data() + (t * B + i) * row, b.input.data() + i * row,
                          sizeof(double) * static_cast<size_t>(row)) == 0);
    }
  }
  CHECK(sizes == std::vector<int64_t>{4, 4, 2});

  // Every sample appears exactly once per epoch.
  std::sort(seen.begin(), seen.end());
  for (int64_t i = 0; i < 10; ++i) CHECK(seen[static_cast<size_t>(i)] == static_cast<double>(i));
}

TEST_CASE("the visit order is a function of seed and epoch") {
  Dataset d;
  d.classes = 10;
  d.channels = 1;
  d.height = d.width = 2;
  for (int64_t i = 0; i < 10; ++i) {
    Sample s;
    s.label = i;
    s.image = Tensor::full({1, 2, 2}, static_cast<double>(i));
    d.samples.push_back(std::move(s));
  }
  auto order = [&](uint64_t seed, int64_t epoch) {
    Batcher batcher(d, 10, 1, seed, true);
    batcher.start_epoch(epoch);
    Batch b;
    REQUIRE(batcher.next(b));
    return b.labels;
  };
  CHECK(order(5, 0) == order(5, 0));
  CHECK(order(5, 0) != order(5, 1));
  CHECK(order(5, 0) != order(6, 0));
  CHECK(order(5, 0) != std::vector<int64_t>{0, 1, 2, 3, 4, 5, 6, 7, 8, 9});

  Batcher plain(d, 10, 1, 5, false);
  plain.start_epoch(3);
  Batch b;
  REQUIRE(plain.next(b));
  CHECK(b.labels == std::vector<int64_t>{0, 1, 2, 3, 4, 5, 6, 7, 8, 9});
}

TEST_CASE("event batches copy each time bin instead of replicating") {
  Dataset d = synth_event_dataset(1, 13, 4, 8, 8);
  Batcher batcher(d, 3, 4, 0, false);
  batcher.start_epoch(0);
  Batch b;
  REQUIRE(batcher.next(b));
  REQUIRE(b.input.shape() == Shape{4, 3, 2, 8, 8});
  const int64_t row = 2 * 8 * 8;
  for (int64_t i = 0; i < 3; ++i) {
    const SpikeTensor& frames = d.samples[static_cast<size_t>(i)].frames;
    for (int64_t t = 0; t < 4; ++t)
      for (int64_t k = 0; k < row; ++k)
        CHECK(b.input[(t * 3 + i) * row + k] == static_cast<double>(frames[t * row + k]));
  }

  // The batcher's timestep count must match the binned frames.
  CHECK_THROWS_AS(Batcher(d, 2, 8, 0, false), Error);
  CHECK_THROWS_AS(Batcher(d, 0, 4, 0, false), Error);
}

}  // TEST_SUITE
