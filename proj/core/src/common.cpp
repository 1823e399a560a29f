#include "msvit/common.hpp"

#include <algorithm>
#include <atomic>
#include <thread>
#include <vector>

namespace msvit {

namespace {
std::atomic<int> g_threads{1};
}

void set_threads(int n) {
  MSVIT_CHECK(n >= 1, "thread count must be >= 1, got ", n);
  g_threads.store(n);
}

int threads() { return g_threads.load(); }

void parallel_for(int64_t n, int64_t grain, const std::function<void(int64_t, int64_t)>& fn) {
  if (n <= 0) return;
  int64_t want = std::min<int64_t>(threads(), std::max<int64_t>(1, n / std::max<int64_t>(1, grain)));
  if (want <= 1) {
    fn(0, n);
    return;
  }
  int64_t chunk = (n + want - 1) / want;
  std::vector<std::thread> pool;
  pool.reserve(static_cast<size_t>(want));
  for (int64_t begin = 0; begin < n; begin += chunk) {
    int64_t end = std::min(n, begin + chunk);
    pool.emplace_back([&fn, begin, end] { fn(begin, end); });
  }
  for (auto& t : pool) t.join();
}

uint64_t fnv1a(const void* data, size_t n, uint64_t h) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ull;
  }
  return h;
}

std::string hex64(uint64_t v) {
  static const char* digits = "0123456789abcdef";
  std::string out(16, '0');
  for (int i = 15; i >= 0; --i) {
    out[static_cast<size_t>(i)] = digits[v & 0xf];
    v >>= 4;
  }
  return out;
}

}  // namespace msvit
