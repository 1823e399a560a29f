#pragma once

#include <cstdint>
#include <functional>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>

namespace msvit {

// All runtime contract violations (bad shapes, bad configs, corrupt files)
// surface as msvit::Error with a formatted message.
class Error : public std::runtime_error {
public:
  explicit Error(const std::string& what) : std::runtime_error(what) {}
};

namespace detail {
inline void check_format(std::ostringstream&) {}
template <typename T, typename... Rest>
void check_format(std::ostringstream& os, const T& v, const Rest&... rest) {
  os << v;
  check_format(os, rest...);
}
}  // namespace detail

template <typename... Args>
[[noreturn]] void raise(const Args&... args) {
  std::ostringstream os;
  detail::check_format(os, args...);
  throw Error(os.str());
}

#define MSVIT_CHECK(cond, ...)            \
  do {                                    \
    if (!(cond)) ::msvit::raise(__VA_ARGS__); \
  } while (0)

// One RNG type everywhere so that a seed fully determines every stream.
using Rng = std::mt19937_64;

// Derives an independent stream from (seed, salt) without correlated state.
inline Rng make_rng(uint64_t seed, uint64_t salt = 0) {
  // splitmix64 scramble of the pair
  uint64_t z = seed + 0x9e3779b97f4a7c15ull * (salt + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  z = z ^ (z >> 31);
  return Rng(z);
}

// Compute-thread budget. Results are identical for any setting because all
// parallel loops write disjoint outputs; the knob only controls wall time.
void set_threads(int n);
int threads();

// Runs fn(begin, end) over [0, n) in contiguous chunks, possibly on worker
// threads. fn must not touch shared mutable state outside its range.
void parallel_for(int64_t n, int64_t grain, const std::function<void(int64_t, int64_t)>& fn);

// FNV-1a, used for config/model hashes and fixture checksums.
uint64_t fnv1a(const void* data, size_t n, uint64_t h = 0xcbf29ce484222325ull);
inline uint64_t fnv1a(const std::string& s, uint64_t h = 0xcbf29ce484222325ull) {
  return fnv1a(s.data(), s.size(), h);
}
std::string hex64(uint64_t v);

}  // namespace msvit
