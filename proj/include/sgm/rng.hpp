#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace sgm {

/// Deterministic pseudo-random stream. All randomness in the pipeline flows
/// from one root seed through named substreams, so every run is reproducible
/// from (config, seed) alone.
class Rng {
 public:
  explicit Rng(uint64_t seed) : engine_(seed) {}

  uint64_t next_u64() { return engine_(); }

  /// Uniform in the open interval (0, 1).
  double next_double01() {
    return (static_cast<double>(engine_() >> 11) + 0.5) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * next_double01(); }

  /// Uniform integer in [lo, hi] inclusive, rejection-sampled to stay unbiased.
  int uniform_int(int lo, int hi) {
    uint64_t span = static_cast<uint64_t>(hi) - static_cast<uint64_t>(lo) + 1;
    uint64_t limit = UINT64_MAX - UINT64_MAX % span;
    uint64_t x;
    do {
      x = engine_();
    } while (x >= limit);
    return lo + static_cast<int>(x % span);
  }

 private:
  std::mt19937_64 engine_;
};

namespace detail {
inline uint64_t splitmix64(uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}
}  // namespace detail

/// Derive the seed of a named substream (e.g. "data", "noise", "init",
/// "train") plus an index, so independent parts of a run never share a stream.
inline uint64_t substream(uint64_t root, std::string_view name, uint64_t index = 0) {
  uint64_t h = 0xcbf29ce484222325ULL;  // FNV-1a over the name
  for (char c : name) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ULL;
  }
  uint64_t s = detail::splitmix64(root ^ h);
  return detail::splitmix64(s ^ (0x632be59bd9b4e019ULL + index));
}

}  // namespace sgm
