#pragma once

#include <cstdint>
#include <string_view>

namespace jv {

/// SplitMix64 finalizer; also used to expand seeds.
std::uint64_t splitmix64(std::uint64_t& state);

/// Deterministic 64-bit generator: xoshiro256** (Blackman & Vigna, 2018)
/// with its state expanded from the seed by SplitMix64. Normal deviates use
/// the Box-Muller transform, caching the second value of each pair. The
/// stream depends only on the seed and the sequence of calls.
class Rng {
public:
  explicit Rng(std::uint64_t seed = 0);

  std::uint64_t next_u64();
  /// Uniform in [0, 1) with 53 random bits.
  double uniform();
  /// Uniform integer in [0, n). n must be > 0.
  std::uint64_t uniform_int(std::uint64_t n);
  /// Standard normal N(0, 1).
  double normal();
  bool bernoulli(double p) { return uniform() < p; }

  template <typename It>
  void shuffle(It first, It last) {
    auto n = static_cast<std::uint64_t>(last - first);
    for (std::uint64_t i = n; i > 1; --i) {
      auto j = uniform_int(i);
      using std::swap;
      swap(first[i - 1], first[j]);
    }
  }

private:
  std::uint64_t s_[4];
  double cached_normal_ = 0.0;
  bool has_cached_ = false;
};

/// Per-stage seed: SplitMix64 of (root XOR FNV-1a-64(stage)).
std::uint64_t derive_seed(std::uint64_t root, std::string_view stage);

}  // namespace jv
