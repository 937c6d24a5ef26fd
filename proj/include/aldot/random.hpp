#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace aldot {

/// Seeded generator with platform-independent derived distributions.
///
/// The standard <random> distributions are implementation-defined, so the
/// uniform, normal and bounded-integer draws here are computed directly from
/// the raw mt19937_64 stream. Same seed, same sequence, on every toolchain.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }

  /// Uniform on [0, 1) with 53 bits of resolution.
  double uniform01();

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

  /// Unbiased integer in [0, bound). bound must be > 0.
  std::uint64_t below(std::uint64_t bound);

  /// Standard normal via Box-Muller (one value per call, no caching).
  double normal();

  double normal(double mean, double sigma) { return mean + sigma * normal(); }

  /// Poisson draw by inversion; intended for small means.
  std::uint64_t poisson(double mean);

  bool bernoulli(double p) { return uniform01() < p; }

 private:
  std::mt19937_64 engine_;
};

/// SplitMix64 finalizer; used to derive independent sub-seeds.
std::uint64_t mix_seed(std::uint64_t x) noexcept;

/// Stable 64-bit FNV-1a hash of a string (not std::hash, which varies).
std::uint64_t stable_hash(std::string_view text) noexcept;

}  // namespace aldot
