#ifndef OSLOLAB_RNG_HPP
#define OSLOLAB_RNG_HPP

#include <cstdint>
#include <random>
#include <string>

namespace oslolab {

/// Deterministic random stream. All draws are built from raw mt19937_64
/// output (never std::*_distribution), so the same seed yields the same
/// bytes on every platform.
class Rng {
 public:
  explicit Rng(uint64_t seed) : gen_(seed) {}

  uint64_t next_u64() { return gen_(); }

  /// Uniform in [0, 1) with 53-bit resolution.
  double uniform() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Uniform integer in [lo, hi] inclusive.
  int64_t uniform_int(int64_t lo, int64_t hi);

  /// Standard normal via Box-Muller (pairs generated, one cached).
  double normal();
  double normal(double mean, double stddev) { return mean + stddev * normal(); }

  /// Fisher-Yates shuffle of [0, n) indices.
  std::vector<int64_t> permutation(int64_t n);

 private:
  std::mt19937_64 gen_;
  bool have_cached_ = false;
  double cached_ = 0.0;
};

/// FNV-1a 64-bit over a byte string. Used for stream labels and artifact
/// checksums.
uint64_t fnv1a64(const void* bytes, size_t len);
uint64_t fnv1a64(const std::string& s);

/// SplitMix64 finalizer; decorrelates derived seeds.
uint64_t splitmix64(uint64_t x);

/// Per-stage / per-sample stream derivation: every random choice in a run
/// flows from one master seed through named labels.
uint64_t derive_seed(uint64_t master, const std::string& label);

}  // namespace oslolab

#endif  // OSLOLAB_RNG_HPP
