#pragma once

#include <cmath>
#include <cstdint>

namespace edgedoc {

// SplitMix64. Cheap, splittable, and identical across platforms, which is
// what makes corpora and checkpoints byte-reproducible.
class SplitMix64 {
 public:
  explicit SplitMix64(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next_u64() {
    std::uint64_t z = (state_ += 0x9E3779B97F4A7C15ULL);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
  }

  // Uniform in [0, 1).
  double next_double() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  float next_float() { return static_cast<float>(next_double()); }

  // Uniform in [lo, hi).
  double uniform(double lo, double hi) { return lo + (hi - lo) * next_double(); }

  // Uniform integer in [0, n).
  std::uint64_t next_below(std::uint64_t n) { return next_u64() % n; }

  // Standard normal via Box-Muller (one value per call, cached pair unused
  // to keep the stream position easy to reason about).
  double normal() {
    double u1 = next_double();
    double u2 = next_double();
    if (u1 < 1e-300) u1 = 1e-300;
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
  }

  // Derive an independent stream; used to give each sample / parameter its
  // own generator so insertion order cannot leak into the stream.
  SplitMix64 split(std::uint64_t salt) {
    SplitMix64 mix(state_ ^ (0x9E3779B97F4A7C15ULL * (salt + 1)));
    return SplitMix64(mix.next_u64());
  }

 private:
  std::uint64_t state_;
};

}  // namespace edgedoc
