#pragma once

#include <cmath>
#include <cstdint>
#include <initializer_list>

namespace composer {

// SplitMix64 mixing. Platform-independent by construction; no std:: distributions
// are used anywhere so that seeded runs are bit-reproducible.
inline uint64_t mix64(uint64_t z) {
  z += 0x9E3779B97F4A7C15ULL;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

// Stream tags for keyed rng derivation. One tag per independent use so streams
// never collide across subsystems.
enum RngTag : uint64_t {
  kTagModelInit = 1,
  kTagShuffle = 2,
  kTagRoute = 3,
  kTagGamma = 4,
  kTagWideSide = 5,
  kTagEval = 6,
  kTagBaselineMix = 7,
};

/// Counter-based generator: a state advanced through the SplitMix64 finalizer.
/// keyed(seed, {...}) derives statistically independent streams for distinct keys.
class Rng {
public:
  explicit Rng(uint64_t seed) : state_(mix64(seed ^ 0x5851F42D4C957F2DULL)) {}

  static Rng keyed(uint64_t seed, std::initializer_list<uint64_t> words) {
    uint64_t s = mix64(seed ^ 0x8E1F0F3B217A95A6ULL);
    for (uint64_t w : words) s = mix64(s ^ mix64(w));
    Rng r(0);
    r.state_ = s;
    return r;
  }

  uint64_t next_u64() {
    state_ = mix64(state_);
    return state_;
  }

  /// Uniform in [0,1) with 53 random bits.
  double next_double() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * next_double(); }

  /// exp of a uniform draw on [ln lo, ln hi]; requires 0 < lo <= hi.
  double log_uniform(double lo, double hi) { return std::exp(uniform(std::log(lo), std::log(hi))); }

  /// Integer in [0, n).
  int uniform_int(int n) { return static_cast<int>(next_double() * n); }

private:
  uint64_t state_;
};

}  // namespace composer
