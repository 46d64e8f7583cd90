#pragma once

#include <cstdint>

#include "sevar/errors.hpp"

namespace sevar {

// Deterministic 64-bit generator (splitmix64). The stream depends only on the
// seed, never on the platform, so identical seeds give identical runs
// everywhere. All initialization, shuffling and augmentation randomness in
// this library goes through Rng.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next_u64() {
    state_ += 0x9E3779B97F4A7C15ULL;
    return mix(state_);
  }

  // Uniform in [0, 1), 53-bit resolution.
  double next_double() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) {
    if (!(lo < hi)) throw InvalidRange("uniform: requires lo < hi");
    return lo + (hi - lo) * next_double();
  }

  // Uniform in [0, bound). Lemire multiply-shift; deterministic, bias < 2^-64.
  std::uint64_t next_below(std::uint64_t bound) {
    return static_cast<std::uint64_t>(
        (static_cast<unsigned __int128>(next_u64()) * bound) >> 64);
  }

  // Derives an independent child stream from the current state and a tag
  // without advancing this generator.
  Rng fork(std::uint64_t tag) const {
    return Rng(mix(state_ ^ (0x9E3779B97F4A7C15ULL * (tag + 0x632BE59BD9B4E019ULL))));
  }

 private:
  static std::uint64_t mix(std::uint64_t z) {
    z ^= z >> 30;
    z *= 0xBF58476D1CE4E5B9ULL;
    z ^= z >> 27;
    z *= 0x94D049BB133111EBULL;
    z ^= z >> 31;
    return z;
  }

  std::uint64_t state_;
};

}  // namespace sevar
