// Copyright (c) 2026 the nefic authors
// SPDX-License-Identifier: Apache-2.0
#ifndef NEFIC_RNG_HPP_
#define NEFIC_RNG_HPP_

#include <cmath>
#include <cstdint>
#include <random>

namespace nefic {

// Deterministic random source. All stochastic choices in the project draw
// from an explicitly seeded Rng so runs are reproducible bit-for-bit.
// Gaussian samples use our own Box-Muller instead of std::normal_distribution
// to keep the byte stream independent of the standard library version.
class Rng {
 public:
  explicit Rng(uint64_t seed = 0) : engine_(seed) {}

  uint64_t next_u64() { return engine_(); }

  // Uniform in [0, 1).
  double uniform() {
    return (engine_() >> 11) * (1.0 / 9007199254740992.0);  // 53-bit mantissa
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Uniform integer in [lo, hi] inclusive.
  int64_t uniform_int(int64_t lo, int64_t hi) {
    uint64_t span = static_cast<uint64_t>(hi - lo) + 1;
    // Rejection sampling to avoid modulo bias.
    uint64_t limit = UINT64_MAX - UINT64_MAX % span;
    uint64_t v;
    do {
      v = engine_();
    } while (v >= limit);
    return lo + static_cast<int64_t>(v % span);
  }

  double normal() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    double u1, u2;
    do {
      u1 = uniform();
    } while (u1 <= 1e-300);
    u2 = uniform();
    double r = std::sqrt(-2.0 * std::log(u1));
    double theta = 2.0 * M_PI * u2;
    spare_ = r * std::sin(theta);
    have_spare_ = true;
    return r * std::cos(theta);
  }

  // Derives an independent child stream; used to decouple e.g. validation
  // draws from the training stream.
  Rng fork(uint64_t salt) {
    uint64_t s = engine_() ^ (salt * 0x9E3779B97F4A7C15ull);
    return Rng(s);
  }

 private:
  std::mt19937_64 engine_;
  bool have_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace nefic

#endif  // NEFIC_RNG_HPP_
