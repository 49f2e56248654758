// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstdint>
#include <random>

namespace gscnn {

// Deterministic random source. All distributions are implemented on top of
// mt19937_64 with fixed bit manipulation so streams are identical across
// platforms and standard library versions.
class Rng {
 public:
  explicit Rng(uint64_t seed) : engine_(seed) {}

  uint64_t next_u64() { return engine_(); }

  // Uniform in [0, 1) with 53 bits of mantissa.
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Integer in [lo, hi] inclusive.
  int64_t uniform_int(int64_t lo, int64_t hi) {
    return lo + static_cast<int64_t>(engine_() % static_cast<uint64_t>(hi - lo + 1));
  }

  // Standard normal via Box-Muller (no cached spare, keeps the stream simple).
  double normal() {
    double u1 = uniform();
    double u2 = uniform();
    if (u1 < 1e-300) u1 = 1e-300;
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
  }

  // Gumbel(0, 1).
  double gumbel() {
    double u = uniform();
    if (u < 1e-300) u = 1e-300;
    double l = -std::log(u);
    if (l < 1e-300) l = 1e-300;
    return -std::log(l);
  }

  // Derive an independent stream, e.g. per sample or per step.
  static uint64_t derive(uint64_t seed, uint64_t stream) {
    // splitmix64 over the pair
    uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (stream + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

 private:
  std::mt19937_64 engine_;
};

}  // namespace gscnn
