#pragma once

#include <cstdint>
#include <random>

namespace despeck {

// Seeded generator with platform-independent derived distributions.
// std::mt19937_64 has a standardized output sequence; the std::*_distribution
// adaptors do not, so the conversions below are done by hand.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }

  // Uniform on [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  // Uniform on (0, 1).
  double uniform_open() {
    double u;
    do {
      u = uniform();
    } while (u == 0.0);
    return u;
  }

  // Uniform integer in [0, n), rejection sampled (no modulo bias).
  std::uint64_t uniform_index(std::uint64_t n);

  // Standard normal via the Marsaglia polar method.
  double normal();

  // Gamma(shape, scale) via Marsaglia-Tsang; shape < 1 uses the boost trick.
  double gamma(double shape, double scale);

 private:
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace despeck
