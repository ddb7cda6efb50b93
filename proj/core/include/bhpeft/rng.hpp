#pragma once

#include <cmath>
#include <cstdint>
#include <random>

namespace bhpeft {

/// Deterministic random source. Wraps std::mt19937_64 (whose output sequence
/// is pinned by the standard) and implements the uniform and normal
/// transforms explicitly, so that draws are reproducible independent of the
/// standard library's distribution implementations.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : seed_(seed), engine_(seed) {}

  std::uint64_t seed() const { return seed_; }

  std::uint64_t next_u64() { return engine_(); }

  /// Uniform draw in (0, 1]; 53-bit resolution.
  double uniform01() {
    return static_cast<double>((next_u64() >> 11) + 1) * 0x1.0p-53;
  }

  /// Uniform draw in (lo, lo + (hi - lo)].
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

  /// Standard normal via Box-Muller (two uniforms per draw, no caching).
  double normal() {
    double u1 = uniform01();
    double u2 = uniform01();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * 3.141592653589793 * u2);
  }

  /// Uniform index in [0, n). Modulo bias is ~2^-60 for desk-scale n;
  /// determinism matters more here than the last shred of uniformity.
  std::size_t index(std::size_t n) { return static_cast<std::size_t>(next_u64() % n); }

  /// Independent child stream k, derived from the parent seed.
  Rng child(std::uint64_t k) const {
    return Rng(splitmix64(seed_ ^ (0x9E3779B97F4A7C15ULL * (k + 1))));
  }

  static std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9E3779B97F4A7C15ULL;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
    return x ^ (x >> 31);
  }

 private:
  std::uint64_t seed_;
  std::mt19937_64 engine_;
};

}  // namespace bhpeft
