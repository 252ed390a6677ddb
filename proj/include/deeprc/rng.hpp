#pragma once

#include <cmath>
#include <cstdint>

namespace deeprc {

/// Deterministic counter-based generator (splitmix64). The stream is a pure
/// function of (seed, draw index), so results are reproducible across
/// platforms and independent of call-site reordering between runs.
class Rng {
public:
  explicit Rng(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next_u64() {
    std::uint64_t z = (state_ += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

  /// Uniform double in [0, 1).
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  /// Uniform double in [lo, hi).
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Standard normal via Box-Muller (two draws per call, no caching so the
  /// stream position stays a function of the call count).
  double normal();

private:
  std::uint64_t state_;
};

inline double Rng::normal() {
  // Box-Muller; u clamped away from 0 to keep log finite.
  double u = uniform();
  if (u < 1e-300) u = 1e-300;
  const double v = uniform();
  constexpr double two_pi = 6.283185307179586476925286766559;
  // sqrt(-2 ln u) cos(2 pi v)
  return std::sqrt(-2.0 * std::log(u)) * std::cos(two_pi * v);
}

}  // namespace deeprc
