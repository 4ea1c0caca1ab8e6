#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>

namespace crowd {

/// Seeded random stream with platform-independent draws.
///
/// std::mt19937_64 is fully specified by the standard, but the std::*_distribution
/// adaptors are not, so uniform and normal variates are derived here from the raw
/// 64-bit output.
class RandomStream {
 public:
  explicit RandomStream(std::uint64_t seed, std::uint64_t stream = 0)
      : engine_(seed ^ (stream * 0x9E3779B97F4A7C15ULL)) {}

  std::uint64_t next_u64() { return engine_(); }

  /// Uniform in [0, 1).
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n) {
    // rejection keeps the draw unbiased
    const std::uint64_t limit = n == 0 ? 0 : (~std::uint64_t{0} - n + 1) % n;
    std::uint64_t x = engine_();
    while (x < limit) x = engine_();
    return n == 0 ? 0 : x % n;
  }

  /// Standard normal via the Marsaglia polar method.
  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u = 0;
    double v = 0;
    double s = 0;
    do {
      u = uniform(-1.0, 1.0);
      v = uniform(-1.0, 1.0);
      s = u * u + v * v;
    } while (s >= 1.0 || s == 0.0);
    const double m = std::sqrt(-2.0 * std::log(s) / s);
    spare_ = v * m;
    has_spare_ = true;
    return u * m;
  }

  double normal(double mean, double stddev) { return mean + stddev * normal(); }

  /// Normal restricted to [lo, hi] by rejection; falls back to clamping after 64 tries.
  double truncated_normal(double mean, double stddev, double lo, double hi) {
    if (stddev <= 0.0) return std::clamp(mean, lo, hi);
    for (int i = 0; i < 64; ++i) {
      const double x = normal(mean, stddev);
      if (x >= lo && x <= hi) return x;
    }
    return std::clamp(mean, lo, hi);
  }

 private:
  std::mt19937_64 engine_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

}  // namespace crowd
