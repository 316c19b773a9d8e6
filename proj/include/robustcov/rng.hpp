#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <vector>

namespace robustcov {

namespace detail {
inline std::uint64_t mix64(std::uint64_t z) {
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}
constexpr std::uint64_t kGamma = 0x9e3779b97f4a7c15ULL;
}  // namespace detail

/// Counter-based generator (splitmix64). The k-th output is a pure function
/// of (key, k), so streams derived from distinct keys are distinct
/// subsequences of one global sequence. Every consumer derives its own
/// stream; nothing is shared across threads.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : state_(detail::mix64(seed + detail::kGamma)) {}

  /// Independent stream keyed by a master seed and up to three stream ids.
  static Rng stream(std::uint64_t seed, std::uint64_t a, std::uint64_t b = 0,
                    std::uint64_t c = 0) {
    std::uint64_t k = seed;
    k = detail::mix64(k + detail::kGamma + a);
    k = detail::mix64(k + detail::kGamma + b);
    k = detail::mix64(k + detail::kGamma + c);
    return Rng(k);
  }

  std::uint64_t next_u64() {
    state_ += detail::kGamma;
    return detail::mix64(state_);
  }

  /// Uniform in the open interval (0, 1).
  double uniform() {
    return (static_cast<double>(next_u64() >> 11) + 0.5) * 0x1.0p-53;
  }

  /// Standard normal via Box-Muller; the spare draw is cached.
  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    const double u1 = uniform();
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double a = 2.0 * std::numbers::pi * u2;
    spare_ = r * std::sin(a);
    has_spare_ = true;
    return r * std::cos(a);
  }

  double exponential(double scale = 1.0) { return -std::log(uniform()) * scale; }

  /// Gamma(shape, scale). shape == 1 is drawn as an exact exponential;
  /// otherwise Marsaglia-Tsang with the shape < 1 boost.
  double gamma(double shape, double scale) {
    if (shape == 1.0) return exponential(scale);
    if (shape < 1.0) {
      const double g = gamma(shape + 1.0, scale);
      return g * std::pow(uniform(), 1.0 / shape);
    }
    const double d = shape - 1.0 / 3.0;
    const double c = 1.0 / std::sqrt(9.0 * d);
    for (;;) {
      double x, v;
      do {
        x = normal();
        v = 1.0 + c * x;
      } while (v <= 0.0);
      v = v * v * v;
      const double u = uniform();
      if (u < 1.0 - 0.0331 * x * x * x * x) return d * v * scale;
      if (std::log(u) < 0.5 * x * x + d * (1.0 - v + std::log(v))) return d * v * scale;
    }
  }

  /// Uniform integer in [0, n), bias-free by rejection.
  int uniform_int(int n) {
    const std::uint64_t un = static_cast<std::uint64_t>(n);
    const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                                std::numeric_limits<std::uint64_t>::max() % un;
    std::uint64_t x;
    do {
      x = next_u64();
    } while (x >= limit);
    return static_cast<int>(x % un);
  }

  /// k distinct indices from [0, n) via partial Fisher-Yates.
  std::vector<int> sample_indices(int n, int k) {
    std::vector<int> idx(n);
    for (int i = 0; i < n; ++i) idx[i] = i;
    for (int i = 0; i < k && i < n; ++i) {
      const int j = i + uniform_int(n - i);
      std::swap(idx[i], idx[j]);
    }
    idx.resize(std::min(k, n));
    return idx;
  }

  template <class T>
  void shuffle(std::vector<T>& v) {
    for (int i = static_cast<int>(v.size()) - 1; i > 0; --i) {
      std::swap(v[i], v[static_cast<std::size_t>(uniform_int(i + 1))]);
    }
  }

 private:
  std::uint64_t state_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

}  // namespace robustcov
