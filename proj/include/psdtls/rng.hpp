#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>

#include "linalg.hpp"

namespace psdtls {

// splitmix64 (Steele, Lea, Flood 2014). Fixed forever: every seeded artifact in this
// repo (instances, starting points, bench records) is a function of this stream.
class SplitMix64 {
 public:
  explicit SplitMix64(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next() {
    std::uint64_t z = (state_ += 0x9E3779B97F4A7C15ULL);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
  }

  // [0, 1) with 53 random bits
  double uniform() { return double(next() >> 11) * 0x1.0p-53; }
  double uniform(double a, double b) { return (b - a) * uniform() + a; }

  // Box-Muller; the second variate is cached.
  double gaussian() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1;
    do u1 = uniform(); while (u1 <= 0.0);
    const double u2 = uniform();
    const double rad = std::sqrt(-2.0 * std::log(u1));
    spare_ = rad * std::sin(2 * std::numbers::pi * u2);
    has_spare_ = true;
    return rad * std::cos(2 * std::numbers::pi * u2);
  }

  Matrix uniform_matrix(Eigen::Index rows, Eigen::Index cols, double a = 0.0, double b = 1.0) {
    Matrix M(rows, cols);
    for (Eigen::Index i = 0; i < rows; ++i)
      for (Eigen::Index j = 0; j < cols; ++j) M(i, j) = uniform(a, b);
    return M;
  }

  Matrix gaussian_matrix(Eigen::Index rows, Eigen::Index cols) {
    Matrix M(rows, cols);
    for (Eigen::Index i = 0; i < rows; ++i)
      for (Eigen::Index j = 0; j < cols; ++j) M(i, j) = gaussian();
    return M;
  }

 private:
  std::uint64_t state_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

// Mixes two 64-bit values into a seed for an independent stream.
inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t index) {
  SplitMix64 g(seed ^ (0xD1B54A32D192ED03ULL * (index + 1)));
  return g.next();
}

}  // namespace psdtls
