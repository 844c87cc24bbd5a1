#pragma once

#include <Eigen/Dense>

#include <array>
#include <cstdint>

namespace vaeattr {

// All numerics are double precision. Gradient checks and log-density sums
// would need much looser tolerances in float.
using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using Index = Eigen::Index;

/// Matrix product with an explicit shape check (a.cols() must equal b.rows()).
Matrix matmul(const Matrix& a, const Matrix& b);

/// Deterministic 64-bit generator: xoshiro256++ seeded through splitmix64.
/// The same seed yields the same sequence on every platform; normal draws
/// use Box-Muller (pair-cached), so golden sequences are stable.
class Rng {
 public:
  explicit Rng(std::uint64_t seed);

  std::uint64_t next_u64();

  /// Uniform draw in [0, 1) with 53 bits of mantissa.
  double uniform01();

  /// Uniform draw in [lo, hi). Throws std::invalid_argument if lo >= hi.
  double uniform(double lo, double hi);

  /// One N(0,1) draw.
  double standard_normal();

  /// Child generator that is a pure function of (seed, stream); independent
  /// of any draws already made on this one. Used to give parallel workers
  /// their own streams.
  Rng derive(std::uint64_t stream) const;

  std::uint64_t seed() const { return seed_; }

 private:
  std::array<std::uint64_t, 4> state_{};
  std::uint64_t seed_ = 0;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

/// n independent N(0,1) draws.
Vector sample_standard_normal(Rng& rng, Index n);

/// One draw in [lo, hi). Throws std::invalid_argument if lo >= hi.
double sample_uniform(Rng& rng, double lo, double hi);

}  // namespace vaeattr
