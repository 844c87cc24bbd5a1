#include "vaeattr/core.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>
#include <string>

namespace vaeattr {

namespace {

std::uint64_t splitmix64(std::uint64_t& x) {
  x += 0x9E3779B97F4A7C15ULL;
  std::uint64_t z = x;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

std::uint64_t rotl(std::uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }

}  // namespace

Rng::Rng(std::uint64_t seed) : seed_(seed) {
  std::uint64_t s = seed;
  for (auto& w : state_) w = splitmix64(s);
}

std::uint64_t Rng::next_u64() {
  // xoshiro256++ step.
  const std::uint64_t result = rotl(state_[0] + state_[3], 23) + state_[0];
  const std::uint64_t t = state_[1] << 17;
  state_[2] ^= state_[0];
  state_[3] ^= state_[1];
  state_[1] ^= state_[2];
  state_[0] ^= state_[3];
  state_[2] ^= t;
  state_[3] = rotl(state_[3], 45);
  return result;
}

double Rng::uniform01() {
  return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

double Rng::uniform(double lo, double hi) {
  if (!(lo < hi)) {
    throw std::invalid_argument("Rng::uniform: requires lo < hi, got lo=" +
                                std::to_string(lo) + " hi=" + std::to_string(hi));
  }
  return lo + (hi - lo) * uniform01();
}

double Rng::standard_normal() {
  if (has_spare_) {
    has_spare_ = false;
    return spare_;
  }
  // Box-Muller. u1 is mapped into (0, 1] so the log is always finite.
  const double u1 = 1.0 - uniform01();
  const double u2 = uniform01();
  const double radius = std::sqrt(-2.0 * std::log(u1));
  const double angle = 2.0 * std::numbers::pi * u2;
  spare_ = radius * std::sin(angle);
  has_spare_ = true;
  return radius * std::cos(angle);
}

Rng Rng::derive(std::uint64_t stream) const {
  std::uint64_t s = seed_ ^ (0xA0761D6478BD642FULL * (stream + 1));
  std::uint64_t child = splitmix64(s);
  child ^= splitmix64(s);
  return Rng(child);
}

Matrix matmul(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.rows()) {
    throw std::invalid_argument(
        "matmul: shape mismatch, " + std::to_string(a.rows()) + "x" +
        std::to_string(a.cols()) + " * " + std::to_string(b.rows()) + "x" +
        std::to_string(b.cols()));
  }
  return a * b;
}

Vector sample_standard_normal(Rng& rng, Index n) {
  if (n < 1) throw std::invalid_argument("sample_standard_normal: n must be >= 1");
  Vector out(n);
  for (Index i = 0; i < n; ++i) out[i] = rng.standard_normal();
  return out;
}

double sample_uniform(Rng& rng, double lo, double hi) { return rng.uniform(lo, hi); }

}  // namespace vaeattr
