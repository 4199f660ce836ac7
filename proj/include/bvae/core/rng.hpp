#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>

#include "bvae/core/matrix.hpp"

namespace bvae {

/// xoshiro256** seeded through splitmix64. The stream depends only on the
/// 64-bit seed, so results are identical across platforms and compilers
/// (unlike the std:: distributions, whose algorithms are unspecified).
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : seed_(seed) {
    std::uint64_t s = seed;
    for (auto& word : state_) word = splitmix64(s);
  }

  std::uint64_t seed() const noexcept { return seed_; }

  std::uint64_t next_u64() noexcept {
    const std::uint64_t result = rotl(state_[1] * 5, 7) * 9;
    const std::uint64_t t = state_[1] << 17;
    state_[2] ^= state_[0];
    state_[3] ^= state_[1];
    state_[1] ^= state_[2];
    state_[0] ^= state_[3];
    state_[2] ^= t;
    state_[3] = rotl(state_[3], 45);
    return result;
  }

  // [0, 1) with 53 random bits.
  double uniform() noexcept { return double(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) noexcept { return lo + (hi - lo) * uniform(); }

  // Unbiased integer in [0, n).
  std::uint64_t uniform_index(std::uint64_t n) {
    if (n == 0) throw ContractError("uniform_index: empty range");
    const std::uint64_t limit = std::uint64_t(-n) % n;
    for (;;) {
      const unsigned __int128 m = (unsigned __int128)next_u64() * n;
      if (std::uint64_t(m) >= limit) return std::uint64_t(m >> 64);
    }
  }

  bool bernoulli(double p) noexcept { return uniform() < p; }

  // Box-Muller; the second variate of each pair is cached.
  double normal() noexcept {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double theta = 2.0 * std::numbers::pi * u2;
    spare_ = r * std::sin(theta);
    has_spare_ = true;
    return r * std::cos(theta);
  }

  /// Independent child stream; the parent is not advanced.
  Rng derive(std::uint64_t stream) const {
    std::uint64_t s = seed_ ^ (0x9E3779B97F4A7C15ull * (stream + 1));
    return Rng(splitmix64(s));
  }

 private:
  static std::uint64_t rotl(std::uint64_t x, int k) noexcept { return (x << k) | (x >> (64 - k)); }

  static std::uint64_t splitmix64(std::uint64_t& x) noexcept {
    std::uint64_t z = (x += 0x9E3779B97F4A7C15ull);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
  }

  std::uint64_t seed_;
  std::array<std::uint64_t, 4> state_{};
  bool has_spare_ = false;
  double spare_ = 0.0;
};

template <typename T>
Matrix<T> sample_standard_normal(Rng& rng, std::size_t rows, std::size_t cols) {
  Matrix<T> out(rows, cols);
  for (auto& v : out.values()) v = static_cast<T>(rng.normal());
  return out;
}

template <typename T>
Matrix<T> sample_uniform(Rng& rng, std::size_t rows, std::size_t cols, double lo, double hi) {
  Matrix<T> out(rows, cols);
  for (auto& v : out.values()) v = static_cast<T>(rng.uniform(lo, hi));
  return out;
}

}  // namespace bvae
