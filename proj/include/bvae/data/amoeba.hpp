#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

#include "bvae/data/image.hpp"
#include "bvae/data/shapes.hpp"

namespace bvae {

/// A central disc with four axis-aligned arms (up, down, left, right).
/// Arms are `2 * arm_half_width` pixels wide, pixel aligned, and their
/// lengths are measured outward from the disc edge.
struct AmoebaGeometry {
  std::size_t resolution = 128;
  double disc_radius = 8.0;
  double arm_half_width = 3.0;
  double max_length = 50.0;
  double sigmoid_steepness = 8.0;
};

struct AmoebaSample {
  double s = 0;  // sigmoidal factor in [0, 1]
  double t = 0;  // quadratic factor in [-1, 1]
  std::array<double, 4> arms{};
};

/// Arm lengths for factor values (s, t):
///   up    = L * s
///   down  = L * (sigma(k (s - 1/2)) - sigma(-k/2)) / (sigma(k/2) - sigma(-k/2))
///   left  = L * (t + 1) / 2
///   right = L * t^2
inline std::array<double, 4> amoeba_arm_lengths(double s, double t, const AmoebaGeometry& g = {}) {
  const auto sig = [](double v) { return 1.0 / (1.0 + std::exp(-v)); };
  const double k = g.sigmoid_steepness;
  const double lo = sig(-k / 2), hi = sig(k / 2);
  const double L = g.max_length;
  return {L * s, L * (sig(k * (s - 0.5)) - lo) / (hi - lo), L * (t + 1.0) / 2.0, L * t * t};
}

inline Image render_amoeba(const std::array<double, 4>& arms, const AmoebaGeometry& g = {}) {
  constexpr int S = kSupersample;
  const std::size_t n = g.resolution;
  const double c = double(n) / 2.0;
  const double r = g.disc_radius, w = g.arm_half_width;
  const auto inside = [&](double x, double y) {
    const double dx = x - c, dy = y - c;
    if (dx * dx + dy * dy <= r * r) return true;
    if (std::abs(dx) < w && dy <= 0 && -dy < r + arms[0]) return true;  // up
    if (std::abs(dx) < w && dy >= 0 && dy < r + arms[1]) return true;   // down
    if (std::abs(dy) < w && dx <= 0 && -dx < r + arms[2]) return true;  // left
    if (std::abs(dy) < w && dx >= 0 && dx < r + arms[3]) return true;   // right
    return false;
  };
  Image img(n, n);
  for (std::size_t py = 0; py < n; ++py) {
    for (std::size_t px = 0; px < n; ++px) {
      int hits = 0;
      for (int sy = 0; sy < S; ++sy) {
        for (int sx = 0; sx < S; ++sx) {
          hits += inside(double(px) + (sx + 0.5) / S, double(py) + (sy + 0.5) / S);
        }
      }
      img.at(px, py) = hits * 2 >= S * S;
    }
  }
  return img;
}

/// Measures the four arm lengths of a rendered amoeba by counting pixels in
/// each arm's band beyond the disc.
inline std::array<double, 4> measure_amoeba_arms(const Image& img, const AmoebaGeometry& g = {}) {
  const long c = long(img.width / 2);
  const long w = long(g.arm_half_width);
  const long r = long(g.disc_radius);
  std::array<double, 4> count{};
  for (long y = 0; y < long(img.height); ++y) {
    for (long x = 0; x < long(img.width); ++x) {
      if (!img.at(std::size_t(x), std::size_t(y))) continue;
      const bool vband = x >= c - w && x < c + w;
      const bool hband = y >= c - w && y < c + w;
      if (vband && y < c - r) count[0] += 1;
      if (vband && y >= c + r) count[1] += 1;
      if (hband && x < c - r) count[2] += 1;
      if (hband && x >= c + r) count[3] += 1;
    }
  }
  for (auto& v : count) v /= double(2 * w);
  return count;
}

struct AmoebaSampling {
  std::size_t s_values = 64;
  std::size_t t_values = 64;
};

struct AmoebaDataset {
  AmoebaGeometry geometry;
  std::vector<AmoebaSample> samples;
  std::vector<std::uint8_t> pixels;

  std::size_t size() const noexcept { return samples.size(); }
  std::size_t image_size() const noexcept { return geometry.resolution * geometry.resolution; }
  std::span<const std::uint8_t> image(std::size_t i) const {
    return std::span<const std::uint8_t>(pixels).subspan(i * image_size(), image_size());
  }
};

/// Dense, independent sampling: the Cartesian product of evenly spaced s in
/// [0, 1] and t in [-1, 1], s-major.
inline AmoebaDataset generate_amoeba(std::size_t resolution = 128, AmoebaSampling sampling = {},
                                     AmoebaGeometry geometry = {}) {
  if (resolution != 128) throw ContractError("amoeba resolution must be 128");
  if (sampling.s_values < 2 || sampling.t_values < 2) throw ContractError("amoeba sampling needs >= 2 values per factor");
  geometry.resolution = resolution;
  AmoebaDataset ds;
  ds.geometry = geometry;
  ds.samples.reserve(sampling.s_values * sampling.t_values);
  ds.pixels.reserve(sampling.s_values * sampling.t_values * resolution * resolution);
  for (std::size_t i = 0; i < sampling.s_values; ++i) {
    const double s = double(i) / double(sampling.s_values - 1);
    for (std::size_t j = 0; j < sampling.t_values; ++j) {
      const double t = -1.0 + 2.0 * double(j) / double(sampling.t_values - 1);
      AmoebaSample a{s, t, amoeba_arm_lengths(s, t, geometry)};
      const Image img = render_amoeba(a.arms, geometry);
      ds.samples.push_back(a);
      ds.pixels.insert(ds.pixels.end(), img.pixels.begin(), img.pixels.end());
    }
  }
  return ds;
}

}  // namespace bvae
