#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <numbers>
#include <string>
#include <string_view>
#include <vector>

#include "bvae/data/shapes.hpp"

namespace bvae {

enum class Factor : std::uint8_t { shape = 0, scale = 1, rotation = 2, x = 3, y = 4 };

inline constexpr std::size_t kFactorCount = 5;
/// Factors a frame pair may differ in; shape identity is not a continuous
/// factor.
inline constexpr std::array<Factor, 4> kContinuousFactors{Factor::scale, Factor::rotation, Factor::x,
                                                          Factor::y};

inline std::string_view to_string(Factor f) {
  constexpr std::array<std::string_view, 5> names{"shape", "scale", "rotation", "x", "y"};
  return names[std::size_t(f)];
}

inline Factor factor_from_string(std::string_view s) {
  for (std::size_t i = 0; i < kFactorCount; ++i) {
    if (to_string(Factor(i)) == s) return Factor(i);
  }
  throw ContractError("unknown factor '" + std::string(s) + "'");
}

using FactorIndex = std::array<std::size_t, kFactorCount>;
using Strides = std::array<std::size_t, kFactorCount>;

struct FactorCoordinates {
  FactorIndex index{};
  ShapeKind shape = ShapeKind::square;
  double scale = 0;     // fraction of the base size
  double rotation = 0;  // radians
  double x = 0;         // centroid, pixels
  double y = 0;

  /// Continuous generating vector (scale, rotation, x, y).
  std::array<double, 4> values() const { return {scale, rotation, x, y}; }
};

/// Per-factor value lists; the dataset is their Cartesian product, enumerated
/// shape-major then scale, rotation, x, y.
struct FactorGrid {
  std::vector<ShapeKind> shapes;
  std::vector<double> scales;
  std::vector<double> rotations;
  std::vector<double> xs;
  std::vector<double> ys;
  double base_size = 26.0;
  std::size_t resolution = 64;

  static std::vector<ShapeKind> original_shapes() {
    return {ShapeKind::square, ShapeKind::oval, ShapeKind::heart};
  }
  static std::vector<ShapeKind> novel_shapes() {
    return {ShapeKind::mushroom, ShapeKind::rectangle, ShapeKind::triangle};
  }

  /// 6 scales in [0.5, 1] of a 26 px base, 40 rotations over 2*pi and a 32x32
  /// position lattice that keeps every shape (original or novel) at the
  /// largest scale and any rotation at least `margin` pixels from the border.
  static FactorGrid standard(std::vector<ShapeKind> shapes = original_shapes(), double margin = 1.0) {
    FactorGrid g;
    g.shapes = std::move(shapes);
    for (int k = 0; k < 6; ++k) g.scales.push_back(0.5 + 0.1 * k);
    for (int k = 0; k < 40; ++k) g.rotations.push_back(2 * std::numbers::pi * k / 40);
    double radius = 0;
    for (int s = 0; s < 6; ++s) radius = std::max(radius, outline_radius(ShapeKind(s)));
    const double lo = radius * g.base_size + margin;
    const double hi = double(g.resolution) - lo;
    for (int k = 0; k < 32; ++k) {
      g.xs.push_back(lo + (hi - lo) * k / 31);
      g.ys.push_back(lo + (hi - lo) * k / 31);
    }
    return g;
  }

  std::size_t extent(Factor f) const {
    switch (f) {
      case Factor::shape:
        return shapes.size();
      case Factor::scale:
        return scales.size();
      case Factor::rotation:
        return rotations.size();
      case Factor::x:
        return xs.size();
      case Factor::y:
        return ys.size();
    }
    return 0;
  }

  std::array<std::size_t, kFactorCount> extents() const {
    return {shapes.size(), scales.size(), rotations.size(), xs.size(), ys.size()};
  }

  std::size_t cardinality() const {
    std::size_t n = 1;
    for (auto e : extents()) n *= e;
    return n;
  }

  std::size_t flat_index(const FactorIndex& idx) const {
    const auto e = extents();
    std::size_t flat = 0;
    for (std::size_t f = 0; f < kFactorCount; ++f) {
      if (idx[f] >= e[f]) throw RangeError("factor index out of grid bounds");
      flat = flat * e[f] + idx[f];
    }
    return flat;
  }

  FactorIndex unflatten(std::size_t flat) const {
    const auto e = extents();
    FactorIndex idx{};
    for (std::size_t f = kFactorCount; f-- > 0;) {
      idx[f] = flat % e[f];
      flat /= e[f];
    }
    return idx;
  }

  FactorCoordinates resolve(const FactorIndex& idx) const {
    const auto e = extents();
    for (std::size_t f = 0; f < kFactorCount; ++f) {
      if (idx[f] >= e[f]) throw RangeError("factor index out of grid bounds");
    }
    return {idx, shapes[idx[0]], scales[idx[1]], rotations[idx[2]], xs[idx[3]], ys[idx[4]]};
  }

  double size_px(const FactorCoordinates& c) const { return base_size * c.scale; }

  Image render(const FactorCoordinates& c) const {
    return rasterize(c.shape, size_px(c), c.rotation, c.x, c.y, resolution);
  }
  Image render(const FactorIndex& idx) const { return render(resolve(idx)); }
};

/// The desk-scale grid: every second scale, rotation and position
/// (3 x 3 x 20 x 16 x 16 = 46,080 images for three shapes).
inline constexpr Strides kDeskStrides{1, 2, 2, 2, 2};

}  // namespace bvae
