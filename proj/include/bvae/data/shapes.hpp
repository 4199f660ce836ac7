#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <string>
#include <string_view>
#include <vector>

#include "bvae/core/errors.hpp"
#include "bvae/data/image.hpp"

namespace bvae {

enum class ShapeKind : std::uint8_t { square, oval, heart, mushroom, rectangle, triangle };

inline std::string_view to_string(ShapeKind s) {
  constexpr std::array<std::string_view, 6> names{"square", "oval",      "heart",
                                                  "mushroom", "rectangle", "triangle"};
  return names[std::size_t(s)];
}

inline ShapeKind shape_from_string(std::string_view s) {
  for (int i = 0; i < 6; ++i) {
    if (to_string(ShapeKind(i)) == s) return ShapeKind(i);
  }
  throw ContractError("unknown shape '" + std::string(s) + "'");
}

struct Point {
  double x = 0;
  double y = 0;
};

/// Closed polygon in shape-local coordinates: the longer side of the
/// bounding box is 1, the area centroid sits at the origin and y points down.
struct Outline {
  std::vector<Point> vertices;
  int symmetry_order = 1;  // n-fold rotational symmetry
};

namespace detail {

inline Point area_centroid(const std::vector<Point>& v) {
  double a = 0, cx = 0, cy = 0;
  for (std::size_t i = 0; i < v.size(); ++i) {
    const Point& p = v[i];
    const Point& q = v[(i + 1) % v.size()];
    const double cross = p.x * q.y - q.x * p.y;
    a += cross;
    cx += (p.x + q.x) * cross;
    cy += (p.y + q.y) * cross;
  }
  a *= 0.5;
  return {cx / (6 * a), cy / (6 * a)};
}

inline Outline normalize(std::vector<Point> v, int symmetry) {
  double x0 = 1e300, x1 = -1e300, y0 = 1e300, y1 = -1e300;
  for (auto& p : v) {
    x0 = std::min(x0, p.x), x1 = std::max(x1, p.x);
    y0 = std::min(y0, p.y), y1 = std::max(y1, p.y);
  }
  const double s = 1.0 / std::max(x1 - x0, y1 - y0);
  for (auto& p : v) p = {p.x * s, p.y * s};
  const Point c = area_centroid(v);
  for (auto& p : v) p = {p.x - c.x, p.y - c.y};
  return {std::move(v), symmetry};
}

inline void append_arc(std::vector<Point>& v, double cx, double cy, double rx, double ry, double a0,
                       double a1, int segments) {
  for (int i = 0; i <= segments; ++i) {
    const double a = a0 + (a1 - a0) * double(i) / segments;
    v.push_back({cx + rx * std::cos(a), cy + ry * std::sin(a)});
  }
}

}  // namespace detail

inline Outline make_outline(ShapeKind kind) {
  using std::numbers::pi;
  std::vector<Point> v;
  switch (kind) {
    case ShapeKind::square:
      v = {{-0.5, -0.5}, {0.5, -0.5}, {0.5, 0.5}, {-0.5, 0.5}};
      return detail::normalize(std::move(v), 4);
    case ShapeKind::oval:
      // 2:1 ellipse, major axis horizontal.
      for (int i = 0; i < 128; ++i) {
        const double a = 2 * pi * i / 128;
        v.push_back({0.5 * std::cos(a), 0.25 * std::sin(a)});
      }
      return detail::normalize(std::move(v), 2);
    case ShapeKind::heart:
      for (int i = 0; i < 256; ++i) {
        const double u = 2 * pi * i / 256;
        const double s = std::sin(u);
        const double x = 16 * s * s * s;
        const double y = 13 * std::cos(u) - 5 * std::cos(2 * u) - 2 * std::cos(3 * u) - std::cos(4 * u);
        v.push_back({x, -y});
      }
      return detail::normalize(std::move(v), 1);
    case ShapeKind::mushroom:
      // Semicircular cap over a rectangular stem.
      v.push_back({-0.15, 0.5});
      v.push_back({-0.15, 0.0});
      detail::append_arc(v, 0.0, 0.0, 0.5, 0.5, pi, 2 * pi, 64);
      v.push_back({0.15, 0.0});
      v.push_back({0.15, 0.5});
      return detail::normalize(std::move(v), 1);
    case ShapeKind::rectangle:
      v = {{-0.5, -0.25}, {0.5, -0.25}, {0.5, 0.25}, {-0.5, 0.25}};
      return detail::normalize(std::move(v), 2);
    case ShapeKind::triangle:
      v = {{0.0, -0.5}, {0.5, 0.5}, {-0.5, 0.5}};
      return detail::normalize(std::move(v), 1);
  }
  throw ContractError("unknown shape kind");
}

inline const Outline& outline(ShapeKind kind) {
  static const std::array<Outline, 6> cache = [] {
    std::array<Outline, 6> a;
    for (int i = 0; i < 6; ++i) a[i] = make_outline(ShapeKind(i));
    return a;
  }();
  return cache[std::size_t(kind)];
}

/// Largest vertex distance from the centroid, in outline units.
inline double outline_radius(ShapeKind kind) {
  double r = 0;
  for (const auto& p : outline(kind).vertices) r = std::max(r, std::hypot(p.x, p.y));
  return r;
}

/// Reduces a rotation to the shape's fundamental symmetry period. The result
/// is quantised to 2^-40 of a period, so angles that differ by a multiple of
/// the period up to floating-point noise map to the same value.
inline double canonical_rotation(double radians, int symmetry_order) {
  const double period = 2 * std::numbers::pi / symmetry_order;
  double f = radians / period;
  f -= std::floor(f);
  f = std::round(std::ldexp(f, 40));
  f = std::ldexp(f, -40);
  if (f >= 1.0) f -= 1.0;
  return f * period;
}

constexpr int kSupersample = 4;

/// Renders a filled polygon with kSupersample^2 samples per pixel; a pixel is
/// set when at least half its samples are inside (even-odd rule, half-open
/// edges).
inline Image rasterize_polygon(const std::vector<Point>& poly, std::size_t width, std::size_t height) {
  constexpr int S = kSupersample;
  Image img(width, height);
  std::vector<std::uint8_t> coverage(width * height, 0);
  double y_min = 1e300, y_max = -1e300;
  for (const auto& p : poly) y_min = std::min(y_min, p.y), y_max = std::max(y_max, p.y);
  const long row_lo = std::max(0L, long(std::floor(y_min * S - 0.5)));
  const long row_hi = std::min(long(height) * S - 1, long(std::ceil(y_max * S)));
  std::vector<double> xs;
  for (long sr = row_lo; sr <= row_hi; ++sr) {
    const double sy = (double(sr) + 0.5) / S;
    xs.clear();
    for (std::size_t i = 0; i < poly.size(); ++i) {
      const Point& a = poly[i];
      const Point& b = poly[(i + 1) % poly.size()];
      if ((a.y <= sy) == (b.y <= sy)) continue;
      xs.push_back(a.x + (sy - a.y) * (b.x - a.x) / (b.y - a.y));
    }
    std::sort(xs.begin(), xs.end());
    const std::size_t py = std::size_t(sr / S);
    for (std::size_t k = 0; k + 1 < xs.size(); k += 2) {
      // sample columns c with (c + 0.5) / S in [x0, x1)
      long c0 = long(std::ceil(xs[k] * S - 0.5));
      long c1 = long(std::ceil(xs[k + 1] * S - 0.5));
      c0 = std::max(c0, 0L);
      c1 = std::min(c1, long(width) * S);
      for (long c = c0; c < c1; ++c) ++coverage[py * width + std::size_t(c / S)];
    }
  }
  for (std::size_t i = 0; i < coverage.size(); ++i) img.pixels[i] = coverage[i] * 2 >= S * S;
  return img;
}

/// Draws `kind` with its centroid at pixel coordinates (x, y), the longer
/// bounding-box side spanning `size_px` pixels before rotation.
inline Image rasterize(ShapeKind kind, double size_px, double rotation_radians, double x, double y,
                       std::size_t resolution = 64) {
  const Outline& o = outline(kind);
  const double theta = canonical_rotation(rotation_radians, o.symmetry_order);
  const double c = std::cos(theta), s = std::sin(theta);
  std::vector<Point> poly;
  poly.reserve(o.vertices.size());
  for (const auto& p : o.vertices) {
    const Point q{x + size_px * (c * p.x - s * p.y), y + size_px * (s * p.x + c * p.y)};
    if (q.x < 0 || q.y < 0 || q.x > double(resolution) || q.y > double(resolution)) {
      throw RangeError("rasterize: " + std::string(to_string(kind)) + " at (" + std::to_string(x) +
                       ", " + std::to_string(y) + ") size " + std::to_string(size_px) +
                       " clips the frame");
    }
    poly.push_back(q);
  }
  return rasterize_polygon(poly, resolution, resolution);
}

}  // namespace bvae
