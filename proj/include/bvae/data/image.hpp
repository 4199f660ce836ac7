#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "bvae/core/errors.hpp"

namespace bvae {

/// Binary (0/1) or 8-bit grey image, row-major.
struct Image {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<std::uint8_t> pixels;

  Image() = default;
  Image(std::size_t w, std::size_t h, std::uint8_t fill = 0) : width(w), height(h), pixels(w * h, fill) {}

  std::uint8_t& at(std::size_t x, std::size_t y) { return pixels[y * width + x]; }
  std::uint8_t at(std::size_t x, std::size_t y) const { return pixels[y * width + x]; }

  friend bool operator==(const Image&, const Image&) = default;
};

inline std::size_t foreground(std::span<const std::uint8_t> img) {
  std::size_t n = 0;
  for (auto p : img) n += p != 0;
  return n;
}

inline std::size_t hamming(std::span<const std::uint8_t> a, std::span<const std::uint8_t> b) {
  if (a.size() != b.size()) throw ShapeError("hamming: image sizes differ");
  std::size_t n = 0;
  for (std::size_t i = 0; i < a.size(); ++i) n += (a[i] != 0) != (b[i] != 0);
  return n;
}

/// Pixel disagreements divided by the mean foreground count of the two
/// images. Two empty images are at distance 0.
inline double normalized_hamming(std::span<const std::uint8_t> a, std::span<const std::uint8_t> b) {
  const std::size_t h = hamming(a, b);
  const double fg = 0.5 * double(foreground(a) + foreground(b));
  if (h == 0) return 0.0;
  return double(h) / fg;
}

/// Pixel disagreements divided by the foreground count of `reference`, so a
/// blank reconstruction of any object scores exactly 1.
inline double reference_normalized_hamming(std::span<const std::uint8_t> reference,
                                           std::span<const std::uint8_t> candidate) {
  const std::size_t h = hamming(reference, candidate);
  if (h == 0) return 0.0;
  const std::size_t fg = foreground(reference);
  if (fg == 0) throw ContractError("reference_normalized_hamming: empty reference image");
  return double(h) / double(fg);
}

}  // namespace bvae
