#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "bvae/core/errors.hpp"
#include "bvae/data/image.hpp"

namespace bvae::io {

/// Shortest decimal text that round-trips the double.
inline std::string fmt_double(double v) {
  char buf[32];
  for (int precision = 6; precision <= 17; ++precision) {
    std::snprintf(buf, sizeof buf, "%.*g", precision, v);
    if (std::strtod(buf, nullptr) == v) break;
  }
  return buf;
}

inline std::vector<std::string> split(const std::string& line, char sep) {
  std::vector<std::string> out;
  std::string field;
  std::istringstream ss(line);
  while (std::getline(ss, field, sep)) out.push_back(field);
  if (!line.empty() && line.back() == sep) out.emplace_back();
  return out;
}

inline std::ofstream open_out(const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw DataError("cannot open " + path.string() + " for writing");
  return os;
}

/// Binary PGM (P5), 8-bit. Pixel value 1 in a binary image is stretched to
/// 255 when `binary` is set.
inline void write_pgm(const std::filesystem::path& path, const Image& img, bool binary = true) {
  auto os = open_out(path);
  os << "P5\n" << img.width << ' ' << img.height << "\n255\n";
  std::vector<char> row(img.pixels.size());
  for (std::size_t i = 0; i < img.pixels.size(); ++i) {
    row[i] = char(binary ? (img.pixels[i] ? 255 : 0) : img.pixels[i]);
  }
  os.write(row.data(), std::streamsize(row.size()));
}

inline Image read_pgm(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open " + path.string());
  std::string magic;
  std::size_t w = 0, h = 0, maxval = 0;
  is >> magic >> w >> h >> maxval;
  if (magic != "P5" || maxval != 255) throw DataError(path.string() + ": not an 8-bit P5 image");
  is.get();
  Image img(w, h);
  if (!is.read(reinterpret_cast<char*>(img.pixels.data()), std::streamsize(w * h))) {
    throw DataError(path.string() + ": truncated");
  }
  return img;
}

/// Tiles equally sized images into a grid with a one-pixel separator.
inline Image montage(std::span<const Image> tiles, std::size_t columns, std::uint8_t separator = 128) {
  if (tiles.empty() || columns == 0) throw ContractError("montage: no tiles");
  const std::size_t tw = tiles[0].width, th = tiles[0].height;
  const std::size_t rows = (tiles.size() + columns - 1) / columns;
  Image out(columns * (tw + 1) + 1, rows * (th + 1) + 1, separator);
  for (std::size_t k = 0; k < tiles.size(); ++k) {
    if (tiles[k].width != tw || tiles[k].height != th) throw ShapeError("montage: tile sizes differ");
    const std::size_t ox = (k % columns) * (tw + 1) + 1, oy = (k / columns) * (th + 1) + 1;
    for (std::size_t y = 0; y < th; ++y) {
      for (std::size_t x = 0; x < tw; ++x) out.at(ox + x, oy + y) = tiles[k].at(x, y);
    }
  }
  return out;
}

}  // namespace bvae::io
