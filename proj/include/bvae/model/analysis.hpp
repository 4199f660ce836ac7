#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <numeric>
#include <optional>
#include <vector>

#include "bvae/data/dataset.hpp"
#include "bvae/io/text.hpp"
#include "bvae/model/vae.hpp"

namespace bvae {

struct Traversal {
  std::size_t latent = 0;
  std::vector<double> values;  // latent value per frame
  Matrixf probabilities;       // frames x n
};

/// Decodes the seed image's posterior mean with latent `latent` replaced by
/// `steps` equally spaced values in [-range, range]. A single step keeps the
/// seed's own value, i.e. it is a plain decode of the mean.
inline Traversal traverse(const VaeModel& model, std::span<const std::uint8_t> seed_image, std::size_t latent,
                          std::size_t steps, double range = 3.0) {
  const std::size_t m = model.config().latent_size;
  if (latent >= m) throw RangeError("traverse: latent " + std::to_string(latent) + " of " + std::to_string(m));
  if (steps == 0) throw ContractError("traverse: steps must be positive");
  const std::vector<std::size_t> row{0};
  const auto enc = encode(model, to_batch<float>(seed_image, model.config().input_size, row));
  Matrixf z(steps, m);
  Traversal t;
  t.latent = latent;
  for (std::size_t s = 0; s < steps; ++s) {
    std::copy(enc.mu.row(0).begin(), enc.mu.row(0).end(), z.row(s).begin());
    const double v = steps == 1 ? double(enc.mu(0, latent)) : -range + 2.0 * range * double(s) / double(steps - 1);
    z(s, latent) = float(v);
    t.values.push_back(v);
  }
  t.probabilities = decode(model, z);
  return t;
}

inline std::size_t square_side(std::size_t n) {
  const auto side = std::size_t(std::llround(std::sqrt(double(n))));
  if (side * side != n) throw ShapeError("image of " + std::to_string(n) + " pixels is not square");
  return side;
}

/// Thresholds one decoded frame at 0.5.
inline Image binary_frame(std::span<const float> probabilities) {
  const std::size_t side = square_side(probabilities.size());
  Image img(side, side);
  for (std::size_t i = 0; i < probabilities.size(); ++i) img.pixels[i] = probabilities[i] >= 0.5f ? 1 : 0;
  return img;
}

inline Image grey_frame(std::span<const float> probabilities) {
  const std::size_t side = square_side(probabilities.size());
  Image img(side, side);
  for (std::size_t i = 0; i < probabilities.size(); ++i) {
    img.pixels[i] = std::uint8_t(std::lround(std::clamp(probabilities[i], 0.0f, 1.0f) * 255.0f));
  }
  return img;
}

/// Latent indices by decreasing KL (ties keep index order).
inline std::vector<std::size_t> latent_order(std::span<const double> kl) {
  std::vector<std::size_t> order(kl.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return kl[a] > kl[b]; });
  return order;
}

/// One traversal row per latent, rows ordered by decreasing KL, grey frames.
inline Image traversal_montage(const VaeModel& model, std::span<const std::uint8_t> seed_image,
                               std::span<const double> kl_per_latent, std::size_t steps, double range = 3.0) {
  if (kl_per_latent.size() != model.config().latent_size) throw ShapeError("traversal_montage: KL vector size");
  std::vector<Image> tiles;
  for (std::size_t latent : latent_order(kl_per_latent)) {
    const auto t = traverse(model, seed_image, latent, steps, range);
    for (std::size_t s = 0; s < steps; ++s) tiles.push_back(grey_frame(t.probabilities.row(s)));
  }
  return io::montage(tiles, steps);
}

/// Mean posterior mean of every latent per value of one factor.
struct ResponseMap {
  Factor factor = Factor::x;
  std::vector<std::size_t> value_indices;  // present values, ascending
  std::vector<double> values;              // continuous value per column
  std::vector<std::size_t> counts;
  Matrixd mean;  // latent x value
};

inline double factor_value(const FactorCoordinates& c, Factor f) {
  switch (f) {
    case Factor::shape:
      return double(c.index[0]);
    case Factor::scale:
      return c.scale;
    case Factor::rotation:
      return c.rotation;
    case Factor::x:
      return c.x;
    case Factor::y:
      return c.y;
  }
  return 0;
}

/// Group-by-average of the posterior means over images sharing a value of
/// `factor`, optionally restricted to one shape.
inline ResponseMap response_map(const Matrixf& mu, const ShapesDataset& ds, Factor factor,
                                std::optional<ShapeKind> only = std::nullopt) {
  if (mu.rows() != ds.size()) throw ShapeError("response_map: one encoding per image required");
  const std::size_t m = mu.cols();
  const std::size_t extent = ds.grid().extent(factor);
  std::vector<double> sums(extent * m, 0.0);
  std::vector<std::size_t> counts(extent, 0);
  std::vector<double> values(extent, 0.0);
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const auto& c = ds.factor(i);
    if (only && c.shape != *only) continue;
    const std::size_t v = c.index[std::size_t(factor)];
    ++counts[v];
    values[v] = factor_value(c, factor);
    for (std::size_t j = 0; j < m; ++j) sums[v * m + j] += mu(i, j);
  }
  ResponseMap r;
  r.factor = factor;
  for (std::size_t v = 0; v < extent; ++v) {
    if (counts[v] == 0) continue;
    r.value_indices.push_back(v);
    r.values.push_back(values[v]);
    r.counts.push_back(counts[v]);
  }
  if (r.value_indices.empty()) throw ContractError("response_map: no images match");
  r.mean = Matrixd(m, r.value_indices.size());
  for (std::size_t c = 0; c < r.value_indices.size(); ++c) {
    for (std::size_t j = 0; j < m; ++j) r.mean(j, c) = sums[r.value_indices[c] * m + j] / double(r.counts[c]);
  }
  return r;
}

inline ResponseMap response_map(const VaeModel& model, const ShapesDataset& ds, Factor factor,
                                std::optional<ShapeKind> only = std::nullopt) {
  return response_map(encode_pixels(model, ds.pixels()).mu, ds, factor, only);
}

/// Mean posterior mean of every latent over the (x, y) lattice: latent x
/// (y * X + x) over the present positions.
struct PositionMap {
  std::size_t width = 0;   // present x values
  std::size_t height = 0;  // present y values
  Matrixd mean;            // latent x (height * width)
};

inline PositionMap position_map(const Matrixf& mu, const ShapesDataset& ds, std::optional<ShapeKind> only = std::nullopt) {
  if (mu.rows() != ds.size()) throw ShapeError("position_map: one encoding per image required");
  const auto xs = ds.values_present(Factor::x);
  const auto ys = ds.values_present(Factor::y);
  std::vector<std::size_t> xpos(ds.grid().extent(Factor::x)), ypos(ds.grid().extent(Factor::y));
  for (std::size_t k = 0; k < xs.size(); ++k) xpos[xs[k]] = k;
  for (std::size_t k = 0; k < ys.size(); ++k) ypos[ys[k]] = k;
  const std::size_t m = mu.cols();
  PositionMap p{xs.size(), ys.size(), Matrixd(m, xs.size() * ys.size())};
  std::vector<std::size_t> counts(xs.size() * ys.size(), 0);
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const auto& c = ds.factor(i);
    if (only && c.shape != *only) continue;
    const std::size_t cell = ypos[c.index[4]] * p.width + xpos[c.index[3]];
    ++counts[cell];
    for (std::size_t j = 0; j < m; ++j) p.mean(j, cell) += mu(i, j);
  }
  for (std::size_t cell = 0; cell < counts.size(); ++cell) {
    for (std::size_t j = 0; j < m; ++j) p.mean(j, cell) = counts[cell] ? p.mean(j, cell) / double(counts[cell]) : 0.0;
  }
  return p;
}

/// value_idx,value,count,z_0..z_{m-1}
inline void write_response_csv(const std::filesystem::path& path, const ResponseMap& r) {
  auto os = io::open_out(path);
  os << "value_idx,value,count";
  for (std::size_t j = 0; j < r.mean.rows(); ++j) os << ",z_" << j;
  os << '\n';
  for (std::size_t c = 0; c < r.value_indices.size(); ++c) {
    os << r.value_indices[c] << ',' << io::fmt_double(r.values[c]) << ',' << r.counts[c];
    for (std::size_t j = 0; j < r.mean.rows(); ++j) os << ',' << io::fmt_double(r.mean(j, c));
    os << '\n';
  }
}

/// Rows of `cells` min-max scaled to 0..255 independently, each cell drawn as
/// a `zoom` x `zoom` block; `columns` cells per output row of a latent block.
inline Image heatmap(const Matrixd& cells, std::size_t columns, std::size_t zoom = 4) {
  if (cells.empty() || columns == 0 || cells.cols() % columns != 0) throw ShapeError("heatmap: bad layout");
  const std::size_t rows_per = cells.cols() / columns;
  std::vector<Image> tiles;
  for (std::size_t j = 0; j < cells.rows(); ++j) {
    const auto row = cells.row(j);
    const auto [lo, hi] = std::minmax_element(row.begin(), row.end());
    const double span = *hi - *lo;
    Image tile(columns * zoom, rows_per * zoom);
    for (std::size_t c = 0; c < cells.cols(); ++c) {
      const auto v = std::uint8_t(span > 0 ? std::lround(255.0 * (row[c] - *lo) / span) : 128);
      const std::size_t cx = (c % columns) * zoom, cy = (c / columns) * zoom;
      for (std::size_t dy = 0; dy < zoom; ++dy) {
        for (std::size_t dx = 0; dx < zoom; ++dx) tile.at(cx + dx, cy + dy) = v;
      }
    }
    tiles.push_back(std::move(tile));
  }
  return io::montage(tiles, rows_per == 1 ? 1 : tiles.size());
}

}  // namespace bvae
