#pragma once

#include <algorithm>
#include <functional>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "bvae/core/rng.hpp"
#include "bvae/data/factor_grid.hpp"

namespace bvae {

/// Excludes every combination of one shape (by grid position) with an
/// inclusive index range of one other factor.
struct HoldoutRule {
  std::size_t shape = 0;
  Factor factor = Factor::scale;
  std::size_t lo = 0;
  std::size_t hi = 0;

  bool matches(const FactorIndex& idx) const {
    const std::size_t v = idx[std::size_t(factor)];
    return idx[0] == shape && v >= lo && v <= hi;
  }
};

struct HoldoutPredicate {
  std::string id = "none";
  std::vector<HoldoutRule> rules;

  bool excludes(const FactorIndex& idx) const {
    return std::any_of(rules.begin(), rules.end(), [&](const auto& r) { return r.matches(idx); });
  }

  static HoldoutPredicate none() { return {}; }

  /// Each shape loses two of the six scales (no small squares at all) and a
  /// seven-value band of the forty rotations, each band and scale pair
  /// different per shape. Retains (4/6) * (33/40) = 55% of the full grid and
  /// every individual factor value.
  static HoldoutPredicate zero_shot() {
    HoldoutPredicate p;
    p.id = "zero-shot";
    p.rules = {
        {0, Factor::scale, 0, 1},      {1, Factor::scale, 4, 5},      {2, Factor::scale, 2, 3},
        {0, Factor::rotation, 0, 6},   {1, Factor::rotation, 13, 19}, {2, Factor::rotation, 26, 32},
    };
    return p;
  }
};

enum class Selection : std::uint8_t { retained, held_out };

struct DatasetProvenance {
  std::string shapes;  // comma separated shape names
  Strides strides{1, 1, 1, 1, 1};
  std::string predicate = "none";
  Selection selection = Selection::retained;
};

class ShapesDataset {
 public:
  ShapesDataset() = default;
  ShapesDataset(FactorGrid grid, DatasetProvenance provenance, std::vector<FactorCoordinates> factors,
                std::vector<std::uint8_t> pixels)
      : grid_(std::move(grid)),
        provenance_(std::move(provenance)),
        factors_(std::move(factors)),
        pixels_(std::move(pixels)) {
    if (pixels_.size() != factors_.size() * image_size()) {
      throw ShapeError("dataset: pixel buffer does not match factor count");
    }
    reindex();
  }

  const FactorGrid& grid() const noexcept { return grid_; }
  const DatasetProvenance& provenance() const noexcept { return provenance_; }
  std::size_t size() const noexcept { return factors_.size(); }
  std::size_t resolution() const noexcept { return grid_.resolution; }
  std::size_t image_size() const noexcept { return grid_.resolution * grid_.resolution; }
  const std::vector<FactorCoordinates>& factors() const noexcept { return factors_; }
  const FactorCoordinates& factor(std::size_t i) const { return factors_.at(i); }
  std::span<const std::uint8_t> pixels() const noexcept { return pixels_; }
  std::span<std::uint8_t> pixels() noexcept { return pixels_; }

  std::span<const std::uint8_t> image(std::size_t i) const {
    return std::span<const std::uint8_t>(pixels_).subspan(i * image_size(), image_size());
  }
  std::span<std::uint8_t> image(std::size_t i) {
    return std::span<std::uint8_t>(pixels_).subspan(i * image_size(), image_size());
  }

  std::optional<std::size_t> find(const FactorIndex& idx) const {
    auto it = rows_.find(grid_.flat_index(idx));
    if (it == rows_.end()) return std::nullopt;
    return it->second;
  }

  /// Distinct indices of factor `f` present in the dataset, ascending.
  std::vector<std::size_t> values_present(Factor f) const {
    std::set<std::size_t> s;
    for (const auto& c : factors_) s.insert(c.index[std::size_t(f)]);
    return {s.begin(), s.end()};
  }

 private:
  void reindex() {
    rows_.clear();
    rows_.reserve(factors_.size());
    for (std::size_t i = 0; i < factors_.size(); ++i) rows_[grid_.flat_index(factors_[i].index)] = i;
  }

  FactorGrid grid_;
  DatasetProvenance provenance_;
  std::vector<FactorCoordinates> factors_;
  std::vector<std::uint8_t> pixels_;
  std::unordered_map<std::size_t, std::size_t> rows_;
};

inline std::string shape_list(const std::vector<ShapeKind>& shapes) {
  std::string s;
  for (auto k : shapes) {
    if (!s.empty()) s += ',';
    s += to_string(k);
  }
  return s;
}

inline bool selected(const FactorIndex& idx, const Strides& strides, const HoldoutPredicate& predicate,
                     Selection selection) {
  for (std::size_t f = 0; f < kFactorCount; ++f) {
    if (idx[f] % strides[f] != 0) return false;
  }
  return predicate.excludes(idx) == (selection == Selection::held_out);
}

/// Visits retained combinations in canonical order (shape-major, then scale,
/// rotation, x, y).
inline void for_each_combination(const FactorGrid& grid, const Strides& strides,
                                 const HoldoutPredicate& predicate, Selection selection,
                                 const std::function<void(const FactorCoordinates&)>& visit) {
  for (auto s : strides) {
    if (s == 0) throw ContractError("subsampling strides must be >= 1");
  }
  const std::size_t n = grid.cardinality();
  for (std::size_t flat = 0; flat < n; ++flat) {
    const FactorIndex idx = grid.unflatten(flat);
    if (selected(idx, strides, predicate, selection)) visit(grid.resolve(idx));
  }
}

inline std::size_t count_combinations(const FactorGrid& grid, const Strides& strides,
                                      const HoldoutPredicate& predicate,
                                      Selection selection = Selection::retained) {
  std::size_t n = 0;
  for_each_combination(grid, strides, predicate, selection, [&](const FactorCoordinates&) { ++n; });
  return n;
}

/// Foreground must cover between 1% and 20% of the frame.
inline void check_foreground_band(const Image& img, const FactorCoordinates& c) {
  const double frac = double(foreground(img.pixels)) / double(img.pixels.size());
  if (frac < 0.01 || frac > 0.20) {
    throw RangeError("image for " + std::string(to_string(c.shape)) + " covers " +
                     std::to_string(frac) + " of the frame, outside [0.01, 0.20]");
  }
}

/// Renders retained combinations in canonical order without materialising
/// the dataset; used for the full 737,280-image grid.
inline void stream_grid_images(const FactorGrid& grid, const Strides& strides,
                               const HoldoutPredicate& predicate, Selection selection,
                               const std::function<void(const FactorCoordinates&, const Image&)>& sink) {
  for_each_combination(grid, strides, predicate, selection, [&](const FactorCoordinates& c) {
    const Image img = grid.render(c);
    check_foreground_band(img, c);
    sink(c, img);
  });
}

inline ShapesDataset generate_grid_dataset(const FactorGrid& grid, const Strides& strides = {1, 1, 1, 1, 1},
                                           const HoldoutPredicate& predicate = HoldoutPredicate::none(),
                                           Selection selection = Selection::retained) {
  const std::size_t n = count_combinations(grid, strides, predicate, selection);
  if (n == 0) throw ContractError("generate_grid_dataset: no combinations retained");
  std::vector<FactorCoordinates> factors;
  std::vector<std::uint8_t> pixels;
  factors.reserve(n);
  pixels.reserve(n * grid.resolution * grid.resolution);
  stream_grid_images(grid, strides, predicate, selection, [&](const FactorCoordinates& c, const Image& img) {
    factors.push_back(c);
    pixels.insert(pixels.end(), img.pixels.begin(), img.pixels.end());
  });
  DatasetProvenance prov{shape_list(grid.shapes), strides, predicate.id, selection};
  return ShapesDataset(grid, std::move(prov), std::move(factors), std::move(pixels));
}

/// Average normalised Hamming distance between consecutive transforms: for
/// every continuous factor with at least two values present, every image is
/// paired with its neighbour at the next present value of that factor (all
/// other factors equal). Per-factor means are averaged; single-value factors
/// are skipped.
inline double continuity_score(const ShapesDataset& ds) {
  double grand = 0.0;
  std::size_t factors_used = 0;
  for (Factor f : kContinuousFactors) {
    const auto present = ds.values_present(f);
    if (present.size() < 2) continue;
    std::vector<std::size_t> next(ds.grid().extent(f), SIZE_MAX);
    for (std::size_t k = 0; k + 1 < present.size(); ++k) next[present[k]] = present[k + 1];
    double acc = 0.0;
    std::size_t pairs = 0;
    for (std::size_t i = 0; i < ds.size(); ++i) {
      FactorIndex idx = ds.factor(i).index;
      const std::size_t nv = next[idx[std::size_t(f)]];
      if (nv == SIZE_MAX) continue;
      idx[std::size_t(f)] = nv;
      const auto j = ds.find(idx);
      if (!j) continue;
      acc += normalized_hamming(ds.image(i), ds.image(*j));
      ++pairs;
    }
    if (pairs == 0) continue;
    grand += acc / double(pairs);
    ++factors_used;
  }
  if (factors_used == 0) throw ContractError("continuity_score: no factor has two values present");
  return grand / double(factors_used);
}

/// Flips every pixel independently with probability p.
inline void bernoulli_corrupt(std::span<std::uint8_t> pixels, double p, Rng& rng) {
  if (!(p >= 0.0 && p <= 1.0)) throw ContractError("flip probability must lie in [0, 1]");
  for (auto& px : pixels) {
    if (rng.bernoulli(p)) px = px ? 0 : 1;
  }
}

inline ShapesDataset bernoulli_corrupt(const ShapesDataset& ds, double p, Rng& rng) {
  ShapesDataset out = ds;
  bernoulli_corrupt(out.pixels(), p, rng);
  return out;
}

}  // namespace bvae
