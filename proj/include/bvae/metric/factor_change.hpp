#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "bvae/data/dataset.hpp"

namespace bvae {

/// Maps a batch of images (count x image_size pixels, with their generating
/// coordinates) to a count x dim representation.
struct Representation {
  std::string name;
  std::size_t dim = 0;
  std::function<Matrixd(std::span<const FactorCoordinates>, std::span<const std::uint8_t>)> encode;
};

/// Where factor-change pairs are drawn from: the factor values allowed by
/// `strides`, optionally restricted to combinations the predicate holds out.
struct SamplingDomain {
  FactorGrid grid;
  Strides strides{1, 1, 1, 1, 1};
  HoldoutPredicate predicate = HoldoutPredicate::none();
  bool held_out_only = false;
  double noise = 0.0;  // test-time pixel flip probability

  bool admits(const FactorIndex& idx) const {
    if (!held_out_only) return true;
    return predicate.excludes(idx);
  }
};

/// Struct-of-arrays batch of factor-change samples.
struct FactorChangeSet {
  std::vector<FactorCoordinates> start;
  std::vector<FactorCoordinates> end;
  std::vector<std::uint8_t> labels;  // position in kContinuousFactors
  Matrixf z_diff;                    // count x dim, rows max-normalised
  std::size_t degenerate = 0;        // rows left all-zero after resampling

  std::size_t size() const noexcept { return labels.size(); }
};

namespace detail {

inline std::vector<std::size_t> allowed_values(const SamplingDomain& d, Factor f) {
  std::vector<std::size_t> v;
  const std::size_t stride = d.strides[std::size_t(f)];
  for (std::size_t i = 0; i < d.grid.extent(f); i += stride) v.push_back(i);
  return v;
}

struct PairSpec {
  FactorIndex start{};
  FactorIndex end{};
  std::uint8_t label = 0;
};

/// One draw of the pair-generation procedure. Returns false when the drawn
/// start admits no end value in either direction (caller redraws).
inline bool draw_pair(Rng& rng, const SamplingDomain& d, const std::array<std::vector<std::size_t>, kFactorCount>& values,
                      PairSpec& out) {
  const std::size_t label = rng.uniform_index(kContinuousFactors.size());
  const Factor changed = kContinuousFactors[label];
  const std::size_t fi = std::size_t(changed);
  int direction = rng.bernoulli(0.5) ? 1 : -1;

  FactorIndex start{};
  for (std::size_t f = 0; f < kFactorCount; ++f) start[f] = values[f][rng.uniform_index(values[f].size())];
  if (!d.admits(start)) return false;

  const auto& vals = values[fi];
  const std::size_t n = vals.size();
  const std::size_t pos = std::size_t(std::find(vals.begin(), vals.end(), start[fi]) - vals.begin());
  // Candidate end positions in direction `dir`. Rotation wraps and moves by
  // 1..n/2 steps; other factors move to any value beyond the start.
  const auto candidates = [&](int dir) {
    std::vector<std::size_t> c;
    if (changed == Factor::rotation) {
      for (std::size_t step = 1; step <= n / 2; ++step) {
        c.push_back(dir > 0 ? (pos + step) % n : (pos + n - step) % n);
      }
    } else if (dir > 0) {
      for (std::size_t p = pos + 1; p < n; ++p) c.push_back(p);
    } else {
      for (std::size_t p = 0; p < pos; ++p) c.push_back(p);
    }
    std::vector<std::size_t> ok;
    for (auto p : c) {
      FactorIndex e = start;
      e[fi] = vals[p];
      if (d.admits(e)) ok.push_back(p);
    }
    return ok;
  };
  auto c = candidates(direction);
  if (c.empty()) c = candidates(-direction);  // boundary: flip the direction
  if (c.empty()) return false;
  FactorIndex end = start;
  end[fi] = vals[c[rng.uniform_index(c.size())]];
  out = {start, end, std::uint8_t(label)};
  return true;
}

}  // namespace detail

/// Draws `count` factor-change samples: object, changed factor and direction
/// uniformly, start values uniformly, the changed factor moved in the drawn
/// direction, both frames rendered and encoded, and
/// z_diff = |z_start - z_end| / max |z_start - z_end|.
/// Pairs whose encodings coincide are redrawn up to `max_redraws` times and
/// then kept as all-zero rows counted in `degenerate`.
inline FactorChangeSet sample_factor_changes(Rng& rng, const SamplingDomain& domain, const Representation& rep,
                                             std::size_t count, std::size_t max_redraws = 20,
                                             std::size_t chunk = 512) {
  if (!rep.encode || rep.dim == 0) throw ContractError("sample_factor_changes: representation is not fitted");
  std::array<std::vector<std::size_t>, kFactorCount> values;
  for (std::size_t f = 0; f < kFactorCount; ++f) values[f] = detail::allowed_values(domain, Factor(f));
  if (domain.held_out_only && domain.predicate.rules.empty()) {
    throw ContractError("sample_factor_changes: held-out sampling needs a holdout predicate");
  }

  FactorChangeSet out;
  out.start.resize(count);
  out.end.resize(count);
  out.labels.resize(count);
  out.z_diff = Matrixf(count, rep.dim);
  const std::size_t image_size = domain.grid.resolution * domain.grid.resolution;

  std::vector<std::size_t> pending(count);
  for (std::size_t i = 0; i < count; ++i) pending[i] = i;
  for (std::size_t round = 0; round <= max_redraws && !pending.empty(); ++round) {
    std::vector<std::size_t> retry;
    for (std::size_t begin = 0; begin < pending.size(); begin += chunk) {
      const std::size_t len = std::min(chunk, pending.size() - begin);
      std::vector<FactorCoordinates> coords(2 * len);
      std::vector<std::uint8_t> pixels(2 * len * image_size);
      for (std::size_t k = 0; k < len; ++k) {
        detail::PairSpec spec;
        std::size_t attempts = 0;
        while (!detail::draw_pair(rng, domain, values, spec)) {
          if (++attempts > 100000) throw ContractError("sample_factor_changes: domain admits no pairs");
        }
        const std::size_t row = pending[begin + k];
        out.labels[row] = spec.label;
        out.start[row] = domain.grid.resolve(spec.start);
        out.end[row] = domain.grid.resolve(spec.end);
        coords[2 * k] = out.start[row];
        coords[2 * k + 1] = out.end[row];
        for (std::size_t e = 0; e < 2; ++e) {
          const Image img = domain.grid.render(coords[2 * k + e]);
          std::copy(img.pixels.begin(), img.pixels.end(), pixels.begin() + std::ptrdiff_t((2 * k + e) * image_size));
        }
      }
      if (domain.noise > 0) bernoulli_corrupt(pixels, domain.noise, rng);
      const Matrixd z = rep.encode(coords, pixels);
      if (z.rows() != 2 * len || z.cols() != rep.dim) {
        throw ShapeError("representation '" + rep.name + "' returned " + shape_string(z.rows(), z.cols()));
      }
      for (std::size_t k = 0; k < len; ++k) {
        const std::size_t row = pending[begin + k];
        double mx = 0.0;
        for (std::size_t j = 0; j < rep.dim; ++j) mx = std::max(mx, std::abs(z(2 * k, j) - z(2 * k + 1, j)));
        auto dst = out.z_diff.row(row);
        if (mx == 0.0) {
          std::fill(dst.begin(), dst.end(), 0.0f);
          retry.push_back(row);
          continue;
        }
        for (std::size_t j = 0; j < rep.dim; ++j) dst[j] = float(std::abs(z(2 * k, j) - z(2 * k + 1, j)) / mx);
      }
    }
    pending = std::move(retry);
  }
  out.degenerate = pending.size();
  return out;
}

}  // namespace bvae
