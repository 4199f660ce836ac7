#pragma once

#include "bvae/metric/classifier.hpp"

namespace bvae {

struct HoldoutSplit {
  ShapesDataset train;     // combinations the predicate keeps
  ShapesDataset held_out;  // combinations it excludes (may be empty)
  double retained_fraction = 1.0;
};

/// Throws unless every value of every factor allowed by `strides` occurs in
/// at least one retained combination.
inline void check_holdout_coverage(const FactorGrid& grid, const Strides& strides, const HoldoutPredicate& p) {
  std::array<std::vector<bool>, kFactorCount> seen;
  for (std::size_t f = 0; f < kFactorCount; ++f) seen[f].assign(grid.extent(Factor(f)), false);
  for_each_combination(grid, strides, p, Selection::retained, [&](const FactorCoordinates& c) {
    for (std::size_t f = 0; f < kFactorCount; ++f) seen[f][c.index[f]] = true;
  });
  for (std::size_t f = 0; f < kFactorCount; ++f) {
    for (std::size_t v = 0; v < seen[f].size(); v += strides[f]) {
      if (!seen[f][v]) {
        throw ContractError("holdout '" + p.id + "' removes every combination with " +
                            std::string(to_string(Factor(f))) + " index " + std::to_string(v));
      }
    }
  }
}

inline HoldoutSplit build_holdout(const FactorGrid& grid, const Strides& strides, const HoldoutPredicate& p) {
  check_holdout_coverage(grid, strides, p);
  HoldoutSplit s;
  s.train = generate_grid_dataset(grid, strides, p, Selection::retained);
  const std::size_t total = count_combinations(grid, strides, HoldoutPredicate::none());
  if (s.train.size() < total) s.held_out = generate_grid_dataset(grid, strides, p, Selection::held_out);
  s.retained_fraction = double(s.train.size()) / double(total);
  return s;
}

/// Factor-change accuracy with both frames of every pair, for classifier
/// training and testing alike, drawn from held-out combinations only.
inline MetricResult zero_shot_metric(const Representation& rep, const FactorGrid& grid, const Strides& strides,
                                     const HoldoutPredicate& p, std::uint64_t seed, const MetricSettings& settings = {}) {
  SamplingDomain d{grid, strides, p, true};
  return evaluate_metric(rep, d, seed, settings);
}

}  // namespace bvae
