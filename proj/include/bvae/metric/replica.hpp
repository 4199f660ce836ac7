#pragma once

#include <algorithm>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "bvae/core/errors.hpp"
#include "bvae/core/stats.hpp"
#include "bvae/io/text.hpp"
#include "bvae/metric/factor_change.hpp"

namespace bvae {

struct MetricReport {
  std::vector<std::vector<double>> scores;  // replica x evaluation
  std::vector<double> retained;             // top half, descending
  double mean = 0;
  double stddev = 0;
  std::size_t diverged = 0;
};

/// Keeps the top half of all scores and summarises them.
inline MetricReport aggregate_scores(std::vector<std::vector<double>> scores, std::size_t diverged = 0) {
  std::vector<double> all;
  for (const auto& r : scores) all.insert(all.end(), r.begin(), r.end());
  if (all.empty()) throw ContractError("aggregate_scores: no scores");
  for (double v : all) {
    if (!(v >= 0.0 && v <= 1.0)) throw RangeError("aggregate_scores: accuracy outside [0, 1]");
  }
  std::sort(all.begin(), all.end(), std::greater<>());
  MetricReport rep;
  rep.scores = std::move(scores);
  rep.retained.assign(all.begin(), all.begin() + std::ptrdiff_t((all.size() + 1) / 2));
  rep.mean = stats::mean(rep.retained);
  rep.stddev = stats::stddev(rep.retained);
  rep.diverged = diverged;
  return rep;
}

/// Trains `replicas` models (replica r uses seed offset r), evaluates each
/// `evaluations` times, and reports the top half of the scores. A replica
/// whose training fails numerically scores 0 on every evaluation; if more
/// than half fail the protocol aborts.
inline MetricReport replica_protocol(const std::function<Representation(std::size_t replica)>& train,
                                     const std::function<double(const Representation&, std::size_t replica,
                                                                std::size_t evaluation)>& evaluate,
                                     std::size_t replicas = 10, std::size_t evaluations = 3) {
  if (replicas == 0 || evaluations == 0) throw ContractError("replica_protocol: counts must be positive");
  std::vector<std::vector<double>> scores(replicas, std::vector<double>(evaluations, 0.0));
  std::size_t diverged = 0;
  for (std::size_t r = 0; r < replicas; ++r) {
    Representation rep;
    try {
      rep = train(r);
    } catch (const NumericalError&) {
      if (++diverged * 2 > replicas) throw NumericalError("replica_protocol: most replicas diverged");
      continue;
    }
    for (std::size_t e = 0; e < evaluations; ++e) scores[r][e] = evaluate(rep, r, e);
  }
  return aggregate_scores(std::move(scores), diverged);
}

inline std::string summary_line(const MetricReport& r) {
  std::size_t total = 0;
  for (const auto& row : r.scores) total += row.size();
  return "accuracy " + io::fmt_double(r.mean) + " +/- " + io::fmt_double(r.stddev) + " (top " +
         std::to_string(r.retained.size()) + " of " + std::to_string(total) + ", " + std::to_string(r.diverged) +
         " diverged)";
}

/// replica,evaluation,accuracy,retained
inline void write_metric_csv(const std::filesystem::path& path, const MetricReport& r) {
  auto os = io::open_out(path);
  os << "replica,evaluation,accuracy,retained\n";
  // A score is marked retained while copies of its value remain in the kept set.
  std::vector<double> kept = r.retained;
  for (std::size_t i = 0; i < r.scores.size(); ++i) {
    for (std::size_t e = 0; e < r.scores[i].size(); ++e) {
      const double v = r.scores[i][e];
      auto it = std::find(kept.begin(), kept.end(), v);
      const bool retained = it != kept.end();
      if (retained) kept.erase(it);
      os << i << ',' << e << ',' << io::fmt_double(v) << ',' << (retained ? 1 : 0) << '\n';
    }
  }
  os << "# " << summary_line(r) << '\n';
}

}  // namespace bvae
