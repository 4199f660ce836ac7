#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <span>
#include <string>
#include <vector>

#include "bvae/core/errors.hpp"
#include "bvae/core/matrix.hpp"
#include "bvae/core/rng.hpp"
#include "bvae/io/binary.hpp"

namespace bvae {

/// y = (x - mean) * components^T. Components are stored one per row.
struct LinearProjection {
  std::vector<double> mean;      // n
  Matrixd components;            // k x n
  std::vector<double> explained; // k explained-variance ratios (PCA; for ICA those of its whitening)
  std::size_t iterations = 0;
  double achieved_tolerance = 0;
  bool converged = true;

  std::size_t inputs() const noexcept { return components.cols(); }
  std::size_t outputs() const noexcept { return components.rows(); }
  bool fitted() const noexcept { return !components.empty(); }

  /// Projects `count` rows of n values (any arithmetic element type).
  template <typename E>
  Matrixd project(std::span<const E> rows) const {
    if (!fitted()) throw ContractError("projection is not fitted");
    const std::size_t n = inputs();
    if (rows.size() % n != 0) throw ShapeError("project: buffer is not a whole number of rows");
    const std::size_t count = rows.size() / n;
    Matrixd y(count, outputs());
    constexpr std::size_t kChunk = 2048;
    Eigen::MatrixXd x;
    for (std::size_t begin = 0; begin < count; begin += kChunk) {
      const std::size_t len = std::min(kChunk, count - begin);
      x.resize(Eigen::Index(len), Eigen::Index(n));
      for (std::size_t i = 0; i < len; ++i) {
        const E* src = rows.data() + (begin + i) * n;
        for (std::size_t j = 0; j < n; ++j) x(Eigen::Index(i), Eigen::Index(j)) = double(src[j]) - mean[j];
      }
      y.map().middleRows(Eigen::Index(begin), Eigen::Index(len)).noalias() = x * components.map().transpose();
    }
    return y;
  }
};

/// Running first and second moments of n-dimensional rows with 64-bit
/// accumulation. Binary images go through float products in chunks of at most
/// 1024 rows, where every partial sum is an integer below 2^24 and therefore
/// exact, before being added to the double totals.
class CovarianceAccumulator {
 public:
  explicit CovarianceAccumulator(std::size_t n) : n_(n), sum_(Eigen::VectorXd::Zero(Eigen::Index(n))),
                                                  scatter_(Eigen::MatrixXd::Zero(Eigen::Index(n), Eigen::Index(n))) {}

  std::size_t dim() const noexcept { return n_; }
  std::size_t count() const noexcept { return count_; }

  void add_binary(std::span<const std::uint8_t> rows) {
    if (rows.size() % n_ != 0) throw ShapeError("covariance: buffer is not a whole number of rows");
    const std::size_t count = rows.size() / n_;
    constexpr std::size_t kChunk = 1024;
    Eigen::MatrixXf chunk;
    Eigen::MatrixXf partial(static_cast<Eigen::Index>(n_), static_cast<Eigen::Index>(n_));
    for (std::size_t begin = 0; begin < count; begin += kChunk) {
      const std::size_t len = std::min(kChunk, count - begin);
      chunk.resize(Eigen::Index(n_), Eigen::Index(len));  // column per image
      for (std::size_t i = 0; i < len; ++i) {
        const auto* src = rows.data() + (begin + i) * n_;
        for (std::size_t j = 0; j < n_; ++j) {
          chunk(Eigen::Index(j), Eigen::Index(i)) = float(src[j]);
          sum_[Eigen::Index(j)] += src[j];
        }
      }
      partial.setZero();
      partial.selfadjointView<Eigen::Lower>().rankUpdate(chunk);
      scatter_.triangularView<Eigen::Lower>() += partial.cast<double>();
      count_ += len;
    }
  }

  void add(const Matrixd& rows) {
    if (rows.cols() != n_) throw ShapeError("covariance: rows have " + std::to_string(rows.cols()) + " columns");
    Eigen::MatrixXd x = rows.map();
    sum_ += x.colwise().sum().transpose();
    scatter_.selfadjointView<Eigen::Lower>().rankUpdate(x.transpose());
    count_ += rows.rows();
  }

  Eigen::VectorXd mean() const {
    if (count_ == 0) throw ContractError("covariance: no data");
    return sum_ / double(count_);
  }

  /// Population covariance (full symmetric matrix).
  Eigen::MatrixXd covariance() const {
    const Eigen::VectorXd mu = mean();
    Eigen::MatrixXd c = scatter_.selfadjointView<Eigen::Lower>();
    c /= double(count_);
    c.noalias() -= mu * mu.transpose();
    return c;
  }

 private:
  std::size_t n_;
  std::size_t count_ = 0;
  Eigen::VectorXd sum_;
  Eigen::MatrixXd scatter_;  // lower triangle of sum x x^T
};

struct PcaSettings {
  std::size_t k = 10;
  std::size_t oversample = 10;  // extra block columns to speed convergence
  double tolerance = 1e-7;
  std::size_t max_iterations = 500;
  std::uint64_t seed = 1;
};

/// Top-k eigenpairs of a covariance by orthogonal iteration with a
/// Rayleigh-Ritz rotation each sweep. Stops when the leading k-dimensional
/// subspace moves by less than the tolerance (Frobenius norm of the part of
/// the new basis outside the old one) or at the iteration cap; the achieved
/// value is reported either way.
inline LinearProjection pca_from_covariance(const Eigen::MatrixXd& cov, const Eigen::VectorXd& mean,
                                            const PcaSettings& s = {}) {
  const Eigen::Index n = cov.rows();
  if (s.k == 0 || Eigen::Index(s.k) > n) throw ContractError("pca: k must lie in [1, n]");
  const Eigen::Index b = std::min<Eigen::Index>(n, Eigen::Index(s.k + s.oversample));
  const Eigen::Index k = Eigen::Index(s.k);
  Rng rng(s.seed);
  Eigen::MatrixXd q(n, b);
  for (Eigen::Index j = 0; j < b; ++j) {
    for (Eigen::Index i = 0; i < n; ++i) q(i, j) = rng.normal();
  }
  q = Eigen::HouseholderQR<Eigen::MatrixXd>(q).householderQ() * Eigen::MatrixXd::Identity(n, b);

  LinearProjection out;
  Eigen::MatrixXd previous;
  Eigen::VectorXd eigenvalues;
  out.converged = false;
  out.achieved_tolerance = INFINITY;
  for (std::size_t it = 1; it <= s.max_iterations; ++it) {
    Eigen::MatrixXd z = cov * q;
    q = Eigen::HouseholderQR<Eigen::MatrixXd>(z).householderQ() * Eigen::MatrixXd::Identity(n, b);
    const Eigen::MatrixXd small = q.transpose() * cov * q;
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(0.5 * (small + small.transpose()));
    // descending order
    const Eigen::MatrixXd rot = es.eigenvectors().rowwise().reverse();
    eigenvalues = es.eigenvalues().reverse();
    q = q * rot;
    const Eigen::MatrixXd lead = q.leftCols(k);
    out.iterations = it;
    if (previous.size() != 0) {
      const Eigen::MatrixXd outside = lead - previous * (previous.transpose() * lead);
      out.achieved_tolerance = outside.norm();
      if (out.achieved_tolerance < s.tolerance) {
        out.converged = true;
        break;
      }
    }
    previous = lead;
  }

  const double total = cov.trace();
  out.mean.assign(mean.data(), mean.data() + n);
  out.components = Matrixd(std::size_t(k), std::size_t(n));
  for (Eigen::Index c = 0; c < k; ++c) {
    Eigen::VectorXd v = q.col(c);
    // sign convention: largest-magnitude entry positive
    Eigen::Index arg = 0;
    v.cwiseAbs().maxCoeff(&arg);
    if (v[arg] < 0) v = -v;
    for (Eigen::Index j = 0; j < n; ++j) out.components(std::size_t(c), std::size_t(j)) = v[j];
    out.explained.push_back(total > 0 ? std::max(0.0, eigenvalues[c]) / total : 0.0);
  }
  return out;
}

inline LinearProjection fit_pca(const CovarianceAccumulator& acc, const PcaSettings& s = {}) {
  if (acc.count() <= s.k) throw ContractError("pca: need more than k rows");
  return pca_from_covariance(acc.covariance(), acc.mean(), s);
}

inline LinearProjection fit_pca(std::span<const std::uint8_t> images, std::size_t n, const PcaSettings& s = {}) {
  CovarianceAccumulator acc(n);
  acc.add_binary(images);
  return fit_pca(acc, s);
}

inline LinearProjection fit_pca(const Matrixd& rows, const PcaSettings& s = {}) {
  CovarianceAccumulator acc(rows.cols());
  acc.add(rows);
  return fit_pca(acc, s);
}

inline double explained_total(const LinearProjection& p) {
  double t = 0;
  for (double v : p.explained) t += v;
  return t;
}

// PROJ file, little endian: "PROJ" | k u32 | n u32 | mean f32[n] |
// components f32[k*n] (row per component) | explained-variance ratios f32[k]
inline void save_projection(const std::filesystem::path& path, const LinearProjection& p) {
  if (!p.fitted()) throw ContractError("save_projection: projection is not fitted");
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw DataError("cannot open " + path.string() + " for writing");
  io::write_magic(os, "PROJ");
  io::write_le<std::uint32_t>(os, std::uint32_t(p.outputs()));
  io::write_le<std::uint32_t>(os, std::uint32_t(p.inputs()));
  for (double v : p.mean) io::write_le<float>(os, float(v));
  for (double v : p.components.values()) io::write_le<float>(os, float(v));
  for (std::size_t i = 0; i < p.outputs(); ++i) io::write_le<float>(os, i < p.explained.size() ? float(p.explained[i]) : 0.0f);
  if (!os) throw DataError("write failed: " + path.string());
}

inline LinearProjection load_projection(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open projection " + path.string());
  io::expect_magic(is, "PROJ", "projection");
  const auto k = io::read_le<std::uint32_t>(is);
  const auto n = io::read_le<std::uint32_t>(is);
  if (k == 0 || n == 0 || std::uint64_t(k) * n > (std::uint64_t(1) << 30)) throw DataError("projection: bad dimensions");
  LinearProjection p;
  p.mean.resize(n);
  for (auto& v : p.mean) v = io::read_le<float>(is);
  p.components = Matrixd(k, n);
  for (auto& v : p.components.values()) v = io::read_le<float>(is);
  p.explained.resize(k);
  for (auto& v : p.explained) v = io::read_le<float>(is);
  return p;
}

}  // namespace bvae
