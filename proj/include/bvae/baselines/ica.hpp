#pragma once

#include <Eigen/Dense>
#include <cmath>

#include "bvae/baselines/projection.hpp"

namespace bvae {

struct IcaSettings {
  std::size_t k = 10;
  double tolerance = 1e-4;
  std::size_t max_iterations = 200;  // per component
  std::size_t restarts = 3;
  std::uint64_t seed = 1;
  PcaSettings whitening;
};

struct IcaFit {
  LinearProjection projection;  // components = W * K in input space
  Matrixd whitening;            // K, k x n
  Matrixd unmixing;             // W, k x k with orthonormal rows
  std::size_t failed_components = 0;
};

/// (W W^T)^(-1/2) W
inline Eigen::MatrixXd symmetric_decorrelation(const Eigen::MatrixXd& w) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(w * w.transpose());
  const Eigen::VectorXd inv_sqrt = es.eigenvalues().cwiseMax(1e-300).cwiseSqrt().cwiseInverse();
  return es.eigenvectors() * inv_sqrt.asDiagonal() * es.eigenvectors().transpose() * w;
}

/// Deflation FastICA with the logcosh contrast (g = tanh) on data already
/// whitened to k dimensions (rows are samples).
///   w <- E[z g(w.z)] - E[g'(w.z)] w, then orthogonalised against earlier
///   components and normalised; converged when |1 - |w.w_old|| < tol.
/// A component that fails to converge restarts from a fresh random vector;
/// after the last restart its final iterate is kept and counted as failed.
inline Eigen::MatrixXd fast_ica_whitened(const Eigen::MatrixXd& z, const IcaSettings& s, std::size_t& failed) {
  const Eigen::Index k = z.cols();
  const double inv_n = 1.0 / double(z.rows());
  Eigen::MatrixXd w_all = Eigen::MatrixXd::Zero(0, k);
  Rng rng(s.seed);
  failed = 0;
  for (Eigen::Index c = 0; c < k; ++c) {
    Eigen::VectorXd w;
    bool converged = false;
    for (std::size_t attempt = 0; attempt <= s.restarts && !converged; ++attempt) {
      w.resize(k);
      for (Eigen::Index i = 0; i < k; ++i) w[i] = rng.normal();
      w.normalize();
      for (std::size_t it = 0; it < s.max_iterations; ++it) {
        const Eigen::VectorXd u = z * w;
        const Eigen::ArrayXd g = u.array().tanh();
        const double gp = (1.0 - g.square()).sum() * inv_n;
        Eigen::VectorXd next = z.transpose() * g.matrix() * inv_n - gp * w;
        if (w_all.rows() > 0) next -= w_all.transpose() * (w_all * next);
        next.normalize();
        const double change = std::abs(1.0 - std::abs(next.dot(w)));
        w = next;
        if (change < s.tolerance) {
          converged = true;
          break;
        }
      }
    }
    if (!converged) ++failed;
    w_all.conservativeResize(c + 1, k);
    w_all.row(c) = w.transpose();
    w_all = symmetric_decorrelation(w_all);
  }
  return w_all;
}

/// Fits from second moments plus a callback that projects the full data set
/// through a given projection (so the data can stay in compact form).
template <typename ProjectAll>
IcaFit fit_ica_from(const CovarianceAccumulator& acc, ProjectAll project_all, const IcaSettings& s) {
  PcaSettings ps = s.whitening;
  ps.k = s.k;
  const LinearProjection pca = fit_pca(acc, ps);
  const Eigen::MatrixXd cov = acc.covariance();
  const std::size_t n = acc.dim();

  // K = diag(lambda^-1/2) U^T, lambda the variance along each component
  Eigen::MatrixXd k_mat(Eigen::Index(s.k), Eigen::Index(n));
  for (Eigen::Index c = 0; c < Eigen::Index(s.k); ++c) {
    const Eigen::VectorXd u = pca.components.map().row(c).transpose();
    const double lambda = u.dot(cov * u);
    if (!(lambda > 1e-12)) throw NumericalError("ica: component " + std::to_string(c) + " has no variance to whiten");
    k_mat.row(c) = u.transpose() / std::sqrt(lambda);
  }
  IcaFit fit;
  fit.whitening = Matrixd(s.k, n);
  fit.whitening.map() = k_mat;
  LinearProjection white;
  white.mean = pca.mean;
  white.components = fit.whitening;
  const Matrixd z = project_all(white);

  const Eigen::MatrixXd w = fast_ica_whitened(z.map(), s, fit.failed_components);
  fit.unmixing = Matrixd(s.k, s.k);
  fit.unmixing.map() = w;
  fit.projection.mean = pca.mean;
  fit.projection.explained = pca.explained;
  fit.projection.components = Matrixd(s.k, n);
  fit.projection.components.map() = w * k_mat;
  fit.projection.converged = fit.failed_components == 0;
  fit.projection.iterations = pca.iterations;
  return fit;
}

/// Whitens with the top-k principal components, then runs deflation FastICA.
inline IcaFit fit_ica(const Matrixd& rows, const IcaSettings& s = {}) {
  CovarianceAccumulator acc(rows.cols());
  acc.add(rows);
  return fit_ica_from(acc, [&](const LinearProjection& p) { return p.project(std::span<const double>(rows.values())); }, s);
}

inline IcaFit fit_ica(std::span<const std::uint8_t> images, std::size_t n, const IcaSettings& s = {}) {
  CovarianceAccumulator acc(n);
  acc.add_binary(images);
  return fit_ica_from(acc, [&](const LinearProjection& p) { return p.project(images); }, s);
}

/// Whitened coordinates (x - mean) K^T of the fitted ICA.
inline Matrixd whiten(const IcaFit& fit, const Matrixd& rows) {
  LinearProjection p;
  p.mean = fit.projection.mean;
  p.components = fit.whitening;
  return p.project(std::span<const double>(rows.values()));
}

}  // namespace bvae
