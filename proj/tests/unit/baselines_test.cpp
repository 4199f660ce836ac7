#include <gtest/gtest.h>

#include <filesystem>

#include "bvae/baselines/adapters.hpp"
#include "bvae/baselines/ica.hpp"
#include "bvae/core/stats.hpp"

using namespace bvae;

namespace {

// rows with independent coordinates of the given standard deviations
Matrixd gaussian_rows(std::size_t count, const std::vector<double>& sd, std::uint64_t seed) {
  Rng rng(seed);
  Matrixd x(count, sd.size());
  for (std::size_t i = 0; i < count; ++i) {
    for (std::size_t j = 0; j < sd.size(); ++j) x(i, j) = 3.0 + sd[j] * rng.normal();
  }
  return x;
}

Matrixd correlated_rows(std::size_t count, std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  Matrixd mix(n, n);
  for (auto& v : mix.values()) v = rng.normal();
  Matrixd x(count, n);
  for (std::size_t i = 0; i < count; ++i) {
    for (std::size_t j = 0; j < n; ++j) x(i, j) = rng.normal() * (1.0 + double(j));
  }
  return matmul(x, mix);
}

// plain-loop population covariance
Eigen::MatrixXd naive_covariance(const Matrixd& x) {
  const std::size_t n = x.cols(), m = x.rows();
  std::vector<double> mu(n, 0.0);
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) mu[j] += x(i, j) / double(m);
  }
  Eigen::MatrixXd c = Eigen::MatrixXd::Zero(Eigen::Index(n), Eigen::Index(n));
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t a = 0; a < n; ++a) {
      for (std::size_t b = 0; b < n; ++b) c(Eigen::Index(a), Eigen::Index(b)) += (x(i, a) - mu[a]) * (x(i, b) - mu[b]);
    }
  }
  return c / double(m);
}

double row_dot(const Matrixd& m, std::size_t r, const Eigen::VectorXd& v) {
  double s = 0;
  for (std::size_t j = 0; j < m.cols(); ++j) s += m(r, j) * v[Eigen::Index(j)];
  return s;
}

double reconstruction_error(const Matrixd& x, const LinearProjection& p) {
  const Matrixd y = p.project(std::span<const double>(x.values()));
  double err = 0;
  for (std::size_t i = 0; i < x.rows(); ++i) {
    for (std::size_t j = 0; j < x.cols(); ++j) {
      double r = p.mean[j];
      for (std::size_t c = 0; c < p.outputs(); ++c) r += y(i, c) * p.components(c, j);
      err += (x(i, j) - r) * (x(i, j) - r);
    }
  }
  return err / double(x.rows());
}

}  // namespace

TEST(Pca, RecoversAxisAlignedVariances) {
  const auto x = gaussian_rows(20000, {3.0, 2.0, 1.0, 0.5}, 1);
  PcaSettings s;
  s.k = 2;
  const auto p = fit_pca(x, s);
  EXPECT_TRUE(p.converged);
  EXPECT_GT(std::abs(p.components(0, 0)), 0.99);
  EXPECT_GT(std::abs(p.components(1, 1)), 0.99);
  EXPECT_NEAR(p.explained[0], 9.0 / 14.25, 0.02);
  EXPECT_NEAR(p.explained[1], 4.0 / 14.25, 0.02);
  EXPECT_NEAR(p.mean[2], 3.0, 0.05);
}

TEST(Pca, MatchesDenseEigensolver) {
  for (std::uint64_t seed : {2u, 3u, 4u}) {
    const auto x = correlated_rows(3000, 12, seed);
    PcaSettings s;
    s.k = 4;
    s.tolerance = 1e-10;
    s.max_iterations = 5000;
    const auto p = fit_pca(x, s);
    const Eigen::MatrixXd cov = naive_covariance(x);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(cov);
    const double total = cov.trace();
    for (std::size_t c = 0; c < 4; ++c) {
      const Eigen::Index idx = 11 - Eigen::Index(c);
      EXPECT_NEAR(p.explained[c], es.eigenvalues()[idx] / total, 1e-8);
      EXPECT_NEAR(std::abs(row_dot(p.components, c, es.eigenvectors().col(idx))), 1.0, 1e-6);
    }
  }
}

TEST(Pca, ComponentsAreOrthonormalWithSignConvention) {
  const auto x = correlated_rows(2000, 9, 5);
  PcaSettings s;
  s.k = 5;
  const auto p = fit_pca(x, s);
  for (std::size_t a = 0; a < 5; ++a) {
    double largest = 0;
    for (std::size_t j = 0; j < 9; ++j) {
      if (std::abs(p.components(a, j)) > std::abs(largest)) largest = p.components(a, j);
    }
    EXPECT_GT(largest, 0);
    for (std::size_t b = 0; b < 5; ++b) {
      double d = 0;
      for (std::size_t j = 0; j < 9; ++j) d += p.components(a, j) * p.components(b, j);
      EXPECT_NEAR(d, a == b ? 1.0 : 0.0, 1e-9);
    }
  }
  for (std::size_t c = 1; c < 5; ++c) EXPECT_LE(p.explained[c], p.explained[c - 1]);
}

TEST(Pca, ReconstructionErrorNonincreasingInK) {
  const auto x = correlated_rows(1500, 8, 6);
  double previous = INFINITY;
  for (std::size_t k = 1; k <= 8; ++k) {
    PcaSettings s;
    s.k = k;
    const double err = reconstruction_error(x, fit_pca(x, s));
    EXPECT_LE(err, previous * (1 + 1e-9) + 1e-12);
    previous = err;
  }
  EXPECT_NEAR(previous, 0.0, 1e-8);
}

TEST(Pca, BinaryAccumulationIsExact) {
  Rng rng(7);
  const std::size_t n = 20, count = 2500;
  std::vector<std::uint8_t> px(n * count);
  for (auto& v : px) v = rng.bernoulli(0.3);
  Matrixd x(count, n);
  for (std::size_t i = 0; i < px.size(); ++i) x[i] = px[i];
  CovarianceAccumulator a(n), b(n);
  a.add_binary(px);
  b.add(x);
  EXPECT_EQ(a.count(), b.count());
  EXPECT_LT((a.covariance() - b.covariance()).cwiseAbs().maxCoeff(), 1e-15);
  EXPECT_LT((a.covariance() - naive_covariance(x)).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Pca, IsDeterministic) {
  const auto x = correlated_rows(1000, 10, 8);
  const auto a = fit_pca(x), b = fit_pca(x);
  EXPECT_EQ(a.components, b.components);
  EXPECT_EQ(a.explained, b.explained);
}

TEST(Pca, ContractViolations) {
  const auto x = correlated_rows(50, 4, 9);
  PcaSettings s;
  s.k = 5;
  EXPECT_THROW(fit_pca(x, s), ContractError);
  s.k = 0;
  EXPECT_THROW(fit_pca(x, s), ContractError);
  LinearProjection empty;
  EXPECT_THROW(empty.project(std::span<const double>(x.values())), ContractError);
}

TEST(Ica, WhitenedDataHasIdentityCovariance) {
  const auto x = correlated_rows(4000, 6, 10);
  IcaSettings s;
  s.k = 4;
  const auto fit = fit_ica(x, s);
  const Eigen::MatrixXd c = naive_covariance(whiten(fit, x));
  EXPECT_LT((c - Eigen::MatrixXd::Identity(4, 4)).cwiseAbs().maxCoeff(), 1e-8);
  const Eigen::MatrixXd wwt = fit.unmixing.map() * fit.unmixing.map().transpose();
  EXPECT_LT((wwt - Eigen::MatrixXd::Identity(4, 4)).cwiseAbs().maxCoeff(), 1e-8);
}

TEST(Ica, SeparatesTwoMixedSources) {
  Rng rng(11);
  const std::size_t m = 5000;
  Matrixd s(m, 2), x(m, 3);
  for (std::size_t i = 0; i < m; ++i) {
    s(i, 0) = rng.uniform(-1, 1);
    s(i, 1) = std::sin(0.05 * double(i));
    x(i, 0) = 0.8 * s(i, 0) + 0.6 * s(i, 1);
    x(i, 1) = -0.3 * s(i, 0) + 0.9 * s(i, 1);
    x(i, 2) = 0.5 * s(i, 0) - 0.2 * s(i, 1) + 1e-3 * rng.normal();
  }
  IcaSettings settings;
  settings.k = 2;
  const auto fit = fit_ica(x, settings);
  EXPECT_EQ(fit.failed_components, 0u);
  const Matrixd y = fit.projection.project(std::span<const double>(x.values()));
  const auto column = [](const Matrixd& mat, std::size_t c) {
    std::vector<double> v(mat.rows());
    for (std::size_t i = 0; i < mat.rows(); ++i) v[i] = mat(i, c);
    return v;
  };
  for (std::size_t src = 0; src < 2; ++src) {
    double best = 0;
    for (std::size_t c = 0; c < 2; ++c) best = std::max(best, std::abs(stats::pearson(column(y, c), column(s, src))));
    EXPECT_GT(best, 0.98) << "source " << src;
  }
}

TEST(Ica, IsDeterministic) {
  const auto x = correlated_rows(1500, 5, 12);
  IcaSettings s;
  s.k = 3;
  EXPECT_EQ(fit_ica(x, s).projection.components, fit_ica(x, s).projection.components);
}

TEST(Projection, SaveLoadRoundTrip) {
  const auto x = correlated_rows(500, 6, 13);
  PcaSettings s;
  s.k = 3;
  const auto p = fit_pca(x, s);
  const auto path = std::filesystem::temp_directory_path() / "bvae_projection_test.proj";
  save_projection(path, p);
  const auto q = load_projection(path);
  std::filesystem::remove(path);
  ASSERT_EQ(q.outputs(), 3u);
  ASSERT_EQ(q.inputs(), 6u);
  for (std::size_t i = 0; i < p.components.size(); ++i) EXPECT_EQ(q.components[i], double(float(p.components[i])));
  for (std::size_t i = 0; i < 3; ++i) EXPECT_EQ(q.explained[i], double(float(p.explained[i])));
  EXPECT_THROW(load_projection("/nonexistent/p.proj"), DataError);
}

TEST(Adapters, PixelsAndGroundTruth) {
  const auto grid = FactorGrid::standard();
  const auto c = grid.resolve(FactorIndex{1, 2, 3, 4, 5});
  const Image img = grid.render(c);
  const std::vector<FactorCoordinates> coords{c};
  const auto px = pixels_representation().encode(coords, img.pixels);
  ASSERT_EQ(px.cols(), 4096u);
  for (std::size_t i = 0; i < 4096; ++i) EXPECT_EQ(px[i], double(img.pixels[i]));
  const auto gt = ground_truth_representation().encode(coords, img.pixels);
  EXPECT_EQ(gt(0, 0), c.scale);
  EXPECT_EQ(gt(0, 1), c.rotation);
  EXPECT_EQ(gt(0, 2), c.x);
  EXPECT_EQ(gt(0, 3), c.y);
  EXPECT_THROW(pixels_representation().encode(coords, std::vector<std::uint8_t>(10)), ShapeError);
}

TEST(Adapters, NamesAndContracts) {
  EXPECT_EQ(representation_from_string("ground-truth"), RepresentationKind::ground_truth);
  EXPECT_EQ(representation_from_string("ica"), RepresentationKind::ica);
  EXPECT_THROW(representation_from_string("tsne"), ContractError);
  EXPECT_THROW(projection_representation("pca", std::make_shared<LinearProjection>()), ContractError);
  EXPECT_THROW(vae_representation(nullptr), ContractError);
}
