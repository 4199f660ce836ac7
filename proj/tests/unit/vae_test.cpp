#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <map>
#include <sstream>

#include "bvae/data/dataset.hpp"
#include "bvae/model/analysis.hpp"
#include "bvae/model/checkpoint.hpp"
#include "bvae/model/training.hpp"
#include "vae_oracle.hpp"

using namespace bvae;

namespace {

VaeConfig tiny_config() {
  VaeConfig c;
  c.input_size = 16;
  c.latent_size = 3;
  c.encoder_hidden = {12};
  c.decoder_hidden = {12, 8};
  c.batch_size = 8;
  c.max_steps = 40;
  c.log_interval = 10;
  c.seed = 7;
  return c;
}

std::vector<std::uint8_t> random_images(std::size_t count, std::size_t size, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<std::uint8_t> px(count * size);
  for (auto& v : px) v = rng.bernoulli(0.3) ? 1 : 0;
  return px;
}

template <typename T>
std::vector<T> as_vec(std::span<T> s) {
  return {s.begin(), s.end()};
}
template <typename T>
std::vector<T> as_vec(std::span<const T> s) {
  return {s.begin(), s.end()};
}

bool same_parameters(const VaeModel& a, const VaeModel& b) {
  if (a.parameters().size() != b.parameters().size()) return false;
  for (std::size_t p = 0; p < a.parameters().size(); ++p) {
    const auto& x = a.parameters()[p].value.values();
    const auto& y = b.parameters()[p].value.values();
    if (!std::equal(x.begin(), x.end(), y.begin(), y.end())) return false;
  }
  return true;
}

}  // namespace

TEST(Kl, ClosedFormExamples) {
  EXPECT_DOUBLE_EQ(LatentEncoding::kl(0, 0), 0.0);
  EXPECT_DOUBLE_EQ(LatentEncoding::kl(1, 0), 0.5);
  EXPECT_NEAR(LatentEncoding::kl(0, std::log(2.0)), 0.1534, 1e-4);
}

TEST(Kl, MatchesMonteCarlo) {
  Rng rng(2024);
  const std::pair<double, double> cases[] = {{0.0, std::log(2.0)}, {1.3, -0.7}, {-0.4, 0.9}};
  for (auto [mu, lv] : cases) {
    const double sigma = std::exp(0.5 * lv);
    double acc = 0;
    const int n = 1'000'000;
    for (int i = 0; i < n; ++i) {
      const double e = rng.normal();
      const double z = mu + sigma * e;
      // log q(z) - log p(z)
      acc += -0.5 * e * e - std::log(sigma) + 0.5 * z * z;
    }
    EXPECT_NEAR(acc / n, LatentEncoding::kl(mu, lv), 1e-2) << mu << " " << lv;
  }
}

TEST(Elbo, BetaWeightsTheKlTerm) {
  auto c = tiny_config();
  VaeModel model(c);
  const auto px = random_images(5, 16, 3);
  const std::vector<std::size_t> rows{0, 1, 2, 3, 4};
  const Matrixf batch = to_batch<float>(px, 16, rows);
  Rng rng(9);
  const Matrixf noise = sample_standard_normal<float>(rng, 5, 3);
  const auto zero = elbo_loss_with_noise(model, batch, noise, 0.0, false).value;
  EXPECT_DOUBLE_EQ(zero.total, zero.recon);
  const auto three = elbo_loss_with_noise(model, batch, noise, 3.0, false).value;
  EXPECT_NEAR(three.total, three.recon + 3.0 * three.kl, 1e-4 * std::abs(three.total));
  double per = 0;
  for (double v : three.kl_per_latent) per += v;
  EXPECT_NEAR(per, three.kl, 1e-5);
}

TEST(Elbo, NormalisedBetaScalesByLatentsOverPixels) {
  VaeConfig c;
  c.beta = 4;
  EXPECT_DOUBLE_EQ(effective_beta(c), 4.0);
  c.normalized_beta = true;
  EXPECT_DOUBLE_EQ(effective_beta(c), 4.0 * 10.0 / 4096.0);
}

TEST(Elbo, NonBinaryPixelsAreRejected) {
  VaeModel model(tiny_config());
  Matrixf batch(1, 16);
  batch(0, 3) = 0.5f;
  Matrixf noise(1, 3);
  EXPECT_THROW(elbo_loss_with_noise(model, batch, noise, 1.0), ContractError);
}

TEST(Elbo, NaiveForwardAgreesWithTape) {
  Rng rng(11);
  for (int n = 0; n < 50; ++n) {
    const auto tc = testing_oracle::random_toy(rng);
    BasicVae<double> model(tc.config);
    Matrixd x(3, tc.config.input_size), noise(3, tc.config.latent_size);
    for (auto& v : x.values()) v = rng.bernoulli(0.5) ? 1 : 0;
    for (auto& v : noise.values()) v = rng.normal();
    const double tape = elbo_loss_with_noise(model, x, noise, tc.beta, false).value.total;
    EXPECT_NEAR(tape, testing_oracle::naive_elbo(model, x, noise, tc.beta), 1e-9 * std::max(1.0, std::abs(tape)));
  }
}

TEST(Elbo, ToyNetworkGradientsMatchFiniteDifferences) {
  const auto res = testing_oracle::toy_gradient_suite(100, 5);
  EXPECT_EQ(res.networks, 100u);
  EXPECT_LT(res.worst, 1e-4);
}

TEST(Encode, DeterministicForAChunkSize) {
  VaeModel model(tiny_config());
  const auto px = random_images(37, 16, 4);
  const auto a = encode_pixels(model, px, 256);
  const auto b = encode_pixels(model, px, 5);
  for (std::size_t i = 0; i < a.mu.size(); ++i) {
    EXPECT_NEAR(a.mu[i], b.mu[i], 1e-5);
    EXPECT_NEAR(a.logvar[i], b.logvar[i], 1e-5);
  }
  EXPECT_EQ(as_vec(encode_pixels(model, px).mu.values()), as_vec(a.mu.values()));
  EXPECT_EQ(as_vec(encode_pixels(model, px, 5).mu.values()), as_vec(b.mu.values()));
}

TEST(Encode, UntrainedPosteriorHasUnitVariance) {
  VaeModel model(tiny_config());
  const auto enc = encode_pixels(model, random_images(10, 16, 5));
  for (float v : enc.logvar.values()) EXPECT_FLOAT_EQ(v, 0.0f);
}

TEST(Encode, WrongSizesAreShapeErrors) {
  VaeModel model(tiny_config());
  const std::vector<std::uint8_t> px(17, 0);
  EXPECT_THROW(encode_pixels(model, px), ShapeError);
  EXPECT_THROW(decode(model, Matrixf(1, 4)), ShapeError);
}

TEST(Training, SameSeedSameWeights) {
  const auto px = random_images(60, 16, 6);
  VaeModel a(tiny_config()), b(tiny_config());
  const auto ta = train(a, ImageSet{px, 16});
  const auto tb = train(b, ImageSet{px, 16});
  EXPECT_TRUE(same_parameters(a, b));
  ASSERT_EQ(ta.records.size(), 4u);
  EXPECT_EQ(ta.records.back().total, tb.records.back().total);
  EXPECT_EQ(ta.steps, 40u);
}

TEST(Training, LossDecreases) {
  auto c = tiny_config();
  c.max_steps = 600;
  c.log_interval = 100;
  c.beta = 1;
  const auto px = random_images(20, 16, 8);
  VaeModel model(c);
  const auto t = train(model, ImageSet{px, 16});
  EXPECT_LT(t.records.back().total, t.records.front().total);
}

TEST(Training, ResumeFromCheckpointIsBitIdentical) {
  const auto px = random_images(60, 16, 6);
  VaeModel straight(tiny_config());
  train(straight, ImageSet{px, 16});

  auto half = tiny_config();
  half.max_steps = 20;
  VaeModel first(half);
  std::stringstream buf;
  TrainHooks hooks;
  hooks.checkpoint_interval = 20;
  hooks.on_checkpoint = [&](const VaeModel& m, std::size_t) { save_checkpoint(buf, m); };
  train(first, ImageSet{px, 16}, hooks);
  VaeModel resumed = load_checkpoint(buf);
  resumed.mutable_config() = tiny_config();
  EXPECT_EQ(resumed.optimizer().step_count(), 20u);
  train(resumed, ImageSet{px, 16});
  EXPECT_TRUE(same_parameters(straight, resumed));
}

TEST(Training, NonFiniteWeightsDiverge) {
  VaeModel model(tiny_config());
  model.parameters()[0].value[0] = std::numeric_limits<float>::quiet_NaN();
  const auto px = random_images(10, 16, 1);
  try {
    train(model, ImageSet{px, 16});
    FAIL() << "expected divergence";
  } catch (const TrainingDiverged& e) {
    EXPECT_TRUE(e.trace().records.empty());
  }
}

TEST(Training, MismatchedImagesAreShapeErrors) {
  VaeModel model(tiny_config());
  const auto px = random_images(4, 9, 1);
  EXPECT_THROW(train(model, ImageSet{px, 9}), ShapeError);
}

TEST(Training, InformativeLatentsUseStrictThreshold) {
  const std::vector<double> kl{0.0, 0.05, 0.0500001, 3.0};
  EXPECT_EQ(informative_latents(kl), 2u);
}

TEST(Checkpoint, RoundTripKeepsWeightsConfigAndOptimizer) {
  auto c = tiny_config();
  c.optimizer = OptimizerKind::adam;
  c.beta = 2.5;
  c.normalized_beta = true;
  c.encoder_activation = Activation::tanh;
  c.decoder_activation = Activation::sigmoid;
  VaeModel model(c);
  const auto px = random_images(30, 16, 2);
  train(model, ImageSet{px, 16});
  std::stringstream buf;
  save_checkpoint(buf, model);
  const VaeModel back = load_checkpoint(buf);
  EXPECT_TRUE(same_parameters(model, back));
  EXPECT_EQ(back.config().encoder_hidden, c.encoder_hidden);
  EXPECT_EQ(back.config().decoder_hidden, c.decoder_hidden);
  EXPECT_EQ(back.config().beta, 2.5);
  EXPECT_TRUE(back.config().normalized_beta);
  EXPECT_EQ(back.config().optimizer, OptimizerKind::adam);
  EXPECT_EQ(back.config().encoder_activation, Activation::tanh);
  EXPECT_EQ(back.config().decoder_activation, Activation::sigmoid);
  EXPECT_EQ(back.config().seed, c.seed);
  EXPECT_EQ(back.optimizer().step_count(), model.optimizer().step_count());
  ASSERT_EQ(back.optimizer().second_moments().size(), model.optimizer().second_moments().size());
  for (std::size_t i = 0; i < model.optimizer().second_moments().size(); ++i) {
    EXPECT_EQ(as_vec(back.optimizer().second_moments()[i].values()),
              as_vec(model.optimizer().second_moments()[i].values()));
    EXPECT_EQ(as_vec(back.optimizer().first_moments()[i].values()),
              as_vec(model.optimizer().first_moments()[i].values()));
  }
}

TEST(Checkpoint, DamagedFilesAreDataErrors) {
  VaeModel model(tiny_config());
  std::stringstream buf;
  save_checkpoint(buf, model);
  const std::string bytes = buf.str();

  std::stringstream truncated(bytes.substr(0, bytes.size() / 2));
  EXPECT_THROW(load_checkpoint(truncated), DataError);
  std::string bad = bytes;
  bad[0] = 'X';
  std::stringstream magic(bad);
  EXPECT_THROW(load_checkpoint(magic), DataError);
  EXPECT_THROW(load_checkpoint(std::filesystem::path("/nonexistent/model.bvae")), DataError);
}

TEST(Traverse, SingleStepIsPlainDecodeOfTheMean) {
  VaeModel model(tiny_config());
  const auto px = random_images(1, 16, 12);
  const auto t = traverse(model, px, 1, 1);
  const auto enc = encode_pixels(model, px);
  const auto p = decode(model, enc.mu);
  EXPECT_EQ(as_vec(t.probabilities.values()), as_vec(p.values()));
  EXPECT_DOUBLE_EQ(t.values[0], double(enc.mu(0, 1)));
}

TEST(Traverse, SweepsTheRequestedRange) {
  VaeModel model(tiny_config());
  const auto px = random_images(1, 16, 12);
  const auto t = traverse(model, px, 2, 5, 2.0);
  EXPECT_EQ(t.values, (std::vector<double>{-2, -1, 0, 1, 2}));
  EXPECT_EQ(t.probabilities.rows(), 5u);
  for (float v : t.probabilities.values()) {
    EXPECT_GT(v, 0.0f);
    EXPECT_LT(v, 1.0f);
  }
  EXPECT_THROW(traverse(model, px, 3, 5), RangeError);
  EXPECT_THROW(traverse(model, px, 0, 0), ContractError);
}

TEST(Analysis, LatentOrderIsStableByDecreasingKl) {
  const std::vector<double> kl{0.1, 2.0, 0.1, 5.0};
  EXPECT_EQ(latent_order(kl), (std::vector<std::size_t>{3, 1, 0, 2}));
}

TEST(Analysis, ResponseMapMatchesGroupBy) {
  const auto ds = generate_grid_dataset(FactorGrid::standard(), Strides{1, 3, 8, 8, 8}, HoldoutPredicate::none(),
                                        Selection::retained);
  Rng rng(13);
  Matrixf mu(ds.size(), 4);
  for (auto& v : mu.values()) v = float(rng.normal());
  for (Factor f : {Factor::shape, Factor::scale, Factor::rotation, Factor::x, Factor::y}) {
    const auto r = response_map(mu, ds, f);
    std::map<std::size_t, std::pair<std::vector<double>, std::size_t>> oracle;
    for (std::size_t i = 0; i < ds.size(); ++i) {
      auto& [sums, n] = oracle[ds.factor(i).index[std::size_t(f)]];
      sums.resize(4, 0.0);
      for (std::size_t j = 0; j < 4; ++j) sums[j] += mu(i, j);
      ++n;
    }
    ASSERT_EQ(r.value_indices.size(), oracle.size());
    std::size_t c = 0;
    for (const auto& [value, entry] : oracle) {
      EXPECT_EQ(r.value_indices[c], value);
      EXPECT_EQ(r.counts[c], entry.second);
      for (std::size_t j = 0; j < 4; ++j) EXPECT_NEAR(r.mean(j, c), entry.first[j] / double(entry.second), 1e-9);
      ++c;
    }
  }
  const auto only = response_map(mu, ds, Factor::x, ShapeKind::heart);
  std::size_t total = 0;
  for (auto n : only.counts) total += n;
  EXPECT_EQ(total, ds.size() / 3);
}
