#pragma once

// Plain-loop forward pass of the VAE objective, written independently of the
// tape, and the random toy-network gradient suite built on it.

#include <cmath>

#include "bvae/model/vae.hpp"
#include "gradient_oracle.hpp"

namespace testing_oracle {

inline double activate(bvae::Activation a, double v) {
  switch (a) {
    case bvae::Activation::relu:
      return v > 0 ? v : 0;
    case bvae::Activation::tanh:
      return std::tanh(v);
    case bvae::Activation::sigmoid:
      return 1 / (1 + std::exp(-v));
    case bvae::Activation::identity:
      return v;
  }
  return v;
}

inline std::vector<double> dense(const std::vector<double>& in, const bvae::Matrixd& w, const bvae::Matrixd& b,
                                 bvae::Activation act) {
  std::vector<double> out(w.cols());
  for (std::size_t j = 0; j < w.cols(); ++j) {
    double s = b(0, j);
    for (std::size_t i = 0; i < in.size(); ++i) s += in[i] * w(i, j);
    out[j] = activate(act, s);
  }
  return out;
}

/// mean_i [ sum_k BCE(x_ik, sigmoid(logit_ik)) + beta * KL_i ]
inline double naive_elbo(const bvae::BasicVae<double>& model, const bvae::Matrixd& x, const bvae::Matrixd& noise,
                         double beta) {
  const auto& c = model.config();
  const std::size_t m = c.latent_size;
  double total = 0;
  for (std::size_t r = 0; r < x.rows(); ++r) {
    std::vector<double> h(x.row(r).begin(), x.row(r).end());
    std::size_t l = 0;
    for (; l < c.encoder_hidden.size(); ++l) h = dense(h, model.weight(l), model.bias(l), c.encoder_activation);
    const auto head = dense(h, model.weight(l), model.bias(l), bvae::Activation::identity);
    ++l;
    std::vector<double> z(m);
    double kl = 0;
    for (std::size_t j = 0; j < m; ++j) {
      const double mu = head[j], lv = head[m + j];
      z[j] = mu + std::exp(0.5 * lv) * noise(r, j);
      kl += 0.5 * (mu * mu + std::exp(lv) - lv - 1);
    }
    std::vector<double> d = z;
    for (std::size_t k = 0; k < c.decoder_hidden.size(); ++k, ++l) {
      d = dense(d, model.weight(l), model.bias(l), c.decoder_activation);
    }
    const auto logits = dense(d, model.weight(l), model.bias(l), bvae::Activation::identity);
    double recon = 0;
    for (std::size_t k = 0; k < logits.size(); ++k) {
      const double p = 1 / (1 + std::exp(-logits[k]));
      recon -= x(r, k) > 0.5 ? std::log(p) : std::log1p(-p);
    }
    total += recon + beta * kl;
  }
  return total / double(x.rows());
}

struct ToyCase {
  bvae::VaeConfig config;
  double beta = 1;
};

inline ToyCase random_toy(bvae::Rng& rng) {
  using bvae::Activation;
  const Activation acts[3] = {Activation::relu, Activation::tanh, Activation::sigmoid};
  ToyCase t;
  auto& c = t.config;
  c.input_size = 2 + rng.uniform_index(5);
  c.latent_size = 1 + rng.uniform_index(3);
  c.encoder_hidden.assign(rng.uniform_index(3), 0);
  for (auto& w : c.encoder_hidden) w = 1 + rng.uniform_index(5);
  c.decoder_hidden.assign(rng.uniform_index(3), 0);
  for (auto& w : c.decoder_hidden) w = 1 + rng.uniform_index(5);
  c.encoder_activation = acts[rng.uniform_index(3)];
  c.decoder_activation = acts[rng.uniform_index(3)];
  c.seed = rng.next_u64();
  t.beta = 5 * rng.uniform();
  return t;
}

struct SuiteResult {
  std::size_t networks = 0;
  std::size_t parameters_checked = 0;
  double worst = 0;
};

/// Tape gradients of `count` random toy networks against central differences
/// of the naive forward pass.
inline SuiteResult toy_gradient_suite(std::size_t count, std::uint64_t seed) {
  bvae::Rng rng(seed);
  SuiteResult res;
  for (std::size_t n = 0; n < count; ++n) {
    const ToyCase tc = random_toy(rng);
    bvae::BasicVae<double> model(tc.config);
    // non-zero biases so every bias path carries signal
    for (std::size_t p = 1; p < model.parameters().size(); p += 2) {
      for (auto& v : model.parameters()[p].value.values()) v = rng.uniform() - 0.5;
    }
    const std::size_t batch = 1 + rng.uniform_index(4);
    bvae::Matrixd x(batch, tc.config.input_size), noise(batch, tc.config.latent_size);
    for (auto& v : x.values()) v = rng.bernoulli(0.5) ? 1 : 0;
    for (auto& v : noise.values()) v = rng.normal();

    const auto eval = bvae::elbo_loss_with_noise(model, x, noise, tc.beta);
    for (std::size_t p = 0; p < model.parameters().size(); ++p) {
      auto& value = model.parameters()[p].value;
      bvae::Matrixd numeric(value.rows(), value.cols());
      for (std::size_t k = 0; k < value.size(); ++k) {
        const double saved = value[k];
        const double h = 1e-6;
        value[k] = saved + h;
        const double up = naive_elbo(model, x, noise, tc.beta);
        value[k] = saved - h;
        const double down = naive_elbo(model, x, noise, tc.beta);
        value[k] = saved;
        numeric[k] = (up - down) / (2 * h);
      }
      res.worst = std::max(res.worst, max_relative_error(eval.grads[p], numeric));
      res.parameters_checked += value.size();
    }
    ++res.networks;
  }
  return res;
}

}  // namespace testing_oracle
