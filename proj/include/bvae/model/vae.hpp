#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "bvae/core/optimizer.hpp"
#include "bvae/core/rng.hpp"
#include "bvae/core/tape.hpp"

namespace bvae {

enum class Activation : std::uint8_t { relu = 0, tanh = 1, sigmoid = 2, identity = 3 };

inline std::string_view to_string(Activation a) {
  switch (a) {
    case Activation::relu:
      return "relu";
    case Activation::tanh:
      return "tanh";
    case Activation::sigmoid:
      return "sigmoid";
    case Activation::identity:
      return "identity";
  }
  return "?";
}

inline Activation activation_from_string(std::string_view s) {
  for (int i = 0; i < 4; ++i) {
    if (to_string(Activation(i)) == s) return Activation(i);
  }
  throw ContractError("unknown activation '" + std::string(s) + "'");
}

struct VaeConfig {
  std::size_t input_size = 4096;
  std::size_t latent_size = 10;
  std::vector<std::size_t> encoder_hidden{1200, 1200};
  Activation encoder_activation = Activation::relu;
  std::vector<std::size_t> decoder_hidden{1200, 1200, 1200};
  Activation decoder_activation = Activation::tanh;
  double beta = 4.0;
  bool normalized_beta = false;
  OptimizerKind optimizer = OptimizerKind::adagrad;
  double learning_rate = 1e-2;
  std::size_t batch_size = 100;
  std::size_t max_steps = 100000;
  std::uint64_t seed = 1;
  // Converged when the mean loss of a window improves on the previous
  // window's by less than `convergence_tolerance` (relative).
  std::size_t convergence_window = 10000;
  double convergence_tolerance = 1e-3;
  std::size_t log_interval = 100;

  /// 4096-1200-1200-(2x10) ReLU encoder, 10-1200-1200-1200-4096 tanh decoder.
  static VaeConfig shapes_2d() { return {}; }

  /// 16384-400-205-(2x10) ReLU encoder, 10-400-8392-16384 ReLU decoder.
  static VaeConfig amoeba() {
    VaeConfig c;
    c.input_size = 16384;
    c.encoder_hidden = {400, 205};
    c.decoder_hidden = {400, 8392};
    c.decoder_activation = Activation::relu;
    c.beta = 16.38;
    return c;
  }

  void validate() const {
    if (!(beta >= 0.0)) throw ContractError("beta must be >= 0");
    if (latent_size == 0) throw ContractError("latent size must be >= 1");
    if (input_size == 0 || batch_size == 0) throw ContractError("input and batch size must be positive");
    for (auto w : encoder_hidden) {
      if (w == 0) throw ContractError("encoder widths must be positive");
    }
    for (auto w : decoder_hidden) {
      if (w == 0) throw ContractError("decoder widths must be positive");
    }
  }
};

/// KL weight applied against the per-pixel-summed reconstruction term. With
/// normalisation the user value is scaled by m / n.
inline double effective_beta(const VaeConfig& c) {
  return c.normalized_beta ? c.beta * double(c.latent_size) / double(c.input_size) : c.beta;
}

template <typename T>
T apply_activation(Activation a, T v) {
  switch (a) {
    case Activation::relu:
      return v > T{0} ? v : T{0};
    case Activation::tanh:
      return std::tanh(v);
    case Activation::sigmoid:
      return v >= T{0} ? T{1} / (T{1} + std::exp(-v)) : std::exp(v) / (T{1} + std::exp(v));
    case Activation::identity:
      return v;
  }
  return v;
}

template <typename T>
typename Tape<T>::Var apply_activation(Tape<T>& tape, Activation a, typename Tape<T>::Var v) {
  switch (a) {
    case Activation::relu:
      return tape.relu(v);
    case Activation::tanh:
      return tape.tanh(v);
    case Activation::sigmoid:
      return tape.sigmoid(v);
    case Activation::identity:
      return v;
  }
  return v;
}

/// Per-image posterior means and log-variances.
struct LatentEncoding {
  Matrixf mu;
  Matrixf logvar;

  std::size_t size() const noexcept { return mu.rows(); }
  std::size_t latent_size() const noexcept { return mu.cols(); }

  /// Closed-form KL(N(mu, sigma^2) || N(0, 1)) of one coordinate, in nats.
  static double kl(double mu, double logvar) {
    return 0.5 * (mu * mu + std::exp(logvar) - logvar - 1.0);
  }

  std::vector<double> kl_per_latent(std::size_t image) const {
    std::vector<double> out(latent_size());
    for (std::size_t j = 0; j < out.size(); ++j) out[j] = kl(mu(image, j), logvar(image, j));
    return out;
  }

  double total_kl(std::size_t image) const {
    double acc = 0;
    for (double v : kl_per_latent(image)) acc += v;
    return acc;
  }

  /// Per-latent KL averaged over all images.
  std::vector<double> mean_kl_per_latent() const {
    std::vector<double> out(latent_size(), 0.0);
    for (std::size_t i = 0; i < size(); ++i) {
      for (std::size_t j = 0; j < out.size(); ++j) out[j] += kl(mu(i, j), logvar(i, j));
    }
    for (auto& v : out) v /= double(std::max<std::size_t>(size(), 1));
    return out;
  }
};

/// Fully connected Gaussian-posterior VAE with a Bernoulli decoder.
///
/// Parameter layout (weights are fan_in x fan_out, biases 1 x fan_out):
///   encoder hidden layers, then the latent head producing [mu | log sigma^2]
///   (2m wide), then the decoder hidden layers and its output layer.
template <typename T>
class BasicVae {
 public:
  explicit BasicVae(VaeConfig config) : config_(std::move(config)), optimizer_(settings(config_)) {
    config_.validate();
    Rng rng = Rng(config_.seed).derive(0);
    std::size_t fan_in = config_.input_size;
    for (std::size_t i = 0; i < config_.encoder_hidden.size(); ++i) {
      add_layer("enc" + std::to_string(i), fan_in, config_.encoder_hidden[i], rng);
      fan_in = config_.encoder_hidden[i];
    }
    add_layer("head", fan_in, 2 * config_.latent_size, rng);
    // log sigma^2 starts at exactly 0
    auto& head_w = params_[params_.size() - 2].value;
    for (std::size_t r = 0; r < head_w.rows(); ++r) {
      for (std::size_t c = config_.latent_size; c < head_w.cols(); ++c) head_w(r, c) = T{0};
    }
    fan_in = config_.latent_size;
    for (std::size_t i = 0; i < config_.decoder_hidden.size(); ++i) {
      add_layer("dec" + std::to_string(i), fan_in, config_.decoder_hidden[i], rng);
      fan_in = config_.decoder_hidden[i];
    }
    add_layer("out", fan_in, config_.input_size, rng);
  }

  const VaeConfig& config() const noexcept { return config_; }
  VaeConfig& mutable_config() noexcept { return config_; }
  std::vector<Parameter<T>>& parameters() noexcept { return params_; }
  const std::vector<Parameter<T>>& parameters() const noexcept { return params_; }
  Optimizer<T>& optimizer() noexcept { return optimizer_; }
  const Optimizer<T>& optimizer() const noexcept { return optimizer_; }

  std::size_t encoder_hidden_layers() const noexcept { return config_.encoder_hidden.size(); }
  std::size_t head_layer() const noexcept { return encoder_hidden_layers(); }
  std::size_t layer_count() const noexcept { return params_.size() / 2; }
  const Matrix<T>& weight(std::size_t layer) const { return params_.at(2 * layer).value; }
  const Matrix<T>& bias(std::size_t layer) const { return params_.at(2 * layer + 1).value; }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += p.value.size();
    return n;
  }

  static OptimizerSettings settings(const VaeConfig& c) {
    OptimizerSettings s;
    s.kind = c.optimizer;
    s.learning_rate = c.learning_rate;
    return s;
  }

  /// Encoder output [mu | log sigma^2] for a batch of flattened images.
  Matrix<T> encoder_head(const Matrix<T>& x) const {
    if (x.cols() != config_.input_size) throw ShapeError("encode: expected " + std::to_string(config_.input_size) + " inputs");
    Matrix<T> h = x;
    for (std::size_t l = 0; l < head_layer(); ++l) h = dense(h, l, config_.encoder_activation);
    return dense(h, head_layer(), Activation::identity);
  }

  /// Decoder logits for a batch of latent codes.
  Matrix<T> decoder_logits(const Matrix<T>& z) const {
    if (z.cols() != config_.latent_size) throw ShapeError("decode: expected " + std::to_string(config_.latent_size) + " latents");
    Matrix<T> h = z;
    for (std::size_t l = head_layer() + 1; l + 1 < layer_count(); ++l) h = dense(h, l, config_.decoder_activation);
    return dense(h, layer_count() - 1, Activation::identity);
  }

 private:
  void add_layer(const std::string& name, std::size_t fan_in, std::size_t fan_out, Rng& rng) {
    const double limit = std::sqrt(6.0 / double(fan_in + fan_out));
    params_.push_back({name + ".weight", sample_uniform<T>(rng, fan_in, fan_out, -limit, limit)});
    params_.push_back({name + ".bias", Matrix<T>(1, fan_out)});
  }

  Matrix<T> dense(const Matrix<T>& x, std::size_t layer, Activation act) const {
    Matrix<T> y = matmul(x, weight(layer));
    y.map().rowwise() += bias(layer).map().row(0);
    if (act != Activation::identity) {
      for (auto& v : y.values()) v = apply_activation(act, v);
    }
    return y;
  }

  VaeConfig config_;
  std::vector<Parameter<T>> params_;
  Optimizer<T> optimizer_;
};

using VaeModel = BasicVae<float>;

/// Copies `count` flattened 0/1 images starting at `first` into a float batch.
template <typename T>
Matrix<T> to_batch(std::span<const std::uint8_t> pixels, std::size_t image_size,
                   std::span<const std::size_t> rows) {
  Matrix<T> batch(rows.size(), image_size);
  for (std::size_t r = 0; r < rows.size(); ++r) {
    const auto src = pixels.subspan(rows[r] * image_size, image_size);
    auto dst = batch.row(r);
    for (std::size_t k = 0; k < image_size; ++k) dst[k] = T(src[k]);
  }
  return batch;
}

/// Deterministic posterior parameters (no sampling).
template <typename T>
LatentEncoding encode(const BasicVae<T>& model, const Matrix<T>& images) {
  const Matrix<T> head = model.encoder_head(images);
  const std::size_t m = model.config().latent_size;
  LatentEncoding out{Matrixf(head.rows(), m), Matrixf(head.rows(), m)};
  for (std::size_t i = 0; i < head.rows(); ++i) {
    for (std::size_t j = 0; j < m; ++j) {
      out.mu(i, j) = float(head(i, j));
      out.logvar(i, j) = float(head(i, m + j));
    }
  }
  return out;
}

/// Encodes a flat 0/1 pixel buffer in chunks.
template <typename T>
LatentEncoding encode_pixels(const BasicVae<T>& model, std::span<const std::uint8_t> pixels,
                             std::size_t chunk = 256) {
  const std::size_t n = model.config().input_size;
  if (pixels.size() % n != 0) throw ShapeError("encode: pixel buffer is not a whole number of images");
  const std::size_t count = pixels.size() / n;
  const std::size_t m = model.config().latent_size;
  LatentEncoding out{Matrixf(count, m), Matrixf(count, m)};
  std::vector<std::size_t> rows;
  for (std::size_t start = 0; start < count; start += chunk) {
    rows.clear();
    for (std::size_t i = start; i < std::min(count, start + chunk); ++i) rows.push_back(i);
    const auto part = encode(model, to_batch<T>(pixels, n, rows));
    for (std::size_t r = 0; r < rows.size(); ++r) {
      std::copy(part.mu.row(r).begin(), part.mu.row(r).end(), out.mu.row(rows[r]).begin());
      std::copy(part.logvar.row(r).begin(), part.logvar.row(r).end(), out.logvar.row(rows[r]).begin());
    }
  }
  return out;
}

/// Pixel probabilities sigmoid(decoder(z)) in (0, 1).
template <typename T>
Matrix<T> decode(const BasicVae<T>& model, const Matrix<T>& z) {
  Matrix<T> p = model.decoder_logits(z);
  for (auto& v : p.values()) v = apply_activation(Activation::sigmoid, v);
  return p;
}

struct ElboValue {
  double total = 0;
  double recon = 0;
  double kl = 0;
  std::vector<double> kl_per_latent;
};

template <typename T>
struct ElboEvaluation {
  ElboValue value;
  std::vector<Matrix<T>> grads;  // aligned with model.parameters()
};

inline void require_binary(std::span<const float> xs) {
  for (float v : xs) {
    if (v != 0.0f && v != 1.0f) throw ContractError("elbo: Bernoulli decoder needs pixels in {0, 1}");
  }
}
inline void require_binary(std::span<const double> xs) {
  for (double v : xs) {
    if (v != 0.0 && v != 1.0) throw ContractError("elbo: Bernoulli decoder needs pixels in {0, 1}");
  }
}

/// Negative of the beta-weighted evidence bound, averaged over the batch:
///   mean_i [ BCE(x_i, decode(z_i)) + beta * KL(q(z|x_i) || N(0, I)) ]
/// with z_i = mu_i + exp(logvar_i / 2) * noise_i (one sample per image) and
/// the reconstruction term summed over pixels.
template <typename T>
ElboEvaluation<T> elbo_loss_with_noise(const BasicVae<T>& model, const Matrix<T>& batch,
                                       const Matrix<T>& noise, double beta_effective,
                                       bool with_grads = true) {
  require_binary(batch.values());
  const auto& cfg = model.config();
  const std::size_t m = cfg.latent_size;
  if (noise.rows() != batch.rows() || noise.cols() != m) throw ShapeError("elbo: noise must be batch x latent");
  using Var = typename Tape<T>::Var;
  Tape<T> tape;
  std::vector<Var> p;
  p.reserve(model.parameters().size());
  for (const auto& param : model.parameters()) p.push_back(tape.parameter(param.value));
  const Var x = tape.constant_ref(batch);

  Var h = x;
  for (std::size_t l = 0; l < model.head_layer(); ++l) {
    h = apply_activation(tape, cfg.encoder_activation, tape.add_bias(tape.matmul(h, p[2 * l]), p[2 * l + 1]));
  }
  const std::size_t hl = model.head_layer();
  const Var head = tape.add_bias(tape.matmul(h, p[2 * hl]), p[2 * hl + 1]);
  const Var mu = tape.slice_cols(head, 0, m);
  const Var logvar = tape.slice_cols(head, m, 2 * m);
  const Var eps = tape.constant_ref(noise);
  const Var z = tape.add(mu, tape.mul(tape.exp(tape.scale(logvar, 0.5)), eps));

  Var d = z;
  const std::size_t last = model.layer_count() - 1;
  for (std::size_t l = hl + 1; l < last; ++l) {
    d = apply_activation(tape, cfg.decoder_activation, tape.add_bias(tape.matmul(d, p[2 * l]), p[2 * l + 1]));
  }
  const Var logits = tape.add_bias(tape.matmul(d, p[2 * last]), p[2 * last + 1]);

  const double inv_batch = 1.0 / double(batch.rows());
  const Var recon = tape.scale(tape.sigmoid_cross_entropy(logits, x), inv_batch);
  const Var kl_terms = tape.add_scalar(tape.sub(tape.add(tape.square(mu), tape.exp(logvar)), logvar), -1.0);
  const Var kl = tape.scale(tape.sum(kl_terms), 0.5 * inv_batch);
  const Var total = tape.add(recon, tape.scale(kl, beta_effective));

  ElboEvaluation<T> out;
  out.value.recon = double(tape.value(recon)[0]);
  out.value.kl = double(tape.value(kl)[0]);
  out.value.total = double(tape.value(total)[0]);
  const auto& mu_v = tape.value(mu);
  const auto& lv_v = tape.value(logvar);
  out.value.kl_per_latent.assign(m, 0.0);
  for (std::size_t i = 0; i < mu_v.rows(); ++i) {
    for (std::size_t j = 0; j < m; ++j) out.value.kl_per_latent[j] += LatentEncoding::kl(mu_v(i, j), lv_v(i, j));
  }
  for (auto& v : out.value.kl_per_latent) v *= inv_batch;
  if (with_grads) {
    tape.backward(total);
    out.grads.reserve(p.size());
    for (auto v : p) out.grads.push_back(tape.take_grad(v));
  }
  return out;
}

template <typename T>
ElboEvaluation<T> elbo_loss(const BasicVae<T>& model, const Matrix<T>& batch, Rng& rng,
                            double beta_effective, bool with_grads = true) {
  const Matrix<T> noise = sample_standard_normal<T>(rng, batch.rows(), model.config().latent_size);
  return elbo_loss_with_noise(model, batch, noise, beta_effective, with_grads);
}

}  // namespace bvae
