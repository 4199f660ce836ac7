#pragma once

#include <cmath>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "bvae/io/text.hpp"
#include "bvae/model/vae.hpp"

namespace bvae {

/// A read-only view of N flattened 0/1 images.
struct ImageSet {
  std::span<const std::uint8_t> pixels;
  std::size_t image_size = 0;

  std::size_t size() const { return image_size == 0 ? 0 : pixels.size() / image_size; }
};

struct TrainingRecord {
  std::size_t step = 0;
  double recon = 0;
  double kl = 0;
  double total = 0;
  std::vector<double> kl_per_latent;
};

struct TrainingTrace {
  std::vector<TrainingRecord> records;
  std::size_t steps = 0;
  bool converged = false;
};

class TrainingDiverged : public NumericalError {
 public:
  TrainingDiverged(const std::string& what, TrainingTrace trace)
      : NumericalError(what), trace_(std::move(trace)) {}
  const TrainingTrace& trace() const noexcept { return trace_; }

 private:
  TrainingTrace trace_;
};

struct TrainHooks {
  std::function<void(const TrainingRecord&)> on_record;
  // Called every `checkpoint_interval` steps (0 disables).
  std::size_t checkpoint_interval = 0;
  std::function<void(const VaeModel&, std::size_t step)> on_checkpoint;
};

/// Noise and batch indices for step `step` come from a stream derived from
/// (seed, step), so a run resumed from a checkpoint continues bit-identically.
inline Rng step_rng(std::uint64_t seed, std::size_t step) { return Rng(seed).derive(1'000'000 + step); }

/// Minibatch training of the model until convergence or `max_steps`. Batches
/// are drawn uniformly with replacement. Steps already recorded in the
/// optimizer are skipped, so a restored model resumes where it stopped.
inline TrainingTrace train(VaeModel& model, ImageSet data, const TrainHooks& hooks = {}) {
  const VaeConfig& cfg = model.config();
  if (data.size() == 0) throw ContractError("train: dataset is empty");
  if (data.image_size != cfg.input_size) {
    throw ShapeError("train: images have " + std::to_string(data.image_size) + " pixels, model expects " +
                     std::to_string(cfg.input_size));
  }
  const double beta = effective_beta(cfg);
  TrainingTrace trace;
  TrainingRecord acc;
  std::size_t acc_n = 0;
  double window_sum = 0.0, previous_window = std::nan("");
  std::vector<std::size_t> rows(cfg.batch_size);

  std::size_t step = model.optimizer().step_count();
  for (; step < cfg.max_steps; ++step) {
    Rng rng = step_rng(cfg.seed, step);
    for (auto& r : rows) r = rng.uniform_index(data.size());
    const Matrixf batch = to_batch<float>(data.pixels, data.image_size, rows);
    auto eval = elbo_loss(model, batch, rng, beta);
    if (!std::isfinite(eval.value.total)) {
      throw TrainingDiverged("training diverged: non-finite loss at step " + std::to_string(step), trace);
    }
    model.optimizer().step(model.parameters(), eval.grads);

    if (acc.kl_per_latent.empty()) acc.kl_per_latent.assign(cfg.latent_size, 0.0);
    acc.recon += eval.value.recon;
    acc.kl += eval.value.kl;
    acc.total += eval.value.total;
    for (std::size_t j = 0; j < cfg.latent_size; ++j) acc.kl_per_latent[j] += eval.value.kl_per_latent[j];
    ++acc_n;
    if (acc_n == cfg.log_interval || step + 1 == cfg.max_steps) {
      TrainingRecord rec;
      rec.step = step + 1;
      rec.recon = acc.recon / double(acc_n);
      rec.kl = acc.kl / double(acc_n);
      rec.total = acc.total / double(acc_n);
      for (double v : acc.kl_per_latent) rec.kl_per_latent.push_back(v / double(acc_n));
      trace.records.push_back(rec);
      if (hooks.on_record) hooks.on_record(rec);
      acc = {};
      acc_n = 0;
    }
    if (hooks.checkpoint_interval && hooks.on_checkpoint && (step + 1) % hooks.checkpoint_interval == 0) {
      hooks.on_checkpoint(model, step + 1);
    }

    window_sum += eval.value.total;
    if ((step + 1) % cfg.convergence_window == 0) {
      const double current = window_sum / double(cfg.convergence_window);
      window_sum = 0.0;
      if (std::isfinite(previous_window) &&
          previous_window - current < cfg.convergence_tolerance * std::abs(previous_window)) {
        trace.converged = true;
        ++step;
        break;
      }
      previous_window = current;
    }
  }
  trace.steps = step;
  return trace;
}

inline void write_trace_csv(const std::filesystem::path& path, const TrainingTrace& trace, std::size_t latent_size) {
  auto os = io::open_out(path);
  os << "step,recon,kl,total";
  for (std::size_t j = 0; j < latent_size; ++j) os << ",kl_" << j;
  os << '\n';
  for (const auto& r : trace.records) {
    os << r.step << ',' << io::fmt_double(r.recon) << ',' << io::fmt_double(r.kl) << ',' << io::fmt_double(r.total);
    for (double v : r.kl_per_latent) os << ',' << io::fmt_double(v);
    os << '\n';
  }
}

/// Number of latents whose mean KL exceeds `threshold` nats.
inline std::size_t informative_latents(std::span<const double> kl_per_latent, double threshold = 0.05) {
  std::size_t n = 0;
  for (double v : kl_per_latent) n += v > threshold;
  return n;
}

}  // namespace bvae
