#pragma once

#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <vector>

#include "bvae/core/optimizer.hpp"
#include "bvae/core/tape.hpp"
#include "bvae/data/dataset.hpp"
#include "bvae/io/binary.hpp"
#include "bvae/model/vae.hpp"

namespace bvae {

/// Affine map between latent spaces, row-vector convention:
/// z_new = z_orig * weight + bias.
struct AlignmentMap {
  Matrixf weight;  // m x m
  Matrixf bias;    // 1 x m

  std::size_t latent_size() const noexcept { return weight.rows(); }
  std::size_t parameter_count() const noexcept { return weight.size() + bias.size(); }

  Matrixf apply(const Matrixf& z) const {
    Matrixf out = matmul(z, weight);
    out.map().rowwise() += bias.map().row(0);
    return out;
  }
};

struct AlignmentSettings {
  double split = 0.5;  // fraction of the new dataset used for fitting
  double learning_rate = 1e-2;
  std::size_t batch_size = 100;
  std::size_t max_steps = 200000;
  std::size_t convergence_window = 10000;
  double convergence_tolerance = 1e-3;
  std::uint64_t seed = 1;
};

struct AlignmentFit {
  AlignmentMap map;
  std::vector<std::size_t> fit_rows;
  std::vector<std::size_t> eval_rows;
  std::size_t steps = 0;
  bool converged = false;
};

/// Seeded permutation of 0..n-1 split into (first `fraction`, rest).
inline std::pair<std::vector<std::size_t>, std::vector<std::size_t>> split_rows(std::size_t n, double fraction,
                                                                                std::uint64_t seed) {
  if (!(fraction > 0.0 && fraction < 1.0)) throw ContractError("split fraction must lie in (0, 1)");
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(seed);
  for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[rng.uniform_index(i)]);
  const std::size_t cut = std::size_t(std::floor(double(n) * fraction));
  std::vector<std::size_t> a(order.begin(), order.begin() + std::ptrdiff_t(cut));
  std::vector<std::size_t> b(order.begin() + std::ptrdiff_t(cut), order.end());
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  return {a, b};
}

/// Minimises mean_i smooth_l1(z_in_i * W + b, z_out_i) over `rows` with
/// adagrad, starting from W = 0, b = 0.
inline AlignmentFit fit_alignment_codes(const Matrixf& z_in, const Matrixf& z_out, std::vector<std::size_t> fit_rows,
                                        const AlignmentSettings& s = {}) {
  if (z_in.rows() != z_out.rows()) throw ShapeError("alignment: code counts differ");
  if (z_in.cols() != z_out.cols()) throw ShapeError("alignment: latent sizes differ");
  if (fit_rows.empty()) throw ContractError("alignment: no fitting rows");
  const std::size_t m = z_in.cols();
  std::vector<Parameter<float>> params{{"align.weight", Matrixf(m, m)}, {"align.bias", Matrixf(1, m)}};
  Optimizer<float> opt({OptimizerKind::adagrad, s.learning_rate});
  const Rng base(s.seed);
  Matrixf x(s.batch_size, m), y(s.batch_size, m);
  double window_sum = 0.0, previous = NAN;
  AlignmentFit fit;
  std::size_t step = 0;
  for (; step < s.max_steps; ++step) {
    Rng rng = base.derive(step);
    for (std::size_t r = 0; r < s.batch_size; ++r) {
      const std::size_t i = fit_rows[rng.uniform_index(fit_rows.size())];
      std::copy(z_in.row(i).begin(), z_in.row(i).end(), x.row(r).begin());
      std::copy(z_out.row(i).begin(), z_out.row(i).end(), y.row(r).begin());
    }
    Tape<float> t;
    auto w = t.parameter(params[0].value);
    auto b = t.parameter(params[1].value);
    auto pred = t.add_bias(t.matmul(t.constant_ref(x), w), b);
    auto loss = t.scale(t.smooth_l1(pred, t.constant_ref(y)), 1.0 / double(s.batch_size));
    const double value = t.value(loss)[0];
    if (!std::isfinite(value)) throw NumericalError("alignment: non-finite loss at step " + std::to_string(step));
    t.backward(loss);
    const std::vector<Matrixf> grads{t.take_grad(w), t.take_grad(b)};
    opt.step(params, grads);
    window_sum += value;
    if ((step + 1) % s.convergence_window == 0) {
      const double current = window_sum / double(s.convergence_window);
      window_sum = 0.0;
      if (std::isfinite(previous) && previous - current < s.convergence_tolerance * std::abs(previous)) {
        fit.converged = true;
        ++step;
        break;
      }
      previous = current;
    }
  }
  fit.steps = step;
  fit.map = {std::move(params[0].value), std::move(params[1].value)};
  fit.fit_rows = std::move(fit_rows);
  return fit;
}

/// Fits G: z_orig -> z_new on posterior means of a seeded `split` fraction of
/// the new dataset; the remaining rows are returned for evaluation.
inline AlignmentFit fit_alignment(const VaeModel& enc_orig, const VaeModel& enc_new, const ShapesDataset& new_data,
                                  const AlignmentSettings& s = {}) {
  if (enc_orig.config().latent_size != enc_new.config().latent_size) {
    throw ShapeError("alignment: encoders have different latent sizes");
  }
  auto [fit_rows, eval_rows] = split_rows(new_data.size(), s.split, s.seed);
  const Matrixf z_in = encode_pixels(enc_orig, new_data.pixels()).mu;
  const Matrixf z_out = encode_pixels(enc_new, new_data.pixels()).mu;
  AlignmentFit fit = fit_alignment_codes(z_in, z_out, std::move(fit_rows), s);
  fit.eval_rows = std::move(eval_rows);
  return fit;
}

/// Mean per-sample smooth-L1 residual of `predict` on `rows`.
inline double alignment_residual(const Matrixf& predicted, const Matrixf& target, std::span<const std::size_t> rows) {
  if (rows.empty()) throw ContractError("alignment_residual: no rows");
  double acc = 0.0;
  for (auto i : rows) {
    for (std::size_t j = 0; j < target.cols(); ++j) {
      const double d = std::abs(double(predicted(i, j)) - double(target(i, j)));
      acc += d < 1.0 ? 0.5 * d * d : d - 0.5;
    }
  }
  return acc / double(rows.size());
}

struct SpliceResult {
  double mean_distance = 0;
  std::vector<double> distances;  // per evaluated image
  std::vector<std::size_t> rows;
};

/// x_hat = threshold(dec_new(G(enc_orig(x))), 0.5) for each row, scored by
/// Hamming distance divided by the foreground of the original image.
inline SpliceResult splice_eval(const VaeModel& enc_orig, const AlignmentMap& g, const VaeModel& dec_new,
                                const ShapesDataset& data, std::span<const std::size_t> rows,
                                std::vector<Image>* reconstructions = nullptr, std::size_t chunk = 256) {
  const std::size_t n = data.image_size();
  if (enc_orig.config().input_size != n || dec_new.config().input_size != n) {
    throw ShapeError("splice: model input size does not match the images");
  }
  if (g.latent_size() != enc_orig.config().latent_size || g.weight.cols() != dec_new.config().latent_size) {
    throw ShapeError("splice: alignment does not match the latent sizes");
  }
  SpliceResult out;
  out.rows.assign(rows.begin(), rows.end());
  std::vector<std::uint8_t> recon(n);
  for (std::size_t begin = 0; begin < rows.size(); begin += chunk) {
    const std::size_t len = std::min(chunk, rows.size() - begin);
    const auto part = rows.subspan(begin, len);
    const Matrixf x = to_batch<float>(data.pixels(), n, part);
    const Matrixf p = decode(dec_new, g.apply(encode(enc_orig, x).mu));
    for (std::size_t r = 0; r < len; ++r) {
      const auto probs = p.row(r);
      for (std::size_t k = 0; k < n; ++k) recon[k] = probs[k] >= 0.5f ? 1 : 0;
      out.distances.push_back(reference_normalized_hamming(data.image(part[r]), recon));
      if (reconstructions) {
        Image img(data.resolution(), data.resolution());
        img.pixels = recon;
        reconstructions->push_back(std::move(img));
      }
    }
  }
  if (out.distances.empty()) throw ContractError("splice: no rows to evaluate");
  double acc = 0.0;
  for (double d : out.distances) acc += d;
  out.mean_distance = acc / double(out.distances.size());
  return out;
}

// ALGN file, little endian: "ALGN" | m u32 | weight f32[m*m] row-major
// (row-vector convention above) | bias f32[m]
inline void save_alignment(const std::filesystem::path& path, const AlignmentMap& g) {
  if (g.weight.rows() != g.weight.cols()) throw ShapeError("save_alignment: map is not square");
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw DataError("cannot open " + path.string() + " for writing");
  io::write_magic(os, "ALGN");
  io::write_le<std::uint32_t>(os, std::uint32_t(g.latent_size()));
  io::write_le_array(os, g.weight.data(), g.weight.size());
  io::write_le_array(os, g.bias.data(), g.bias.size());
  if (!os) throw DataError("write failed: " + path.string());
}

inline AlignmentMap load_alignment(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open alignment " + path.string());
  io::expect_magic(is, "ALGN", "alignment");
  const auto m = io::read_le<std::uint32_t>(is);
  if (m == 0 || m > 65536) throw DataError("alignment: bad latent size");
  AlignmentMap g{Matrixf(m, m), Matrixf(1, m)};
  io::read_le_array(is, g.weight.data(), g.weight.size());
  io::read_le_array(is, g.bias.data(), g.bias.size());
  return g;
}

}  // namespace bvae
