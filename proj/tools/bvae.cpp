// bvae: dataset generation, training, analysis and evaluation from the command line.

#include <CLI11.hpp>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "bvae/bvae.hpp"
#include "bvae/io/digest.hpp"

namespace fs = std::filesystem;
using namespace bvae;

namespace {

/// Bad option values that CLI11 cannot see (exit code 1).
class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------------------
// run directory

class Run {
 public:
  Run(fs::path dir, std::string command, const std::string& resolved_config, const std::vector<fs::path>& inputs)
      : dir_(std::move(dir)), command_(std::move(command)) {
    for (const auto& in : inputs) {
      if (in.empty()) continue;
      const auto a = fs::weakly_canonical(in), b = fs::weakly_canonical(dir_);
      const auto rel = a.lexically_relative(b);
      if (!rel.empty() && *rel.begin() != "..") {
        throw UsageError("input " + in.string() + " lies inside the run directory " + dir_.string());
      }
    }
    fs::remove_all(dir_);
    fs::create_directories(dir_);
    io::open_out(dir_ / "config.resolved") << resolved_config;
    log_.open(dir_ / "run.log", std::ios::trunc);
    if (!log_) throw DataError("cannot open " + (dir_ / "run.log").string());
  }

  const fs::path& dir() const { return dir_; }
  fs::path operator/(const std::string& rel) const { return dir_ / rel; }

  /// Run logs hold only deterministic content so reruns hash identically.
  void log(const std::string& line, bool echo = true) {
    log_ << line << '\n';
    log_.flush();
    if (echo) std::cout << line << '\n';
  }

  /// Writes manifest.txt: status, then "sha256  bytes  path" per file.
  void finish(bool complete, const std::string& error = {}) {
    log_.close();
    std::vector<std::string> files;
    for (const auto& e : fs::recursive_directory_iterator(dir_)) {
      if (!e.is_regular_file()) continue;
      const auto rel = fs::relative(e.path(), dir_).generic_string();
      if (rel == "manifest.txt") continue;
      files.push_back(rel);
    }
    std::sort(files.begin(), files.end());
    auto os = io::open_out(dir_ / "manifest.txt");
    os << "command: " << command_ << '\n';
    os << "status: " << (complete ? "complete" : "incomplete") << '\n';
    if (!complete) os << "error: " << error << '\n';
    for (const auto& f : files) {
      os << io::sha256_file(dir_ / f) << "  " << fs::file_size(dir_ / f) << "  " << f << '\n';
    }
  }

 private:
  fs::path dir_;
  std::string command_;
  std::ofstream log_;
};

std::string join(const std::vector<std::string>& parts, const std::string& sep) {
  std::string s;
  for (std::size_t i = 0; i < parts.size(); ++i) s += (i ? sep : "") + parts[i];
  return s;
}

std::string kl_string(std::span<const double> kl) {
  std::vector<std::string> parts;
  for (double v : kl) parts.push_back(io::fmt_double(std::round(v * 1e4) / 1e4));
  return join(parts, " ");
}

Image grey(const Image& binary) {
  Image g = binary;
  for (auto& p : g.pixels) p = p ? 255 : 0;
  return g;
}

// ---------------------------------------------------------------------------
// option groups

Strides parse_strides(const std::string& s) {
  if (s == "desk") return kDeskStrides;
  if (s == "full") return {1, 1, 1, 1, 1};
  const auto parts = io::split(s, ',');
  if (parts.size() != kFactorCount) throw UsageError("--strides needs desk, full or five comma-separated integers");
  Strides out{};
  for (std::size_t i = 0; i < kFactorCount; ++i) {
    try {
      out[i] = std::stoul(parts[i]);
    } catch (const std::exception&) {
      throw UsageError("--strides: '" + parts[i] + "' is not an integer");
    }
    if (out[i] == 0) throw UsageError("--strides: strides must be >= 1");
  }
  return out;
}

std::vector<ShapeKind> parse_shapes(const std::string& s) {
  if (s == "original") return FactorGrid::original_shapes();
  if (s == "novel") return FactorGrid::novel_shapes();
  try {
    return io::parse_shape_list(s);
  } catch (const ContractError& e) {
    throw UsageError(std::string("--shapes: ") + e.what());
  }
}

struct GridOptions {
  std::string dataset;
  std::string shapes = "original";
  std::string strides = "desk";
  std::string predicate = "none";
  std::string selection = "retained";

  void add(CLI::App* c, const std::string& default_shapes = "original", const std::string& default_predicate = "none") {
    shapes = default_shapes;
    predicate = default_predicate;
    c->add_option("--dataset", dataset, "Dataset directory written by gen-shapes (overrides the grid options)");
    c->add_option("--shapes", shapes, "original, novel or a comma-separated shape list");
    c->add_option("--strides", strides, "desk, full or five strides (shape,scale,rotation,x,y)");
    c->add_option("--predicate", predicate, "Holdout predicate")->check(CLI::IsMember({"none", "zero-shot"}));
    c->add_option("--selection", selection, "Keep retained or held-out combinations")
        ->check(CLI::IsMember({"retained", "held-out"}));
  }

  FactorGrid grid() const { return FactorGrid::standard(parse_shapes(shapes)); }
  Strides stride_values() const { return parse_strides(strides); }
  HoldoutPredicate holdout() const { return io::predicate_by_id(predicate); }
  Selection select() const { return selection == "held-out" ? Selection::held_out : Selection::retained; }

  ShapesDataset load() const {
    if (!dataset.empty()) return io::load_dataset(dataset);
    return generate_grid_dataset(grid(), stride_values(), holdout(), select());
  }

  std::string describe() const {
    if (!dataset.empty()) return "dataset " + dataset;
    return "shapes " + shape_list(parse_shapes(shapes)) + ", strides " + strides + ", predicate " + predicate + ", " +
           selection;
  }
};

struct AmoebaOptions {
  bool enabled = false;
  std::size_t s_values = 64;
  std::size_t t_values = 64;

  void add(CLI::App* c) {
    c->add_flag("--amoeba", enabled, "Use the amoeba dataset (128 x 128)");
    c->add_option("--s-values", s_values, "Amoeba samples of the first factor");
    c->add_option("--t-values", t_values, "Amoeba samples of the second factor");
  }
};

/// Images for training or analysis: a shapes dataset or raw amoeba frames.
struct ImageData {
  std::optional<ShapesDataset> shapes;
  std::vector<std::uint8_t> raw;
  std::size_t image_size = 0;

  std::span<const std::uint8_t> pixels() const { return shapes ? shapes->pixels() : std::span<const std::uint8_t>(raw); }
  std::size_t size() const { return image_size ? pixels().size() / image_size : 0; }
  std::span<const std::uint8_t> image(std::size_t i) const { return pixels().subspan(i * image_size, image_size); }
};

ImageData load_images(const GridOptions& g, const AmoebaOptions& a) {
  ImageData d;
  if (!a.enabled) {
    d.shapes = g.load();
    d.image_size = d.shapes->image_size();
    return d;
  }
  if (!g.dataset.empty()) {
    io::TensorHeader h;
    d.raw = io::read_u8_tensor(fs::path(g.dataset) / "images.tnsr", &h);
    if (h.dims.size() != 3 || h.dims[1] != 128 || h.dims[2] != 128) throw DataError("amoeba images must be N x 128 x 128");
    d.image_size = 128 * 128;
    return d;
  }
  auto ds = generate_amoeba(128, {a.s_values, a.t_values});
  d.image_size = ds.image_size();
  d.raw = std::move(ds.pixels);
  return d;
}

struct TrainOptions {
  std::string arch = "shapes";
  double beta = 4.0;
  bool normalized_beta = false;
  std::size_t latents = 10;
  std::string optimizer = "adagrad";
  double learning_rate = 1e-2;
  std::size_t batch = 100;
  std::size_t steps = 100000;
  std::uint64_t seed = 1;
  std::size_t window = 10000;
  double tolerance = 1e-3;
  std::size_t log_interval = 1000;

  void add(CLI::App* c) {
    c->add_option("--arch", arch, "Architecture")->check(CLI::IsMember({"shapes", "amoeba"}));
    c->add_option("--beta", beta, "KL weight")->check(CLI::NonNegativeNumber);
    c->add_flag("--normalized-beta", normalized_beta, "Scale beta by latents / pixels");
    c->add_option("--latents", latents, "Latent size")->check(CLI::PositiveNumber);
    c->add_option("--optimizer", optimizer, "adagrad, adam or rmsprop")
        ->check(CLI::IsMember({"adagrad", "adam", "rmsprop"}));
    c->add_option("--lr", learning_rate, "Learning rate")->check(CLI::PositiveNumber);
    c->add_option("--batch", batch, "Batch size")->check(CLI::PositiveNumber);
    c->add_option("--steps", steps, "Maximum optimizer steps (0 saves the untrained model)");
    c->add_option("--seed", seed, "Initialisation and sampling seed");
    c->add_option("--window", window, "Convergence window in steps")->check(CLI::PositiveNumber);
    c->add_option("--tolerance", tolerance, "Relative window improvement below which training stops");
    c->add_option("--log-interval", log_interval, "Steps per trace record")->check(CLI::PositiveNumber);
  }

  VaeConfig config() const {
    VaeConfig c = arch == "amoeba" ? VaeConfig::amoeba() : VaeConfig::shapes_2d();
    c.beta = beta;
    c.normalized_beta = normalized_beta;
    c.latent_size = latents;
    c.optimizer = optimizer_kind_from_string(optimizer);
    c.learning_rate = learning_rate;
    c.batch_size = batch;
    c.max_steps = steps;
    c.seed = seed;
    c.convergence_window = window;
    c.convergence_tolerance = tolerance;
    c.log_interval = log_interval;
    c.validate();
    return c;
  }
};

struct MetricOptions {
  std::size_t train_samples = 30000;
  std::size_t test_samples = 5000;
  std::uint64_t seed = 1;
  double noise = 0.0;
  bool held_out_only = false;
  double classifier_lr = 1e-2;
  std::size_t classifier_batch = 100;
  std::size_t classifier_max_steps = 200000;
  std::size_t classifier_window = 10000;
  double classifier_tolerance = 1e-3;

  void add(CLI::App* c, bool with_held_out = true) {
    c->add_option("--train-samples", train_samples, "Classifier training pairs")->check(CLI::PositiveNumber);
    c->add_option("--test-samples", test_samples, "Classifier test pairs")->check(CLI::PositiveNumber);
    c->add_option("--metric-seed", seed, "Pair sampling and classifier seed");
    c->add_option("--noise", noise, "Test-time pixel flip probability")->check(CLI::Range(0.0, 1.0));
    if (with_held_out) c->add_flag("--held-out-only", held_out_only, "Draw pairs from held-out combinations only");
    c->add_option("--classifier-lr", classifier_lr, "Classifier learning rate")->check(CLI::PositiveNumber);
    c->add_option("--classifier-batch", classifier_batch, "Classifier batch size")->check(CLI::PositiveNumber);
    c->add_option("--classifier-max-steps", classifier_max_steps, "Classifier step cap")->check(CLI::PositiveNumber);
    c->add_option("--classifier-window", classifier_window, "Classifier convergence window")
        ->check(CLI::PositiveNumber);
    c->add_option("--classifier-tolerance", classifier_tolerance, "Classifier convergence tolerance");
  }

  MetricSettings settings() const {
    MetricSettings s;
    s.train_samples = train_samples;
    s.test_samples = test_samples;
    s.classifier.learning_rate = classifier_lr;
    s.classifier.batch_size = classifier_batch;
    s.classifier.max_steps = classifier_max_steps;
    s.classifier.convergence_window = classifier_window;
    s.classifier.convergence_tolerance = classifier_tolerance;
    return s;
  }

  SamplingDomain domain(const GridOptions& g) const {
    if (!g.dataset.empty()) throw UsageError("the metric renders its own pairs; use grid options instead of --dataset");
    SamplingDomain d{g.grid(), g.stride_values(), g.holdout(), held_out_only, noise};
    return d;
  }
};

struct RepresentationOptions {
  std::string kind = "vae";
  std::string model;
  std::string projection;

  void add(CLI::App* c) {
    c->add_option("--representation", kind, "vae, pca, ica, pixels or ground-truth")
        ->check(CLI::IsMember({"vae", "pca", "ica", "pixels", "ground-truth"}));
    c->add_option("--model", model, "Checkpoint for --representation vae");
    c->add_option("--projection", projection, "Projection file for pca or ica");
  }

  Representation build(std::size_t image_size) const {
    switch (representation_from_string(kind)) {
      case RepresentationKind::vae: {
        if (model.empty()) throw UsageError("--representation vae needs --model");
        auto m = std::make_shared<const VaeModel>(load_checkpoint(model));
        return vae_representation(m);
      }
      case RepresentationKind::pca:
      case RepresentationKind::ica: {
        if (projection.empty()) throw UsageError("--representation " + kind + " needs --projection");
        return projection_representation(kind, std::make_shared<const LinearProjection>(load_projection(projection)));
      }
      case RepresentationKind::pixels:
        return pixels_representation(image_size);
      case RepresentationKind::ground_truth:
        return ground_truth_representation();
    }
    throw UsageError("unknown representation");
  }

  std::vector<fs::path> inputs() const { return {model, projection}; }
};

void write_metric_detail(const fs::path& path, const std::string& name, const MetricResult& r) {
  auto os = io::open_out(path);
  os << "representation,accuracy,train_accuracy,train_degenerate,test_degenerate,classifier_steps,converged\n";
  os << name << ',' << io::fmt_double(r.accuracy) << ',' << io::fmt_double(r.train_accuracy) << ','
     << r.train_degenerate << ',' << r.test_degenerate << ',' << r.classifier_steps << ',' << (r.converged ? 1 : 0)
     << '\n';
}

void log_metric(Run& run, const MetricResult& r) {
  run.log("accuracy " + io::fmt_double(r.accuracy) + " (train " + io::fmt_double(r.train_accuracy) +
          ", degenerate " + std::to_string(r.train_degenerate) + "/" + std::to_string(r.test_degenerate) +
          ", classifier steps " + std::to_string(r.classifier_steps) + (r.converged ? ", converged)" : ", step cap)"));
}

std::vector<double> dataset_kl(const VaeModel& model, const ImageData& data) {
  return encode_pixels(model, data.pixels()).mean_kl_per_latent();
}

void write_latent_csv(const fs::path& path, std::span<const double> kl) {
  auto os = io::open_out(path);
  os << "latent,kl,rank,informative\n";
  const auto order = latent_order(kl);
  std::vector<std::size_t> rank(kl.size());
  for (std::size_t r = 0; r < order.size(); ++r) rank[order[r]] = r;
  for (std::size_t j = 0; j < kl.size(); ++j) {
    os << j << ',' << io::fmt_double(kl[j]) << ',' << rank[j] << ',' << (kl[j] > 0.05 ? 1 : 0) << '\n';
  }
}

// ---------------------------------------------------------------------------
// commands

struct GenShapes {
  GridOptions grid;
  bool full = false;
  std::size_t preview = 64;

  void add(CLI::App* c) {
    grid.add(c);
    c->add_flag("--full", full, "Generate the full grid (same as --strides full)");
    c->add_option("--preview", preview, "Images in preview.pgm (0 disables)");
  }

  void run(Run& r) {
    if (!grid.dataset.empty()) throw UsageError("gen-shapes does not take --dataset");
    const FactorGrid g = grid.grid();
    const Strides strides = full ? Strides{1, 1, 1, 1, 1} : grid.stride_values();
    const auto p = grid.holdout();
    const std::size_t n = count_combinations(g, strides, p, grid.select());
    if (n == 0) throw ContractError("no combinations selected");
    r.log("generating " + std::to_string(n) + " images (" + grid.describe() + (full ? ", full" : "") + ")");
    const auto res = std::uint32_t(g.resolution);
    io::TensorWriter images(r / "images.tnsr", {io::DType::u8, {std::uint32_t(n), res, res}});
    auto csv = io::open_out(r / "factors.csv");
    csv << io::kFactorCsvHeader << '\n';
    std::vector<Image> tiles;
    std::size_t row = 0;
    stream_grid_images(g, strides, p, grid.select(), [&](const FactorCoordinates& c, const Image& img) {
      images.write(img.pixels);
      io::write_factor_row(csv, row++, c);
      if (tiles.size() < preview) tiles.push_back(grey(img));
    });
    images.close();
    csv.close();
    const DatasetProvenance prov{shape_list(g.shapes), strides, p.id, grid.select()};
    io::open_out(r / "dataset.json") << io::provenance_json(prov, g.resolution).dump(2) << '\n';
    if (!tiles.empty()) io::write_pgm(r / "preview.pgm", io::montage(tiles, 8), false);
    r.log("wrote images.tnsr (" + std::to_string(n) + " x " + std::to_string(res) + " x " + std::to_string(res) + ")");
  }
};

struct GenAmoeba {
  AmoebaOptions amoeba;
  std::size_t preview = 16;

  void add(CLI::App* c) {
    c->add_option("--s-values", amoeba.s_values, "Samples of the first factor");
    c->add_option("--t-values", amoeba.t_values, "Samples of the second factor");
    c->add_option("--preview", preview, "Images in preview.pgm (0 disables)");
  }

  void run(Run& r) {
    const auto ds = generate_amoeba(128, {amoeba.s_values, amoeba.t_values});
    io::save_amoeba(r.dir(), ds);
    std::vector<Image> tiles;
    const std::size_t step = std::max<std::size_t>(1, ds.size() / std::max<std::size_t>(1, preview));
    for (std::size_t i = 0; i < ds.size() && tiles.size() < preview; i += step) {
      Image img(128, 128);
      std::copy(ds.image(i).begin(), ds.image(i).end(), img.pixels.begin());
      tiles.push_back(grey(img));
    }
    if (!tiles.empty()) io::write_pgm(r / "preview.pgm", io::montage(tiles, 4), false);
    r.log("wrote " + std::to_string(ds.size()) + " amoeba images");
  }
};

struct Continuity {
  GridOptions grid;

  void add(CLI::App* c) { grid.add(c); }

  void run(Run& r) {
    const auto ds = grid.load();
    const double score = continuity_score(ds);
    const auto& p = ds.provenance();
    auto os = io::open_out(r / "continuity.csv");
    os << "shapes,strides,predicate,selection,images,continuity\n";
    std::vector<std::string> s;
    for (auto v : p.strides) s.push_back(std::to_string(v));
    os << '"' << p.shapes << "\"," << join(s, ":") << ',' << p.predicate << ','
       << (p.selection == Selection::retained ? "retained" : "held-out") << ',' << ds.size() << ','
       << io::fmt_double(score) << '\n';
    r.log("continuity " + io::fmt_double(score) + " over " + std::to_string(ds.size()) + " images");
  }

  std::vector<fs::path> inputs() const { return {grid.dataset}; }
};

struct Train {
  GridOptions grid;
  AmoebaOptions amoeba;
  TrainOptions train;
  std::string resume;
  std::size_t checkpoint_interval = 0;

  void add(CLI::App* c) {
    grid.add(c);
    amoeba.add(c);
    train.add(c);
    c->add_option("--resume", resume, "Continue from a checkpoint (its weights and optimizer state)");
    c->add_option("--checkpoint-interval", checkpoint_interval, "Steps between checkpoint.bvae saves (0 disables)");
  }

  void run(Run& r) {
    AmoebaOptions a = amoeba;
    a.enabled = a.enabled || train.arch == "amoeba";
    TrainOptions t = train;
    if (a.enabled) t.arch = "amoeba";
    const VaeConfig cfg = t.config();
    const auto data = load_images(grid, a);
    r.log("training on " + std::to_string(data.size()) + " images, beta " + io::fmt_double(cfg.beta) +
          (cfg.normalized_beta ? " (normalized)" : "") + ", effective " + io::fmt_double(effective_beta(cfg)) +
          ", max steps " + std::to_string(cfg.max_steps));
    VaeModel model(cfg);
    if (!resume.empty()) {
      model = load_checkpoint(resume);
      const auto& old = model.config();
      if (old.input_size != cfg.input_size || old.latent_size != cfg.latent_size) {
        throw DataError("--resume: checkpoint architecture does not match the options");
      }
      model.mutable_config() = cfg;
      r.log("resumed at step " + std::to_string(model.optimizer().step_count()));
    }
    TrainHooks hooks;
    hooks.on_record = [&](const TrainingRecord& rec) {
      r.log("step " + std::to_string(rec.step) + " recon " + io::fmt_double(rec.recon) + " kl " + io::fmt_double(rec.kl));
    };
    hooks.checkpoint_interval = checkpoint_interval;
    hooks.on_checkpoint = [&](const VaeModel& m, std::size_t) { save_checkpoint(r / "checkpoint.bvae", m); };
    TrainingTrace trace;
    try {
      trace = bvae::train(model, ImageSet{data.pixels(), data.image_size}, hooks);
    } catch (const TrainingDiverged& e) {
      write_trace_csv(r / "trace.csv", e.trace(), cfg.latent_size);
      throw;
    }
    write_trace_csv(r / "trace.csv", trace, cfg.latent_size);
    save_checkpoint(r / "model.bvae", model);
    const auto kl = dataset_kl(model, data);
    write_latent_csv(r / "latents.csv", kl);
    auto os = io::open_out(r / "summary.csv");
    os << "steps,converged,informative_latents,total_kl\n";
    double total = 0;
    for (double v : kl) total += v;
    os << trace.steps << ',' << (trace.converged ? 1 : 0) << ',' << informative_latents(kl) << ','
       << io::fmt_double(total) << '\n';
    r.log("finished after " + std::to_string(trace.steps) + " steps" + (trace.converged ? " (converged)" : "") + ", " +
          std::to_string(informative_latents(kl)) + " informative latents, KL per latent " + kl_string(kl));
  }

  std::vector<fs::path> inputs() const { return {grid.dataset, resume}; }
};

struct Traverse {
  GridOptions grid;
  AmoebaOptions amoeba;
  std::string model;
  std::size_t image = 0;
  std::size_t steps = 9;
  double range = 3.0;

  void add(CLI::App* c) {
    grid.add(c);
    amoeba.add(c);
    c->add_option("--model", model, "Checkpoint")->required();
    c->add_option("--image", image, "Seed image index");
    c->add_option("--steps", steps, "Frames per latent")->check(CLI::PositiveNumber);
    c->add_option("--range", range, "Latent values span [-range, range]")->check(CLI::PositiveNumber);
  }

  void run(Run& r) {
    const auto m = load_checkpoint(model);
    AmoebaOptions a = amoeba;
    a.enabled = a.enabled || m.config().input_size == 128 * 128;
    const auto data = load_images(grid, a);
    if (image >= data.size()) throw RangeError("--image " + std::to_string(image) + " of " + std::to_string(data.size()));
    const auto kl = dataset_kl(m, data);
    write_latent_csv(r / "latents.csv", kl);
    io::write_pgm(r / "traversal.pgm", traversal_montage(m, data.image(image), kl, steps, range), false);
    r.log("traversed " + std::to_string(kl.size()) + " latents around image " + std::to_string(image) +
          "; KL per latent " + kl_string(kl));
  }

  std::vector<fs::path> inputs() const { return {grid.dataset, model}; }
};

struct ResponseMapCmd {
  GridOptions grid;
  std::string model;
  std::string factor = "x";
  std::string shape;

  void add(CLI::App* c) {
    grid.add(c);
    c->add_option("--model", model, "Checkpoint")->required();
    c->add_option("--factor", factor, "scale, rotation, x, y or position")
        ->check(CLI::IsMember({"shape", "scale", "rotation", "x", "y", "position"}));
    c->add_option("--shape", shape, "Restrict to one shape");
  }

  void run(Run& r) {
    const auto m = load_checkpoint(model);
    const auto ds = grid.load();
    std::optional<ShapeKind> only;
    if (!shape.empty()) only = shape_from_string(shape);
    const Matrixf mu = encode_pixels(m, ds.pixels()).mu;
    if (factor == "position") {
      const auto p = position_map(mu, ds, only);
      auto os = io::open_out(r / "response.csv");
      os << "latent,y_pos,x_pos,mean\n";
      for (std::size_t j = 0; j < p.mean.rows(); ++j) {
        for (std::size_t c = 0; c < p.mean.cols(); ++c) {
          os << j << ',' << c / p.width << ',' << c % p.width << ',' << io::fmt_double(p.mean(j, c)) << '\n';
        }
      }
      io::write_pgm(r / "response.pgm", heatmap(p.mean, p.width), false);
      r.log("position map " + std::to_string(p.width) + " x " + std::to_string(p.height));
      return;
    }
    const auto map = response_map(mu, ds, factor_from_string(factor), only);
    write_response_csv(r / "response.csv", map);
    io::write_pgm(r / "response.pgm", heatmap(map.mean, map.mean.cols(), 8), false);
    r.log("response of " + std::to_string(map.mean.rows()) + " latents to " + factor + " over " +
          std::to_string(map.values.size()) + " values");
  }

  std::vector<fs::path> inputs() const { return {grid.dataset, model}; }
};

struct Metric {
  GridOptions grid;
  RepresentationOptions rep;
  MetricOptions metric;

  void add(CLI::App* c) {
    grid.add(c);
    rep.add(c);
    metric.add(c);
  }

  void run(Run& r) {
    const auto domain = metric.domain(grid);
    const auto representation = rep.build(domain.grid.resolution * domain.grid.resolution);
    r.log("metric for " + representation.name + " (" + grid.describe() + ")");
    const auto result = evaluate_metric(representation, domain, metric.seed, metric.settings());
    write_metric_csv(r / "metric.csv", aggregate_scores({{result.accuracy}}));
    write_metric_detail(r / "metric_detail.csv", representation.name, result);
    log_metric(r, result);
  }

  std::vector<fs::path> inputs() const { return rep.inputs(); }
};

struct ReplicaMetric {
  GridOptions grid;
  TrainOptions train;
  MetricOptions metric;
  std::size_t replicas = 10;
  std::size_t evaluations = 3;

  void add(CLI::App* c) {
    grid.add(c);
    train.add(c);
    metric.add(c);
    c->add_option("--replicas", replicas, "Independently seeded models")->check(CLI::PositiveNumber);
    c->add_option("--evaluations", evaluations, "Metric evaluations per model")->check(CLI::PositiveNumber);
  }

  void run(Run& r) {
    if (train.arch != "shapes") throw UsageError("replica-metric needs the shapes architecture");
    const auto domain = metric.domain(grid);
    const auto data = grid.load();
    r.log("replica metric: " + std::to_string(replicas) + " replicas x " + std::to_string(evaluations) +
          " evaluations on " + std::to_string(data.size()) + " images");
    const auto report = replica_protocol(
        [&](std::size_t k) {
          TrainOptions t = train;
          t.seed = train.seed + k;
          auto model = std::make_shared<VaeModel>(t.config());
          const auto dir = r / ("replica_" + std::to_string(k));
          fs::create_directories(dir);
          try {
            const auto trace = bvae::train(*model, ImageSet{data.pixels(), data.image_size()});
            write_trace_csv(dir / "trace.csv", trace, t.latents);
          } catch (const TrainingDiverged& e) {
            write_trace_csv(dir / "trace.csv", e.trace(), t.latents);
            r.log("replica " + std::to_string(k) + " diverged: " + e.what());
            throw;
          }
          save_checkpoint(dir / "model.bvae", *model);
          return vae_representation(model, "vae");
        },
        [&](const Representation& rep, std::size_t k, std::size_t e) {
          const auto res = evaluate_metric(rep, domain, metric.seed + 1000 * k + e, metric.settings());
          r.log("replica " + std::to_string(k) + " evaluation " + std::to_string(e) + ": " +
                io::fmt_double(res.accuracy));
          return res.accuracy;
        },
        replicas, evaluations);
    write_metric_csv(r / "metric.csv", report);
    r.log(summary_line(report));
  }

  std::vector<fs::path> inputs() const { return {grid.dataset}; }
};

struct Baseline {
  std::string kind;
  GridOptions grid;
  MetricOptions metric;
  std::size_t components = 10;
  std::uint64_t fit_seed = 1;
  bool evaluate = false;

  void add(CLI::App* c) {
    c->add_option("kind", kind, "pca, ica, pixels or ground-truth")
        ->required()
        ->check(CLI::IsMember({"pca", "ica", "pixels", "ground-truth"}));
    grid.add(c);
    metric.add(c, false);
    c->add_option("--components", components, "Components for pca and ica")->check(CLI::PositiveNumber);
    c->add_option("--fit-seed", fit_seed, "Seed of the iterative solvers");
    c->add_flag("--evaluate", evaluate, "Also run the metric with the fitted projection");
  }

  // Streams the selected images chunk by chunk, rendering them unless a
  // dataset directory was given.
  void for_each_chunk(const std::function<void(std::span<const std::uint8_t>)>& sink) const {
    if (!grid.dataset.empty()) {
      const auto ds = io::load_dataset(grid.dataset);
      sink(ds.pixels());
      return;
    }
    const auto g = grid.grid();
    const std::size_t n = g.resolution * g.resolution;
    constexpr std::size_t kChunk = 4096;
    std::vector<std::uint8_t> buf;
    buf.reserve(kChunk * n);
    stream_grid_images(g, grid.stride_values(), grid.holdout(), grid.select(),
                       [&](const FactorCoordinates&, const Image& img) {
                         buf.insert(buf.end(), img.pixels.begin(), img.pixels.end());
                         if (buf.size() == kChunk * n) {
                           sink(buf);
                           buf.clear();
                         }
                       });
    if (!buf.empty()) sink(buf);
  }

  void run(Run& r) {
    const std::size_t n = 64 * 64;
    Representation representation;
    if (kind == "pca" || kind == "ica") {
      CovarianceAccumulator acc(n);
      for_each_chunk([&](std::span<const std::uint8_t> px) { acc.add_binary(px); });
      r.log(kind + " on " + std::to_string(acc.count()) + " images (" + grid.describe() + ")");
      LinearProjection proj;
      if (kind == "pca") {
        PcaSettings s;
        s.k = components;
        s.seed = fit_seed;
        proj = fit_pca(acc, s);
      } else {
        IcaSettings s;
        s.k = components;
        s.seed = fit_seed;
        s.whitening.seed = fit_seed;
        const auto fit = fit_ica_from(
            acc,
            [&](const LinearProjection& white) {
              Matrixd z(acc.count(), white.outputs());
              std::size_t row = 0;
              for_each_chunk([&](std::span<const std::uint8_t> px) {
                const Matrixd part = white.project(px);
                for (std::size_t i = 0; i < part.rows(); ++i, ++row) {
                  std::copy(part.row(i).begin(), part.row(i).end(), z.row(row).begin());
                }
              });
              return z;
            },
            s);
        if (fit.failed_components) {
          r.log(std::to_string(fit.failed_components) + " ICA components hit the iteration cap");
        }
        proj = fit.projection;
      }
      save_projection(r / "projection.proj", proj);
      auto os = io::open_out(r / "explained.csv");
      os << "component,explained,cumulative\n";
      double cum = 0;
      for (std::size_t i = 0; i < proj.explained.size(); ++i) {
        cum += proj.explained[i];
        os << i << ',' << io::fmt_double(proj.explained[i]) << ',' << io::fmt_double(cum) << '\n';
      }
      r.log("explained variance of " + std::to_string(proj.outputs()) + " components: " +
            io::fmt_double(explained_total(proj)) + "; " + std::to_string(proj.iterations) + " iterations, " +
            (proj.converged ? "converged" : "iteration cap") + ", subspace change " +
            io::fmt_double(proj.achieved_tolerance));
      if (!evaluate) return;
      representation = projection_representation(kind, std::make_shared<const LinearProjection>(std::move(proj)));
    } else {
      representation = kind == "pixels" ? pixels_representation(n) : ground_truth_representation();
    }
    const auto domain = metric.domain(grid);
    const auto result = evaluate_metric(representation, domain, metric.seed, metric.settings());
    write_metric_csv(r / "metric.csv", aggregate_scores({{result.accuracy}}));
    write_metric_detail(r / "metric_detail.csv", representation.name, result);
    log_metric(r, result);
  }

  std::vector<fs::path> inputs() const { return {grid.dataset}; }
};

struct ZeroShot {
  GridOptions grid;
  RepresentationOptions rep;
  MetricOptions metric;

  void add(CLI::App* c) {
    grid.add(c, "original", "zero-shot");
    rep.add(c);
    metric.add(c, false);
  }

  void run(Run& r) {
    if (!grid.dataset.empty()) throw UsageError("zero-shot renders its own pairs; use grid options");
    const auto g = grid.grid();
    const auto strides = grid.stride_values();
    const auto p = grid.holdout();
    if (p.rules.empty()) throw UsageError("zero-shot needs a holdout predicate");
    check_holdout_coverage(g, strides, p);
    const std::size_t total = count_combinations(g, strides, HoldoutPredicate::none());
    const std::size_t kept = count_combinations(g, strides, p);
    const double retained = double(kept) / double(total);
    r.log("holdout " + p.id + " retains " + std::to_string(kept) + " of " + std::to_string(total) + " combinations");
    const auto representation = rep.build(g.resolution * g.resolution);
    SamplingDomain d{g, strides, p, true, metric.noise};
    const auto result = evaluate_metric(representation, d, metric.seed, metric.settings());
    auto os = io::open_out(r / "zero_shot.csv");
    os << "representation,predicate,retained_fraction,held_out_accuracy\n";
    os << representation.name << ',' << p.id << ',' << io::fmt_double(retained) << ','
       << io::fmt_double(result.accuracy) << '\n';
    write_metric_detail(r / "metric_detail.csv", representation.name, result);
    log_metric(r, result);
  }

  std::vector<fs::path> inputs() const { return rep.inputs(); }
};

struct Splice {
  GridOptions grid;
  std::string encoder;
  std::string encoder_new;
  std::string decoder;
  AlignmentSettings align;
  std::size_t examples = 16;

  void add(CLI::App* c) {
    grid.add(c, "novel");
    c->add_option("--encoder", encoder, "Encoder trained on the original shapes")->required();
    c->add_option("--encoder-new", encoder_new, "Encoder trained on the new shapes")->required();
    c->add_option("--decoder", decoder, "Decoder trained on the new shapes (default: --encoder-new)");
    c->add_option("--split", align.split, "Fraction of images used to fit the alignment")
        ->check(CLI::Range(0.0, 1.0));
    c->add_option("--align-lr", align.learning_rate, "Alignment learning rate")->check(CLI::PositiveNumber);
    c->add_option("--align-max-steps", align.max_steps, "Alignment step cap")->check(CLI::PositiveNumber);
    c->add_option("--align-window", align.convergence_window, "Alignment convergence window")
        ->check(CLI::PositiveNumber);
    c->add_option("--align-seed", align.seed, "Split and batch seed");
    c->add_option("--examples", examples, "Examples in splice.pgm");
  }

  void run(Run& r) {
    const auto orig = load_checkpoint(encoder);
    const auto enc_new = load_checkpoint(encoder_new);
    const auto dec_new = decoder.empty() ? enc_new : load_checkpoint(decoder);
    const auto data = grid.load();
    r.log("splice on " + std::to_string(data.size()) + " images (" + grid.describe() + ")");
    const auto fit = fit_alignment(orig, enc_new, data, align);
    save_alignment(r / "alignment.algn", fit.map);
    const Matrixf z_in = encode_pixels(orig, data.pixels()).mu;
    const Matrixf z_out = encode_pixels(enc_new, data.pixels()).mu;
    const Matrixf pred = fit.map.apply(z_in);
    // the constant predictor (mean target over the fitting rows) as a reference
    Matrixf mean_pred(z_out.rows(), z_out.cols());
    for (std::size_t j = 0; j < z_out.cols(); ++j) {
      double m = 0;
      for (auto i : fit.fit_rows) m += z_out(i, j);
      m /= double(fit.fit_rows.size());
      for (std::size_t i = 0; i < z_out.rows(); ++i) mean_pred(i, j) = float(m);
    }
    std::vector<Image> recon;
    const auto result = splice_eval(orig, fit.map, dec_new, data, fit.eval_rows, &recon);
    auto os = io::open_out(r / "splice.csv");
    os << "row,index,distance\n";
    for (std::size_t k = 0; k < result.rows.size(); ++k) {
      os << k << ',' << result.rows[k] << ',' << io::fmt_double(result.distances[k]) << '\n';
    }
    auto ss = io::open_out(r / "splice_summary.csv");
    ss << "mean_distance,eval_images,fit_residual,eval_residual,mean_baseline_residual,align_steps,align_converged\n";
    const double fit_res = alignment_residual(pred, z_out, fit.fit_rows);
    const double eval_res = alignment_residual(pred, z_out, fit.eval_rows);
    const double base_res = alignment_residual(mean_pred, z_out, fit.eval_rows);
    ss << io::fmt_double(result.mean_distance) << ',' << result.rows.size() << ',' << io::fmt_double(fit_res) << ','
       << io::fmt_double(eval_res) << ',' << io::fmt_double(base_res) << ',' << fit.steps << ','
       << (fit.converged ? 1 : 0) << '\n';
    std::vector<Image> tiles;
    const std::size_t shown = std::min(examples, result.rows.size());
    for (std::size_t k = 0; k < shown; ++k) {
      Image img(data.resolution(), data.resolution());
      std::copy(data.image(result.rows[k]).begin(), data.image(result.rows[k]).end(), img.pixels.begin());
      tiles.push_back(grey(img));
    }
    for (std::size_t k = 0; k < shown; ++k) tiles.push_back(grey(recon[k]));
    if (shown) io::write_pgm(r / "splice.pgm", io::montage(tiles, shown), false);
    r.log("alignment residual fit " + io::fmt_double(fit_res) + ", held-out " + io::fmt_double(eval_res) +
          " (mean predictor " + io::fmt_double(base_res) + ")");
    r.log("splice distance " + io::fmt_double(result.mean_distance) + " over " + std::to_string(result.rows.size()) +
          " images");
  }

  std::vector<fs::path> inputs() const { return {grid.dataset, encoder, encoder_new, decoder}; }
};

struct Corrupt {
  std::string dataset;
  double p = 0.05;
  std::uint64_t seed = 1;

  void add(CLI::App* c) {
    c->add_option("--dataset", dataset, "Dataset directory (left untouched)")->required();
    c->add_option("--p", p, "Pixel flip probability")->check(CLI::Range(0.0, 1.0));
    c->add_option("--seed", seed, "Noise seed");
  }

  void run(Run& r) {
    const fs::path in(dataset);
    io::TensorHeader h;
    auto pixels = io::read_u8_tensor(in / "images.tnsr", &h);
    Rng rng(seed);
    bernoulli_corrupt(pixels, p, rng);
    io::write_u8_tensor(r / "images.tnsr", h.dims, pixels);
    for (const char* name : {"factors.csv", "dataset.json"}) {
      if (fs::exists(in / name)) fs::copy_file(in / name, r / name, fs::copy_options::overwrite_existing);
    }
    r.log("flipped pixels of " + std::to_string(h.dims.empty() ? 0 : h.dims[0]) + " images with p " +
          io::fmt_double(p));
  }

  std::vector<fs::path> inputs() const { return {dataset}; }
};

template <typename Cmd>
std::vector<fs::path> inputs_of(const Cmd& c) {
  if constexpr (requires { c.inputs(); }) {
    return c.inputs();
  } else {
    return {};
  }
}

int exit_code_for(const std::exception& e) {
  if (dynamic_cast<const UsageError*>(&e) || dynamic_cast<const ContractError*>(&e) ||
      dynamic_cast<const RangeError*>(&e)) {
    return 1;
  }
  if (dynamic_cast<const NumericalError*>(&e)) return 3;
  return 2;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"beta-VAE experiments: datasets, training, latent analysis and the disentanglement metric"};
  app.option_defaults()->always_capture_default();
  app.require_subcommand(1);
  app.fallthrough();
  std::string runs = "runs";
  std::string name;
  app.set_config("--config", "", "INI file with one [command] section; flags override it");
  app.add_option("--runs", runs, "Root of the run directories")->configurable(false);
  app.add_option("--name", name, "Run name (default: the command name)")->configurable(false);

  GenShapes gen_shapes;
  GenAmoeba gen_amoeba;
  Continuity continuity;
  Train train;
  Traverse traverse;
  ResponseMapCmd response;
  Metric metric;
  ReplicaMetric replica;
  Baseline baseline;
  ZeroShot zero_shot;
  Splice splice;
  Corrupt corrupt;

  std::string command;
  CLI::App* chosen = nullptr;
  std::function<void(Run&)> body;
  std::vector<fs::path> inputs;
  const auto reg = [&](auto& cmd, const char* cmd_name, const char* help) {
    CLI::App* sub = app.add_subcommand(cmd_name, help);
    cmd.add(sub);
    sub->callback([&, cmd_name, sub] {
      command = cmd_name;
      chosen = sub;
      body = [&](Run& r) { cmd.run(r); };
      inputs = inputs_of(cmd);
    });
  };
  reg(gen_shapes, "gen-shapes", "Render the shapes grid to images.tnsr and factors.csv");
  reg(gen_amoeba, "gen-amoeba", "Render the amoeba dataset");
  reg(continuity, "continuity", "Mean normalized Hamming distance between neighbouring transforms");
  reg(train, "train", "Train a VAE");
  reg(traverse, "traverse", "Latent traversal montage");
  reg(response, "response-map", "Mean latent response per factor value");
  reg(metric, "metric", "Factor-change classification accuracy of one representation");
  reg(replica, "replica-metric", "Train replicas and report the top half of their metric scores");
  reg(baseline, "baseline", "Fit and evaluate a pca, ica, pixels or ground-truth baseline");
  reg(zero_shot, "zero-shot", "Metric on combinations held out of training");
  reg(splice, "splice", "Encode with one model and decode with another through a fitted linear map");
  reg(corrupt, "corrupt", "Flip dataset pixels with a Bernoulli noise");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 1;
  }

  if (name == "." || name == ".." || name.find('/') != std::string::npos) {
    std::cerr << "error: --name must be a plain directory name\n";
    return 1;
  }
  const fs::path dir = fs::path(runs) / (name.empty() ? command : name);
  std::unique_ptr<Run> run;
  try {
    const std::string resolved = "[" + command + "]\n" + chosen->config_to_str(true, false);
    run = std::make_unique<Run>(dir, command, resolved, inputs);
    body(*run);
    run->finish(true);
    return 0;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    if (run) {
      try {
        run->log(std::string("error: ") + e.what(), false);
        run->finish(false, e.what());
      } catch (const std::exception& m) {
        std::cerr << "error: could not write the manifest: " << m.what() << '\n';
      }
    }
    return exit_code_for(e);
  }
}
