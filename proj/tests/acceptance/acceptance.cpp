// End-to-end acceptance run. Prints one PASS/FAIL line per criterion and
// exits non-zero when any fails. Pass criterion numbers to run a subset.
#include <sys/wait.h>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <ctime>
#include <fstream>
#include <map>
#include <memory>
#include <set>
#include <sstream>

#include "../unit/vae_oracle.hpp"
#include "bvae/baselines/adapters.hpp"
#include "bvae/baselines/projection.hpp"
#include "bvae/core/stats.hpp"
#include "bvae/io/tensor_file.hpp"
#include "bvae/metric/classifier.hpp"
#include "bvae/zeroshot/holdout.hpp"
#include "bvae/zeroshot/splice.hpp"
#include "model_zoo.hpp"

namespace fs = std::filesystem;
using namespace bvae;
using bvae::io::DType;
using bvae::io::TensorHeader;
using bvae::io::TensorReader;
using bvae::io::TensorWriter;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

void info(const std::string& s) {
  std::printf("    %s\n", s.c_str());
  std::fflush(stdout);
}

struct Outcome {
  bool pass = false;
  std::string detail;
};

constexpr std::uint64_t kMetricSeed = 11;
constexpr std::size_t kFullImages = 737280;

SamplingDomain desk_domain() {
  SamplingDomain d{FactorGrid::standard()};
  d.strides = kDeskStrides;
  return d;
}

class Acceptance {
 public:
  Acceptance(fs::path cache, fs::path work) : cache_(std::move(cache)), work_(std::move(work)) {
    fs::create_directories(work_);
  }

  Outcome dataset_cardinality() {
    const auto grid = FactorGrid::standard();
    const auto path = work_ / "full.tnsr";
    const auto t0 = Clock::now();
    io::Sha256 written;
    std::size_t count = 0;
    {
      TensorWriter w(path, TensorHeader{DType::u8, {std::uint32_t(grid.cardinality()), 64, 64}});
      stream_grid_images(grid, Strides{1, 1, 1, 1, 1}, HoldoutPredicate::none(), Selection::retained,
                         [&](const FactorCoordinates&, const Image& img) {
                           w.write(img.pixels);
                           written.update(img.pixels.data(), img.pixels.size());
                           ++count;
                         });
      w.close();
    }
    const double secs = seconds_since(t0);
    TensorReader r(path);
    io::Sha256 read_back;
    std::vector<std::uint8_t> buf(4096 * 1024);
    std::size_t elements = r.remaining();
    while (r.remaining() > 0) {
      const std::size_t n = std::min(buf.size(), r.remaining());
      r.read(std::span<std::uint8_t>(buf.data(), n));
      read_back.update(buf.data(), n);
    }
    const bool same = written.hex() == read_back.hex();
    return {count == kFullImages && elements == kFullImages * 4096 && same && secs <= 600,
            fmt("%zu images in %.0f s, round trip %s", count, secs, same ? "bit-exact" : "differs")};
  }

  Outcome rasterizer_symmetry() {
    const auto t0 = Clock::now();
    std::size_t pairs = 0, mismatches = 0;
    const auto check = [&](const FactorGrid& grid, std::size_t shape, std::size_t turn) {
      for (std::size_t s = 0; s < grid.extent(Factor::scale); s += kDeskStrides[1]) {
        for (std::size_t r = 0; r < grid.extent(Factor::rotation); r += kDeskStrides[2]) {
          for (std::size_t x = 0; x < grid.extent(Factor::x); x += kDeskStrides[3]) {
            for (std::size_t y = 0; y < grid.extent(Factor::y); y += kDeskStrides[4]) {
              const FactorIndex a{shape, s, r, x, y};
              const FactorIndex b{shape, s, (r + turn) % grid.extent(Factor::rotation), x, y};
              mismatches += grid.render(grid.resolve(a)).pixels != grid.render(grid.resolve(b)).pixels;
              ++pairs;
            }
          }
        }
      }
    };
    const auto original = FactorGrid::standard();
    const auto novel = FactorGrid::standard(FactorGrid::novel_shapes());
    const std::size_t quarter = original.extent(Factor::rotation) / 4;
    check(original, 0, quarter);      // square
    check(original, 1, 2 * quarter);  // oval
    check(novel, 1, 2 * quarter);     // rectangle
    const double secs = seconds_since(t0);
    return {mismatches == 0 && secs <= 60, fmt("%zu pairs, %zu mismatches, %.1f s", pairs, mismatches, secs)};
  }

  Outcome numeric_core() {
    const auto suite = testing_oracle::toy_gradient_suite(500, 500);
    Rng rng(2024);
    double worst_kl = 0;
    const std::pair<double, double> cases[] = {{0.0, std::log(2.0)}, {1.3, -0.7}, {-0.4, 0.9}, {2.0, -2.0}};
    for (auto [mu, lv] : cases) {
      const double sigma = std::exp(0.5 * lv);
      double acc = 0;
      const int n = 1'000'000;
      for (int i = 0; i < n; ++i) {
        const double e = rng.normal();
        const double z = mu + sigma * e;
        acc += -0.5 * e * e - std::log(sigma) + 0.5 * z * z;
      }
      worst_kl = std::max(worst_kl, std::abs(acc / n - LatentEncoding::kl(mu, lv)));
    }
    return {suite.networks == 500 && suite.worst < 1e-4 && worst_kl < 1e-2,
            fmt("%zu networks, %zu parameters, worst relative error %.2e; KL vs Monte-Carlo worst %.2e",
                suite.networks, suite.parameters_checked, suite.worst, worst_kl)};
  }

  Outcome pca_explained() {
    const auto path = work_ / "full.tnsr";
    if (!fs::exists(path)) dataset_cardinality();
    const auto t0 = Clock::now();
    TensorReader r(path);
    CovarianceAccumulator acc(4096);
    std::vector<std::uint8_t> buf(4096 * 1024);
    while (r.remaining() > 0) {
      const std::size_t n = std::min(buf.size(), r.remaining());
      r.read(std::span<std::uint8_t>(buf.data(), n));
      acc.add_binary(std::span<const std::uint8_t>(buf.data(), n));
    }
    PcaSettings s;
    s.k = 10;
    const auto p = fit_pca(acc, s);
    const double total = 100 * explained_total(p);
    const double secs = seconds_since(t0);
    return {acc.count() == kFullImages && std::abs(total - 60.8) <= 5.0 && secs <= 1800,
            fmt("top-10 explained %.2f%% over %zu images, %.0f s", total, acc.count(), secs)};
  }

  Outcome metric_ordering() {
    const auto domain = desk_domain();
    const double gt = metric("ground-truth", ground_truth_representation(), domain);
    const double b4 = vae_metric("desk-beta4", domain);
    const double b0 = vae_metric("desk-beta0", domain);
    const auto untrained = std::make_shared<const VaeModel>(VaeConfig::shapes_2d());
    const double un = metric("untrained", vae_representation(untrained, "untrained"), domain);
    const double px = metric("pixels", pixels_representation(), domain);
    double slowest_metric = 0;
    for (auto& [k, v] : metric_seconds_) slowest_metric = std::max(slowest_metric, v);
    const double train4 = trained_seconds("desk-beta4"), train0 = trained_seconds("desk-beta0");
    const bool pass = gt >= 0.95 && b4 >= gt - 0.10 && b0 <= b4 - 0.15 && un <= b4 - 0.15 && px <= b4 - 0.15 &&
                      train4 <= 7200 && train0 <= 7200 && slowest_metric <= 600;
    return {pass, fmt("ground truth %.3f, beta4 %.3f, beta0 %.3f, untrained %.3f, pixels %.3f; "
                      "training %.0f/%.0f s CPU, slowest metric %.0f s",
                      gt, b4, b0, un, px, train4, train0, slowest_metric)};
  }

  Outcome informative_counts() {
    const auto ds = zoo::shapes_data(zoo::DataSpec{});
    const auto count = [&](const std::string& name) {
      const auto kl = encode_pixels(*model(name), ds.pixels()).mean_kl_per_latent();
      std::ostringstream os;
      for (double v : kl) os << fmt(" %.3f", v);
      info(name + " KL per latent:" + os.str());
      return informative_latents(kl);
    };
    const std::size_t n4 = count("desk-beta4"), n0 = count("desk-beta0");
    return {n4 >= 4 && n4 <= 6 && n0 >= 8, fmt("beta4 %zu informative latents, beta0 %zu", n4, n0)};
  }

  Outcome inverted_u() {
    const auto domain = desk_domain();
    const double b0 = vae_metric("desk-beta0", domain);
    const double b4 = vae_metric("desk-beta4", domain);
    const double b100 = vae_metric("desk-beta100", domain);
    return {b4 >= b0 + 0.10 && b4 >= b100 + 0.10, fmt("beta0 %.3f, beta4 %.3f, beta100 %.3f", b0, b4, b100)};
  }

  Outcome continuity() {
    const auto domain = desk_domain();
    const std::pair<const char*, std::size_t> settings[] = {
        {"desk-beta4", 1}, {"rot2-beta4", 2}, {"rot4-beta4", 4}, {"rot8-beta4", 8}};
    std::vector<double> acc, cont;
    std::ostringstream os;
    for (auto [name, stride] : settings) {
      const double a = vae_metric(name, domain);
      const double c = continuity_score(zoo::shapes_data(zoo::rotation_stride(stride)));
      acc.push_back(a);
      cont.push_back(c);
      os << fmt("stride x%zu: continuity %.4f accuracy %.3f; ", stride, c, a);
    }
    const bool monotone = acc[0] >= acc[1] && acc[1] >= acc[2];
    const double rho = stats::spearman(cont, acc);
    os << fmt("spearman %.3f", rho);
    return {monotone && rho < 0, os.str()};
  }

  Outcome noise() {
    auto noisy = desk_domain();
    noisy.noise = 0.05;
    const double clean = vae_metric("desk-beta4", desk_domain());
    const double dirty = vae_metric("desk-beta4", noisy, "noise0.05");
    return {clean - dirty <= 0.15, fmt("clean %.3f, 5%% noise %.3f", clean, dirty)};
  }

  Outcome zero_shot() {
    const auto grid = FactorGrid::standard();
    const auto predicate = HoldoutPredicate::zero_shot();
    const double retained = double(count_combinations(grid, kDeskStrides, predicate)) /
                            double(count_combinations(grid, kDeskStrides, HoldoutPredicate::none()));
    auto domain = desk_domain();
    domain.predicate = predicate;
    domain.held_out_only = true;
    const double b4 = vae_metric("holdout-beta4", domain, "held-out");
    const double b0 = vae_metric("holdout-beta0", domain, "held-out");
    return {retained >= 0.5 && retained <= 0.6 && b4 >= b0 + 0.15,
            fmt("retained %.3f; held-out accuracy beta4 %.3f, beta0 %.3f", retained, b4, b0)};
  }

  Outcome splice() {
    const auto data = zoo::shapes_data(zoo::novel_data());
    const auto run = [&](const std::string& orig, const std::string& fresh) {
      const auto& enc = *model(orig);
      const auto& dec = *model(fresh);
      const auto fit = fit_alignment(enc, dec, data);
      const Matrixf target = encode_pixels(dec, data.pixels()).mu;
      const double residual = alignment_residual(fit.map.apply(encode_pixels(enc, data.pixels()).mu), target,
                                                 fit.eval_rows);
      const double d = splice_eval(enc, fit.map, dec, data, fit.eval_rows).mean_distance;
      info(fmt("%s -> %s: alignment %zu steps, residual %.4f, splice distance %.3f", orig.c_str(), fresh.c_str(),
               fit.steps, residual, d));
      return d;
    };
    const double dis = run("desk-beta4", "novel-beta4");
    const double ent = run("desk-beta0", "novel-beta0");
    return {dis < ent && ent - dis >= 0.2, fmt("disentangled %.3f, entangled %.3f, gap %.3f", dis, ent, ent - dis)};
  }

  Outcome amoeba() {
    const auto ds = generate_amoeba();
    const auto count = [&](const std::string& name) {
      const auto kl = encode_pixels(*model(name), ds.pixels).mean_kl_per_latent();
      std::ostringstream os;
      for (double v : kl) os << fmt(" %.3f", v);
      info(name + " KL per latent:" + os.str());
      return informative_latents(kl);
    };
    const std::size_t tuned = count("amoeba-beta16.38"), control = count("amoeba-beta0");
    return {tuned <= 3 && control >= 4, fmt("beta16.38 %zu informative latents, beta0 %zu", tuned, control)};
  }

  Outcome reproducibility() {
    const fs::path runs = work_ / "runs";
    fs::remove_all(runs);
    const std::string small = "--strides 1,3,8,8,8";
    const std::string quick_metric =
        "--train-samples 200 --test-samples 100 --classifier-max-steps 300 --classifier-window 100";
    const std::string model = (runs / "train" / "model.bvae").string();
    const std::vector<std::pair<std::string, std::string>> commands{
        {"gen-shapes", "gen-shapes " + small},
        {"gen-amoeba", "gen-amoeba --s-values 3 --t-values 3"},
        {"continuity", "continuity " + small},
        {"train", "train " + small + " --steps 3 --log-interval 1"},
        {"traverse", "traverse --model " + model + " " + small + " --steps 3"},
        {"response-map", "response-map --model " + model + " " + small + " --factor x"},
        {"metric", "metric --representation vae --model " + model + " " + small + " " + quick_metric},
        {"replica-metric", "replica-metric " + small + " --steps 2 --replicas 2 --evaluations 2 " + quick_metric},
        {"baseline-pca", "baseline pca " + small + " --components 3 --evaluate " + quick_metric},
        {"baseline-ica", "baseline ica " + small + " --components 3"},
        {"zero-shot", "zero-shot --representation vae --model " + model + " --strides 1,1,4,4,4 " + quick_metric},
        {"splice", "splice --encoder " + model + " --encoder-new " + model + " " + small +
                       " --examples 4 --align-max-steps 500 --align-window 100"},
        {"corrupt", "corrupt --dataset " + (runs / "gen-shapes").string() + " --p 0.05 --seed 1"},
    };
    std::size_t identical = 0;
    std::ostringstream failures;
    for (const auto& [name, args] : commands) {
      const std::string subcommand = args.substr(0, args.find(' '));
      const int first = cli(runs, "--name " + name + " " + args);
      const int second =
          cli(runs, "--name " + name + "-rerun --config " + (runs / name / "config.resolved").string() + " " + subcommand);
      const std::string a = slurp(runs / name / "manifest.txt"), b = slurp(runs / (name + "-rerun") / "manifest.txt");
      if (first == 0 && second == 0 && !a.empty() && a == b && a.find("status: complete") != std::string::npos) {
        ++identical;
      } else {
        failures << " " << name;
      }
    }
    std::string detail = fmt("%zu/%zu commands rerun to identical manifests", identical, commands.size());
    if (identical != commands.size()) detail += ";" + failures.str();
    return {identical == commands.size(), detail};
  }

 private:
  std::shared_ptr<const VaeModel> model(const std::string& name) {
    auto it = models_.find(name);
    if (it != models_.end()) return it->second;
    const auto spec = zoo::find_model(name);
    info("loading or training " + name);
    auto t = zoo::ensure_model(spec, cache_);
    info(fmt("%s: %zu steps, %.0f s CPU%s", name.c_str(), t.steps, t.train_seconds, t.from_cache ? " (cached)" : ""));
    train_seconds_[name] = t.train_seconds;
    auto p = std::make_shared<const VaeModel>(std::move(t.model));
    models_[name] = p;
    return p;
  }

  double trained_seconds(const std::string& name) {
    model(name);
    return train_seconds_.at(name);
  }

  double metric(const std::string& key, const Representation& rep, const SamplingDomain& domain) {
    auto it = metrics_.find(key);
    if (it != metrics_.end()) return it->second;
    const auto t0 = Clock::now();
    const auto r = evaluate_metric(rep, domain, kMetricSeed, MetricSettings{});
    const double secs = seconds_since(t0);
    info(fmt("metric %s: accuracy %.4f (train %.4f), %zu classifier steps, %.0f s", key.c_str(), r.accuracy,
             r.train_accuracy, r.classifier_steps, secs));
    metrics_[key] = r.accuracy;
    metric_seconds_[key] = secs;
    return r.accuracy;
  }

  double vae_metric(const std::string& name, const SamplingDomain& domain, const std::string& variant = "") {
    const std::string key = variant.empty() ? name : name + "/" + variant;
    if (auto it = metrics_.find(key); it != metrics_.end()) return it->second;
    return metric(key, vae_representation(model(name), name), domain);
  }

  static std::string slurp(const fs::path& p) {
    std::ifstream is(p, std::ios::binary);
    std::ostringstream os;
    os << is.rdbuf();
    return os.str();
  }

  static int cli(const fs::path& runs, const std::string& args) {
    const std::string cmd = std::string(BVAE_CLI_BINARY) + " --runs " + runs.string() + " " + args + " >/dev/null 2>&1";
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  }

  fs::path cache_, work_;
  std::map<std::string, std::shared_ptr<const VaeModel>> models_;
  std::map<std::string, double> train_seconds_;
  std::map<std::string, double> metrics_;
  std::map<std::string, double> metric_seconds_;
};

}  // namespace

int main(int argc, char** argv) {
  std::set<int> wanted;
  for (int i = 1; i < argc; ++i) wanted.insert(std::atoi(argv[i]));

  Acceptance a(BVAE_ACCEPTANCE_CACHE, BVAE_ACCEPTANCE_WORK);
  const std::vector<std::pair<const char*, Outcome (Acceptance::*)()>> criteria{
      {"dataset cardinality and round trip", &Acceptance::dataset_cardinality},
      {"rasterizer symmetry", &Acceptance::rasterizer_symmetry},
      {"gradients and KL", &Acceptance::numeric_core},
      {"PCA explained variance", &Acceptance::pca_explained},
      {"metric ordering", &Acceptance::metric_ordering},
      {"informative latents", &Acceptance::informative_counts},
      {"inverted U in beta", &Acceptance::inverted_u},
      {"continuity", &Acceptance::continuity},
      {"noise robustness", &Acceptance::noise},
      {"zero-shot", &Acceptance::zero_shot},
      {"splice", &Acceptance::splice},
      {"amoeba", &Acceptance::amoeba},
      {"reproducibility", &Acceptance::reproducibility},
  };

  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int number = int(i) + 1;
    if (!wanted.empty() && !wanted.count(number)) continue;
    const auto t0 = Clock::now();
    Outcome o;
    try {
      o = (a.*criteria[i].second)();
    } catch (const std::exception& e) {
      o = {false, std::string("error: ") + e.what()};
    }
    std::printf("criterion %2d %s: %s (%s) [%.0f s]\n", number, o.pass ? "PASS" : "FAIL", criteria[i].first,
                o.detail.c_str(), seconds_since(t0));
    std::fflush(stdout);
    failed += !o.pass;
  }
  std::printf("%d criteria failed\n", failed);
  return failed == 0 ? 0 : 1;
}
