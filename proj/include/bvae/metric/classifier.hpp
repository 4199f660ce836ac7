#pragma once

#include <cmath>
#include <span>
#include <vector>

#include "bvae/core/optimizer.hpp"
#include "bvae/core/tape.hpp"
#include "bvae/metric/factor_change.hpp"

namespace bvae {

struct ClassifierSettings {
  double learning_rate = 1e-2;
  std::size_t batch_size = 100;
  std::size_t max_steps = 200000;
  std::size_t convergence_window = 10000;
  double convergence_tolerance = 1e-3;
  std::uint64_t seed = 1;
};

/// Affine map d -> classes followed by argmax (softmax at training time).
struct LinearClassifier {
  Matrixf weight;  // d x classes
  Matrixf bias;    // 1 x classes

  std::size_t inputs() const noexcept { return weight.rows(); }
  std::size_t classes() const noexcept { return weight.cols(); }
  std::size_t parameter_count() const noexcept { return weight.size() + bias.size(); }

  std::size_t predict(std::span<const float> x) const {
    if (x.size() != inputs()) throw ShapeError("classifier: input has " + std::to_string(x.size()) + " entries");
    std::size_t best = 0;
    double best_score = -INFINITY;
    for (std::size_t c = 0; c < classes(); ++c) {
      double s = bias[c];
      for (std::size_t j = 0; j < x.size(); ++j) s += double(x[j]) * double(weight(j, c));
      if (s > best_score) {
        best_score = s;
        best = c;
      }
    }
    return best;
  }

  double accuracy(const FactorChangeSet& set) const {
    if (set.size() == 0) throw ContractError("classifier: empty evaluation set");
    std::size_t correct = 0;
    for (std::size_t i = 0; i < set.size(); ++i) correct += predict(set.z_diff.row(i)) == set.labels[i];
    return double(correct) / double(set.size());
  }
};

struct ClassifierFit {
  LinearClassifier model;
  std::size_t steps = 0;
  bool converged = false;
  std::size_t excluded = 0;  // all-zero rows left out of training
};

/// Minibatch softmax regression trained with adagrad until the mean loss of
/// consecutive windows improves by less than the tolerance.
inline ClassifierFit train_change_classifier(const FactorChangeSet& train, const ClassifierSettings& s = {},
                                             std::size_t classes = kContinuousFactors.size()) {
  const std::size_t d = train.z_diff.cols();
  ClassifierFit fit;
  fit.model = {Matrixf(d, classes), Matrixf(1, classes)};
  std::vector<std::size_t> usable;
  for (std::size_t i = 0; i < train.size(); ++i) {
    const auto row = train.z_diff.row(i);
    if (std::any_of(row.begin(), row.end(), [](float v) { return v != 0.0f; })) {
      usable.push_back(i);
    } else {
      ++fit.excluded;
    }
  }
  if (usable.empty()) return fit;  // nothing to learn from; predicts class 0

  std::vector<Parameter<float>> params{{"classifier.weight", fit.model.weight}, {"classifier.bias", fit.model.bias}};
  Optimizer<float> opt({OptimizerKind::adagrad, s.learning_rate});
  const Rng base(s.seed);
  double window_sum = 0.0, previous = NAN;
  Matrixf x(s.batch_size, d), y(s.batch_size, classes);
  std::size_t step = 0;
  for (; step < s.max_steps; ++step) {
    Rng rng = base.derive(step);
    y.fill(0.0f);
    for (std::size_t r = 0; r < s.batch_size; ++r) {
      const std::size_t i = usable[rng.uniform_index(usable.size())];
      const auto src = train.z_diff.row(i);
      std::copy(src.begin(), src.end(), x.row(r).begin());
      y(r, train.labels[i]) = 1.0f;
    }
    Tape<float> t;
    auto w = t.parameter(params[0].value);
    auto b = t.parameter(params[1].value);
    auto loss = t.scale(t.softmax_cross_entropy(t.add_bias(t.matmul(t.constant_ref(x), w), b), t.constant_ref(y)),
                        1.0 / double(s.batch_size));
    const double value = t.value(loss)[0];
    if (!std::isfinite(value)) throw NumericalError("classifier: non-finite loss at step " + std::to_string(step));
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
  fit.model.weight = std::move(params[0].value);
  fit.model.bias = std::move(params[1].value);
  return fit;
}

struct MetricSettings {
  std::size_t train_samples = 30000;
  std::size_t test_samples = 5000;
  ClassifierSettings classifier;
};

struct MetricResult {
  double accuracy = 0;
  double train_accuracy = 0;
  std::size_t train_degenerate = 0;
  std::size_t test_degenerate = 0;
  std::size_t classifier_steps = 0;
  bool converged = false;
};

/// Factor-change classification accuracy of `rep` on freshly drawn test
/// pairs, after fitting the linear classifier on freshly drawn training pairs.
inline MetricResult evaluate_metric(const Representation& rep, const SamplingDomain& domain, std::uint64_t seed,
                                    const MetricSettings& settings = {}) {
  const Rng base(seed);
  Rng train_rng = base.derive(1);
  Rng test_rng = base.derive(2);
  const auto train = sample_factor_changes(train_rng, domain, rep, settings.train_samples);
  const auto test = sample_factor_changes(test_rng, domain, rep, settings.test_samples);
  ClassifierSettings cs = settings.classifier;
  cs.seed = base.derive(3).next_u64();
  const auto fit = train_change_classifier(train, cs);
  MetricResult r;
  r.accuracy = fit.model.accuracy(test);
  r.train_accuracy = fit.model.accuracy(train);
  r.train_degenerate = train.degenerate;
  r.test_degenerate = test.degenerate;
  r.classifier_steps = fit.steps;
  r.converged = fit.converged;
  return r;
}

}  // namespace bvae
