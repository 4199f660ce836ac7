#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "bvae/core/matrix.hpp"

namespace bvae {

template <typename T>
struct Parameter {
  std::string name;
  Matrix<T> value;
};

enum class OptimizerKind : std::uint8_t { adagrad = 0, adam = 1, rmsprop = 2 };

inline std::string_view to_string(OptimizerKind k) {
  switch (k) {
    case OptimizerKind::adagrad:
      return "adagrad";
    case OptimizerKind::adam:
      return "adam";
    case OptimizerKind::rmsprop:
      return "rmsprop";
  }
  return "?";
}

inline OptimizerKind optimizer_kind_from_string(std::string_view s) {
  if (s == "adagrad") return OptimizerKind::adagrad;
  if (s == "adam") return OptimizerKind::adam;
  if (s == "rmsprop") return OptimizerKind::rmsprop;
  throw ContractError("unknown optimizer '" + std::string(s) + "'");
}

struct OptimizerSettings {
  OptimizerKind kind = OptimizerKind::adagrad;
  double learning_rate = 1e-2;
  double epsilon = 1e-8;
  double beta1 = 0.9;    // adam
  double beta2 = 0.999;  // adam
  double decay = 0.9;    // rmsprop
};

/// Adagrad, Adam and RMSProp over a list of parameters.
///
/// adagrad:  G += g^2;                 theta -= lr * g / sqrt(G + eps)
/// adam:     m = b1 m + (1-b1) g;  v = b2 v + (1-b2) g^2;
///           theta -= lr * mhat / (sqrt(vhat) + eps)   (bias-corrected)
/// rmsprop:  v = d v + (1-d) g^2;      theta -= lr * g / (sqrt(v) + eps)
template <typename T>
class Optimizer {
 public:
  explicit Optimizer(OptimizerSettings settings = {}) : settings_(settings) {}

  const OptimizerSettings& settings() const noexcept { return settings_; }
  std::uint64_t step_count() const noexcept { return steps_; }
  const std::vector<Matrix<T>>& first_moments() const noexcept { return first_; }
  const std::vector<Matrix<T>>& second_moments() const noexcept { return second_; }

  void restore(std::uint64_t steps, std::vector<Matrix<T>> first, std::vector<Matrix<T>> second) {
    steps_ = steps;
    first_ = std::move(first);
    second_ = std::move(second);
  }

  void step(std::span<Parameter<T>> params, std::span<const Matrix<T>> grads) {
    if (params.size() != grads.size()) {
      throw ShapeError("optimizer: " + std::to_string(params.size()) + " parameters but " +
                       std::to_string(grads.size()) + " gradients");
    }
    for (std::size_t i = 0; i < params.size(); ++i) {
      require_same_shape(params[i].value, grads[i], "optimizer gradient");
      if (!grads[i].all_finite()) {
        throw NumericalError("non-finite gradient for parameter '" + params[i].name +
                             "' at step " + std::to_string(steps_));
      }
    }
    if (second_.empty()) {
      for (const auto& p : params) {
        second_.emplace_back(p.value.rows(), p.value.cols());
        if (settings_.kind == OptimizerKind::adam) first_.emplace_back(p.value.rows(), p.value.cols());
      }
    } else if (second_.size() != params.size()) {
      throw ShapeError("optimizer: parameter count changed between steps");
    }
    ++steps_;
    for (std::size_t i = 0; i < params.size(); ++i) update(i, params[i].value, grads[i]);
  }

 private:
  void update(std::size_t i, Matrix<T>& theta, const Matrix<T>& g) {
    require_same_shape(theta, second_[i], "optimizer state");
    const T lr = T(settings_.learning_rate);
    const T eps = T(settings_.epsilon);
    auto th = theta.map().array();
    const auto gs = g.map().array();
    auto v = second_[i].map().array();
    switch (settings_.kind) {
      case OptimizerKind::adagrad:
        v += gs.square();
        th -= lr * gs / (v + eps).sqrt();
        return;
      case OptimizerKind::rmsprop: {
        const T d = T(settings_.decay);
        v = d * v + (T{1} - d) * gs.square();
        th -= lr * gs / (v.sqrt() + eps);
        return;
      }
      case OptimizerKind::adam: {
        auto m = first_[i].map().array();
        const T b1 = T(settings_.beta1);
        const T b2 = T(settings_.beta2);
        const T c1 = T(1.0 - std::pow(settings_.beta1, double(steps_)));
        const T c2 = T(1.0 - std::pow(settings_.beta2, double(steps_)));
        m = b1 * m + (T{1} - b1) * gs;
        v = b2 * v + (T{1} - b2) * gs.square();
        th -= lr * (m / c1) / ((v / c2).sqrt() + eps);
        return;
      }
    }
  }

  OptimizerSettings settings_;
  std::uint64_t steps_ = 0;
  std::vector<Matrix<T>> first_;
  std::vector<Matrix<T>> second_;
};

}  // namespace bvae
