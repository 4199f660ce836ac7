#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "bvae/core/matrix.hpp"

namespace bvae {

enum class TapeOp : std::uint8_t {
  leaf,
  matmul,
  add_bias,
  add,
  sub,
  mul,
  scale,
  add_scalar,
  relu,
  tanh,
  sigmoid,
  exp,
  log,
  square,
  sum,
  mean,
  slice_cols,
  sigmoid_cross_entropy,
  softmax_cross_entropy,
  smooth_l1,
};

/// Reverse-mode differentiation over matrix-valued primitives.
///
/// Every primitive call appends a record holding its inputs and its forward
/// value. `backward` walks the records in strict reverse order, accumulating
/// adjoints only along paths that reach a parameter. Leaves may borrow their
/// storage (`parameter`, `constant_ref`) so large weight matrices are not
/// copied per step; borrowed storage must outlive the tape.
template <typename T>
class Tape {
 public:
  struct Var {
    std::uint32_t index = 0;
  };

  Var parameter(const Matrix<T>& value) { return push_leaf(&value, {}, true); }
  Var constant_ref(const Matrix<T>& value) { return push_leaf(&value, {}, false); }
  Var constant(Matrix<T> value) { return push_leaf(nullptr, std::move(value), false); }

  Var matmul(Var a, Var b) { return push(TapeOp::matmul, a, b); }
  /// Adds a 1 x cols bias row to every row of x.
  Var add_bias(Var x, Var bias) { return push(TapeOp::add_bias, x, bias); }
  Var add(Var a, Var b) { return push(TapeOp::add, a, b); }
  Var sub(Var a, Var b) { return push(TapeOp::sub, a, b); }
  Var mul(Var a, Var b) { return push(TapeOp::mul, a, b); }
  Var scale(Var a, double s) { return push(TapeOp::scale, a, a, s); }
  Var add_scalar(Var a, double s) { return push(TapeOp::add_scalar, a, a, s); }
  Var relu(Var a) { return push(TapeOp::relu, a, a); }
  Var tanh(Var a) { return push(TapeOp::tanh, a, a); }
  Var sigmoid(Var a) { return push(TapeOp::sigmoid, a, a); }
  Var exp(Var a) { return push(TapeOp::exp, a, a); }
  Var log(Var a) { return push(TapeOp::log, a, a); }
  Var square(Var a) { return push(TapeOp::square, a, a); }
  Var sum(Var a) { return push(TapeOp::sum, a, a); }
  Var mean(Var a) { return push(TapeOp::mean, a, a); }
  Var slice_cols(Var a, std::size_t begin, std::size_t end) {
    return push(TapeOp::slice_cols, a, a, 0.0, begin, end);
  }
  /// Sum over all entries of the Bernoulli negative log-likelihood of
  /// `targets` under sigmoid(logits), computed in the overflow-free form.
  Var sigmoid_cross_entropy(Var logits, Var targets) {
    return push(TapeOp::sigmoid_cross_entropy, logits, targets);
  }
  /// Sum over rows of -sum_j t_j log softmax(logits)_j.
  Var softmax_cross_entropy(Var logits, Var targets) {
    return push(TapeOp::softmax_cross_entropy, logits, targets);
  }
  /// Sum of the Huber loss with unit threshold.
  Var smooth_l1(Var prediction, Var target) { return push(TapeOp::smooth_l1, prediction, target); }

  const Matrix<T>& value(Var v) const { return value_of(nodes_.at(v.index)); }

  /// Adjoint of `v` after `backward`; zeros of the right shape if `v` took no
  /// part in the loss.
  Matrix<T> grad(Var v) const {
    const auto& g = grads_.at(v.index);
    if (!g.empty() || value(v).empty()) return g;
    return Matrix<T>(value(v).rows(), value(v).cols());
  }

  /// Moves the adjoint out of the tape (zeros if `v` took no part).
  Matrix<T> take_grad(Var v) {
    auto& g = grads_.at(v.index);
    if (g.empty()) return Matrix<T>(value(v).rows(), value(v).cols());
    return std::move(g);
  }

  TapeOp op(Var v) const { return nodes_.at(v.index).op; }
  std::size_t size() const noexcept { return nodes_.size(); }

  void backward(Var loss) {
    const Matrix<T>& l = value(loss);
    if (l.rows() != 1 || l.cols() != 1) {
      throw ContractError("backward: loss must be 1x1, got " + shape_string(l.rows(), l.cols()));
    }
    for (auto& g : grads_) g = Matrix<T>();
    grads_[loss.index] = Matrix<T>(1, 1, T{1});
    for (std::size_t i = loss.index + 1; i-- > 0;) {
      const Node& n = nodes_[i];
      if (n.op == TapeOp::leaf || !n.requires_grad || grads_[i].empty()) continue;
      propagate(i);
    }
  }

  /// Recomputes every non-leaf value from the leaves in record order.
  void replay() {
    for (auto& n : nodes_) {
      if (n.op != TapeOp::leaf) n.owned = compute(n);
    }
  }

 private:
  struct Node {
    TapeOp op = TapeOp::leaf;
    std::uint32_t a = 0;
    std::uint32_t b = 0;
    double scalar = 0.0;
    std::size_t begin = 0;
    std::size_t end = 0;
    bool requires_grad = false;
    const Matrix<T>* borrowed = nullptr;
    Matrix<T> owned;
  };

  static const Matrix<T>& value_of(const Node& n) { return n.borrowed ? *n.borrowed : n.owned; }
  const Matrix<T>& in(std::uint32_t i) const { return value_of(nodes_[i]); }

  Var push_leaf(const Matrix<T>* borrowed, Matrix<T> owned, bool requires_grad) {
    Node n;
    n.borrowed = borrowed;
    n.owned = std::move(owned);
    n.requires_grad = requires_grad;
    nodes_.push_back(std::move(n));
    grads_.emplace_back();
    return Var{std::uint32_t(nodes_.size() - 1)};
  }

  Var push(TapeOp op, Var a, Var b, double scalar = 0.0, std::size_t begin = 0,
           std::size_t end = 0) {
    if (a.index >= nodes_.size() || b.index >= nodes_.size()) {
      throw ContractError("tape: variable from another tape");
    }
    Node n;
    n.op = op;
    n.a = a.index;
    n.b = b.index;
    n.scalar = scalar;
    n.begin = begin;
    n.end = end;
    n.requires_grad = nodes_[a.index].requires_grad ||
                      (is_binary(op) && nodes_[b.index].requires_grad && !has_constant_rhs(op));
    n.owned = compute(n);
    nodes_.push_back(std::move(n));
    grads_.emplace_back();
    return Var{std::uint32_t(nodes_.size() - 1)};
  }

  static bool is_binary(TapeOp op) {
    switch (op) {
      case TapeOp::matmul:
      case TapeOp::add_bias:
      case TapeOp::add:
      case TapeOp::sub:
      case TapeOp::mul:
      case TapeOp::sigmoid_cross_entropy:
      case TapeOp::softmax_cross_entropy:
      case TapeOp::smooth_l1:
        return true;
      default:
        return false;
    }
  }

  // Loss targets are never differentiated.
  static bool has_constant_rhs(TapeOp op) {
    return op == TapeOp::sigmoid_cross_entropy || op == TapeOp::softmax_cross_entropy ||
           op == TapeOp::smooth_l1;
  }

  template <typename F>
  static Matrix<T> unary(const Matrix<T>& x, F f) {
    Matrix<T> y(x.rows(), x.cols());
    y.map().array() = f(x.map().array());
    return y;
  }

  Matrix<T> compute(const Node& n) const {
    switch (n.op) {
      case TapeOp::leaf:
        return value_of(n);
      case TapeOp::matmul:
        return bvae::matmul(in(n.a), in(n.b));
      case TapeOp::add_bias: {
        const auto& x = in(n.a);
        const auto& bias = in(n.b);
        if (bias.rows() != 1 || bias.cols() != x.cols()) {
          throw ShapeError("add_bias: bias " + shape_string(bias.rows(), bias.cols()) +
                           " for input " + shape_string(x.rows(), x.cols()));
        }
        Matrix<T> y = x;
        y.map().rowwise() += bias.map().row(0);
        return y;
      }
      case TapeOp::add:
      case TapeOp::sub:
      case TapeOp::mul: {
        const auto& a = in(n.a);
        const auto& b = in(n.b);
        require_same_shape(a, b, "elementwise op");
        Matrix<T> y(a.rows(), a.cols());
        if (n.op == TapeOp::add) y.map() = a.map() + b.map();
        if (n.op == TapeOp::sub) y.map() = a.map() - b.map();
        if (n.op == TapeOp::mul) y.map() = a.map().cwiseProduct(b.map());
        return y;
      }
      case TapeOp::scale:
        return unary(in(n.a), [s = T(n.scalar)](auto x) { return x * s; });
      case TapeOp::add_scalar:
        return unary(in(n.a), [s = T(n.scalar)](auto x) { return x + s; });
      case TapeOp::relu:
        return unary(in(n.a), [](auto x) { return x.max(T{0}); });
      case TapeOp::tanh:
        return unary(in(n.a), [](auto x) { return x.tanh(); });
      case TapeOp::sigmoid:
        return unary(in(n.a), [](auto x) { return x.logistic(); });
      case TapeOp::exp:
        return unary(in(n.a), [](auto x) { return x.exp(); });
      case TapeOp::log:
        return unary(in(n.a), [](auto x) { return x.log(); });
      case TapeOp::square:
        return unary(in(n.a), [](auto x) { return x.square(); });
      case TapeOp::sum:
        return Matrix<T>(1, 1, T(bvae::sum(in(n.a))));
      case TapeOp::mean: {
        const auto& x = in(n.a);
        if (x.empty()) throw ContractError("mean of empty matrix");
        return Matrix<T>(1, 1, T(bvae::sum(x) / double(x.size())));
      }
      case TapeOp::slice_cols: {
        const auto& x = in(n.a);
        if (n.begin > n.end || n.end > x.cols()) throw ShapeError("slice_cols: bad column range");
        Matrix<T> y(x.rows(), n.end - n.begin);
        for (std::size_t r = 0; r < x.rows(); ++r) {
          std::copy_n(x.row(r).begin() + std::ptrdiff_t(n.begin), y.cols(), y.row(r).begin());
        }
        return y;
      }
      case TapeOp::sigmoid_cross_entropy: {
        const auto& l = in(n.a);
        const auto& t = in(n.b);
        require_same_shape(l, t, "sigmoid_cross_entropy");
        // max(x, 0) - x t + log(1 + exp(-|x|)), summed row by row in double
        const auto x = l.map().array();
        const auto terms = x.max(T{0}) - x * t.map().array() + (-x.abs()).exp().log1p();
        double acc = 0.0;
        for (Eigen::Index r = 0; r < x.rows(); ++r) acc += double(terms.row(r).sum());
        return Matrix<T>(1, 1, T(acc));
      }
      case TapeOp::softmax_cross_entropy: {
        const auto& l = in(n.a);
        const auto& t = in(n.b);
        require_same_shape(l, t, "softmax_cross_entropy");
        double acc = 0.0;
        for (std::size_t r = 0; r < l.rows(); ++r) {
          const auto row = l.row(r);
          const double mx = *std::max_element(row.begin(), row.end());
          double z = 0.0;
          for (T v : row) z += std::exp(double(v) - mx);
          const double log_z = mx + std::log(z);
          for (std::size_t c = 0; c < l.cols(); ++c) acc -= double(t(r, c)) * (double(row[c]) - log_z);
        }
        return Matrix<T>(1, 1, T(acc));
      }
      case TapeOp::smooth_l1: {
        const auto& p = in(n.a);
        const auto& t = in(n.b);
        require_same_shape(p, t, "smooth_l1");
        double acc = 0.0;
        for (std::size_t i = 0; i < p.size(); ++i) {
          const double d = std::abs(double(p[i]) - double(t[i]));
          acc += d < 1.0 ? 0.5 * d * d : d - 0.5;
        }
        return Matrix<T>(1, 1, T(acc));
      }
    }
    throw ContractError("tape: unknown op");
  }

  void accumulate(std::uint32_t i, Matrix<T> g) {
    if (!nodes_[i].requires_grad) return;
    if (grads_[i].empty()) {
      grads_[i] = std::move(g);
    } else {
      grads_[i].map() += g.map();
    }
  }

  // upstream * f(x), with f written against Eigen arrays
  template <typename F>
  Matrix<T> elementwise(const Matrix<T>& upstream, const Matrix<T>& x, F f) const {
    Matrix<T> g(x.rows(), x.cols());
    g.map().array() = upstream.map().array() * f(x.map().array());
    return g;
  }

  void propagate(std::size_t i) {
    const Node& n = nodes_[i];
    const Matrix<T>& dy = grads_[i];
    const Matrix<T>& y = n.owned;
    const bool ga = nodes_[n.a].requires_grad;
    const bool gb = nodes_[n.b].requires_grad;
    switch (n.op) {
      case TapeOp::leaf:
        return;
      case TapeOp::matmul:
        if (ga) accumulate(n.a, matmul_nt(dy, in(n.b)));
        if (gb) accumulate(n.b, matmul_tn(in(n.a), dy));
        return;
      case TapeOp::add_bias: {
        if (ga) accumulate(n.a, dy);
        if (gb) {
          Matrix<T> db(1, dy.cols());
          std::vector<double> acc(dy.cols(), 0.0);
          for (std::size_t r = 0; r < dy.rows(); ++r) {
            auto row = dy.row(r);
            for (std::size_t c = 0; c < dy.cols(); ++c) acc[c] += row[c];
          }
          for (std::size_t c = 0; c < dy.cols(); ++c) db[c] = T(acc[c]);
          accumulate(n.b, std::move(db));
        }
        return;
      }
      case TapeOp::add:
        if (ga) accumulate(n.a, dy);
        if (gb) accumulate(n.b, dy);
        return;
      case TapeOp::sub:
        if (ga) accumulate(n.a, dy);
        if (gb) {
          Matrix<T> neg = dy;
          neg.map() *= T{-1};
          accumulate(n.b, std::move(neg));
        }
        return;
      case TapeOp::mul:
        if (ga) {
          Matrix<T> g(dy.rows(), dy.cols());
          g.map() = dy.map().cwiseProduct(in(n.b).map());
          accumulate(n.a, std::move(g));
        }
        if (gb) {
          Matrix<T> g(dy.rows(), dy.cols());
          g.map() = dy.map().cwiseProduct(in(n.a).map());
          accumulate(n.b, std::move(g));
        }
        return;
      case TapeOp::scale: {
        Matrix<T> g = dy;
        g.map() *= T(n.scalar);
        accumulate(n.a, std::move(g));
        return;
      }
      case TapeOp::add_scalar:
        accumulate(n.a, dy);
        return;
      case TapeOp::relu:
        accumulate(n.a, elementwise(dy, y, [](auto v) { return (v > T{0}).template cast<T>(); }));
        return;
      case TapeOp::tanh:
        accumulate(n.a, elementwise(dy, y, [](auto v) { return T{1} - v.square(); }));
        return;
      case TapeOp::sigmoid:
        accumulate(n.a, elementwise(dy, y, [](auto v) { return v * (T{1} - v); }));
        return;
      case TapeOp::exp:
        accumulate(n.a, elementwise(dy, y, [](auto v) { return v; }));
        return;
      case TapeOp::log:
        accumulate(n.a, elementwise(dy, in(n.a), [](auto v) { return v.inverse(); }));
        return;
      case TapeOp::square:
        accumulate(n.a, elementwise(dy, in(n.a), [](auto v) { return T{2} * v; }));
        return;
      case TapeOp::sum:
      case TapeOp::mean: {
        const auto& x = in(n.a);
        T g = dy[0];
        if (n.op == TapeOp::mean) g = T(double(g) / double(x.size()));
        accumulate(n.a, Matrix<T>(x.rows(), x.cols(), g));
        return;
      }
      case TapeOp::slice_cols: {
        const auto& x = in(n.a);
        Matrix<T> g(x.rows(), x.cols());
        for (std::size_t r = 0; r < x.rows(); ++r) {
          std::copy(dy.row(r).begin(), dy.row(r).end(),
                    g.row(r).begin() + std::ptrdiff_t(n.begin));
        }
        accumulate(n.a, std::move(g));
        return;
      }
      case TapeOp::sigmoid_cross_entropy: {
        const auto& l = in(n.a);
        const auto& t = in(n.b);
        const T up = dy[0];
        Matrix<T> g(l.rows(), l.cols());
        g.map().array() = up * (l.map().array().logistic() - t.map().array());
        accumulate(n.a, std::move(g));
        return;
      }
      case TapeOp::softmax_cross_entropy: {
        const auto& l = in(n.a);
        const auto& t = in(n.b);
        const T up = dy[0];
        Matrix<T> g(l.rows(), l.cols());
        for (std::size_t r = 0; r < l.rows(); ++r) {
          const auto row = l.row(r);
          const double mx = *std::max_element(row.begin(), row.end());
          double z = 0.0;
          for (T v : row) z += std::exp(double(v) - mx);
          double tsum = 0.0;
          for (std::size_t c = 0; c < l.cols(); ++c) tsum += double(t(r, c));
          for (std::size_t c = 0; c < l.cols(); ++c) {
            const double p = std::exp(double(row[c]) - mx) / z;
            g(r, c) = up * T(tsum * p - double(t(r, c)));
          }
        }
        accumulate(n.a, std::move(g));
        return;
      }
      case TapeOp::smooth_l1: {
        const auto& p = in(n.a);
        const auto& t = in(n.b);
        const T up = dy[0];
        Matrix<T> g(p.rows(), p.cols());
        for (std::size_t k = 0; k < p.size(); ++k) {
          const T d = p[k] - t[k];
          g[k] = up * std::clamp(d, T{-1}, T{1});
        }
        accumulate(n.a, std::move(g));
        return;
      }
    }
  }

  std::vector<Node> nodes_;
  std::vector<Matrix<T>> grads_;
};

}  // namespace bvae
