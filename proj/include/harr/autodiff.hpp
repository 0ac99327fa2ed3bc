// Copyright 2026 The harr Authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

// Define-by-run reverse-mode differentiation over dense row-major matrices.
//
// A Graph is built once per loss evaluation and differentiated once. Node ids
// are assigned in creation order, so inputs always precede their consumers and
// a reverse sweep over the node list is a valid topological order.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <map>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "harr/error.hpp"

namespace harr {

/// Row-major rows x cols matrix of doubles. Scalars are 1x1.
class Array {
 public:
  Array() = default;
  Array(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
  Array(std::size_t rows, std::size_t cols, std::vector<double> data)
      : rows_(rows), cols_(cols), data_(std::move(data)) {
    if (data_.size() != rows_ * cols_) {
      throw InvalidArgument("Array: data length does not match shape");
    }
  }

  static Array row(std::vector<double> values) {
    const auto n = values.size();
    return Array(1, n, std::move(values));
  }
  static Array scalar(double v) { return Array(1, 1, v); }

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }
  std::vector<std::size_t> shape() const { return {rows_, cols_}; }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }
  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  std::span<double> data() noexcept { return data_; }
  std::span<const double> data() const noexcept { return data_; }
  std::span<const double> row_span(std::size_t r) const {
    return std::span<const double>(data_).subspan(r * cols_, cols_);
  }

  bool all_finite() const {
    return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
  }

  Array transposed() const {
    Array t(cols_, rows_);
    for (std::size_t r = 0; r < rows_; ++r)
      for (std::size_t c = 0; c < cols_; ++c) t(c, r) = (*this)(r, c);
    return t;
  }

  friend bool operator==(const Array& a, const Array& b) {
    return a.rows_ == b.rows_ && a.cols_ == b.cols_ && a.data_ == b.data_;
  }

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

inline std::string shape_string(const Array& a) {
  std::ostringstream os;
  os << a.rows() << "x" << a.cols();
  return os.str();
}

// Forward kernels shared by the graph and by the plain (no-graph) encoder path,
// so both produce bit-identical values.
namespace kernels {

inline Array matmul(const Array& a, const Array& b) {
  Array out(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    for (std::size_t k = 0; k < a.cols(); ++k) {
      const double aik = a(i, k);
      for (std::size_t j = 0; j < b.cols(); ++j) out(i, j) += aik * b(k, j);
    }
  }
  return out;
}

inline Array row_mean(const Array& a) {
  Array out(1, a.cols());
  for (std::size_t r = 0; r < a.rows(); ++r)
    for (std::size_t c = 0; c < a.cols(); ++c) out(0, c) += a(r, c);
  const double inv = 1.0 / static_cast<double>(a.rows());
  for (std::size_t c = 0; c < a.cols(); ++c) out(0, c) *= inv;
  return out;
}

inline Array gather_rows(const Array& table, std::span<const int> ids) {
  Array out(ids.size(), table.cols());
  for (std::size_t i = 0; i < ids.size(); ++i) {
    const auto src = table.row_span(static_cast<std::size_t>(ids[i]));
    std::copy(src.begin(), src.end(), out.data().begin() + static_cast<std::ptrdiff_t>(i * table.cols()));
  }
  return out;
}

inline double norm(std::span<const double> v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

inline Array unit_normalize(const Array& v) {
  const double n = norm(v.data());
  Array out = v;
  for (double& x : out.data()) x /= n;
  return out;
}

inline double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

}  // namespace kernels

/// Sentinel carried by masked logits. Finite so that no NaN can arise.
inline constexpr double kMaskedLogit = -1e30;

/// Masked, temperature-scaled log-softmax over a score row. `masked[i]` true
/// excludes entry i from the normalizer; its output is kMaskedLogit.
inline std::vector<double> masked_log_softmax_values(std::span<const double> scores,
                                                     const std::vector<bool>& masked,
                                                     double temperature) {
  if (!(temperature > 0.0)) throw InvalidArgument("masked_log_softmax: temperature must be > 0");
  if (masked.size() != scores.size()) throw InvalidArgument("masked_log_softmax: mask length mismatch");
  std::vector<double> z(scores.size(), kMaskedLogit);
  double mx = kMaskedLogit;
  bool any = false;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (masked[i]) continue;
    z[i] = scores[i] / temperature;
    mx = any ? std::max(mx, z[i]) : z[i];
    any = true;
  }
  if (!any) throw InvalidArgument("masked_log_softmax: every entry is masked");
  double sum = 0.0;
  for (std::size_t i = 0; i < scores.size(); ++i)
    if (!masked[i]) sum += std::exp(z[i] - mx);
  const double lse = mx + std::log(sum);
  for (std::size_t i = 0; i < scores.size(); ++i)
    if (!masked[i]) z[i] -= lse;
  return z;
}

/// Handle to a node inside a Graph.
struct Var {
  std::size_t id = 0;
};

enum class OpKind {
  kLeaf,
  kMatMul,
  kRowMean,
  kGatherRows,
  kUnitNormalize,
  kDot,
  kMaskedLogSoftmax,
  kElement,
  kAdd,
  kSum,
  kScale,
  kClippedSurrogate,
};

/// Leaf node id -> gradient, for every leaf created with requires_grad.
using GradientMap = std::map<std::size_t, Array>;

class Graph {
 public:
  Var leaf(Array values, bool requires_grad) {
    if (!values.all_finite()) throw InvalidArgument("leaf: non-finite input");
    return push(OpKind::kLeaf, {}, std::move(values), requires_grad, nullptr);
  }

  Var matmul(Var a, Var b) {
    const Array& av = value(a);
    const Array& bv = value(b);
    if (av.cols() != bv.rows()) {
      throw InvalidArgument("matmul: shape mismatch " + shape_string(av) + " * " + shape_string(bv));
    }
    return push(OpKind::kMatMul, {a.id, b.id}, kernels::matmul(av, bv), any_grad({a, b}),
                [a, b](Graph& g, const Array& up) {
                  if (g.needs(a)) g.accumulate(a, kernels::matmul(up, g.value(b).transposed()));
                  if (g.needs(b)) g.accumulate(b, kernels::matmul(g.value(a).transposed(), up));
                });
  }

  Var row_mean(Var a) {
    const Array& av = value(a);
    if (av.rows() == 0 || av.cols() == 0) throw InvalidArgument("row_mean: empty input");
    return push(OpKind::kRowMean, {a.id}, kernels::row_mean(av), any_grad({a}),
                [a](Graph& g, const Array& up) {
                  const Array& in = g.value(a);
                  Array d(in.rows(), in.cols());
                  const double inv = 1.0 / static_cast<double>(in.rows());
                  for (std::size_t r = 0; r < in.rows(); ++r)
                    for (std::size_t c = 0; c < in.cols(); ++c) d(r, c) = up(0, c) * inv;
                  g.accumulate(a, d);
                });
  }

  Var gather_rows(Var table, std::vector<int> ids) {
    const Array& tv = value(table);
    for (int id : ids) {
      if (id < 0 || static_cast<std::size_t>(id) >= tv.rows()) {
        throw InvalidArgument("gather_rows: id " + std::to_string(id) + " out of range [0," +
                              std::to_string(tv.rows()) + ")");
      }
    }
    Array out = kernels::gather_rows(tv, ids);
    return push(OpKind::kGatherRows, {table.id}, std::move(out), any_grad({table}),
                [table, ids = std::move(ids)](Graph& g, const Array& up) {
                  Array& dt = g.grad_slot(table);
                  for (std::size_t i = 0; i < ids.size(); ++i)
                    for (std::size_t c = 0; c < up.cols(); ++c)
                      dt(static_cast<std::size_t>(ids[i]), c) += up(i, c);
                });
  }

  Var unit_normalize(Var v) {
    const Array& vv = value(v);
    if (vv.rows() != 1) throw InvalidArgument("unit_normalize: expects a row vector");
    const double n = kernels::norm(vv.data());
    if (!(n > 1e-12)) throw InvalidArgument("unit_normalize: near-zero norm");
    return push(OpKind::kUnitNormalize, {v.id}, kernels::unit_normalize(vv), any_grad({v}),
                [v, n](Graph& g, const Array& up) {
                  // d(v/|v|) = (I - u u^T) / |v|
                  const Array& u = g.value(Var{g.current_});
                  const double proj = kernels::dot(up.data(), u.data());
                  Array d(1, u.cols());
                  for (std::size_t c = 0; c < u.cols(); ++c) d(0, c) = (up(0, c) - proj * u(0, c)) / n;
                  g.accumulate(v, d);
                });
  }

  Var dot(Var a, Var b) {
    const Array& av = value(a);
    const Array& bv = value(b);
    if (av.size() != bv.size()) throw InvalidArgument("dot: length mismatch");
    return push(OpKind::kDot, {a.id, b.id}, Array::scalar(kernels::dot(av.data(), bv.data())),
                any_grad({a, b}), [a, b](Graph& g, const Array& up) {
                  const double s = up[0];
                  if (g.needs(a)) {
                    Array d = g.value(b);
                    for (double& x : d.data()) x *= s;
                    g.accumulate(a, d);
                  }
                  if (g.needs(b)) {
                    Array d = g.value(a);
                    for (double& x : d.data()) x *= s;
                    g.accumulate(b, d);
                  }
                });
  }

  Var masked_log_softmax(Var scores, std::vector<bool> masked, double temperature) {
    const Array& sv = value(scores);
    if (sv.rows() != 1) throw InvalidArgument("masked_log_softmax: expects a row vector");
    Array out = Array::row(masked_log_softmax_values(sv.data(), masked, temperature));
    return push(OpKind::kMaskedLogSoftmax, {scores.id}, std::move(out), any_grad({scores}),
                [scores, masked = std::move(masked), temperature](Graph& g, const Array& up) {
                  const Array& y = g.value(Var{g.current_});
                  double total = 0.0;
                  for (std::size_t i = 0; i < y.cols(); ++i)
                    if (!masked[i]) total += up(0, i);
                  Array d(1, y.cols());
                  for (std::size_t i = 0; i < y.cols(); ++i) {
                    if (masked[i]) continue;
                    d(0, i) = (up(0, i) - std::exp(y(0, i)) * total) / temperature;
                  }
                  g.accumulate(scores, d);
                });
  }

  /// Flat-index element of a node as a scalar node.
  Var element(Var a, std::size_t index) {
    const Array& av = value(a);
    if (index >= av.size()) throw InvalidArgument("element: index out of range");
    return push(OpKind::kElement, {a.id}, Array::scalar(av[index]), any_grad({a}),
                [a, index](Graph& g, const Array& up) {
                  g.grad_slot(a)[index] += up[0];
                });
  }

  Var add(Var a, Var b) {
    const Array& av = value(a);
    const Array& bv = value(b);
    if (av.rows() != bv.rows() || av.cols() != bv.cols()) throw InvalidArgument("add: shape mismatch");
    Array out = av;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += bv[i];
    return push(OpKind::kAdd, {a.id, b.id}, std::move(out), any_grad({a, b}),
                [a, b](Graph& g, const Array& up) {
                  if (g.needs(a)) g.accumulate(a, up);
                  if (g.needs(b)) g.accumulate(b, up);
                });
  }

  /// Sum of scalar nodes. An empty list yields a constant zero.
  Var sum(const std::vector<Var>& terms) {
    double s = 0.0;
    std::vector<std::size_t> ids;
    ids.reserve(terms.size());
    bool rg = false;
    for (Var t : terms) {
      const Array& tv = value(t);
      if (tv.size() != 1) throw InvalidArgument("sum: terms must be scalars");
      s += tv[0];
      ids.push_back(t.id);
      rg = rg || nodes_[t.id].requires_grad;
    }
    return push(OpKind::kSum, ids, Array::scalar(s), rg, [terms](Graph& g, const Array& up) {
      for (Var t : terms)
        if (g.needs(t)) g.grad_slot(t)[0] += up[0];
    });
  }

  Var scale(Var a, double factor) {
    Array out = value(a);
    for (double& x : out.data()) x *= factor;
    return push(OpKind::kScale, {a.id}, std::move(out), any_grad({a}),
                [a, factor](Graph& g, const Array& up) {
                  Array d = up;
                  for (double& x : d.data()) x *= factor;
                  g.accumulate(a, d);
                });
  }

  /// min(rho * A, clip(rho, 1-eps, 1+eps) * A) with rho = exp(log_prob - old_log_prob).
  Var clipped_surrogate(Var log_prob, double old_log_prob, double advantage, double eps) {
    const Array& lp = value(log_prob);
    if (lp.size() != 1) throw InvalidArgument("clipped_surrogate: log_prob must be scalar");
    const double rho = std::exp(lp[0] - old_log_prob);
    const double unclipped = rho * advantage;
    const double clipped = std::clamp(rho, 1.0 - eps, 1.0 + eps) * advantage;
    const bool take_unclipped = unclipped <= clipped;
    return push(OpKind::kClippedSurrogate, {log_prob.id},
                Array::scalar(take_unclipped ? unclipped : clipped), any_grad({log_prob}),
                [log_prob, take_unclipped, unclipped](Graph& g, const Array& up) {
                  if (take_unclipped) g.grad_slot(log_prob)[0] += up[0] * unclipped;
                });
  }

  const Array& value(Var v) const { return nodes_.at(v.id).value; }
  OpKind kind(Var v) const { return nodes_.at(v.id).kind; }
  const std::vector<std::size_t>& inputs(Var v) const { return nodes_.at(v.id).inputs; }
  bool requires_grad(Var v) const { return nodes_.at(v.id).requires_grad; }
  /// True for leaves created with requires_grad.
  bool has_grad_slot(Var v) const {
    const Node& n = nodes_.at(v.id);
    return n.kind == OpKind::kLeaf && n.requires_grad;
  }
  std::size_t node_count() const noexcept { return nodes_.size(); }
  bool consumed() const noexcept { return consumed_; }

  /// Reverse sweep from a scalar loss. A graph can be differentiated once.
  GradientMap backward(Var loss) {
    if (consumed_) throw InvalidArgument("backward: graph already consumed");
    if (value(loss).size() != 1) throw InvalidArgument("backward: loss must be a scalar");
    consumed_ = true;
    grads_.assign(nodes_.size(), Array());
    if (nodes_[loss.id].requires_grad) grads_[loss.id] = Array::scalar(1.0);
    for (std::size_t i = loss.id + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (!n.requires_grad || grads_[i].empty() || !n.backward) continue;
      current_ = i;
      n.backward(*this, grads_[i]);
    }
    GradientMap out;
    for (std::size_t i = 0; i < nodes_.size(); ++i) {
      if (nodes_[i].kind != OpKind::kLeaf || !nodes_[i].requires_grad) continue;
      out.emplace(i, grads_[i].empty() ? Array(nodes_[i].value.rows(), nodes_[i].value.cols())
                                       : std::move(grads_[i]));
    }
    return out;
  }

 private:
  struct Node {
    OpKind kind;
    std::vector<std::size_t> inputs;
    Array value;
    bool requires_grad;
    std::function<void(Graph&, const Array&)> backward;
  };

  Var push(OpKind kind, std::vector<std::size_t> inputs, Array value, bool requires_grad,
           std::function<void(Graph&, const Array&)> backward) {
    if (consumed_) throw InvalidArgument("graph already consumed");
    nodes_.push_back(Node{kind, std::move(inputs), std::move(value), requires_grad, std::move(backward)});
    return Var{nodes_.size() - 1};
  }

  bool any_grad(std::initializer_list<Var> vs) const {
    for (Var v : vs)
      if (nodes_.at(v.id).requires_grad) return true;
    return false;
  }

  bool needs(Var v) const { return nodes_[v.id].requires_grad; }

  Array& grad_slot(Var v) {
    Array& g = grads_[v.id];
    if (g.empty()) g = Array(nodes_[v.id].value.rows(), nodes_[v.id].value.cols());
    return g;
  }

  void accumulate(Var v, const Array& d) {
    if (!needs(v)) return;
    Array& g = grad_slot(v);
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += d[i];
  }

  std::vector<Node> nodes_;
  std::vector<Array> grads_;
  std::size_t current_ = 0;
  bool consumed_ = false;
};

/// Builds a scalar from a single input leaf inside a fresh graph.
using ScalarBuilder = std::function<Var(Graph&, Var)>;

/// Compares the autodiff gradient of `build` at x with a central-difference
/// estimate. Returns max_i |g_ad - g_fd| / max(1, |g_fd|).
inline double finite_diff_check(const ScalarBuilder& build, const Array& x, double h) {
  if (!(h > 0.0)) throw InvalidArgument("finite_diff_check: step must be > 0");
  Graph g;
  const Var in = g.leaf(x, true);
  const Var out = build(g, in);
  const Array grad = g.backward(out).at(in.id);

  auto eval = [&](const Array& point) {
    Graph fg;
    const Var v = fg.leaf(point, false);
    return fg.value(build(fg, v))[0];
  };
  double worst = 0.0;
  Array probe = x;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double orig = probe[i];
    probe[i] = orig + h;
    const double fp = eval(probe);
    probe[i] = orig - h;
    const double fm = eval(probe);
    probe[i] = orig;
    const double fd = (fp - fm) / (2.0 * h);
    worst = std::max(worst, std::abs(grad[i] - fd) / std::max(1.0, std::abs(fd)));
  }
  return worst;
}

}  // namespace harr
