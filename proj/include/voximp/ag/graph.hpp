// Copyright 2026 The voximp Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

// Define-by-run reverse-mode differentiation over dense row-major matrices.
//
// A Graph records every operation applied to its Vars together with a
// closure that maps the output gradient onto the inputs. Calling backward()
// on a 1x1 Var replays the closures in reverse creation order. Parameters
// enter as leaves whose gradients accumulate straight into caller-owned
// storage, so one graph per training step is the intended lifetime.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <deque>
#include <functional>
#include <initializer_list>
#include <limits>
#include <string>
#include <type_traits>
#include <utility>
#include <vector>

#include "voximp/error.hpp"

namespace voximp::ag {

using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Index = Eigen::Index;

class Graph;

class Var {
 public:
  Var() = default;
  Var(Graph* graph, int id) : graph_(graph), id_(id) {}

  const Mat& value() const;
  Index rows() const { return value().rows(); }
  Index cols() const { return value().cols(); }
  Graph* graph() const { return graph_; }
  int id() const { return id_; }
  bool valid() const { return graph_ != nullptr && id_ >= 0; }

 private:
  Graph* graph_ = nullptr;
  int id_ = -1;
};

class Graph {
 public:
  using Backward = std::function<void(Graph&, int, const Mat&)>;

  /// With record == false no backward closures are kept (inference mode).
  explicit Graph(bool record = true) : record_(record) {}
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  bool recording() const { return record_; }

  Var constant(Mat value) {
    Node& n = nodes_.emplace_back();
    n.value = std::move(value);
    return Var(this, static_cast<int>(nodes_.size()) - 1);
  }

  /// Constant that aliases caller storage; the caller keeps it alive.
  Var constant_ref(const Mat& value) {
    Node& n = nodes_.emplace_back();
    n.ext = &value;
    return Var(this, static_cast<int>(nodes_.size()) - 1);
  }

  /// Leaf whose gradient is kept on the node (read back with grad()).
  Var input(Mat value) {
    Node& n = nodes_.emplace_back();
    n.value = std::move(value);
    n.needs_grad = record_;
    return Var(this, static_cast<int>(nodes_.size()) - 1);
  }

  /// Trainable leaf. Gradients are added into `grad`, which must already
  /// have the shape of `value`. Passing nullptr makes the leaf a frozen
  /// constant.
  Var param(const Mat& value, Mat* grad) {
    Node& n = nodes_.emplace_back();
    n.ext = &value;
    n.ext_grad = grad;
    n.needs_grad = record_ && grad != nullptr;
    return Var(this, static_cast<int>(nodes_.size()) - 1);
  }

  Var op(Mat value, std::initializer_list<Var> inputs, Backward bw) {
    bool needs = false;
    if (record_) {
      for (const Var& v : inputs) needs = needs || nodes_[v.id()].needs_grad;
    }
    Node& n = nodes_.emplace_back();
    n.value = std::move(value);
    n.needs_grad = needs;
    if (needs) n.bw = std::move(bw);
    return Var(this, static_cast<int>(nodes_.size()) - 1);
  }

  Var op(Mat value, const std::vector<Var>& inputs, Backward bw) {
    bool needs = false;
    if (record_) {
      for (const Var& v : inputs) needs = needs || nodes_[v.id()].needs_grad;
    }
    Node& n = nodes_.emplace_back();
    n.value = std::move(value);
    n.needs_grad = needs;
    if (needs) n.bw = std::move(bw);
    return Var(this, static_cast<int>(nodes_.size()) - 1);
  }

  const Mat& value(int id) const {
    const Node& n = nodes_[id];
    return n.ext != nullptr ? *n.ext : n.value;
  }

  bool needs_grad(int id) const { return nodes_[id].needs_grad; }
  bool needs_grad(Var v) const { return nodes_[v.id()].needs_grad; }

  template <class Expr>
  void accumulate(int id, const Expr& expr) {
    Node& n = nodes_[id];
    if (!n.needs_grad) return;
    const auto& g = as_matrix(expr);
    if (n.ext_grad != nullptr) {
      *n.ext_grad += g;
    } else if (n.grad.size() == 0) {
      n.grad = g;
    } else {
      n.grad += g;
    }
  }

  /// Gradient held on a non-parameter node; empty when nothing reached it.
  const Mat& grad(Var v) const { return nodes_[v.id()].grad; }

  void backward(Var loss, double seed = 1.0) {
    if (!record_) fail(ErrorCode::kInvalidArgument, "backward on a non-recording graph");
    const Mat& lv = value(loss.id());
    if (lv.rows() != 1 || lv.cols() != 1) {
      fail(ErrorCode::kShapeError, "backward requires a 1x1 loss");
    }
    if (!nodes_[loss.id()].needs_grad) return;
    nodes_[loss.id()].grad = Mat::Constant(1, 1, seed);
    for (int id = loss.id(); id >= 0; --id) {
      Node& n = nodes_[id];
      if (!n.bw || n.grad.size() == 0) continue;
      n.bw(*this, id, n.grad);
    }
  }

  std::size_t size() const { return nodes_.size(); }

 private:
  template <class Expr>
  static decltype(auto) as_matrix(const Expr& e) {
    if constexpr (std::is_base_of_v<Eigen::ArrayBase<Expr>, Expr>) {
      return e.matrix();
    } else {
      return (e);
    }
  }

 public:

 private:
  struct Node {
    Mat value;
    const Mat* ext = nullptr;
    Mat grad;
    Mat* ext_grad = nullptr;
    bool needs_grad = false;
    Backward bw;
  };

  std::deque<Node> nodes_;
  bool record_;
};

inline const Mat& Var::value() const { return graph_->value(id_); }

namespace detail {

inline void require_same_shape(const Var& a, const Var& b, const char* what) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    fail(ErrorCode::kShapeError,
         std::string(what) + ": " + std::to_string(a.rows()) + "x" + std::to_string(a.cols()) +
             " vs " + std::to_string(b.rows()) + "x" + std::to_string(b.cols()));
  }
}

inline void require_row(const Var& r, Index cols, const char* what) {
  if (r.rows() != 1 || r.cols() != cols) {
    fail(ErrorCode::kShapeError, std::string(what) + ": expected 1x" + std::to_string(cols) +
                                     " row, got " + std::to_string(r.rows()) + "x" +
                                     std::to_string(r.cols()));
  }
}

}  // namespace detail

// ---- linear algebra -------------------------------------------------------

inline Var matmul(Var a, Var b) {
  if (a.cols() != b.rows()) {
    fail(ErrorCode::kShapeError, "matmul: inner dims " + std::to_string(a.cols()) + " vs " +
                                     std::to_string(b.rows()));
  }
  Graph& g = *a.graph();
  Mat out = a.value() * b.value();
  return g.op(std::move(out), {a, b}, [a, b](Graph& gr, int, const Mat& go) {
    if (gr.needs_grad(a)) gr.accumulate(a.id(), go * b.value().transpose());
    if (gr.needs_grad(b)) gr.accumulate(b.id(), a.value().transpose() * go);
  });
}

/// a * b^T
inline Var matmul_nt(Var a, Var b) {
  if (a.cols() != b.cols()) fail(ErrorCode::kShapeError, "matmul_nt: column mismatch");
  Graph& g = *a.graph();
  Mat out = a.value() * b.value().transpose();
  return g.op(std::move(out), {a, b}, [a, b](Graph& gr, int, const Mat& go) {
    if (gr.needs_grad(a)) gr.accumulate(a.id(), go * b.value());
    if (gr.needs_grad(b)) gr.accumulate(b.id(), go.transpose() * a.value());
  });
}

inline Var transpose(Var a) {
  Graph& g = *a.graph();
  Mat out = a.value().transpose();
  return g.op(std::move(out), {a}, [a](Graph& gr, int, const Mat& go) {
    gr.accumulate(a.id(), go.transpose());
  });
}

// ---- elementwise ----------------------------------------------------------

inline Var add(Var a, Var b) {
  detail::require_same_shape(a, b, "add");
  Graph& g = *a.graph();
  Mat out = a.value() + b.value();
  return g.op(std::move(out), {a, b}, [a, b](Graph& gr, int, const Mat& go) {
    gr.accumulate(a.id(), go);
    gr.accumulate(b.id(), go);
  });
}

inline Var sub(Var a, Var b) {
  detail::require_same_shape(a, b, "sub");
  Graph& g = *a.graph();
  Mat out = a.value() - b.value();
  return g.op(std::move(out), {a, b}, [a, b](Graph& gr, int, const Mat& go) {
    gr.accumulate(a.id(), go);
    gr.accumulate(b.id(), -go);
  });
}

inline Var mul(Var a, Var b) {
  detail::require_same_shape(a, b, "mul");
  Graph& g = *a.graph();
  Mat out = a.value().cwiseProduct(b.value());
  return g.op(std::move(out), {a, b}, [a, b](Graph& gr, int, const Mat& go) {
    if (gr.needs_grad(a)) gr.accumulate(a.id(), go.cwiseProduct(b.value()));
    if (gr.needs_grad(b)) gr.accumulate(b.id(), go.cwiseProduct(a.value()));
  });
}

inline Var operator+(Var a, Var b) { return add(a, b); }
inline Var operator-(Var a, Var b) { return sub(a, b); }

/// Adds a 1xC row to every row of a.
inline Var add_row(Var a, Var row) {
  detail::require_row(row, a.cols(), "add_row");
  Graph& g = *a.graph();
  Mat out = a.value().rowwise() + row.value().row(0);
  return g.op(std::move(out), {a, row}, [a, row](Graph& gr, int, const Mat& go) {
    gr.accumulate(a.id(), go);
    if (gr.needs_grad(row)) gr.accumulate(row.id(), go.colwise().sum());
  });
}

/// Multiplies every row of a elementwise by a 1xC row.
inline Var mul_row(Var a, Var row) {
  detail::require_row(row, a.cols(), "mul_row");
  Graph& g = *a.graph();
  Mat out = a.value().array().rowwise() * row.value().row(0).array();
  return g.op(std::move(out), {a, row}, [a, row](Graph& gr, int, const Mat& go) {
    if (gr.needs_grad(a)) {
      Mat ga = go.array().rowwise() * row.value().row(0).array();
      gr.accumulate(a.id(), ga);
    }
    if (gr.needs_grad(row)) {
      gr.accumulate(row.id(), go.cwiseProduct(a.value()).colwise().sum());
    }
  });
}

/// Multiplies a by the 1x1 Var s.
inline Var mul_scalar(Var a, Var s) {
  if (s.rows() != 1 || s.cols() != 1) fail(ErrorCode::kShapeError, "mul_scalar: s must be 1x1");
  Graph& g = *a.graph();
  const double sv = s.value()(0, 0);
  Mat out = a.value() * sv;
  return g.op(std::move(out), {a, s}, [a, s](Graph& gr, int, const Mat& go) {
    if (gr.needs_grad(a)) gr.accumulate(a.id(), go * s.value()(0, 0));
    if (gr.needs_grad(s)) {
      gr.accumulate(s.id(), Mat::Constant(1, 1, go.cwiseProduct(a.value()).sum()));
    }
  });
}

inline Var scale(Var a, double s) {
  Graph& g = *a.graph();
  Mat out = a.value() * s;
  return g.op(std::move(out), {a}, [a, s](Graph& gr, int, const Mat& go) {
    gr.accumulate(a.id(), go * s);
  });
}

inline Var add_scalar(Var a, double s) {
  Graph& g = *a.graph();
  Mat out = a.value().array() + s;
  return g.op(std::move(out), {a}, [a](Graph& gr, int, const Mat& go) { gr.accumulate(a.id(), go); });
}

inline Var tanh(Var a) {
  Graph& g = *a.graph();
  Mat out = a.value().array().tanh();
  return g.op(std::move(out), {a}, [a](Graph& gr, int self, const Mat& go) {
    const Mat& y = gr.value(self);
    gr.accumulate(a.id(), go.array() * (1.0 - y.array().square()));
  });
}

inline Var sigmoid(Var a) {
  Graph& g = *a.graph();
  Mat out = (1.0 + (-a.value().array()).exp()).inverse();
  return g.op(std::move(out), {a}, [a](Graph& gr, int self, const Mat& go) {
    const Mat& y = gr.value(self);
    gr.accumulate(a.id(), go.array() * y.array() * (1.0 - y.array()));
  });
}

inline Var relu(Var a) {
  Graph& g = *a.graph();
  Mat out = a.value().cwiseMax(0.0);
  return g.op(std::move(out), {a}, [a](Graph& gr, int, const Mat& go) {
    gr.accumulate(a.id(), (a.value().array() > 0.0).select(go, 0.0));
  });
}

inline Var exp(Var a) {
  Graph& g = *a.graph();
  Mat out = a.value().array().exp();
  return g.op(std::move(out), {a}, [a](Graph& gr, int self, const Mat& go) {
    gr.accumulate(a.id(), go.cwiseProduct(gr.value(self)));
  });
}

inline Var log(Var a) {
  Graph& g = *a.graph();
  Mat out = a.value().array().log();
  return g.op(std::move(out), {a}, [a](Graph& gr, int, const Mat& go) {
    gr.accumulate(a.id(), go.cwiseQuotient(a.value()));
  });
}

inline Var square(Var a) {
  Graph& g = *a.graph();
  Mat out = a.value().array().square();
  return g.op(std::move(out), {a}, [a](Graph& gr, int, const Mat& go) {
    gr.accumulate(a.id(), 2.0 * go.cwiseProduct(a.value()));
  });
}

/// Subgradient 0 at 0.
inline Var abs(Var a) {
  Graph& g = *a.graph();
  Mat out = a.value().cwiseAbs();
  return g.op(std::move(out), {a}, [a](Graph& gr, int, const Mat& go) {
    Mat sign = a.value().unaryExpr([](double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); });
    gr.accumulate(a.id(), go.cwiseProduct(sign));
  });
}

/// Gradient reversal: identity forward, multiplies the incoming gradient by
/// -lambda on the way back.
inline Var grl(Var a, double lambda) {
  if (!(lambda >= 0.0)) fail(ErrorCode::kInvalidArgument, "grl: lambda must be >= 0");
  Graph& g = *a.graph();
  Mat out = a.value();
  return g.op(std::move(out), {a}, [a, lambda](Graph& gr, int, const Mat& go) {
    gr.accumulate(a.id(), -lambda * go);
  });
}

// ---- normalisation --------------------------------------------------------

/// Row-wise softmax. When `keep` is given it masks columns: entries with
/// keep[c] == false get weight exactly 0 in every row.
inline Var softmax_rows(Var a, const std::vector<bool>* keep = nullptr) {
  const Mat& x = a.value();
  if (keep != nullptr && static_cast<Index>(keep->size()) != x.cols()) {
    fail(ErrorCode::kShapeError, "softmax_rows: mask length mismatch");
  }
  Mat out(x.rows(), x.cols());
  for (Index r = 0; r < x.rows(); ++r) {
    double mx = -std::numeric_limits<double>::infinity();
    for (Index c = 0; c < x.cols(); ++c) {
      if (keep == nullptr || (*keep)[c]) mx = std::max(mx, x(r, c));
    }
    if (!std::isfinite(mx)) fail(ErrorCode::kEmptySequence, "softmax_rows: every column masked");
    double total = 0.0;
    for (Index c = 0; c < x.cols(); ++c) {
      const double e = (keep == nullptr || (*keep)[c]) ? std::exp(x(r, c) - mx) : 0.0;
      out(r, c) = e;
      total += e;
    }
    out.row(r) /= total;
  }
  Graph& g = *a.graph();
  return g.op(std::move(out), {a}, [a](Graph& gr, int self, const Mat& go) {
    const Mat& y = gr.value(self);
    Eigen::VectorXd dots = go.cwiseProduct(y).rowwise().sum();
    Mat ga = y.array() * (go.colwise() - dots).array();
    gr.accumulate(a.id(), ga);
  });
}

/// Layer normalisation over each row followed by the affine map
/// gamma * xhat + beta (both 1xC).
inline Var layer_norm_rows(Var a, Var gamma, Var beta, double eps = 1e-5) {
  const Mat& x = a.value();
  detail::require_row(gamma, x.cols(), "layer_norm gamma");
  detail::require_row(beta, x.cols(), "layer_norm beta");
  const Index n = x.cols();
  Eigen::VectorXd mean = x.rowwise().mean();
  Mat xc = x.colwise() - mean;
  Eigen::VectorXd inv_std = ((xc.array().square().rowwise().sum() / static_cast<double>(n)) + eps)
                                .sqrt()
                                .inverse();
  Mat xhat = xc.array().colwise() * inv_std.array();
  Mat out = (xhat.array().rowwise() * gamma.value().row(0).array()).rowwise() +
            beta.value().row(0).array();
  Graph& g = *a.graph();
  return g.op(std::move(out), {a, gamma, beta},
              [a, gamma, beta, xhat = std::move(xhat), inv_std = std::move(inv_std), n](
                  Graph& gr, int, const Mat& go) {
                if (gr.needs_grad(gamma)) {
                  gr.accumulate(gamma.id(), go.cwiseProduct(xhat).colwise().sum());
                }
                if (gr.needs_grad(beta)) gr.accumulate(beta.id(), go.colwise().sum());
                if (gr.needs_grad(a)) {
                  Mat gx = go.array().rowwise() * gamma.value().row(0).array();
                  Eigen::VectorXd m1 = gx.rowwise().mean();
                  Eigen::VectorXd m2 = gx.cwiseProduct(xhat).rowwise().mean();
                  Mat ga = (gx.colwise() - m1) - (xhat.array().colwise() * m2.array()).matrix();
                  ga = ga.array().colwise() * inv_std.array();
                  gr.accumulate(a.id(), ga);
                }
              });
}

// ---- shape manipulation ---------------------------------------------------

inline Var concat_cols(const std::vector<Var>& parts) {
  if (parts.empty()) fail(ErrorCode::kShapeError, "concat_cols: no inputs");
  const Index rows = parts.front().rows();
  Index cols = 0;
  for (const Var& p : parts) {
    if (p.rows() != rows) fail(ErrorCode::kShapeError, "concat_cols: row mismatch");
    cols += p.cols();
  }
  Mat out(rows, cols);
  Index at = 0;
  for (const Var& p : parts) {
    out.middleCols(at, p.cols()) = p.value();
    at += p.cols();
  }
  Graph& g = *parts.front().graph();
  return g.op(std::move(out), parts, [parts](Graph& gr, int, const Mat& go) {
    Index off = 0;
    for (const Var& p : parts) {
      if (gr.needs_grad(p)) gr.accumulate(p.id(), go.middleCols(off, p.cols()));
      off += p.cols();
    }
  });
}

inline Var concat_rows(const std::vector<Var>& parts) {
  if (parts.empty()) fail(ErrorCode::kShapeError, "concat_rows: no inputs");
  const Index cols = parts.front().cols();
  Index rows = 0;
  for (const Var& p : parts) {
    if (p.cols() != cols) fail(ErrorCode::kShapeError, "concat_rows: column mismatch");
    rows += p.rows();
  }
  Mat out(rows, cols);
  Index at = 0;
  for (const Var& p : parts) {
    out.middleRows(at, p.rows()) = p.value();
    at += p.rows();
  }
  Graph& g = *parts.front().graph();
  return g.op(std::move(out), parts, [parts](Graph& gr, int, const Mat& go) {
    Index off = 0;
    for (const Var& p : parts) {
      if (gr.needs_grad(p)) gr.accumulate(p.id(), go.middleRows(off, p.rows()));
      off += p.rows();
    }
  });
}

inline Var slice_rows(Var a, Index start, Index count) {
  if (start < 0 || count < 0 || start + count > a.rows()) {
    fail(ErrorCode::kShapeError, "slice_rows: out of range");
  }
  Graph& g = *a.graph();
  Mat out = a.value().middleRows(start, count);
  return g.op(std::move(out), {a}, [a, start, count](Graph& gr, int, const Mat& go) {
    Mat ga = Mat::Zero(a.rows(), a.cols());
    ga.middleRows(start, count) = go;
    gr.accumulate(a.id(), ga);
  });
}

inline Var slice_cols(Var a, Index start, Index count) {
  if (start < 0 || count < 0 || start + count > a.cols()) {
    fail(ErrorCode::kShapeError, "slice_cols: out of range");
  }
  Graph& g = *a.graph();
  Mat out = a.value().middleCols(start, count);
  return g.op(std::move(out), {a}, [a, start, count](Graph& gr, int, const Mat& go) {
    Mat ga = Mat::Zero(a.rows(), a.cols());
    ga.middleCols(start, count) = go;
    gr.accumulate(a.id(), ga);
  });
}

/// out.row(i) = a.row(index[i]); gradients scatter-add back.
inline Var gather_rows(Var a, std::vector<int> index) {
  const Mat& x = a.value();
  Mat out(static_cast<Index>(index.size()), x.cols());
  for (std::size_t i = 0; i < index.size(); ++i) {
    if (index[i] < 0 || index[i] >= x.rows()) fail(ErrorCode::kShapeError, "gather_rows: index");
    out.row(static_cast<Index>(i)) = x.row(index[i]);
  }
  Graph& g = *a.graph();
  return g.op(std::move(out), {a}, [a, index = std::move(index)](Graph& gr, int, const Mat& go) {
    Mat ga = Mat::Zero(a.rows(), a.cols());
    for (std::size_t i = 0; i < index.size(); ++i) ga.row(index[i]) += go.row(static_cast<Index>(i));
    gr.accumulate(a.id(), ga);
  });
}

/// Row-major reinterpretation with the same element count.
inline Var reshape(Var a, Index rows, Index cols) {
  if (rows * cols != a.rows() * a.cols()) fail(ErrorCode::kShapeError, "reshape: size mismatch");
  Graph& g = *a.graph();
  Mat out = Eigen::Map<const Mat>(a.value().data(), rows, cols);
  return g.op(std::move(out), {a}, [a](Graph& gr, int, const Mat& go) {
    gr.accumulate(a.id(), Eigen::Map<const Mat>(go.data(), a.rows(), a.cols()));
  });
}

inline Var broadcast_rows(Var row, Index count) {
  if (row.rows() != 1) fail(ErrorCode::kShapeError, "broadcast_rows: expected a row");
  Graph& g = *row.graph();
  Mat out = row.value().replicate(count, 1);
  return g.op(std::move(out), {row}, [row](Graph& gr, int, const Mat& go) {
    gr.accumulate(row.id(), go.colwise().sum());
  });
}

// ---- reductions -----------------------------------------------------------

inline Var sum_all(Var a) {
  Graph& g = *a.graph();
  Mat out = Mat::Constant(1, 1, a.value().sum());
  return g.op(std::move(out), {a}, [a](Graph& gr, int, const Mat& go) {
    gr.accumulate(a.id(), Mat::Constant(a.rows(), a.cols(), go(0, 0)));
  });
}

inline Var mean_all(Var a) {
  const double n = static_cast<double>(a.value().size());
  if (n == 0) fail(ErrorCode::kShapeError, "mean_all: empty");
  return scale(sum_all(a), 1.0 / n);
}

/// 1xC row of column means.
inline Var mean_rows(Var a) {
  if (a.rows() == 0) fail(ErrorCode::kShapeError, "mean_rows: empty");
  Graph& g = *a.graph();
  Mat out = a.value().colwise().mean();
  const double inv = 1.0 / static_cast<double>(a.rows());
  return g.op(std::move(out), {a}, [a, inv](Graph& gr, int, const Mat& go) {
    gr.accumulate(a.id(), (go * inv).replicate(a.rows(), 1));
  });
}

inline Var mse(Var pred, Var target) { return mean_all(square(sub(pred, target))); }
inline Var l1(Var pred, Var target) { return mean_all(abs(sub(pred, target))); }

}  // namespace voximp::ag
