#pragma once

// Tape-based reverse-mode automatic differentiation over dense row-major fp64
// matrices. Every primitive records a backward closure that accumulates exact
// analytic gradients into its parents.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <deque>
#include <functional>
#include <memory>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "structplan/errors.hpp"

namespace structplan::ad {

struct Tensor {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> data;

  Tensor() = default;
  Tensor(std::size_t r, std::size_t c, double fill = 0.0) : rows(r), cols(c), data(r * c, fill) {}
  Tensor(std::size_t r, std::size_t c, std::vector<double> values) : rows(r), cols(c), data(std::move(values)) {
    if (data.size() != r * c) throw ShapeError("tensor data size does not match shape");
  }

  std::size_t size() const { return data.size(); }
  double& at(std::size_t r, std::size_t c) { return data[r * cols + c]; }
  double at(std::size_t r, std::size_t c) const { return data[r * cols + c]; }
  bool same_shape(const Tensor& o) const { return rows == o.rows && cols == o.cols; }
  bool all_finite() const {
    return std::all_of(data.begin(), data.end(), [](double v) { return std::isfinite(v); });
  }

  friend bool operator==(const Tensor&, const Tensor&) = default;
};

inline std::string shape_str(std::size_t r, std::size_t c) {
  return "(" + std::to_string(r) + ", " + std::to_string(c) + ")";
}
inline std::string shape_str(const Tensor& t) { return shape_str(t.rows, t.cols); }

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
inline Eigen::Map<RowMat> as_mat(Tensor& t) {
  return {t.data.data(), static_cast<Eigen::Index>(t.rows), static_cast<Eigen::Index>(t.cols)};
}
inline Eigen::Map<const RowMat> as_mat(const Tensor& t) {
  return {t.data.data(), static_cast<Eigen::Index>(t.rows), static_cast<Eigen::Index>(t.cols)};
}

struct Var {
  std::size_t id = static_cast<std::size_t>(-1);
};

class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, std::size_t self)>;

  /// Value that never receives a gradient.
  Var constant(Tensor value) { return push(std::move(value), false, {}); }

  /// Owned leaf; gradient tracked when requires_grad.
  Var leaf(Tensor value, bool requires_grad) { return push(std::move(value), requires_grad, {}); }

  /// Leaf that reads `ref` in place. `ref` must outlive the tape.
  Var external(const Tensor& ref, bool requires_grad) {
    Node n;
    n.ext = &ref;
    n.requires_grad = requires_grad;
    nodes_.push_back(std::move(n));
    return {nodes_.size() - 1};
  }

  const Tensor& value(Var v) const {
    const Node& n = node(v.id);
    return n.ext ? *n.ext : n.value;
  }

  bool requires_grad(Var v) const { return node(v.id).requires_grad; }

  /// Gradient accumulated by backward(); a zero tensor if none reached v.
  Tensor grad(Var v) const {
    const Node& n = node(v.id);
    if (n.grad.size() == 0) {
      const Tensor& val = value(v);
      return Tensor(val.rows, val.cols);
    }
    return n.grad;
  }

  std::size_t size() const { return nodes_.size(); }

  /// Records a derived node. Its gradient is tracked iff any parent tracks one.
  Var push(Tensor value, bool requires_grad, BackwardFn backward) {
    Node n;
    n.value = std::move(value);
    n.requires_grad = requires_grad;
    if (requires_grad) n.backward = std::move(backward);
    nodes_.push_back(std::move(n));
    return {nodes_.size() - 1};
  }

  /// Mutable gradient buffer, zero-initialized on first touch.
  Tensor& grad_buffer(std::size_t id) {
    Node& n = node(id);
    if (n.grad.size() == 0) {
      const Tensor& val = n.ext ? *n.ext : n.value;
      n.grad = Tensor(val.rows, val.cols);
    }
    return n.grad;
  }

  bool has_grad(std::size_t id) const { return node(id).grad.size() != 0; }

  /// Reverse sweep from a 1x1 loss. Nodes are visited in reverse creation
  /// order, which is a valid topological order.
  void backward(Var loss) {
    const Tensor& lv = value(loss);
    if (lv.rows != 1 || lv.cols != 1) {
      throw ShapeError("backward expects a scalar loss, got " + shape_str(lv));
    }
    if (!requires_grad(loss)) return;
    grad_buffer(loss.id).data[0] += 1.0;
    for (std::size_t i = loss.id + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (n.backward && n.grad.size() != 0) n.backward(*this, i);
    }
  }

 private:
  struct Node {
    Tensor value;
    const Tensor* ext = nullptr;
    Tensor grad;
    bool requires_grad = false;
    BackwardFn backward;
  };

  Node& node(std::size_t id) {
    if (id >= nodes_.size()) throw Error("invalid tape variable");
    return nodes_[id];
  }
  const Node& node(std::size_t id) const {
    if (id >= nodes_.size()) throw Error("invalid tape variable");
    return nodes_[id];
  }

  std::deque<Node> nodes_;
};

// ---------------------------------------------------------------------------
// Primitives

namespace detail {
inline void require_same(const Tensor& a, const Tensor& b, const char* op) {
  if (!a.same_shape(b)) {
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a) + " vs " + shape_str(b));
  }
}
}  // namespace detail

/// (n x k) * (k x m).
inline Var matmul(Tape& t, Var a, Var b) {
  const Tensor& A = t.value(a);
  const Tensor& B = t.value(b);
  if (A.cols != B.rows) {
    throw ShapeError("matmul: inner dimensions differ " + shape_str(A) + " vs " + shape_str(B));
  }
  Tensor C(A.rows, B.cols);
  as_mat(C).noalias() = as_mat(A) * as_mat(B);
  const bool rg = t.requires_grad(a) || t.requires_grad(b);
  return t.push(std::move(C), rg, [a, b](Tape& tp, std::size_t self) {
    const Tensor& G = tp.grad_buffer(self);
    if (tp.requires_grad(a)) as_mat(tp.grad_buffer(a.id)).noalias() += as_mat(G) * as_mat(tp.value(b)).transpose();
    if (tp.requires_grad(b)) as_mat(tp.grad_buffer(b.id)).noalias() += as_mat(tp.value(a)).transpose() * as_mat(G);
  });
}

/// (n x k) * (m x k)^T.
inline Var matmul_nt(Tape& t, Var a, Var b) {
  const Tensor& A = t.value(a);
  const Tensor& B = t.value(b);
  if (A.cols != B.cols) {
    throw ShapeError("matmul_nt: column counts differ " + shape_str(A) + " vs " + shape_str(B));
  }
  Tensor C(A.rows, B.rows);
  as_mat(C).noalias() = as_mat(A) * as_mat(B).transpose();
  const bool rg = t.requires_grad(a) || t.requires_grad(b);
  return t.push(std::move(C), rg, [a, b](Tape& tp, std::size_t self) {
    const Tensor& G = tp.grad_buffer(self);
    if (tp.requires_grad(a)) as_mat(tp.grad_buffer(a.id)).noalias() += as_mat(G) * as_mat(tp.value(b));
    if (tp.requires_grad(b)) as_mat(tp.grad_buffer(b.id)).noalias() += as_mat(G).transpose() * as_mat(tp.value(a));
  });
}

inline Var add(Tape& t, Var a, Var b) {
  const Tensor& A = t.value(a);
  const Tensor& B = t.value(b);
  detail::require_same(A, B, "add");
  Tensor C = A;
  for (std::size_t i = 0; i < C.size(); ++i) C.data[i] += B.data[i];
  const bool rg = t.requires_grad(a) || t.requires_grad(b);
  return t.push(std::move(C), rg, [a, b](Tape& tp, std::size_t self) {
    const Tensor& G = tp.grad_buffer(self);
    for (Var p : {a, b}) {
      if (!tp.requires_grad(p)) continue;
      auto& g = tp.grad_buffer(p.id).data;
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += G.data[i];
    }
  });
}

/// Adds a 1 x m row to every row of an n x m matrix.
inline Var add_row(Tape& t, Var a, Var row) {
  const Tensor& A = t.value(a);
  const Tensor& R = t.value(row);
  if (R.rows != 1 || R.cols != A.cols) {
    throw ShapeError("add_row: expected row of width " + std::to_string(A.cols) + ", got " + shape_str(R) +
                     " for " + shape_str(A));
  }
  Tensor C = A;
  for (std::size_t r = 0; r < C.rows; ++r) {
    for (std::size_t c = 0; c < C.cols; ++c) C.at(r, c) += R.data[c];
  }
  const bool rg = t.requires_grad(a) || t.requires_grad(row);
  return t.push(std::move(C), rg, [a, row](Tape& tp, std::size_t self) {
    const Tensor& G = tp.grad_buffer(self);
    if (tp.requires_grad(a)) {
      auto& g = tp.grad_buffer(a.id).data;
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += G.data[i];
    }
    if (tp.requires_grad(row)) {
      auto& g = tp.grad_buffer(row.id).data;
      for (std::size_t r = 0; r < G.rows; ++r) {
        for (std::size_t c = 0; c < G.cols; ++c) g[c] += G.at(r, c);
      }
    }
  });
}

inline Var scale(Tape& t, Var a, double s) {
  Tensor C = t.value(a);
  for (auto& v : C.data) v *= s;
  return t.push(std::move(C), t.requires_grad(a), [a, s](Tape& tp, std::size_t self) {
    const Tensor& G = tp.grad_buffer(self);
    auto& g = tp.grad_buffer(a.id).data;
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += s * G.data[i];
  });
}

namespace detail {
inline constexpr double kGeluK = 0.7978845608028654;  // sqrt(2 / pi)
inline constexpr double kGeluC = 0.044715;
}  // namespace detail

/// Tanh-approximated GELU.
inline double gelu_value(double x) {
  return 0.5 * x * (1.0 + std::tanh(detail::kGeluK * (x + detail::kGeluC * x * x * x)));
}

inline double gelu_derivative(double x) {
  const double th = std::tanh(detail::kGeluK * (x + detail::kGeluC * x * x * x));
  return 0.5 * (1.0 + th) +
         0.5 * x * (1.0 - th * th) * detail::kGeluK * (1.0 + 3.0 * detail::kGeluC * x * x);
}

inline Var gelu(Tape& t, Var a) {
  Tensor C = t.value(a);
  for (auto& v : C.data) v = gelu_value(v);
  return t.push(std::move(C), t.requires_grad(a), [a](Tape& tp, std::size_t self) {
    const Tensor& G = tp.grad_buffer(self);
    const Tensor& X = tp.value(a);
    auto& g = tp.grad_buffer(a.id).data;
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += G.data[i] * gelu_derivative(X.data[i]);
  });
}

/// Row-wise softmax with max subtraction.
inline Var softmax_rows(Tape& t, Var a) {
  Tensor Y = t.value(a);
  for (std::size_t r = 0; r < Y.rows; ++r) {
    double* row = &Y.data[r * Y.cols];
    const double m = *std::max_element(row, row + Y.cols);
    double z = 0.0;
    for (std::size_t c = 0; c < Y.cols; ++c) {
      row[c] = std::exp(row[c] - m);
      z += row[c];
    }
    for (std::size_t c = 0; c < Y.cols; ++c) row[c] /= z;
  }
  return t.push(std::move(Y), t.requires_grad(a), [a](Tape& tp, std::size_t self) {
    const Tensor& G = tp.grad_buffer(self);
    Tensor Y = tp.value(Var{self});
    auto& g = tp.grad_buffer(a.id);
    for (std::size_t r = 0; r < Y.rows; ++r) {
      double dot = 0.0;
      for (std::size_t c = 0; c < Y.cols; ++c) dot += G.at(r, c) * Y.at(r, c);
      for (std::size_t c = 0; c < Y.cols; ++c) g.at(r, c) += Y.at(r, c) * (G.at(r, c) - dot);
    }
  });
}

inline constexpr double kLayerNormEps = 1e-5;

/// Per-row normalization followed by the affine map gamma * x_hat + beta.
inline Var layer_norm(Tape& t, Var a, Var gamma, Var beta) {
  const Tensor& X = t.value(a);
  const Tensor& Gm = t.value(gamma);
  const Tensor& Bt = t.value(beta);
  if (Gm.rows != 1 || Gm.cols != X.cols || !Gm.same_shape(Bt)) {
    throw ShapeError("layer_norm: gamma/beta " + shape_str(Gm) + ", " + shape_str(Bt) + " do not fit " +
                     shape_str(X));
  }
  const std::size_t n = X.cols;
  Tensor Y(X.rows, n);
  auto xhat = std::make_shared<Tensor>(X.rows, n);
  auto inv_std = std::make_shared<std::vector<double>>(X.rows);
  for (std::size_t r = 0; r < X.rows; ++r) {
    double mean = 0.0;
    for (std::size_t c = 0; c < n; ++c) mean += X.at(r, c);
    mean /= static_cast<double>(n);
    double var = 0.0;
    for (std::size_t c = 0; c < n; ++c) var += (X.at(r, c) - mean) * (X.at(r, c) - mean);
    var /= static_cast<double>(n);
    const double is = 1.0 / std::sqrt(var + kLayerNormEps);
    (*inv_std)[r] = is;
    for (std::size_t c = 0; c < n; ++c) {
      const double h = (X.at(r, c) - mean) * is;
      xhat->at(r, c) = h;
      Y.at(r, c) = Gm.data[c] * h + Bt.data[c];
    }
  }
  const bool rg = t.requires_grad(a) || t.requires_grad(gamma) || t.requires_grad(beta);
  return t.push(std::move(Y), rg, [a, gamma, beta, xhat, inv_std](Tape& tp, std::size_t self) {
    const Tensor& G = tp.grad_buffer(self);
    const std::size_t rows = G.rows, n = G.cols;
    if (tp.requires_grad(gamma)) {
      auto& gg = tp.grad_buffer(gamma.id).data;
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < n; ++c) gg[c] += G.at(r, c) * xhat->at(r, c);
    }
    if (tp.requires_grad(beta)) {
      auto& gb = tp.grad_buffer(beta.id).data;
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < n; ++c) gb[c] += G.at(r, c);
    }
    if (tp.requires_grad(a)) {
      const Tensor& Gm = tp.value(gamma);
      auto& gx = tp.grad_buffer(a.id);
      for (std::size_t r = 0; r < rows; ++r) {
        double m1 = 0.0, m2 = 0.0;
        for (std::size_t c = 0; c < n; ++c) {
          const double d = G.at(r, c) * Gm.data[c];
          m1 += d;
          m2 += d * xhat->at(r, c);
        }
        m1 /= static_cast<double>(n);
        m2 /= static_cast<double>(n);
        for (std::size_t c = 0; c < n; ++c) {
          const double d = G.at(r, c) * Gm.data[c];
          gx.at(r, c) += (*inv_std)[r] * (d - m1 - xhat->at(r, c) * m2);
        }
      }
    }
  });
}

/// Column-wise mean over rows: (n x m) -> (1 x m).
inline Var mean_rows(Tape& t, Var a) {
  const Tensor& X = t.value(a);
  if (X.rows == 0) throw ShapeError("mean_rows: empty input " + shape_str(X));
  Tensor Y(1, X.cols);
  for (std::size_t r = 0; r < X.rows; ++r)
    for (std::size_t c = 0; c < X.cols; ++c) Y.data[c] += X.at(r, c);
  const double inv = 1.0 / static_cast<double>(X.rows);
  for (auto& v : Y.data) v *= inv;
  return t.push(std::move(Y), t.requires_grad(a), [a, inv](Tape& tp, std::size_t self) {
    const Tensor& G = tp.grad_buffer(self);
    auto& g = tp.grad_buffer(a.id);
    for (std::size_t r = 0; r < g.rows; ++r)
      for (std::size_t c = 0; c < g.cols; ++c) g.at(r, c) += inv * G.data[c];
  });
}

/// Softmax cross-entropy of a 1 x k logit row against a class index.
inline Var cross_entropy(Tape& t, Var logits, std::size_t target) {
  const Tensor& Z = t.value(logits);
  if (Z.rows != 1 || target >= Z.cols) {
    throw ShapeError("cross_entropy: logits " + shape_str(Z) + " with target " + std::to_string(target));
  }
  const double m = *std::max_element(Z.data.begin(), Z.data.end());
  double sum = 0.0;
  for (double z : Z.data) sum += std::exp(z - m);
  const double lse = m + std::log(sum);
  Tensor L(1, 1, lse - Z.data[target]);
  return t.push(std::move(L), t.requires_grad(logits), [logits, target, lse](Tape& tp, std::size_t self) {
    const double g = tp.grad_buffer(self).data[0];
    const Tensor& Z = tp.value(logits);
    auto& gz = tp.grad_buffer(logits.id).data;
    for (std::size_t c = 0; c < Z.cols; ++c) {
      gz[c] += g * (std::exp(Z.data[c] - lse) - (c == target ? 1.0 : 0.0));
    }
  });
}

/// Mean squared error against a constant target of the same shape.
inline Var mse(Tape& t, Var a, const Tensor& target) {
  const Tensor& X = t.value(a);
  detail::require_same(X, target, "mse");
  if (X.size() == 0) throw ShapeError("mse: empty input");
  double s = 0.0;
  for (std::size_t i = 0; i < X.size(); ++i) s += (X.data[i] - target.data[i]) * (X.data[i] - target.data[i]);
  const double inv = 1.0 / static_cast<double>(X.size());
  return t.push(Tensor(1, 1, s * inv), t.requires_grad(a), [a, target, inv](Tape& tp, std::size_t self) {
    const double g = tp.grad_buffer(self).data[0];
    const Tensor& X = tp.value(a);
    auto& gx = tp.grad_buffer(a.id).data;
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += g * 2.0 * inv * (X.data[i] - target.data[i]);
  });
}

/// Stacks blocks vertically; all must share a column count.
inline Var concat_rows(Tape& t, std::span<const Var> parts) {
  if (parts.empty()) throw ShapeError("concat_rows: no inputs");
  const std::size_t cols = t.value(parts[0]).cols;
  std::size_t rows = 0;
  bool rg = false;
  for (Var p : parts) {
    const Tensor& P = t.value(p);
    if (P.cols != cols) {
      throw ShapeError("concat_rows: column mismatch " + shape_str(t.value(parts[0])) + " vs " + shape_str(P));
    }
    rows += P.rows;
    rg = rg || t.requires_grad(p);
  }
  Tensor C(rows, cols);
  std::size_t off = 0;
  for (Var p : parts) {
    const Tensor& P = t.value(p);
    std::copy(P.data.begin(), P.data.end(), C.data.begin() + static_cast<std::ptrdiff_t>(off));
    off += P.size();
  }
  std::vector<Var> ps(parts.begin(), parts.end());
  return t.push(std::move(C), rg, [ps](Tape& tp, std::size_t self) {
    const Tensor& G = tp.grad_buffer(self);
    std::size_t off = 0;
    for (Var p : ps) {
      const std::size_t n = tp.value(p).size();
      if (tp.requires_grad(p)) {
        auto& g = tp.grad_buffer(p.id).data;
        for (std::size_t i = 0; i < n; ++i) g[i] += G.data[off + i];
      }
      off += n;
    }
  });
}

/// Places blocks side by side; all must share a row count.
inline Var concat_cols(Tape& t, std::span<const Var> parts) {
  if (parts.empty()) throw ShapeError("concat_cols: no inputs");
  const std::size_t rows = t.value(parts[0]).rows;
  std::size_t cols = 0;
  bool rg = false;
  for (Var p : parts) {
    const Tensor& P = t.value(p);
    if (P.rows != rows) {
      throw ShapeError("concat_cols: row mismatch " + shape_str(t.value(parts[0])) + " vs " + shape_str(P));
    }
    cols += P.cols;
    rg = rg || t.requires_grad(p);
  }
  Tensor C(rows, cols);
  std::size_t off = 0;
  for (Var p : parts) {
    const Tensor& P = t.value(p);
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < P.cols; ++c) C.at(r, off + c) = P.at(r, c);
    off += P.cols;
  }
  std::vector<Var> ps(parts.begin(), parts.end());
  return t.push(std::move(C), rg, [ps](Tape& tp, std::size_t self) {
    const Tensor& G = tp.grad_buffer(self);
    std::size_t off = 0;
    for (Var p : ps) {
      const std::size_t pc = tp.value(p).cols;
      if (tp.requires_grad(p)) {
        auto& g = tp.grad_buffer(p.id);
        for (std::size_t r = 0; r < g.rows; ++r)
          for (std::size_t c = 0; c < pc; ++c) g.at(r, c) += G.at(r, off + c);
      }
      off += pc;
    }
  });
}

inline Var slice_cols(Tape& t, Var a, std::size_t c0, std::size_t c1) {
  const Tensor& A = t.value(a);
  if (c0 > c1 || c1 > A.cols) {
    throw ShapeError("slice_cols: [" + std::to_string(c0) + ", " + std::to_string(c1) + ") outside " + shape_str(A));
  }
  Tensor C(A.rows, c1 - c0);
  for (std::size_t r = 0; r < A.rows; ++r)
    for (std::size_t c = c0; c < c1; ++c) C.at(r, c - c0) = A.at(r, c);
  return t.push(std::move(C), t.requires_grad(a), [a, c0](Tape& tp, std::size_t self) {
    const Tensor& G = tp.grad_buffer(self);
    auto& g = tp.grad_buffer(a.id);
    for (std::size_t r = 0; r < G.rows; ++r)
      for (std::size_t c = 0; c < G.cols; ++c) g.at(r, c0 + c) += G.at(r, c);
  });
}

inline Var slice_rows(Tape& t, Var a, std::size_t r0, std::size_t r1) {
  const Tensor& A = t.value(a);
  if (r0 > r1 || r1 > A.rows) {
    throw ShapeError("slice_rows: [" + std::to_string(r0) + ", " + std::to_string(r1) + ") outside " + shape_str(A));
  }
  Tensor C(r1 - r0, A.cols);
  std::copy(A.data.begin() + static_cast<std::ptrdiff_t>(r0 * A.cols),
            A.data.begin() + static_cast<std::ptrdiff_t>(r1 * A.cols), C.data.begin());
  return t.push(std::move(C), t.requires_grad(a), [a, r0](Tape& tp, std::size_t self) {
    const Tensor& G = tp.grad_buffer(self);
    auto& g = tp.grad_buffer(a.id).data;
    const std::size_t off = r0 * G.cols;
    for (std::size_t i = 0; i < G.size(); ++i) g[off + i] += G.data[i];
  });
}

/// Row gather: output row i is input row idx[i].
inline Var gather_rows(Tape& t, Var a, std::vector<std::size_t> idx) {
  const Tensor& A = t.value(a);
  Tensor C(idx.size(), A.cols);
  for (std::size_t i = 0; i < idx.size(); ++i) {
    if (idx[i] >= A.rows) throw ShapeError("gather_rows: index out of range for " + shape_str(A));
    std::copy_n(A.data.begin() + static_cast<std::ptrdiff_t>(idx[i] * A.cols), A.cols,
                C.data.begin() + static_cast<std::ptrdiff_t>(i * A.cols));
  }
  return t.push(std::move(C), t.requires_grad(a), [a, idx = std::move(idx)](Tape& tp, std::size_t self) {
    const Tensor& G = tp.grad_buffer(self);
    auto& g = tp.grad_buffer(a.id);
    for (std::size_t i = 0; i < idx.size(); ++i)
      for (std::size_t c = 0; c < G.cols; ++c) g.at(idx[i], c) += G.at(i, c);
  });
}

/// Row-major reinterpretation with the same element count.
inline Var reshape(Tape& t, Var a, std::size_t rows, std::size_t cols) {
  const Tensor& A = t.value(a);
  if (rows * cols != A.size()) {
    throw ShapeError("reshape: cannot view " + shape_str(A) + " as " + shape_str(rows, cols));
  }
  Tensor C(rows, cols, A.data);
  return t.push(std::move(C), t.requires_grad(a), [a](Tape& tp, std::size_t self) {
    const Tensor& G = tp.grad_buffer(self);
    auto& g = tp.grad_buffer(a.id).data;
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += G.data[i];
  });
}

}  // namespace structplan::ad
