// SPDX-License-Identifier: Apache-2.0
//
// Dense row-major float64 tensors with tape-free reverse-mode autodiff.
//
// A Tensor is a cheap handle onto a shared node. Every op that sees an input
// with requires_grad() records its parents and a backward closure on the
// result; backward(loss) walks the recorded graph in reverse topological
// order. Leaf gradients accumulate until zero_grad().
//
// Shapes are treated as (rows x cols) wherever an op says "last axis": cols is
// the last extent and rows the product of the rest.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "ilore/error.hpp"

namespace ilore {

using Shape = std::vector<std::size_t>;

inline std::size_t numel(const Shape& s) {
  return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
  os << ']';
  return os.str();
}

namespace detail {

struct Node {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;
  bool requires_grad = false;
  bool is_leaf = true;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward;

  std::vector<double>& ensure_grad() {
    if (grad.size() != value.size()) grad.assign(value.size(), 0.0);
    return grad;
  }
};

inline bool& grad_mode_flag() {
  thread_local bool enabled = true;
  return enabled;
}

}  // namespace detail

/// RAII guard that disables graph recording on this thread.
class NoGradGuard {
 public:
  NoGradGuard() : previous_(detail::grad_mode_flag()) { detail::grad_mode_flag() = false; }
  ~NoGradGuard() { detail::grad_mode_flag() = previous_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

inline bool grad_enabled() { return detail::grad_mode_flag(); }

class Tensor {
 public:
  Tensor() = default;

  Tensor(Shape shape, std::vector<double> values, bool requires_grad = false)
      : node_(std::make_shared<detail::Node>()) {
    if (values.size() != numel(shape))
      throw DimensionError("tensor: " + std::to_string(values.size()) +
                           " values for shape " + shape_str(shape));
    node_->shape = std::move(shape);
    node_->value = std::move(values);
    node_->requires_grad = requires_grad;
  }

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    const std::size_t n = numel(shape);
    return Tensor(std::move(shape), std::vector<double>(n, 0.0), requires_grad);
  }
  static Tensor full(Shape shape, double v) {
    const std::size_t n = numel(shape);
    return Tensor(std::move(shape), std::vector<double>(n, v));
  }
  static Tensor scalar(double v, bool requires_grad = false) {
    return Tensor({1}, {v}, requires_grad);
  }
  static Tensor row(std::vector<double> v, bool requires_grad = false) {
    const std::size_t n = v.size();
    return Tensor({1, n}, std::move(v), requires_grad);
  }
  static Tensor column(std::vector<double> v) {
    const std::size_t n = v.size();
    return Tensor({n, 1}, std::move(v));
  }

  bool defined() const { return static_cast<bool>(node_); }
  const Shape& shape() const { return node_->shape; }
  std::size_t dim(std::size_t axis) const { return node_->shape.at(axis); }
  std::size_t ndim() const { return node_->shape.size(); }
  std::size_t size() const { return node_->value.size(); }
  std::size_t cols() const { return node_->shape.empty() ? 1 : node_->shape.back(); }
  std::size_t rows() const { return cols() == 0 ? 0 : size() / cols(); }

  std::span<const double> data() const { return node_->value; }
  /// Direct write access; only valid on leaves (used by optimizers and finite differences).
  std::span<double> mutable_data() { return node_->value; }
  std::vector<double> to_vector() const { return node_->value; }

  double item() const {
    if (size() != 1) throw ContractError("item() on tensor of shape " + shape_str(shape()));
    return node_->value[0];
  }
  double operator[](std::size_t i) const { return node_->value[i]; }
  double at(std::size_t r, std::size_t c) const { return node_->value[r * cols() + c]; }

  bool requires_grad() const { return node_ && node_->requires_grad; }
  bool has_grad() const { return node_->grad.size() == node_->value.size(); }
  /// Gradient buffer (zeros if backward never reached this tensor).
  std::vector<double> grad() const {
    return has_grad() ? node_->grad : std::vector<double>(size(), 0.0);
  }
  void zero_grad() { node_->grad.clear(); }

  /// Copy of the value with no history.
  Tensor detach() const { return Tensor(shape(), node_->value, false); }

  std::shared_ptr<detail::Node> node() const { return node_; }
  explicit Tensor(std::shared_ptr<detail::Node> n) : node_(std::move(n)) {}

 private:
  std::shared_ptr<detail::Node> node_;
};

namespace detail {

inline bool any_requires_grad(std::initializer_list<const Tensor*> ts) {
  if (!grad_enabled()) return false;
  for (const Tensor* t : ts)
    if (t->requires_grad()) return true;
  return false;
}

// Creates the output node; wires history only when some input needs grad.
inline Tensor make_result(Shape shape, std::vector<double> value, std::vector<Tensor> inputs,
                          std::function<void(Node&)> backward) {
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->value = std::move(value);
  bool needs = false;
  if (grad_enabled())
    for (const auto& t : inputs) needs = needs || t.requires_grad();
  if (needs) {
    node->requires_grad = true;
    node->is_leaf = false;
    for (auto& t : inputs) node->parents.push_back(t.node());
    node->backward = std::move(backward);
  }
  return Tensor(std::move(node));
}

inline void check(bool ok, const char* op, const std::string& detail) {
  if (!ok) throw DimensionError(std::string(op) + ": " + detail);
}

// C[m x n] += A[m x k] * B[k x n]
inline void gemm_nn(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
                    std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    double* ci = c + i * n;
    const double* ai = a + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = ai[p];
      if (av == 0.0) continue;
      const double* bp = b + p * n;
      for (std::size_t j = 0; j < n; ++j) ci[j] += av * bp[j];
    }
  }
}

// C[m x n] += A[m x k] * B^T, B stored [n x k]
inline void gemm_nt(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
                    std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* ai = a + i * k;
    for (std::size_t j = 0; j < n; ++j) {
      const double* bj = b + j * k;
      double s = 0.0;
      for (std::size_t p = 0; p < k; ++p) s += ai[p] * bj[p];
      c[i * n + j] += s;
    }
  }
}

// C[m x n] += A^T * B, A stored [k x m], B stored [k x n]
inline void gemm_tn(const double* a, const double* b, double* c, std::size_t m, std::size_t k,
                    std::size_t n) {
  for (std::size_t p = 0; p < k; ++p) {
    const double* ap = a + p * m;
    const double* bp = b + p * n;
    for (std::size_t i = 0; i < m; ++i) {
      const double av = ap[i];
      if (av == 0.0) continue;
      double* ci = c + i * n;
      for (std::size_t j = 0; j < n; ++j) ci[j] += av * bp[j];
    }
  }
}

// (rows, cols) view used for broadcasting.
struct Grid {
  std::size_t rows;
  std::size_t cols;
};

inline Grid grid_of(const Tensor& t) { return {t.rows(), t.cols()}; }

template <typename Fwd, typename DA, typename DB>
Tensor broadcast_binary(const char* op, const Tensor& a, const Tensor& b, Fwd fwd, DA da, DB db) {
  const Grid ga = grid_of(a), gb = grid_of(b);
  auto compatible = [](std::size_t x, std::size_t y) { return x == y || x == 1 || y == 1; };
  if (a.shape() != b.shape() && !(b.size() == 1 || a.size() == 1) &&
      !(compatible(ga.rows, gb.rows) && compatible(ga.cols, gb.cols)))
    throw DimensionError(std::string(op) + ": cannot broadcast " + shape_str(a.shape()) +
                         " with " + shape_str(b.shape()));
  Grid go{std::max(ga.rows, gb.rows), std::max(ga.cols, gb.cols)};
  if (a.size() == 1 && b.size() != 1) go = gb;
  if (b.size() == 1 && a.size() != 1) go = ga;
  Shape out_shape;
  if (a.shape() == b.shape() || (ga.rows == go.rows && ga.cols == go.cols))
    out_shape = a.shape();
  else if (gb.rows == go.rows && gb.cols == go.cols)
    out_shape = b.shape();
  else
    out_shape = {go.rows, go.cols};

  auto index = [](const Grid& g, std::size_t r, std::size_t c, std::size_t total) {
    if (total == 1) return std::size_t{0};
    return (g.rows == 1 ? 0 : r) * g.cols + (g.cols == 1 ? 0 : c);
  };
  const auto av = a.data();
  const auto bv = b.data();
  std::vector<double> out(go.rows * go.cols);
  for (std::size_t r = 0; r < go.rows; ++r)
    for (std::size_t c = 0; c < go.cols; ++c)
      out[r * go.cols + c] =
          fwd(av[index(ga, r, c, a.size())], bv[index(gb, r, c, b.size())]);

  auto an = a.node();
  auto bn = b.node();
  return make_result(out_shape, std::move(out), {a, b},
                     [an, bn, ga, gb, go, index, da, db](Node& o) {
                       const std::size_t asz = an->value.size(), bsz = bn->value.size();
                       for (std::size_t r = 0; r < go.rows; ++r)
                         for (std::size_t c = 0; c < go.cols; ++c) {
                           const std::size_t oi = r * go.cols + c;
                           const std::size_t ai = index(ga, r, c, asz);
                           const std::size_t bi = index(gb, r, c, bsz);
                           const double g = o.grad[oi];
                           const double x = an->value[ai], y = bn->value[bi];
                           if (an->requires_grad) an->ensure_grad()[ai] += da(x, y, o.value[oi]) * g;
                           if (bn->requires_grad) bn->ensure_grad()[bi] += db(x, y, o.value[oi]) * g;
                         }
                     });
}

template <typename Fwd, typename Deriv>
Tensor unary(const Tensor& a, Fwd fwd, Deriv deriv) {
  const auto av = a.data();
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < av.size(); ++i) out[i] = fwd(av[i]);
  auto an = a.node();
  return make_result(a.shape(), std::move(out), {a}, [an, deriv](Node& o) {
    auto& g = an->ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += deriv(an->value[i], o.value[i]) * o.grad[i];
  });
}

}  // namespace detail

// ---------------------------------------------------------------- elementwise

/// Elementwise sum; b may broadcast as a scalar, a row [1 x C], or a column [R x 1].
inline Tensor add(const Tensor& a, const Tensor& b) {
  return detail::broadcast_binary(
      "add", a, b, [](double x, double y) { return x + y; },
      [](double, double, double) { return 1.0; }, [](double, double, double) { return 1.0; });
}
inline Tensor sub(const Tensor& a, const Tensor& b) {
  return detail::broadcast_binary(
      "sub", a, b, [](double x, double y) { return x - y; },
      [](double, double, double) { return 1.0; }, [](double, double, double) { return -1.0; });
}
inline Tensor mul(const Tensor& a, const Tensor& b) {
  return detail::broadcast_binary(
      "mul", a, b, [](double x, double y) { return x * y; },
      [](double, double y, double) { return y; }, [](double x, double, double) { return x; });
}
inline Tensor div(const Tensor& a, const Tensor& b) {
  return detail::broadcast_binary(
      "div", a, b, [](double x, double y) { return x / y; },
      [](double, double y, double) { return 1.0 / y; },
      [](double x, double y, double) { return -x / (y * y); });
}
inline Tensor minimum(const Tensor& a, const Tensor& b) {
  return detail::broadcast_binary(
      "minimum", a, b, [](double x, double y) { return std::min(x, y); },
      [](double x, double y, double) { return x <= y ? 1.0 : 0.0; },
      [](double x, double y, double) { return x <= y ? 0.0 : 1.0; });
}

inline Tensor scale(const Tensor& a, double s) {
  return detail::unary(a, [s](double x) { return x * s; }, [s](double, double) { return s; });
}
inline Tensor add_scalar(const Tensor& a, double s) {
  return detail::unary(a, [s](double x) { return x + s; }, [](double, double) { return 1.0; });
}
inline Tensor neg(const Tensor& a) { return scale(a, -1.0); }
inline Tensor square(const Tensor& a) {
  return detail::unary(a, [](double x) { return x * x; }, [](double x, double) { return 2.0 * x; });
}
inline Tensor sigmoid(const Tensor& a) {
  return detail::unary(
      a,
      [](double x) {
        if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
        const double e = std::exp(x);
        return e / (1.0 + e);
      },
      [](double, double y) { return y * (1.0 - y); });
}
inline Tensor tanh(const Tensor& a) {
  return detail::unary(a, [](double x) { return std::tanh(x); },
                       [](double, double y) { return 1.0 - y * y; });
}
inline Tensor relu(const Tensor& a) {
  return detail::unary(a, [](double x) { return x > 0.0 ? x : 0.0; },
                       [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}
inline Tensor exp(const Tensor& a) {
  return detail::unary(a, [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}
inline Tensor log(const Tensor& a) {
  return detail::unary(a, [](double x) { return std::log(x); },
                       [](double x, double) { return 1.0 / x; });
}
inline Tensor cos(const Tensor& a) {
  return detail::unary(a, [](double x) { return std::cos(x); },
                       [](double x, double) { return -std::sin(x); });
}
/// log(1 + exp(x)), stable for large |x|.
inline Tensor softplus(const Tensor& a) {
  return detail::unary(
      a, [](double x) { return x > 30.0 ? x : std::log1p(std::exp(x)); },
      [](double x, double) { return 1.0 / (1.0 + std::exp(-x)); });
}
/// Clamp into [lo, hi]; zero gradient where clamped.
inline Tensor clamp(const Tensor& a, double lo, double hi) {
  return detail::unary(a, [lo, hi](double x) { return std::clamp(x, lo, hi); },
                       [lo, hi](double x, double) { return (x < lo || x > hi) ? 0.0 : 1.0; });
}

/// Forward value is `bit`; backward routes the incoming gradient to `p` unchanged.
inline Tensor straight_through(const Tensor& p, const Tensor& bit) {
  detail::check(p.shape() == bit.shape(), "straight_through",
                shape_str(p.shape()) + " vs " + shape_str(bit.shape()));
  auto pn = p.node();
  return detail::make_result(bit.shape(), bit.to_vector(), {p}, [pn](detail::Node& o) {
    auto& g = pn->ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += o.grad[i];
  });
}

// ---------------------------------------------------------------- reductions

inline Tensor sum(const Tensor& a) {
  const auto av = a.data();
  double s = 0.0;
  for (double v : av) s += v;
  auto an = a.node();
  return detail::make_result({1}, {s}, {a}, [an](detail::Node& o) {
    auto& g = an->ensure_grad();
    for (double& x : g) x += o.grad[0];
  });
}

inline Tensor mean(const Tensor& a) { return scale(sum(a), 1.0 / static_cast<double>(a.size())); }

/// x: [G x R x C], mask: G*R flags. Mean over the unmasked R rows of each group;
/// a group with no unmasked rows yields zeros.
inline Tensor masked_mean(const Tensor& x, const std::vector<bool>& mask) {
  detail::check(x.ndim() == 3, "masked_mean", "expects [G x R x C], got " + shape_str(x.shape()));
  const std::size_t G = x.dim(0), R = x.dim(1), C = x.dim(2);
  detail::check(mask.size() == G * R, "masked_mean", "mask size mismatch");
  std::vector<double> w(G * R, 0.0);
  for (std::size_t g = 0; g < G; ++g) {
    std::size_t cnt = 0;
    for (std::size_t r = 0; r < R; ++r) cnt += mask[g * R + r];
    for (std::size_t r = 0; r < R; ++r)
      if (mask[g * R + r]) w[g * R + r] = 1.0 / static_cast<double>(cnt);
  }
  const auto xv = x.data();
  std::vector<double> out(G * C, 0.0);
  for (std::size_t g = 0; g < G; ++g)
    for (std::size_t r = 0; r < R; ++r) {
      const double wr = w[g * R + r];
      if (wr == 0.0) continue;
      for (std::size_t c = 0; c < C; ++c) out[g * C + c] += wr * xv[(g * R + r) * C + c];
    }
  auto xn = x.node();
  return detail::make_result({G, C}, std::move(out), {x}, [xn, w, G, R, C](detail::Node& o) {
    auto& gx = xn->ensure_grad();
    for (std::size_t g = 0; g < G; ++g)
      for (std::size_t r = 0; r < R; ++r) {
        const double wr = w[g * R + r];
        if (wr == 0.0) continue;
        for (std::size_t c = 0; c < C; ++c) gx[(g * R + r) * C + c] += wr * o.grad[g * C + c];
      }
  });
}

// ---------------------------------------------------------------- linear algebra

inline Tensor matmul(const Tensor& a, const Tensor& b) {
  detail::check(a.ndim() == 2 && b.ndim() == 2 && a.dim(1) == b.dim(0), "matmul",
                shape_str(a.shape()) + " x " + shape_str(b.shape()));
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  std::vector<double> out(m * n, 0.0);
  detail::gemm_nn(a.data().data(), b.data().data(), out.data(), m, k, n);
  auto an = a.node();
  auto bn = b.node();
  return detail::make_result({m, n}, std::move(out), {a, b}, [an, bn, m, k, n](detail::Node& o) {
    if (an->requires_grad)
      detail::gemm_nt(o.grad.data(), bn->value.data(), an->ensure_grad().data(), m, n, k);
    if (bn->requires_grad)
      detail::gemm_tn(an->value.data(), o.grad.data(), bn->ensure_grad().data(), k, m, n);
  });
}

/// Batched matmul: a [B x m x k] times b [B x k x n], or b [B x n x k] when transpose_b.
inline Tensor bmm(const Tensor& a, const Tensor& b, bool transpose_b = false) {
  detail::check(a.ndim() == 3 && b.ndim() == 3 && a.dim(0) == b.dim(0), "bmm",
                shape_str(a.shape()) + " x " + shape_str(b.shape()));
  const std::size_t B = a.dim(0), m = a.dim(1), k = a.dim(2);
  const std::size_t n = transpose_b ? b.dim(1) : b.dim(2);
  detail::check((transpose_b ? b.dim(2) : b.dim(1)) == k, "bmm",
                "inner extent mismatch " + shape_str(a.shape()) + " x " + shape_str(b.shape()));
  std::vector<double> out(B * m * n, 0.0);
  const double* av = a.data().data();
  const double* bv = b.data().data();
  for (std::size_t i = 0; i < B; ++i) {
    if (transpose_b)
      detail::gemm_nt(av + i * m * k, bv + i * n * k, out.data() + i * m * n, m, k, n);
    else
      detail::gemm_nn(av + i * m * k, bv + i * k * n, out.data() + i * m * n, m, k, n);
  }
  auto an = a.node();
  auto bn = b.node();
  return detail::make_result(
      {B, m, n}, std::move(out), {a, b}, [an, bn, B, m, k, n, transpose_b](detail::Node& o) {
        for (std::size_t i = 0; i < B; ++i) {
          const double* go = o.grad.data() + i * m * n;
          if (an->requires_grad) {
            double* ga = an->ensure_grad().data() + i * m * k;
            if (transpose_b)  // dA = dC * B   (B stored [n x k])
              detail::gemm_nn(go, bn->value.data() + i * n * k, ga, m, n, k);
            else  // dA = dC * B^T
              detail::gemm_nt(go, bn->value.data() + i * k * n, ga, m, n, k);
          }
          if (bn->requires_grad) {
            if (transpose_b)  // dB = dC^T * A
              detail::gemm_tn(go, an->value.data() + i * m * k,
                              bn->ensure_grad().data() + i * n * k, n, m, k);
            else  // dB = A^T * dC
              detail::gemm_tn(an->value.data() + i * m * k, go,
                              bn->ensure_grad().data() + i * k * n, k, m, n);
          }
        }
      });
}

// ---------------------------------------------------------------- normalization

/// Softmax over the last axis. Entries equal to -inf get probability 0; a row
/// with no finite entry becomes all zeros.
inline Tensor softmax(const Tensor& a) {
  const std::size_t R = a.rows(), C = a.cols();
  const auto av = a.data();
  std::vector<double> out(av.size(), 0.0);
  for (std::size_t r = 0; r < R; ++r) {
    const double* x = av.data() + r * C;
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < C; ++c) mx = std::max(mx, x[c]);
    if (!std::isfinite(mx)) continue;
    double z = 0.0;
    for (std::size_t c = 0; c < C; ++c) {
      const double e = std::isinf(x[c]) ? 0.0 : std::exp(x[c] - mx);
      out[r * C + c] = e;
      z += e;
    }
    for (std::size_t c = 0; c < C; ++c) out[r * C + c] /= z;
  }
  auto an = a.node();
  return detail::make_result(a.shape(), std::move(out), {a}, [an, R, C](detail::Node& o) {
    auto& g = an->ensure_grad();
    for (std::size_t r = 0; r < R; ++r) {
      const double* y = o.value.data() + r * C;
      const double* gy = o.grad.data() + r * C;
      double dot = 0.0;
      for (std::size_t c = 0; c < C; ++c) dot += y[c] * gy[c];
      for (std::size_t c = 0; c < C; ++c) g[r * C + c] += y[c] * (gy[c] - dot);
    }
  });
}

/// Layer normalization over the last axis, without affine terms.
inline Tensor layer_norm(const Tensor& a, double eps = 1e-5) {
  const std::size_t R = a.rows(), C = a.cols();
  const auto av = a.data();
  std::vector<double> out(av.size());
  std::vector<double> inv_std(R);
  for (std::size_t r = 0; r < R; ++r) {
    const double* x = av.data() + r * C;
    double mu = 0.0;
    for (std::size_t c = 0; c < C; ++c) mu += x[c];
    mu /= static_cast<double>(C);
    double var = 0.0;
    for (std::size_t c = 0; c < C; ++c) var += (x[c] - mu) * (x[c] - mu);
    var /= static_cast<double>(C);
    inv_std[r] = 1.0 / std::sqrt(var + eps);
    for (std::size_t c = 0; c < C; ++c) out[r * C + c] = (x[c] - mu) * inv_std[r];
  }
  auto an = a.node();
  return detail::make_result(a.shape(), std::move(out), {a},
                             [an, R, C, inv_std](detail::Node& o) {
                               auto& g = an->ensure_grad();
                               const double n = static_cast<double>(C);
                               for (std::size_t r = 0; r < R; ++r) {
                                 const double* y = o.value.data() + r * C;
                                 const double* gy = o.grad.data() + r * C;
                                 double sg = 0.0, sgy = 0.0;
                                 for (std::size_t c = 0; c < C; ++c) {
                                   sg += gy[c];
                                   sgy += gy[c] * y[c];
                                 }
                                 for (std::size_t c = 0; c < C; ++c)
                                   g[r * C + c] +=
                                       inv_std[r] * (gy[c] - sg / n - y[c] * sgy / n);
                               }
                             });
}

// ---------------------------------------------------------------- layout

inline Tensor reshape(const Tensor& a, Shape shape) {
  detail::check(numel(shape) == a.size(), "reshape",
                shape_str(a.shape()) + " -> " + shape_str(shape));
  auto an = a.node();
  return detail::make_result(std::move(shape), a.to_vector(), {a}, [an](detail::Node& o) {
    auto& g = an->ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += o.grad[i];
  });
}

/// Transpose of a 2-D tensor.
inline Tensor transpose(const Tensor& a) {
  detail::check(a.ndim() == 2, "transpose", "expects 2-D, got " + shape_str(a.shape()));
  const std::size_t R = a.dim(0), C = a.dim(1);
  const auto av = a.data();
  std::vector<double> out(R * C);
  for (std::size_t r = 0; r < R; ++r)
    for (std::size_t c = 0; c < C; ++c) out[c * R + r] = av[r * C + c];
  auto an = a.node();
  return detail::make_result({C, R}, std::move(out), {a}, [an, R, C](detail::Node& o) {
    auto& g = an->ensure_grad();
    for (std::size_t r = 0; r < R; ++r)
      for (std::size_t c = 0; c < C; ++c) g[r * C + c] += o.grad[c * R + r];
  });
}

/// Concatenate along the last axis (axis = -1) or the first axis (axis = 0).
/// Inputs must agree on every other extent.
inline Tensor concat(const std::vector<Tensor>& parts, int axis = -1) {
  detail::check(!parts.empty(), "concat", "no inputs");
  if (axis == 0) {
    Shape shape = parts[0].shape();
    std::size_t lead = 0;
    std::vector<double> out;
    for (const auto& p : parts) {
      Shape tail_a(p.shape().begin() + 1, p.shape().end());
      Shape tail_b(shape.begin() + 1, shape.end());
      detail::check(p.ndim() == shape.size() && tail_a == tail_b, "concat",
                    "row concat of " + shape_str(p.shape()) + " onto " + shape_str(shape));
      lead += p.dim(0);
      out.insert(out.end(), p.data().begin(), p.data().end());
    }
    shape[0] = lead;
    std::vector<std::shared_ptr<detail::Node>> nodes;
    for (const auto& p : parts) nodes.push_back(p.node());
    return detail::make_result(shape, std::move(out), parts, [nodes](detail::Node& o) {
      std::size_t off = 0;
      for (const auto& n : nodes) {
        if (n->requires_grad) {
          auto& g = n->ensure_grad();
          for (std::size_t i = 0; i < g.size(); ++i) g[i] += o.grad[off + i];
        }
        off += n->value.size();
      }
    });
  }
  const std::size_t R = parts[0].rows();
  Shape shape = parts[0].shape();
  std::size_t C = 0;
  std::vector<std::size_t> widths;
  for (const auto& p : parts) {
    detail::check(p.rows() == R && p.ndim() == shape.size(), "concat",
                  "column concat of " + shape_str(p.shape()) + " with " + shape_str(shape));
    widths.push_back(p.cols());
    C += p.cols();
  }
  shape.back() = C;
  std::vector<double> out(R * C);
  std::size_t off = 0;
  for (const auto& p : parts) {
    const std::size_t w = p.cols();
    const auto pv = p.data();
    for (std::size_t r = 0; r < R; ++r)
      std::copy_n(pv.data() + r * w, w, out.data() + r * C + off);
    off += w;
  }
  std::vector<std::shared_ptr<detail::Node>> nodes;
  for (const auto& p : parts) nodes.push_back(p.node());
  return detail::make_result(shape, std::move(out), parts, [nodes, widths, R, C](detail::Node& o) {
    std::size_t off = 0;
    for (std::size_t k = 0; k < nodes.size(); ++k) {
      const std::size_t w = widths[k];
      if (nodes[k]->requires_grad) {
        auto& g = nodes[k]->ensure_grad();
        for (std::size_t r = 0; r < R; ++r)
          for (std::size_t c = 0; c < w; ++c) g[r * w + c] += o.grad[r * C + off + c];
      }
      off += w;
    }
  });
}

/// Columns [begin, end) of the last axis.
inline Tensor slice_cols(const Tensor& a, std::size_t begin, std::size_t end) {
  detail::check(begin <= end && end <= a.cols(), "slice_cols",
                "range [" + std::to_string(begin) + "," + std::to_string(end) + ") of " +
                    shape_str(a.shape()));
  const std::size_t R = a.rows(), C = a.cols(), w = end - begin;
  Shape shape = a.shape();
  shape.back() = w;
  const auto av = a.data();
  std::vector<double> out(R * w);
  for (std::size_t r = 0; r < R; ++r) std::copy_n(av.data() + r * C + begin, w, out.data() + r * w);
  auto an = a.node();
  return detail::make_result(shape, std::move(out), {a}, [an, R, C, w, begin](detail::Node& o) {
    auto& g = an->ensure_grad();
    for (std::size_t r = 0; r < R; ++r)
      for (std::size_t c = 0; c < w; ++c) g[r * C + begin + c] += o.grad[r * w + c];
  });
}

/// Rows [begin, end) of the first axis.
inline Tensor slice_rows(const Tensor& a, std::size_t begin, std::size_t end) {
  detail::check(a.ndim() >= 1 && begin <= end && end <= a.dim(0), "slice_rows",
                "range [" + std::to_string(begin) + "," + std::to_string(end) + ") of " +
                    shape_str(a.shape()));
  const std::size_t stride = a.dim(0) == 0 ? 0 : a.size() / a.dim(0);
  Shape shape = a.shape();
  shape[0] = end - begin;
  std::vector<double> out(a.data().begin() + static_cast<std::ptrdiff_t>(begin * stride),
                          a.data().begin() + static_cast<std::ptrdiff_t>(end * stride));
  auto an = a.node();
  return detail::make_result(shape, std::move(out), {a}, [an, begin, stride](detail::Node& o) {
    auto& g = an->ensure_grad();
    for (std::size_t i = 0; i < o.grad.size(); ++i) g[begin * stride + i] += o.grad[i];
  });
}

/// Rows of a 2-D tensor picked by index (repeats allowed).
inline Tensor gather_rows(const Tensor& a, const std::vector<std::size_t>& idx) {
  detail::check(a.ndim() == 2, "gather_rows", "expects 2-D, got " + shape_str(a.shape()));
  const std::size_t C = a.cols(), R = a.rows();
  const auto av = a.data();
  std::vector<double> out(idx.size() * C);
  for (std::size_t i = 0; i < idx.size(); ++i) {
    detail::check(idx[i] < R, "gather_rows", "index " + std::to_string(idx[i]) + " out of range");
    std::copy_n(av.data() + idx[i] * C, C, out.data() + i * C);
  }
  auto an = a.node();
  return detail::make_result({idx.size(), C}, std::move(out), {a}, [an, idx, C](detail::Node& o) {
    auto& g = an->ensure_grad();
    for (std::size_t i = 0; i < idx.size(); ++i)
      for (std::size_t c = 0; c < C; ++c) g[idx[i] * C + c] += o.grad[i * C + c];
  });
}

/// Copy of `base` with rows idx[i] replaced by values row i. Indices must be distinct.
inline Tensor index_put_rows(const Tensor& base, const std::vector<std::size_t>& idx,
                             const Tensor& values) {
  detail::check(base.ndim() == 2 && values.ndim() == 2 && values.dim(0) == idx.size() &&
                    values.cols() == base.cols(),
                "index_put_rows", shape_str(values.shape()) + " into " + shape_str(base.shape()));
  const std::size_t C = base.cols();
  std::vector<double> out = base.to_vector();
  std::vector<bool> replaced(base.rows(), false);
  const auto vv = values.data();
  for (std::size_t i = 0; i < idx.size(); ++i) {
    detail::check(idx[i] < base.rows() && !replaced[idx[i]], "index_put_rows",
                  "bad or repeated index " + std::to_string(idx[i]));
    replaced[idx[i]] = true;
    std::copy_n(vv.data() + i * C, C, out.data() + idx[i] * C);
  }
  auto bn = base.node();
  auto vn = values.node();
  return detail::make_result(base.shape(), std::move(out), {base, values},
                             [bn, vn, idx, replaced, C](detail::Node& o) {
                               if (bn->requires_grad) {
                                 auto& g = bn->ensure_grad();
                                 for (std::size_t r = 0; r < replaced.size(); ++r)
                                   if (!replaced[r])
                                     for (std::size_t c = 0; c < C; ++c)
                                       g[r * C + c] += o.grad[r * C + c];
                               }
                               if (vn->requires_grad) {
                                 auto& g = vn->ensure_grad();
                                 for (std::size_t i = 0; i < idx.size(); ++i)
                                   for (std::size_t c = 0; c < C; ++c)
                                     g[i * C + c] += o.grad[idx[i] * C + c];
                               }
                             });
}

// ---------------------------------------------------------------- backward

/// Populates grad() on every requires_grad leaf reachable from `loss`.
/// Leaf gradients accumulate; intermediate gradients are recomputed each call.
inline void backward(const Tensor& loss) {
  if (loss.size() != 1)
    throw ContractError("backward on non-scalar tensor of shape " + shape_str(loss.shape()));
  if (!loss.requires_grad()) return;

  std::vector<detail::Node*> order;
  std::unordered_set<detail::Node*> seen;
  std::vector<std::pair<detail::Node*, std::size_t>> stack{{loss.node().get(), 0}};
  seen.insert(loss.node().get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      detail::Node* p = node->parents[next++].get();
      if (p->requires_grad && !seen.count(p)) {
        seen.insert(p);
        stack.emplace_back(p, 0);
      }
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  for (detail::Node* n : order)
    if (!n->is_leaf) n->grad.assign(n->value.size(), 0.0);
  loss.node()->ensure_grad()[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it)
    if ((*it)->backward) (*it)->backward(**it);
}

// ---------------------------------------------------------------- grad check

/// Max over coordinates of |analytic - central difference| / max(1, |central difference|)
/// for the scalar function f at x. x must be a leaf with requires_grad.
inline double grad_check(const std::function<Tensor(const Tensor&)>& f, Tensor x, double eps) {
  if (!x.requires_grad()) throw ContractError("grad_check: x must require grad");
  x.zero_grad();
  Tensor y = f(x);
  if (y.size() != 1) throw ContractError("grad_check: f must be scalar-valued");
  if (!std::isfinite(y.item())) throw NumericError("grad_check: non-finite f(x)");
  backward(y);
  const std::vector<double> analytic = x.grad();
  double worst = 0.0;
  NoGradGuard guard;
  auto xs = x.mutable_data();
  for (std::size_t i = 0; i < xs.size(); ++i) {
    const double orig = xs[i];
    xs[i] = orig + eps;
    const double fp = f(x).item();
    xs[i] = orig - eps;
    const double fm = f(x).item();
    xs[i] = orig;
    const double fd = (fp - fm) / (2.0 * eps);
    if (!std::isfinite(fd) || !std::isfinite(analytic[i]))
      throw NumericError("grad_check: non-finite derivative at coordinate " + std::to_string(i));
    worst = std::max(worst, std::abs(analytic[i] - fd) / std::max(1.0, std::abs(fd)));
  }
  return worst;
}

}  // namespace ilore
