// SPDX-License-Identifier: Apache-2.0
//
// Continuous positional information: the cosine time encoding and the
// learnable Gaussian range encoding, plus the fixed sinusoidal table used by
// the ablation that disables range encoding.

#pragma once

#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "ilore/parameters.hpp"
#include "ilore/tensor.hpp"

namespace ilore {

/// Phi(dt)_l = cos(omega_l * dt + phase_l).
struct TimeEncoding {
  Tensor omega;  // [1 x dt]
  Tensor phase;  // [1 x dt]

  /// omega decays geometrically from 1 to 1e-6 across coordinates; phase starts at 0.
  static TimeEncoding create(ParameterStore& store, const std::string& name, std::size_t dim) {
    std::vector<double> w(dim);
    for (std::size_t l = 0; l < dim; ++l)
      w[l] = dim == 1 ? 1.0
                      : std::pow(10.0, -6.0 * static_cast<double>(l) / static_cast<double>(dim - 1));
    TimeEncoding te;
    te.omega = store.add(name + ".omega", {1, dim}, std::move(w));
    te.phase = store.add_zeros(name + ".phase", {1, dim});
    return te;
  }

  std::size_t dim() const { return omega.cols(); }

  /// deltas: [m x 1] -> [m x dim]
  Tensor operator()(const Tensor& deltas) const { return cos(add(mul(deltas, omega), phase)); }

  Tensor encode(std::span<const double> deltas) const {
    return (*this)(Tensor::column(std::vector<double>(deltas.begin(), deltas.end())));
  }
};

/// Gaussian(X) = X + softmax(B) E, where B[i][j] scores slot i under range j.
struct GaussianRangeEncoding {
  Tensor mu;         // [1 x k]
  Tensor sigma_raw;  // [1 x k], sigma = softplus(sigma_raw)
  Tensor embed;      // E: [k x d]

  /// mu evenly spaced over [0, n-1], sigma = n/k, E = 0 so the encoding starts as a no-op.
  static GaussianRangeEncoding create(ParameterStore& store, const std::string& name,
                                      std::size_t ranges, std::size_t positions, std::size_t dim) {
    std::vector<double> m(ranges), s(ranges);
    const double span = positions > 1 ? static_cast<double>(positions - 1) : 0.0;
    const double sigma = static_cast<double>(positions) / static_cast<double>(ranges);
    for (std::size_t j = 0; j < ranges; ++j) {
      m[j] = ranges == 1 ? span / 2.0 : span * static_cast<double>(j) / static_cast<double>(ranges - 1);
      s[j] = sigma > 30.0 ? sigma : std::log(std::expm1(sigma));  // inverse softplus
    }
    GaussianRangeEncoding g;
    g.mu = store.add(name + ".mu", {1, ranges}, std::move(m));
    g.sigma_raw = store.add(name + ".sigma_raw", {1, ranges}, std::move(s));
    g.embed = store.add_zeros(name + ".embed", {ranges, dim});
    return g;
  }

  std::size_t ranges() const { return mu.cols(); }
  std::size_t dim() const { return embed.cols(); }

  Tensor sigma() const { return softplus(sigma_raw); }

  /// Unnormalized scores b_ij = -(i - mu_j)^2 / (2 sigma_j^2) - log sigma_j, [n x k].
  Tensor raw_weights(std::size_t positions) const {
    std::vector<double> pos(positions);
    for (std::size_t i = 0; i < positions; ++i) pos[i] = static_cast<double>(i);
    const Tensor diff = sub(Tensor::column(std::move(pos)), mu);
    const Tensor sig = sigma();
    return sub(neg(div(square(diff), scale(square(sig), 2.0))), log(sig));
  }

  /// Row-normalized weights, [n x k].
  Tensor weights(std::size_t positions) const { return softmax(raw_weights(positions)); }

  /// B E: the additive range vector of every slot, [n x d].
  Tensor table(std::size_t positions) const { return matmul(weights(positions), embed); }

  /// x: [n x d] with one row per slot 0..n-1.
  Tensor operator()(const Tensor& x) const {
    if (x.ndim() != 2 || x.cols() != dim())
      throw DimensionError("gaussian_encode: input " + shape_str(x.shape()) + " vs model dim " +
                           std::to_string(dim()));
    return add(x, table(x.rows()));
  }
};

/// Fixed sin/cos positional table [positions x dim].
inline Tensor sinusoidal_table(std::size_t positions, std::size_t dim) {
  std::vector<double> v(positions * dim);
  for (std::size_t p = 0; p < positions; ++p)
    for (std::size_t c = 0; c < dim; ++c) {
      const double rate = std::pow(10000.0, -static_cast<double>(2 * (c / 2)) / static_cast<double>(dim));
      const double a = static_cast<double>(p) * rate;
      v[p * dim + c] = (c % 2 == 0) ? std::sin(a) : std::cos(a);
    }
  return Tensor({positions, dim}, std::move(v));
}

}  // namespace ilore
