// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <string>

#include "ilore/parameters.hpp"
#include "ilore/tensor.hpp"

namespace ilore {

/// y = x W + b, with W [in x out] and b [1 x out]; weights start uniform in ±1/sqrt(in).
struct Linear {
  Tensor weight;
  Tensor bias;  // undefined when built without bias

  static Linear create(ParameterStore& store, const std::string& name, std::size_t in,
                       std::size_t out, Rng& rng, bool with_bias = true) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(in));
    Linear l;
    l.weight = store.add_uniform(name + ".weight", {in, out}, bound, rng);
    if (with_bias) l.bias = store.add_uniform(name + ".bias", {1, out}, bound, rng);
    return l;
  }

  static Linear bind(ParameterStore& store, const std::string& name, bool with_bias = true) {
    Linear l;
    l.weight = store.get(name + ".weight");
    if (with_bias) l.bias = store.get(name + ".bias");
    return l;
  }

  Tensor operator()(const Tensor& x) const {
    Tensor y = matmul(x, weight);
    return bias.defined() ? add(y, bias) : y;
  }

  std::size_t in() const { return weight.dim(0); }
  std::size_t out() const { return weight.dim(1); }
};

/// Linear -> ReLU -> Linear.
struct Mlp2 {
  Linear first;
  Linear second;

  static Mlp2 create(ParameterStore& store, const std::string& name, std::size_t in,
                     std::size_t hidden, std::size_t out, Rng& rng) {
    return {Linear::create(store, name + ".fc1", in, hidden, rng),
            Linear::create(store, name + ".fc2", hidden, out, rng)};
  }

  Tensor operator()(const Tensor& x) const { return second(relu(first(x))); }
};

}  // namespace ilore
