// SPDX-License-Identifier: Apache-2.0
//
// Named learnable tensors, Adam, and the checkpoint container.
//
// Checkpoint layout (all integers little-endian):
//   magic   8 bytes  "ILORECKP"
//   version u32      kCheckpointVersion
//   count   u64      number of tensors
//   per tensor, in name order:
//     name_len u64, name bytes (UTF-8, no terminator)
//     ndim     u64, extents u64[ndim]
//     payload  float64[prod(extents)], row-major, IEEE-754 little-endian

#pragma once

#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "ilore/error.hpp"
#include "ilore/rng.hpp"
#include "ilore/tensor.hpp"

namespace ilore {

inline constexpr std::uint32_t kCheckpointVersion = 1;

class ParameterStore {
 public:
  /// Registers a new leaf; names must be unique.
  Tensor& add(const std::string& name, Shape shape, std::vector<double> values) {
    if (params_.count(name)) throw ContractError("duplicate parameter name: " + name);
    return params_.emplace(name, Tensor(std::move(shape), std::move(values), true))
        .first->second;
  }

  Tensor& add_zeros(const std::string& name, Shape shape) {
    const std::size_t n = numel(shape);
    return add(name, std::move(shape), std::vector<double>(n, 0.0));
  }

  Tensor& add_uniform(const std::string& name, Shape shape, double bound, Rng& rng) {
    std::vector<double> v(numel(shape));
    for (double& x : v) x = rng.uniform(-bound, bound);
    return add(name, std::move(shape), std::move(v));
  }

  const Tensor& get(const std::string& name) const {
    auto it = params_.find(name);
    if (it == params_.end()) throw ContractError("unknown parameter: " + name);
    return it->second;
  }
  Tensor& get(const std::string& name) {
    auto it = params_.find(name);
    if (it == params_.end()) throw ContractError("unknown parameter: " + name);
    return it->second;
  }
  bool contains(const std::string& name) const { return params_.count(name) > 0; }

  void zero_grad() {
    for (auto& [_, t] : params_) t.zero_grad();
  }

  std::size_t count() const { return params_.size(); }
  std::size_t scalar_count() const {
    std::size_t n = 0;
    for (const auto& [_, t] : params_) n += t.size();
    return n;
  }

  auto begin() { return params_.begin(); }
  auto end() { return params_.end(); }
  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }

  /// Overwrites values of every parameter from `other`; names and shapes must match.
  void copy_values_from(const ParameterStore& other) {
    for (auto& [name, t] : params_) {
      const Tensor& src = other.get(name);
      if (src.shape() != t.shape())
        throw DimensionError("copy_values_from: shape mismatch for " + name);
      std::copy(src.data().begin(), src.data().end(), t.mutable_data().begin());
    }
  }

  /// Deep copy with fresh leaves and no gradients.
  ParameterStore clone() const {
    ParameterStore out;
    for (const auto& [name, t] : params_) out.add(name, t.shape(), t.to_vector());
    return out;
  }

 private:
  std::map<std::string, Tensor> params_;
};

class Adam {
 public:
  explicit Adam(double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
      : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {}

  /// One update from the gradients currently held by the store.
  /// Parameters without a gradient buffer are left untouched.
  void step(ParameterStore& store) {
    ++t_;
    const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    for (auto& [name, p] : store) {
      if (!p.has_grad()) continue;
      auto& [m, v] = moments_[name];
      if (m.empty()) {
        m.assign(p.size(), 0.0);
        v.assign(p.size(), 0.0);
      }
      const std::vector<double> g = p.grad();
      auto x = p.mutable_data();
      for (std::size_t i = 0; i < x.size(); ++i) {
        m[i] = beta1_ * m[i] + (1.0 - beta1_) * g[i];
        v[i] = beta2_ * v[i] + (1.0 - beta2_) * g[i] * g[i];
        x[i] -= lr_ * (m[i] / c1) / (std::sqrt(v[i] / c2) + eps_);
      }
    }
  }

  double learning_rate() const { return lr_; }

 private:
  double lr_, beta1_, beta2_, eps_;
  std::uint64_t t_ = 0;
  std::map<std::string, std::pair<std::vector<double>, std::vector<double>>> moments_;
};

namespace detail {

static_assert(std::endian::native == std::endian::little,
              "checkpoint IO assumes a little-endian host");

inline void write_u64(std::ostream& os, std::uint64_t v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof v);
}
inline std::uint64_t read_u64(std::istream& is) {
  std::uint64_t v = 0;
  is.read(reinterpret_cast<char*>(&v), sizeof v);
  if (!is) throw Error("checkpoint: truncated file");
  return v;
}

}  // namespace detail

inline void save_checkpoint(const ParameterStore& store, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw Error("checkpoint: cannot open " + path + " for writing");
  os.write("ILORECKP", 8);
  const std::uint32_t version = kCheckpointVersion;
  os.write(reinterpret_cast<const char*>(&version), sizeof version);
  detail::write_u64(os, store.count());
  for (const auto& [name, t] : store) {
    detail::write_u64(os, name.size());
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    detail::write_u64(os, t.ndim());
    for (std::size_t e : t.shape()) detail::write_u64(os, e);
    os.write(reinterpret_cast<const char*>(t.data().data()),
             static_cast<std::streamsize>(t.size() * sizeof(double)));
  }
  if (!os) throw Error("checkpoint: write failed for " + path);
}

/// Loads values into an already-constructed store. Every stored tensor must
/// exist in `store` with the same shape, and vice versa.
inline void load_checkpoint(ParameterStore& store, const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error("checkpoint: cannot open " + path);
  char magic[8];
  is.read(magic, 8);
  if (!is || std::memcmp(magic, "ILORECKP", 8) != 0) throw Error("checkpoint: bad magic in " + path);
  std::uint32_t version = 0;
  is.read(reinterpret_cast<char*>(&version), sizeof version);
  if (version != kCheckpointVersion)
    throw Error("checkpoint: unsupported version " + std::to_string(version));
  const std::uint64_t count = detail::read_u64(is);
  if (count != store.count())
    throw Error("checkpoint: holds " + std::to_string(count) + " tensors, model has " +
                std::to_string(store.count()));
  for (std::uint64_t k = 0; k < count; ++k) {
    const std::uint64_t len = detail::read_u64(is);
    std::string name(len, '\0');
    is.read(name.data(), static_cast<std::streamsize>(len));
    Shape shape(detail::read_u64(is));
    for (auto& e : shape) e = detail::read_u64(is);
    Tensor& t = store.get(name);
    if (t.shape() != shape)
      throw DimensionError("checkpoint: shape " + shape_str(shape) + " for " + name +
                           ", model expects " + shape_str(t.shape()));
    is.read(reinterpret_cast<char*>(t.mutable_data().data()),
            static_cast<std::streamsize>(t.size() * sizeof(double)));
    if (!is) throw Error("checkpoint: truncated payload for " + name);
  }
}

}  // namespace ilore
