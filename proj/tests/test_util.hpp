// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <unistd.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "ilore/parameters.hpp"
#include "ilore/rng.hpp"
#include "ilore/tensor.hpp"

namespace ilore::testing {

inline Tensor random_tensor(Shape shape, Rng& rng, double lo = -2.0, double hi = 2.0,
                            bool requires_grad = true) {
  std::vector<double> v(numel(shape));
  for (double& x : v) x = rng.uniform(lo, hi);
  return Tensor(std::move(shape), std::move(v), requires_grad);
}

inline double max_abs_diff(std::span<const double> a, std::span<const double> b) {
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) worst = std::max(worst, std::abs(a[i] - b[i]));
  return worst;
}

// Fresh scratch directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    static int counter = 0;
    path_ = std::filesystem::temp_directory_path() /
            ("ilore_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
};

/// Fresh uniform values in [-bound, bound] for every parameter of `store`.
inline void randomize(ParameterStore& store, Rng& rng, double bound) {
  for (auto& [name, p] : store)
    for (double& v : p.mutable_data()) v = rng.uniform(-bound, bound);
}

}  // namespace ilore::testing
