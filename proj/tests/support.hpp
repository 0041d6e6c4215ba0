#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include <unistd.h>

#include "bridgegcs/core/rng.hpp"
#include "bridgegcs/core/tensor.hpp"

namespace bridgegcs::testing {

inline constexpr double kFdStep = 1e-5;
// Gradient entries below this magnitude are compared absolutely; central
// differences cannot resolve them to relative precision.
inline constexpr double kFdFloor = 1e-6;

struct FdReport {
  double max_rel_error = 0.0;
  std::size_t checked = 0;
};

/// Central differences of `loss` against `analytic` for every entry of `params`.
inline FdReport finite_difference_check(std::span<Tensor* const> params, std::span<const Tensor* const> analytic,
                                        const std::function<double()>& loss) {
  FdReport r;
  for (std::size_t k = 0; k < params.size(); ++k) {
    Tensor& p = *params[k];
    for (std::size_t i = 0; i < p.size(); ++i) {
      const double saved = p[i];
      p[i] = saved + kFdStep;
      const double up = loss();
      p[i] = saved - kFdStep;
      const double down = loss();
      p[i] = saved;
      const double numeric = (up - down) / (2.0 * kFdStep);
      const double a = (*analytic[k])[i];
      const double denom = std::max({std::abs(a), std::abs(numeric), kFdFloor});
      r.max_rel_error = std::max(r.max_rel_error, std::abs(a - numeric) / denom);
      ++r.checked;
    }
  }
  return r;
}

/// A fresh empty directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    static int counter = 0;
    path_ = std::filesystem::temp_directory_path() /
            ("bridgegcs_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
};

inline Tensor random_tensor(std::vector<std::size_t> shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Tensor t(std::move(shape));
  for (auto& v : t.values()) v = uniform(rng, lo, hi);
  return t;
}

}  // namespace bridgegcs::testing
