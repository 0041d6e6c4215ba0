#pragma once

#include <cmath>
#include <span>
#include <vector>

#include "bridgegcs/core/tensor.hpp"
#include "bridgegcs/error.hpp"

namespace bridgegcs {

/// Per-channel affine standardization x -> (x - mean) / scale.
struct Standardizer {
  std::vector<double> mean;
  std::vector<double> scale;

  static Standardizer identity(std::size_t dim) {
    return {std::vector<double>(dim, 0.0), std::vector<double>(dim, 1.0)};
  }

  /// Channels whose population std falls below `floor` are scaled by `floor`.
  static Standardizer fit(std::span<const std::vector<double>> samples, double floor = 1e-3) {
    if (samples.empty()) throw ConfigError("Standardizer::fit: no samples");
    const std::size_t dim = samples.front().size();
    Standardizer s{std::vector<double>(dim, 0.0), std::vector<double>(dim, 0.0)};
    for (const auto& x : samples)
      for (std::size_t i = 0; i < dim; ++i) s.mean[i] += x[i];
    const double n = static_cast<double>(samples.size());
    for (auto& m : s.mean) m /= n;
    for (const auto& x : samples)
      for (std::size_t i = 0; i < dim; ++i) s.scale[i] += (x[i] - s.mean[i]) * (x[i] - s.mean[i]);
    for (auto& v : s.scale) v = std::max(std::sqrt(v / n), floor);
    return s;
  }

  std::size_t dim() const { return mean.size(); }

  std::vector<double> apply(std::span<const double> x) const {
    check(x.size());
    std::vector<double> y(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) y[i] = (x[i] - mean[i]) / scale[i];
    return y;
  }
  std::vector<double> invert(std::span<const double> y) const {
    check(y.size());
    std::vector<double> x(y.size());
    for (std::size_t i = 0; i < y.size(); ++i) x[i] = y[i] * scale[i] + mean[i];
    return x;
  }
  /// Writes the standardized `x` into row `r` of `m` starting at column `offset`.
  void apply_into(std::span<const double> x, Tensor& m, std::size_t r, std::size_t offset = 0) const {
    check(x.size());
    double* dst = m.data() + r * m.cols() + offset;
    for (std::size_t i = 0; i < x.size(); ++i) dst[i] = (x[i] - mean[i]) / scale[i];
  }

  friend bool operator==(const Standardizer&, const Standardizer&) = default;

 private:
  void check(std::size_t n) const {
    if (n != mean.size()) throw RejectedInput("standardizer: dimension mismatch");
  }
};

}  // namespace bridgegcs
