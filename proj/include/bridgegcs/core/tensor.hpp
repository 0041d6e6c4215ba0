#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <numeric>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "bridgegcs/error.hpp"

namespace bridgegcs {

/// Dense row-major array of 64-bit reals. Rank 1 holds a single vector,
/// rank 2 holds a batch of row vectors.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::vector<std::size_t> shape)
      : shape_(std::move(shape)), data_(element_count(shape_), 0.0) {}
  Tensor(std::vector<std::size_t> shape, std::vector<double> data)
      : shape_(std::move(shape)), data_(std::move(data)) {
    if (element_count(shape_) != data_.size()) {
      throw RejectedInput("tensor shape does not match data length");
    }
  }

  static Tensor vector(std::vector<double> v) {
    const std::size_t n = v.size();
    return Tensor({n}, std::move(v));
  }
  static Tensor matrix(std::size_t rows, std::size_t cols) { return Tensor({rows, cols}); }

  const std::vector<std::size_t>& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t size() const noexcept { return data_.size(); }

  // Rank-1 tensors are treated as a single row.
  std::size_t rows() const noexcept { return shape_.size() == 2 ? shape_[0] : 1; }
  std::size_t cols() const noexcept { return shape_.empty() ? 0 : shape_.back(); }

  double* data() noexcept { return data_.data(); }
  const double* data() const noexcept { return data_.data(); }
  std::span<double> span() noexcept { return data_; }
  std::span<const double> span() const noexcept { return data_; }
  std::vector<double>& values() noexcept { return data_; }
  const std::vector<double>& values() const noexcept { return data_; }

  std::span<double> row(std::size_t r) { return {data_.data() + r * cols(), cols()}; }
  std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols(), cols()}; }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }
  double& at(std::size_t r, std::size_t c) { return data_[r * cols() + c]; }
  double at(std::size_t r, std::size_t c) const { return data_[r * cols() + c]; }

  void fill(double v) { std::fill(data_.begin(), data_.end(), v); }
  bool all_finite() const {
    return std::all_of(data_.begin(), data_.end(), [](double x) { return std::isfinite(x); });
  }
  bool same_shape(const Tensor& o) const noexcept { return shape_ == o.shape_; }

  friend bool operator==(const Tensor&, const Tensor&) = default;

 private:
  static std::size_t element_count(const std::vector<std::size_t>& s) {
    return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>());
  }

  std::vector<std::size_t> shape_;
  std::vector<double> data_;
};

/// Stack equally sized vectors into a rows x dim matrix.
inline Tensor stack_rows(std::span<const std::vector<double>> rows) {
  if (rows.empty()) return Tensor::matrix(0, 0);
  const std::size_t dim = rows.front().size();
  Tensor m = Tensor::matrix(rows.size(), dim);
  for (std::size_t r = 0; r < rows.size(); ++r) {
    if (rows[r].size() != dim) throw RejectedInput("stack_rows: ragged input");
    std::copy(rows[r].begin(), rows[r].end(), m.row(r).begin());
  }
  return m;
}

namespace kernels {

// y[b, o] = bias[o] + sum_i x[b, i] * w[i, o]
inline void affine(const Tensor& x, const Tensor& w, const Tensor& bias, Tensor& y) {
  const std::size_t batch = x.rows(), in = w.shape()[0], out = w.shape()[1];
  for (std::size_t b = 0; b < batch; ++b) {
    double* yr = y.data() + b * out;
    std::copy(bias.data(), bias.data() + out, yr);
    const double* xr = x.data() + b * in;
    for (std::size_t i = 0; i < in; ++i) {
      const double xi = xr[i];
      if (xi == 0.0) continue;
      const double* wr = w.data() + i * out;
      for (std::size_t o = 0; o < out; ++o) yr[o] += xi * wr[o];
    }
  }
}

// dw[i, o] += sum_b x[b, i] * dy[b, o];  db[o] += sum_b dy[b, o]
inline void affine_param_grad(const Tensor& x, const Tensor& dy, Tensor& dw, Tensor& db) {
  const std::size_t batch = x.rows(), in = x.cols(), out = dy.cols();
  for (std::size_t b = 0; b < batch; ++b) {
    const double* xr = x.data() + b * in;
    const double* dyr = dy.data() + b * out;
    for (std::size_t i = 0; i < in; ++i) {
      const double xi = xr[i];
      if (xi == 0.0) continue;
      double* dwr = dw.data() + i * out;
      for (std::size_t o = 0; o < out; ++o) dwr[o] += xi * dyr[o];
    }
    double* dbp = db.data();
    for (std::size_t o = 0; o < out; ++o) dbp[o] += dyr[o];
  }
}

// dx[b, i] = sum_o dy[b, o] * w[i, o]
inline void affine_input_grad(const Tensor& dy, const Tensor& w, Tensor& dx) {
  const std::size_t batch = dy.rows(), in = w.shape()[0], out = w.shape()[1];
  for (std::size_t b = 0; b < batch; ++b) {
    const double* dyr = dy.data() + b * out;
    double* dxr = dx.data() + b * in;
    for (std::size_t i = 0; i < in; ++i) {
      const double* wr = w.data() + i * out;
      double a0 = 0, a1 = 0, a2 = 0, a3 = 0;
      std::size_t o = 0;
      for (; o + 4 <= out; o += 4) {
        a0 += dyr[o] * wr[o];
        a1 += dyr[o + 1] * wr[o + 1];
        a2 += dyr[o + 2] * wr[o + 2];
        a3 += dyr[o + 3] * wr[o + 3];
      }
      for (; o < out; ++o) a0 += dyr[o] * wr[o];
      dxr[i] = (a0 + a1) + (a2 + a3);
    }
  }
}

}  // namespace kernels

inline double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

inline double squared_norm(std::span<const double> a) { return dot(a, a); }

inline double squared_distance(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    s += d * d;
  }
  return s;
}

struct CosineResult {
  double value = 0.0;
  bool degenerate = false;  // at least one input had zero norm
};

/// Cosine similarity; a zero-norm input yields 0 with the degenerate flag set.
inline CosineResult cosine_sim(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw RejectedInput("cosine_sim: length mismatch");
  const double na = std::sqrt(squared_norm(a));
  const double nb = std::sqrt(squared_norm(b));
  if (na == 0.0 || nb == 0.0) return {0.0, true};
  const double c = dot(a, b) / (na * nb);
  return {std::clamp(c, -1.0, 1.0), false};
}

/// Gradients of cosine_sim(a, b) with respect to a and b, accumulated scaled by `upstream`.
inline void cosine_sim_backward(std::span<const double> a, std::span<const double> b, double upstream,
                                std::span<double> da, std::span<double> db) {
  const double na2 = squared_norm(a), nb2 = squared_norm(b);
  if (na2 == 0.0 || nb2 == 0.0) return;
  const double na = std::sqrt(na2), nb = std::sqrt(nb2);
  const double s = dot(a, b) / (na * nb);
  const double inv = 1.0 / (na * nb);
  for (std::size_t i = 0; i < a.size(); ++i) {
    da[i] += upstream * (b[i] * inv - s * a[i] / na2);
    db[i] += upstream * (a[i] * inv - s * b[i] / nb2);
  }
}

}  // namespace bridgegcs
