// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

#include "kdsr/error.hpp"

namespace kdsr::num {

/// Row-major matrix of doubles. Vectors are 1xN matrices.
class DenseMatrix {
 public:
  DenseMatrix() = default;
  DenseMatrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), values_(rows * cols, fill) {}
  DenseMatrix(std::size_t rows, std::size_t cols, std::vector<double> values)
      : rows_(rows), cols_(cols), values_(std::move(values)) {
    if (values_.size() != rows_ * cols_) {
      fail(ErrorKind::dimension, "matrix value count " + std::to_string(values_.size()) +
                                     " != " + std::to_string(rows_) + "x" +
                                     std::to_string(cols_));
    }
  }

  static DenseMatrix from_rows(std::initializer_list<std::initializer_list<double>> rows) {
    const std::size_t r = rows.size();
    const std::size_t c = r == 0 ? 0 : rows.begin()->size();
    DenseMatrix m(r, c);
    std::size_t i = 0;
    for (const auto& row : rows) {
      if (row.size() != c) fail(ErrorKind::dimension, "ragged row in from_rows");
      std::size_t j = 0;
      for (double v : row) m(i, j++) = v;
      ++i;
    }
    return m;
  }

  static DenseMatrix row_vector(std::span<const double> values) {
    return DenseMatrix(1, values.size(), std::vector<double>(values.begin(), values.end()));
  }

  static DenseMatrix identity(std::size_t n) {
    DenseMatrix m(n, n);
    for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
    return m;
  }

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t size() const noexcept { return values_.size(); }
  bool empty() const noexcept { return values_.empty(); }

  double& operator()(std::size_t r, std::size_t c) noexcept { return values_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const noexcept {
    return values_[r * cols_ + c];
  }
  double& operator[](std::size_t i) noexcept { return values_[i]; }
  double operator[](std::size_t i) const noexcept { return values_[i]; }

  std::span<double> row(std::size_t r) noexcept { return {values_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const noexcept {
    return {values_.data() + r * cols_, cols_};
  }
  std::span<double> values() noexcept { return values_; }
  std::span<const double> values() const noexcept { return values_; }

  void fill(double v) noexcept { std::fill(values_.begin(), values_.end(), v); }

  bool same_shape(const DenseMatrix& o) const noexcept {
    return rows_ == o.rows_ && cols_ == o.cols_;
  }

  /// Bitwise-style equality (exact double comparison).
  bool operator==(const DenseMatrix& o) const = default;

  DenseMatrix& operator+=(const DenseMatrix& o) {
    if (!same_shape(o)) fail(ErrorKind::dimension, "shape mismatch in +=");
    for (std::size_t i = 0; i < values_.size(); ++i) values_[i] += o.values_[i];
    return *this;
  }

  /// Index of the first non-finite entry, or size() when all finite.
  std::size_t first_non_finite() const noexcept {
    for (std::size_t i = 0; i < values_.size(); ++i) {
      if (!std::isfinite(values_[i])) return i;
    }
    return values_.size();
  }

  std::string shape_string() const {
    return std::to_string(rows_) + "x" + std::to_string(cols_);
  }

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> values_;
};

// All products below accumulate each output entry over the shared index in
// ascending order, so results are reproducible for a given input.

/// out += a * b
inline void matmul_acc(const DenseMatrix& a, const DenseMatrix& b, DenseMatrix& out) {
  if (a.cols() != b.rows() || out.rows() != a.rows() || out.cols() != b.cols()) {
    fail(ErrorKind::dimension, "matmul shape mismatch: " + a.shape_string() + " * " +
                                   b.shape_string() + " -> " + out.shape_string());
  }
  const std::size_t n = b.cols();
  for (std::size_t i = 0; i < a.rows(); ++i) {
    double* o = out.row(i).data();
    for (std::size_t k = 0; k < a.cols(); ++k) {
      const double s = a(i, k);
      if (s == 0.0) continue;
      const double* br = b.row(k).data();
      for (std::size_t j = 0; j < n; ++j) o[j] += s * br[j];
    }
  }
}

inline DenseMatrix matmul(const DenseMatrix& a, const DenseMatrix& b) {
  if (a.cols() != b.rows()) {
    fail(ErrorKind::dimension,
         "matmul shape mismatch: " + a.shape_string() + " * " + b.shape_string());
  }
  DenseMatrix out(a.rows(), b.cols());
  matmul_acc(a, b, out);
  return out;
}

inline DenseMatrix transpose(const DenseMatrix& a) {
  DenseMatrix t(a.cols(), a.rows());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    for (std::size_t j = 0; j < a.cols(); ++j) t(j, i) = a(i, j);
  }
  return t;
}

/// out += a * b^T
inline void matmul_bt_acc(const DenseMatrix& a, const DenseMatrix& b, DenseMatrix& out) {
  matmul_acc(a, transpose(b), out);
}

/// out += a^T * b
inline void matmul_at_acc(const DenseMatrix& a, const DenseMatrix& b, DenseMatrix& out) {
  if (a.rows() != b.rows() || out.rows() != a.cols() || out.cols() != b.cols()) {
    fail(ErrorKind::dimension, "matmul_at shape mismatch: " + a.shape_string() + "^T * " +
                                   b.shape_string() + " -> " + out.shape_string());
  }
  const std::size_t n = b.cols();
  for (std::size_t i = 0; i < a.rows(); ++i) {
    const double* br = b.row(i).data();
    for (std::size_t k = 0; k < a.cols(); ++k) {
      const double s = a(i, k);
      if (s == 0.0) continue;
      double* o = out.row(k).data();
      for (std::size_t j = 0; j < n; ++j) o[j] += s * br[j];
    }
  }
}

inline double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

inline double norm(std::span<const double> a) { return std::sqrt(dot(a, a)); }

}  // namespace kdsr::num
