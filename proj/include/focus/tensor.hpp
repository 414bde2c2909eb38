// Copyright 2026 The focus-sim Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "focus/error.hpp"

namespace focus {

// Dense row-major matrix of doubles.
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
  Matrix(std::size_t rows, std::size_t cols, std::vector<double> data)
      : rows_(rows), cols_(cols), data_(std::move(data)) {
    require(data_.size() == rows_ * cols_, ErrorCode::kDimensionMismatch,
            "matrix data length " + std::to_string(data_.size()) + " != " +
                std::to_string(rows_) + "x" + std::to_string(cols_));
  }

  static Matrix from_rows(const std::vector<std::vector<double>>& rows) {
    if (rows.empty()) return {};
    Matrix m(rows.size(), rows.front().size());
    for (std::size_t r = 0; r < rows.size(); ++r) {
      require(rows[r].size() == m.cols_, ErrorCode::kDimensionMismatch, "ragged rows");
      std::copy(rows[r].begin(), rows[r].end(), m.row(r).begin());
    }
    return m;
  }

  static Matrix identity(std::size_t n) {
    Matrix m(n, n);
    for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
    return m;
  }

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  bool empty() const noexcept { return data_.empty(); }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

  std::span<const double> data() const noexcept { return data_; }
  std::span<double> data() noexcept { return data_; }

  bool operator==(const Matrix&) const = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

inline double max_abs_diff(const Matrix& a, const Matrix& b) {
  require(a.rows() == b.rows() && a.cols() == b.cols(), ErrorCode::kDimensionMismatch,
          "max_abs_diff shape mismatch");
  double m = 0.0;
  for (std::size_t i = 0; i < a.data().size(); ++i) {
    m = std::max(m, std::abs(a.data()[i] - b.data()[i]));
  }
  return m;
}

// Fixed i-k-j loop order; no reassociation across calls.
inline Matrix matmul(const Matrix& a, const Matrix& b) {
  require(a.cols() == b.rows(), ErrorCode::kDimensionMismatch,
          "matmul " + std::to_string(a.rows()) + "x" + std::to_string(a.cols()) + " * " +
              std::to_string(b.rows()) + "x" + std::to_string(b.cols()));
  Matrix out(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    auto out_row = out.row(i);
    for (std::size_t k = 0; k < a.cols(); ++k) {
      const double aik = a(i, k);
      auto b_row = b.row(k);
      for (std::size_t j = 0; j < b.cols(); ++j) out_row[j] += aik * b_row[j];
    }
  }
  return out;
}

// a * b^T, used for query-key scores.
inline Matrix matmul_transposed(const Matrix& a, const Matrix& b) {
  require(a.cols() == b.cols(), ErrorCode::kDimensionMismatch, "matmul_transposed inner dims");
  Matrix out(a.rows(), b.rows());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    for (std::size_t j = 0; j < b.rows(); ++j) {
      double acc = 0.0;
      auto ar = a.row(i);
      auto br = b.row(j);
      for (std::size_t k = 0; k < a.cols(); ++k) acc += ar[k] * br[k];
      out(i, j) = acc;
    }
  }
  return out;
}

inline void softmax_inplace(std::span<double> v) {
  double mx = -std::numeric_limits<double>::infinity();
  for (double x : v) mx = std::max(mx, x);
  double sum = 0.0;
  for (double& x : v) {
    x = std::exp(x - mx);
    sum += x;
  }
  for (double& x : v) x /= sum;
}

inline Matrix row_softmax(const Matrix& a) {
  require(a.rows() >= 1 && a.cols() >= 1, ErrorCode::kInvalidArgument, "row_softmax of empty matrix");
  Matrix out = a;
  for (std::size_t r = 0; r < out.rows(); ++r) softmax_inplace(out.row(r));
  return out;
}

// Same-length max pooling; positions outside the sequence act as -inf.
inline std::vector<double> maxpool1d_same(std::span<const double> v, std::size_t kernel) {
  require(kernel >= 1 && kernel % 2 == 1, ErrorCode::kInvalidArgument,
          "maxpool kernel must be odd and >= 1, got " + std::to_string(kernel));
  require(!v.empty(), ErrorCode::kInvalidArgument, "maxpool of empty sequence");
  const std::size_t half = kernel / 2;
  const std::size_t n = v.size();
  std::vector<double> out(n);
  for (std::size_t j = 0; j < n; ++j) {
    const std::size_t lo = j >= half ? j - half : 0;
    const std::size_t hi = std::min(n - 1, j + half);
    double m = v[lo];
    for (std::size_t t = lo + 1; t <= hi; ++t) m = std::max(m, v[t]);
    out[j] = m;
  }
  return out;
}

// Rotary embedding over adjacent column pairs (2i, 2i+1) with frequency
// base^(-2i/cols).
inline Matrix apply_rope(const Matrix& x, std::span<const std::size_t> positions, double base = 10000.0) {
  require(x.cols() % 2 == 0, ErrorCode::kInvalidArgument, "rope needs even column count");
  require(positions.size() == x.rows(), ErrorCode::kDimensionMismatch, "rope positions length");
  Matrix out(x.rows(), x.cols());
  const double d = static_cast<double>(x.cols());
  for (std::size_t r = 0; r < x.rows(); ++r) {
    const double p = static_cast<double>(positions[r]);
    for (std::size_t i = 0; i < x.cols() / 2; ++i) {
      const double theta = p * std::pow(base, -2.0 * static_cast<double>(i) / d);
      const double c = std::cos(theta);
      const double s = std::sin(theta);
      const double x0 = x(r, 2 * i);
      const double x1 = x(r, 2 * i + 1);
      out(r, 2 * i) = x0 * c - x1 * s;
      out(r, 2 * i + 1) = x0 * s + x1 * c;
    }
  }
  return out;
}

inline constexpr double kRmsNormEps = 1e-6;

inline Matrix rms_norm(const Matrix& x, std::span<const double> gain) {
  require(gain.size() == x.cols(), ErrorCode::kDimensionMismatch, "rms_norm gain length");
  Matrix out(x.rows(), x.cols());
  for (std::size_t r = 0; r < x.rows(); ++r) {
    double ss = 0.0;
    for (double v : x.row(r)) ss += v * v;
    const double inv = 1.0 / std::sqrt(ss / static_cast<double>(x.cols()) + kRmsNormEps);
    for (std::size_t c = 0; c < x.cols(); ++c) out(r, c) = x(r, c) * inv * gain[c];
  }
  return out;
}

inline double silu(double x) { return x / (1.0 + std::exp(-x)); }

inline void add_inplace(Matrix& a, const Matrix& b) {
  require(a.rows() == b.rows() && a.cols() == b.cols(), ErrorCode::kDimensionMismatch, "add shape");
  for (std::size_t i = 0; i < a.data().size(); ++i) a.data()[i] += b.data()[i];
}

inline Matrix gather_rows(const Matrix& m, std::span<const std::size_t> rows) {
  Matrix out(rows.size(), m.cols());
  for (std::size_t r = 0; r < rows.size(); ++r) {
    require(rows[r] < m.rows(), ErrorCode::kOutOfRange, "gather_rows index");
    std::copy(m.row(rows[r]).begin(), m.row(rows[r]).end(), out.row(r).begin());
  }
  return out;
}

inline Matrix column_slice(const Matrix& m, std::size_t begin, std::size_t count) {
  Matrix out(m.rows(), count);
  for (std::size_t r = 0; r < m.rows(); ++r) {
    for (std::size_t c = 0; c < count; ++c) out(r, c) = m(r, begin + c);
  }
  return out;
}

}  // namespace focus
