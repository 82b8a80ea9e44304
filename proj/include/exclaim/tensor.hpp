// Copyright (c) 2026, The exclaim authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cassert>
#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

namespace exclaim {

/// Dense row-major matrix of doubles. Vectors are stored as n x 1.
struct Matrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> data;

  Matrix() = default;
  Matrix(std::size_t r, std::size_t c, double fill = 0.0) : rows(r), cols(c), data(r * c, fill) {}

  double& operator()(std::size_t r, std::size_t c) { return data[r * cols + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data[r * cols + c]; }

  std::span<double> row(std::size_t r) { return {data.data() + r * cols, cols}; }
  std::span<const double> row(std::size_t r) const { return {data.data() + r * cols, cols}; }

  std::size_t size() const { return data.size(); }
  bool empty() const { return data.empty(); }
  void fill(double v) { std::fill(data.begin(), data.end(), v); }

  bool all_finite() const {
    return std::all_of(data.begin(), data.end(), [](double v) { return std::isfinite(v); });
  }

  friend bool operator==(const Matrix&, const Matrix&) = default;
};

/// out = M * x, with M of shape (out.size() x x.size()).
inline void matvec(const Matrix& m, std::span<const double> x, std::span<double> out) {
  assert(m.cols == x.size() && m.rows == out.size());
  for (std::size_t r = 0; r < m.rows; ++r) {
    const double* w = m.data.data() + r * m.cols;
    double acc = 0.0;
    for (std::size_t c = 0; c < m.cols; ++c) acc += w[c] * x[c];
    out[r] = acc;
  }
}

/// out += M^T * g.
inline void matvec_t_add(const Matrix& m, std::span<const double> g, std::span<double> out) {
  assert(m.rows == g.size() && m.cols == out.size());
  for (std::size_t r = 0; r < m.rows; ++r) {
    const double* w = m.data.data() + r * m.cols;
    const double gr = g[r];
    for (std::size_t c = 0; c < m.cols; ++c) out[c] += w[c] * gr;
  }
}

/// M += g x^T.
inline void outer_add(Matrix& m, std::span<const double> g, std::span<const double> x) {
  assert(m.rows == g.size() && m.cols == x.size());
  for (std::size_t r = 0; r < m.rows; ++r) {
    double* w = m.data.data() + r * m.cols;
    const double gr = g[r];
    if (gr == 0.0) continue;
    for (std::size_t c = 0; c < m.cols; ++c) w[c] += gr * x[c];
  }
}

/// Numerically stable softmax (max subtraction), in place.
inline void softmax_inplace(std::span<double> v) {
  if (v.empty()) return;
  const double mx = *std::max_element(v.begin(), v.end());
  double sum = 0.0;
  for (double& x : v) {
    x = std::exp(x - mx);
    sum += x;
  }
  for (double& x : v) x /= sum;
}

}  // namespace exclaim
