// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cstddef>
#include <span>
#include <vector>

namespace crystal_evolve {

/// Dense row-major matrix of doubles.
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
  void set_zero() { std::fill(data.begin(), data.end(), 0.0); }

  friend bool operator==(const Matrix&, const Matrix&) = default;
};

/// out[c] += Σ_r x[r] · m(r, c) over the first x.size() rows starting at row_offset.
inline void accumulate_row_times(std::span<const double> x, const Matrix& m, std::size_t row_offset,
                                 std::span<double> out) {
  for (std::size_t r = 0; r < x.size(); ++r) {
    const double xr = x[r];
    if (xr == 0.0) continue;
    const double* mr = m.data.data() + (row_offset + r) * m.cols;
    for (std::size_t c = 0; c < m.cols; ++c) out[c] += xr * mr[c];
  }
}

/// m(row_offset + r, c) += x[r] · y[c]   (rank-one update of a row block)
inline void accumulate_outer(std::span<const double> x, std::span<const double> y, Matrix& m,
                             std::size_t row_offset) {
  for (std::size_t r = 0; r < x.size(); ++r) {
    const double xr = x[r];
    if (xr == 0.0) continue;
    double* mr = m.data.data() + (row_offset + r) * m.cols;
    for (std::size_t c = 0; c < y.size(); ++c) mr[c] += xr * y[c];
  }
}

/// out[r] += Σ_c m(row_offset + r, c) · y[c]   (row block times column vector)
inline void accumulate_times_transpose(const Matrix& m, std::size_t row_offset, std::span<const double> y,
                                       std::span<double> out) {
  for (std::size_t r = 0; r < out.size(); ++r) {
    const double* mr = m.data.data() + (row_offset + r) * m.cols;
    double acc = 0.0;
    for (std::size_t c = 0; c < y.size(); ++c) acc += mr[c] * y[c];
    out[r] += acc;
  }
}

}  // namespace crystal_evolve
