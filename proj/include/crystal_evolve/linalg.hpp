// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cmath>

namespace crystal_evolve {

using Vec3 = std::array<double, 3>;
using IVec3 = std::array<int, 3>;
/// Row-major 3x3; rows are vectors.
using Mat3 = std::array<Vec3, 3>;

inline Vec3 operator+(const Vec3& a, const Vec3& b) { return {a[0] + b[0], a[1] + b[1], a[2] + b[2]}; }
inline Vec3 operator-(const Vec3& a, const Vec3& b) { return {a[0] - b[0], a[1] - b[1], a[2] - b[2]}; }
inline Vec3 operator*(double s, const Vec3& a) { return {s * a[0], s * a[1], s * a[2]}; }

inline double dot(const Vec3& a, const Vec3& b) { return a[0] * b[0] + a[1] * b[1] + a[2] * b[2]; }

inline Vec3 cross(const Vec3& a, const Vec3& b) {
  return {a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]};
}

inline double norm(const Vec3& a) { return std::sqrt(dot(a, a)); }

/// vᵀ·M with M row-major.
inline Vec3 row_times(const Vec3& v, const Mat3& m) {
  Vec3 out{};
  for (int k = 0; k < 3; ++k)
    for (int c = 0; c < 3; ++c) out[c] += v[k] * m[k][c];
  return out;
}

inline double determinant(const Mat3& m) { return dot(m[0], cross(m[1], m[2])); }

/// Inverse via the adjugate; caller guarantees a non-singular matrix.
inline Mat3 inverse(const Mat3& m) {
  const double inv_det = 1.0 / determinant(m);
  const Vec3 c0 = cross(m[1], m[2]);
  const Vec3 c1 = cross(m[2], m[0]);
  const Vec3 c2 = cross(m[0], m[1]);
  // Columns of the inverse are the reciprocal vectors.
  Mat3 out{};
  for (int r = 0; r < 3; ++r) {
    out[r][0] = c0[r] * inv_det;
    out[r][1] = c1[r] * inv_det;
    out[r][2] = c2[r] * inv_det;
  }
  return out;
}

}  // namespace crystal_evolve
