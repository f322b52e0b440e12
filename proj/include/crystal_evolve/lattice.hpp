// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <numbers>
#include <string>

#include "crystal_evolve/error.hpp"
#include "crystal_evolve/linalg.hpp"
#include "crystal_evolve/structure.hpp"

namespace crystal_evolve {

/// Cell vectors as matrix rows (Å). First vector along x, second in the
/// x-y plane.
struct Lattice {
  Mat3 m{};

  const Vec3& vector(int k) const { return m[static_cast<std::size_t>(k)]; }
  double volume() const { return determinant(m); }

  /// Distance between the pair of lattice planes spanned by the other two
  /// vectors, for each axis.
  Vec3 perpendicular_widths() const {
    const double v = volume();
    return {v / norm(cross(m[1], m[2])), v / norm(cross(m[2], m[0])), v / norm(cross(m[0], m[1]))};
  }
};

inline Lattice lattice_from_params(const CellParameters& p) {
  const double radicand = cell_volume_radicand(p);
  if (!(radicand > 0.0) || !(p.a > 0.0 && p.b > 0.0 && p.c > 0.0))
    throw Error(Errc::DegenerateCell, "cell (" + std::to_string(p.a) + ", " + std::to_string(p.b) + ", " +
                                          std::to_string(p.c) + ", " + std::to_string(p.alpha) + ", " +
                                          std::to_string(p.beta) + ", " + std::to_string(p.gamma) +
                                          ") has non-positive volume");
  const double ca = cos_deg(p.alpha), cb = cos_deg(p.beta), cg = cos_deg(p.gamma);
  const double sg = sin_deg(p.gamma);
  Lattice l;
  l.m[0] = {p.a, 0.0, 0.0};
  l.m[1] = {p.b * cg, p.b * sg, 0.0};
  const double cy = (ca - cb * cg) / sg;
  // c_z from the volume so det(L) equals a·b·c·sqrt(radicand) by construction.
  const double cz = std::sqrt(radicand) / sg;
  l.m[2] = {p.c * cb, p.c * cy, p.c * cz};
  return l;
}

inline Lattice lattice_from_params(double a, double b, double c, double alpha, double beta, double gamma) {
  return lattice_from_params(CellParameters{a, b, c, alpha, beta, gamma});
}

inline CellParameters params_from_lattice(const Lattice& l) {
  auto angle = [](const Vec3& u, const Vec3& v) {
    return std::acos(dot(u, v) / (norm(u) * norm(v))) * 180.0 / std::numbers::pi;
  };
  return {norm(l.m[0]), norm(l.m[1]), norm(l.m[2]),
          angle(l.m[1], l.m[2]), angle(l.m[0], l.m[2]), angle(l.m[0], l.m[1])};
}

inline Vec3 frac_to_cart(const Lattice& l, const Vec3& frac) { return row_times(frac, l.m); }

inline Vec3 cart_to_frac(const Lattice& l, const Vec3& cart) { return row_times(cart, inverse(l.m)); }

}  // namespace crystal_evolve
