// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <map>
#include <numbers>
#include <sstream>
#include <string>
#include <vector>

#include "crystal_evolve/elements.hpp"
#include "crystal_evolve/error.hpp"

namespace crystal_evolve {

/// Map a fractional coordinate into [0, 1). Idempotent.
inline double wrap_fraction(double x) {
  double w = x - std::floor(x);
  // x slightly below an integer can round up to exactly 1.0.
  if (w >= 1.0) w = 0.0;
  return w == 0.0 ? 0.0 : w;  // also folds -0.0
}

struct AtomSite {
  int element = 0;  // atomic number, 1..100
  double fx = 0.0, fy = 0.0, fz = 0.0;

  double frac(int axis) const { return axis == 0 ? fx : (axis == 1 ? fy : fz); }

  friend bool operator==(const AtomSite&, const AtomSite&) = default;
};

struct CellParameters {
  double a = 0.0, b = 0.0, c = 0.0;
  double alpha = 90.0, beta = 90.0, gamma = 90.0;

  friend bool operator==(const CellParameters&, const CellParameters&) = default;
};

/// cos of an angle in degrees, exact at 90 so orthogonal cells stay exactly
/// orthogonal.
inline double cos_deg(double deg) {
  if (deg == 90.0) return 0.0;
  return std::cos(deg * std::numbers::pi / 180.0);
}

inline double sin_deg(double deg) {
  if (deg == 90.0) return 1.0;
  return std::sin(deg * std::numbers::pi / 180.0);
}

/// 1 - cos²α - cos²β - cos²γ + 2·cosα·cosβ·cosγ; the cell is realizable iff
/// this is positive.
inline double cell_volume_radicand(const CellParameters& p) {
  const double ca = cos_deg(p.alpha), cb = cos_deg(p.beta), cg = cos_deg(p.gamma);
  return 1.0 - ca * ca - cb * cb - cg * cg + 2.0 * ca * cb * cg;
}

inline double cell_volume(const CellParameters& p) {
  const double r = cell_volume_radicand(p);
  return r > 0.0 ? p.a * p.b * p.c * std::sqrt(r) : 0.0;
}

struct CrystalStructure {
  std::string id;
  CellParameters cell;
  std::vector<AtomSite> sites;

  friend bool operator==(const CrystalStructure&, const CrystalStructure&) = default;
};

/// Non-empty description of the first violated invariant, or empty if valid.
inline std::string structure_violation(const CrystalStructure& s) {
  const auto& p = s.cell;
  for (double len : {p.a, p.b, p.c})
    if (!(std::isfinite(len) && len > 0.0)) return "cell length must be positive";
  for (double ang : {p.alpha, p.beta, p.gamma})
    if (!(std::isfinite(ang) && ang > 0.0 && ang < 180.0))
      return "cell angle must lie strictly between 0 and 180 degrees";
  if (!(cell_volume_radicand(p) > 0.0)) return "cell angles are not geometrically realizable";
  if (s.sites.empty()) return "structure has no sites";
  for (std::size_t i = 0; i < s.sites.size(); ++i) {
    const auto& site = s.sites[i];
    if (!valid_atomic_number(site.element)) return "site " + std::to_string(i) + " has unknown element";
    for (double f : {site.fx, site.fy, site.fz})
      if (!(std::isfinite(f) && f >= 0.0 && f < 1.0))
        return "site " + std::to_string(i) + " fractional coordinate outside [0, 1)";
  }
  return {};
}

inline void validate_structure(const CrystalStructure& s) {
  if (auto why = structure_violation(s); !why.empty())
    throw Error(Errc::InvalidStructure, "structure '" + s.id + "': " + why);
}

/// Hill-ordered formula (C, H first, then alphabetical), e.g. "C2H4O".
inline std::string formula(const CrystalStructure& s) {
  std::map<std::string, int> counts;
  for (const auto& site : s.sites) ++counts[std::string(element_symbol(site.element))];
  std::ostringstream out;
  auto emit = [&](const std::string& sym, int n) {
    out << sym;
    if (n > 1) out << n;
  };
  const bool has_carbon = counts.count("C") > 0;
  if (has_carbon) {
    emit("C", counts["C"]);
    counts.erase("C");
    if (counts.count("H")) {
      emit("H", counts["H"]);
      counts.erase("H");
    }
  }
  for (const auto& [sym, n] : counts) emit(sym, n);
  return out.str();
}

}  // namespace crystal_evolve
