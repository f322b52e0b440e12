// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <optional>
#include <string>
#include <string_view>

#include "crystal_evolve/error.hpp"

namespace crystal_evolve {

/// The three scored properties: faradaic efficiency (percent), voltage
/// potential (V) and free energy (eV/atom).
enum class Property { FE, V, dE };

inline constexpr std::array<Property, 3> kAllProperties = {Property::FE, Property::V, Property::dE};

inline std::string_view property_key(Property p) {
  switch (p) {
    case Property::FE: return "fe";
    case Property::V: return "v";
    case Property::dE: return "de";
  }
  return "?";
}

inline Property property_from_key(std::string_view key) {
  if (key == "fe" || key == "FE") return Property::FE;
  if (key == "v" || key == "V") return Property::V;
  if (key == "de" || key == "dE" || key == "DE") return Property::dE;
  throw Error(Errc::InvalidConfig, "unknown property '" + std::string(key) + "' (expected fe, v or de)");
}

struct PropertyVector {
  double fe = 0.0;  // percent
  double v = 0.0;   // volts, signed
  double de = 0.0;  // eV/atom, signed

  double get(Property p) const { return p == Property::FE ? fe : (p == Property::V ? v : de); }
  void set(Property p, double x) { (p == Property::FE ? fe : (p == Property::V ? v : de)) = x; }

  friend bool operator==(const PropertyVector&, const PropertyVector&) = default;
};

/// Any subset of the three properties.
struct PartialLabels {
  std::optional<double> fe, v, de;

  std::optional<double> get(Property p) const { return p == Property::FE ? fe : (p == Property::V ? v : de); }
  void set(Property p, double x) { (p == Property::FE ? fe : (p == Property::V ? v : de)) = x; }
  bool empty() const { return !fe && !v && !de; }

  static PartialLabels from(const PropertyVector& p) { return {p.fe, p.v, p.de}; }

  friend bool operator==(const PartialLabels&, const PartialLabels&) = default;
};

}  // namespace crystal_evolve
