// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <string>

#include "crystal_evolve/error.hpp"
#include "crystal_evolve/graph.hpp"
#include "crystal_evolve/properties.hpp"
#include "crystal_evolve/surrogate.hpp"

namespace crystal_evolve {

/// fitness = fe / fe_div - de * de_mul - |v| / v_div, in raw physical units
/// (FE percent, ΔE eV/atom, V volts).
struct FitnessCoefficients {
  double fe_div = 5.0;
  double de_mul = 5.0;
  double v_div = 2.0;

  friend bool operator==(const FitnessCoefficients&, const FitnessCoefficients&) = default;
};

inline double fitness(const PropertyVector& p, const FitnessCoefficients& k = {}) {
  if (!std::isfinite(p.fe) || !std::isfinite(p.v) || !std::isfinite(p.de))
    throw Error(Errc::NonFiniteInput, "property vector (" + std::to_string(p.fe) + ", " + std::to_string(p.v) +
                                          ", " + std::to_string(p.de) + ") is not finite");
  return p.fe / k.fe_div - p.de * k.de_mul - std::abs(p.v) / k.v_div;
}

/// One trained surrogate per property.
struct SurrogateSet {
  SurrogateModel fe;
  SurrogateModel v;
  SurrogateModel de;

  const SurrogateModel& get(Property p) const { return p == Property::FE ? fe : (p == Property::V ? v : de); }
  SurrogateModel& get(Property p) { return p == Property::FE ? fe : (p == Property::V ? v : de); }
};

struct Evaluation {
  PropertyVector properties;
  double fitness = 0.0;

  friend bool operator==(const Evaluation&, const Evaluation&) = default;
};

/// Everything needed to score a structure; read-only, shareable across threads.
struct Evaluator {
  const SurrogateSet& models;
  GraphConfig graph_config;
  FitnessCoefficients coefficients;

  Evaluation operator()(const CrystalStructure& s) const;
};

inline Evaluation evaluate_candidate(const SurrogateSet& models, const CrystalStructure& structure,
                                     const GraphConfig& graph_config, const FitnessCoefficients& coefficients = {}) {
  const CrystalGraph graph = build_graph(structure, graph_config);
  Evaluation out;
  for (Property p : kAllProperties) {
    try {
      out.properties.set(p, predict_physical(models.get(p), graph));
    } catch (const Error& e) {
      rethrow_with_context(e, "structure '" + structure.id + "', " + std::string(property_key(p)) + " model");
    }
  }
  try {
    out.fitness = fitness(out.properties, coefficients);
  } catch (const Error& e) {
    rethrow_with_context(e, "structure '" + structure.id + "'");
  }
  return out;
}

inline Evaluation Evaluator::operator()(const CrystalStructure& s) const {
  return evaluate_candidate(models, s, graph_config, coefficients);
}

}  // namespace crystal_evolve
