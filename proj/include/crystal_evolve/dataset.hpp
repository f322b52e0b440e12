// SPDX-License-Identifier: Apache-2.0
//
// Labelled datasets. A manifest is JSON-lines, one entry per line:
//   {"cif": "structures/a.cif", "fe_percent": 71.5, "voltage_v": -0.9,
//    "free_energy_ev_atom": -1.2, "provenance": "measured"}
// Every label is optional but at least one must be present. Relative `cif`
// paths resolve against the manifest's directory.

#pragma once

#include <cmath>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "crystal_evolve/cif.hpp"
#include "crystal_evolve/error.hpp"
#include "crystal_evolve/properties.hpp"
#include "crystal_evolve/structure.hpp"

namespace crystal_evolve {

enum class Provenance { Measured, Predicted };

inline std::string_view provenance_name(Provenance p) { return p == Provenance::Measured ? "measured" : "predicted"; }

struct LabeledEntry {
  CrystalStructure structure;
  PartialLabels labels;
  Provenance provenance = Provenance::Measured;

  friend bool operator==(const LabeledEntry&, const LabeledEntry&) = default;
};

inline constexpr const char* kFeKey = "fe_percent";
inline constexpr const char* kVoltageKey = "voltage_v";
inline constexpr const char* kFreeEnergyKey = "free_energy_ev_atom";

/// Empty if the entry is valid. Measured FE must be a percentage; predicted
/// FE is passed through unbounded.
inline std::string entry_violation(const LabeledEntry& e) {
  if (e.labels.empty()) return "entry has no labels";
  for (Property p : kAllProperties)
    if (auto x = e.labels.get(p); x && !std::isfinite(*x)) return "non-finite label";
  if (e.provenance == Provenance::Measured && e.labels.fe && (*e.labels.fe < 0.0 || *e.labels.fe > 100.0))
    return "fe_percent outside [0, 100]";
  return structure_violation(e.structure);
}

inline std::vector<LabeledEntry> load_dataset(const std::string& manifest_path) {
  namespace fs = std::filesystem;
  std::ifstream in(manifest_path);
  if (!in) throw Error(Errc::FileNotFound, manifest_path);
  const fs::path base = fs::path(manifest_path).parent_path();

  std::vector<LabeledEntry> entries;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const std::string where = manifest_path + ":" + std::to_string(lineno);
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw Error(Errc::LineParseError, where + ": " + e.what());
    }
    if (!j.is_object() || !j.contains("cif") || !j["cif"].is_string())
      throw Error(Errc::LineParseError, where + ": missing string field 'cif'");

    LabeledEntry entry;
    auto read_label = [&](const char* key, Property p) {
      if (!j.contains(key) || j[key].is_null()) return;
      if (!j[key].is_number()) throw Error(Errc::LineParseError, where + ": field '" + key + "' is not a number");
      entry.labels.set(p, j[key].get<double>());
    };
    read_label(kFeKey, Property::FE);
    read_label(kVoltageKey, Property::V);
    read_label(kFreeEnergyKey, Property::dE);
    if (j.contains("provenance")) {
      const auto prov = j["provenance"].is_string() ? j["provenance"].get<std::string>() : std::string();
      if (prov == "measured")
        entry.provenance = Provenance::Measured;
      else if (prov == "predicted")
        entry.provenance = Provenance::Predicted;
      else
        throw Error(Errc::LineParseError, where + ": provenance must be 'measured' or 'predicted'");
    }

    fs::path cif_path = j["cif"].get<std::string>();
    if (cif_path.is_relative()) cif_path = base / cif_path;
    if (!fs::exists(cif_path)) throw Error(Errc::FileNotFound, cif_path.string() + " (referenced at " + where + ")");
    entry.structure = read_cif_file(cif_path.string());

    if (auto why = entry_violation(entry); !why.empty()) throw Error(Errc::LineParseError, where + ": " + why);
    entries.push_back(std::move(entry));
  }
  return entries;
}

// Full-precision JSON forms, used by checkpoints where 6-decimal CIF text
// would lose bits.

inline nlohmann::json structure_to_json(const CrystalStructure& s) {
  nlohmann::json sites = nlohmann::json::array();
  for (const auto& site : s.sites) sites.push_back({site.element, site.fx, site.fy, site.fz});
  return {{"id", s.id},
          {"cell", {s.cell.a, s.cell.b, s.cell.c, s.cell.alpha, s.cell.beta, s.cell.gamma}},
          {"sites", sites}};
}

inline CrystalStructure structure_from_json(const nlohmann::json& j) {
  CrystalStructure s;
  s.id = j.at("id").get<std::string>();
  const auto& c = j.at("cell");
  s.cell = {c.at(0).get<double>(), c.at(1).get<double>(), c.at(2).get<double>(),
            c.at(3).get<double>(), c.at(4).get<double>(), c.at(5).get<double>()};
  for (const auto& site : j.at("sites"))
    s.sites.push_back({site.at(0).get<int>(), site.at(1).get<double>(), site.at(2).get<double>(),
                       site.at(3).get<double>()});
  validate_structure(s);
  return s;
}

inline nlohmann::json labels_to_json(const PartialLabels& l) {
  nlohmann::json j = nlohmann::json::object();
  if (l.fe) j[kFeKey] = *l.fe;
  if (l.v) j[kVoltageKey] = *l.v;
  if (l.de) j[kFreeEnergyKey] = *l.de;
  return j;
}

inline PartialLabels labels_from_json(const nlohmann::json& j) {
  PartialLabels l;
  if (j.contains(kFeKey)) l.fe = j[kFeKey].get<double>();
  if (j.contains(kVoltageKey)) l.v = j[kVoltageKey].get<double>();
  if (j.contains(kFreeEnergyKey)) l.de = j[kFreeEnergyKey].get<double>();
  return l;
}

inline nlohmann::json entry_to_json(const LabeledEntry& e) {
  return {{"structure", structure_to_json(e.structure)},
          {"labels", labels_to_json(e.labels)},
          {"provenance", std::string(provenance_name(e.provenance))}};
}

inline LabeledEntry entry_from_json(const nlohmann::json& j) {
  LabeledEntry e;
  e.structure = structure_from_json(j.at("structure"));
  e.labels = labels_from_json(j.at("labels"));
  e.provenance = j.at("provenance").get<std::string>() == "predicted" ? Provenance::Predicted : Provenance::Measured;
  return e;
}

}  // namespace crystal_evolve
