// SPDX-License-Identifier: Apache-2.0
//
// Active transfer learning loop. Each cycle:
//   1. train one surrogate per property on the current training set
//   2. seed a population from the pool and evolve it
//   3. take the top distinct structures of the final generation
//   4. append them to the training set, labelled with their predictions
//   5. write models, generation records, maxima, report and checkpoint
//
// Output directory layout:
//   cycle_<t>/models/<fe|v|de>.json
//   cycle_<t>/generations.jsonl
//   cycle_<t>/maxima/<id>.cif
//   report.json  checkpoint.json  best.cif

#pragma once

#include <array>
#include <filesystem>
#include <fstream>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "crystal_evolve/cif.hpp"
#include "crystal_evolve/dataset.hpp"
#include "crystal_evolve/error.hpp"
#include "crystal_evolve/evolution.hpp"
#include "crystal_evolve/fitness.hpp"
#include "crystal_evolve/graph.hpp"
#include "crystal_evolve/surrogate.hpp"

namespace crystal_evolve {

namespace fs = std::filesystem;

struct RunConfig {
  std::string dataset_manifest;
  std::string holdout_manifest;  // optional; enables validation rows
  std::string pool_dir;
  std::string output_dir;
  int atl_cycles = 3;
  int maxima_per_cycle = 5;
  int train_epochs = 2000;
  double learning_rate = 1e-5;
  /// Start each cycle's training from the previous cycle's models instead of
  /// a fresh initialisation.
  bool fine_tune = false;
  GraphConfig graph;
  std::array<ModelConfig, 3> models{};  // indexed like kAllProperties
  EvolutionConfig evolution;
  FitnessCoefficients fitness;

  const ModelConfig& model(Property p) const { return models[static_cast<std::size_t>(p)]; }

  void validate() const {
    if (atl_cycles < 1) throw Error(Errc::InvalidConfig, "atl_cycles must be at least 1");
    if (maxima_per_cycle < 0 || maxima_per_cycle > evolution.elite_k)
      throw Error(Errc::InvalidConfig, "maxima_per_cycle must lie in [0, elite_k]");
    if (train_epochs < 0) throw Error(Errc::InvalidConfig, "train_epochs must be non-negative");
    if (!(learning_rate > 0.0)) throw Error(Errc::InvalidConfig, "learning_rate must be positive");
    if (dataset_manifest.empty()) throw Error(Errc::InvalidConfig, "dataset_manifest is required");
    if (pool_dir.empty()) throw Error(Errc::InvalidConfig, "pool_dir is required");
    if (output_dir.empty()) throw Error(Errc::InvalidConfig, "output_dir is required");
    graph.validate();
    evolution.validate();
    for (Property p : kAllProperties) {
      model(p).validate();
      if (static_cast<std::size_t>(model(p).edge_dim) != graph.basis_size())
        throw Error(Errc::InvalidConfig, "model edge_dim does not match the graph's Gaussian basis size");
    }
  }
};

namespace atl_detail {

/// Copy keys of `src` into the struct via `assign`, rejecting unknown keys.
template <class Assign>
void read_object(const nlohmann::json& src, const std::string& where, const std::set<std::string>& known,
                 Assign&& assign) {
  if (!src.is_object()) throw Error(Errc::InvalidConfig, where + " must be an object");
  for (const auto& [key, value] : src.items()) {
    if (!known.count(key)) throw Error(Errc::InvalidConfig, "unknown key '" + key + "' in " + where);
    assign(key, value);
  }
}

inline void read_model(const nlohmann::json& j, const std::string& where, ModelConfig& m) {
  read_object(j, where, {"embed_dim", "n_conv", "hidden_dim", "seed"}, [&](const std::string& k, const nlohmann::json& v) {
    if (k == "embed_dim") m.embed_dim = v.get<int>();
    if (k == "n_conv") m.n_conv = v.get<int>();
    if (k == "hidden_dim") m.hidden_dim = v.get<int>();
    if (k == "seed") m.seed = v.get<std::uint64_t>();
  });
}

inline std::string resolve(const fs::path& base, const std::string& p) {
  if (p.empty()) return p;
  const fs::path path(p);
  return (path.is_relative() ? base / path : path).lexically_normal().string();
}

}  // namespace atl_detail

/// Parse a run config; relative paths resolve against `base_dir`.
inline RunConfig run_config_from_json(const nlohmann::json& j, const fs::path& base_dir) {
  using atl_detail::read_object;
  RunConfig c;
  try {
    ModelConfig shared;
    std::optional<nlohmann::json> per_property;
    read_object(j, "run config",
                {"dataset_manifest", "holdout_manifest", "pool_dir", "output_dir", "atl_cycles", "maxima_per_cycle",
                 "train_epochs", "learning_rate", "fine_tune", "graph", "model", "models", "evolution",
                 "fitness"},
                [&](const std::string& k, const nlohmann::json& v) {
                  if (k == "dataset_manifest") c.dataset_manifest = v.get<std::string>();
                  if (k == "holdout_manifest") c.holdout_manifest = v.get<std::string>();
                  if (k == "pool_dir") c.pool_dir = v.get<std::string>();
                  if (k == "output_dir") c.output_dir = v.get<std::string>();
                  if (k == "atl_cycles") c.atl_cycles = v.get<int>();
                  if (k == "maxima_per_cycle") c.maxima_per_cycle = v.get<int>();
                  if (k == "train_epochs") c.train_epochs = v.get<int>();
                  if (k == "learning_rate") c.learning_rate = v.get<double>();
                  if (k == "fine_tune") c.fine_tune = v.get<bool>();
                  if (k == "graph")
                    read_object(v, "graph",
                                {"cutoff", "max_neighbors", "gaussian_min", "gaussian_max", "gaussian_step",
                                 "gaussian_width"},
                                [&](const std::string& gk, const nlohmann::json& gv) {
                                  if (gk == "cutoff") c.graph.cutoff = gv.get<double>();
                                  if (gk == "max_neighbors") c.graph.max_neighbors = gv.get<int>();
                                  if (gk == "gaussian_min") c.graph.gaussian_min = gv.get<double>();
                                  if (gk == "gaussian_max") c.graph.gaussian_max = gv.get<double>();
                                  if (gk == "gaussian_step") c.graph.gaussian_step = gv.get<double>();
                                  if (gk == "gaussian_width") c.graph.gaussian_width = gv.get<double>();
                                });
                  if (k == "model") atl_detail::read_model(v, "model", shared);
                  if (k == "models") per_property = v;
                  if (k == "evolution")
                    read_object(v, "evolution",
                                {"pool_size", "elite_k", "generations", "p_struct_mut", "p_replace", "p_add",
                                 "p_crossover", "struct_mut_sigma", "allowed_elements", "rng_seed"},
                                [&](const std::string& ek, const nlohmann::json& ev) {
                                  auto& e = c.evolution;
                                  if (ek == "pool_size") e.pool_size = ev.get<int>();
                                  if (ek == "elite_k") e.elite_k = ev.get<int>();
                                  if (ek == "generations") e.generations = ev.get<int>();
                                  if (ek == "p_struct_mut") e.p_struct_mut = ev.get<double>();
                                  if (ek == "p_replace") e.p_replace = ev.get<double>();
                                  if (ek == "p_add") e.p_add = ev.get<double>();
                                  if (ek == "p_crossover") e.p_crossover = ev.get<double>();
                                  if (ek == "struct_mut_sigma") e.struct_mut_sigma = ev.get<double>();
                                  if (ek == "rng_seed") e.rng_seed = ev.get<std::uint64_t>();
                                  if (ek == "allowed_elements") {
                                    e.allowed_elements.clear();
                                    for (const auto& sym : ev) {
                                      auto z = atomic_number(sym.get<std::string>());
                                      if (!z) throw Error(Errc::InvalidConfig, "unknown element '" + sym.get<std::string>() + "'");
                                      e.allowed_elements.push_back(*z);
                                    }
                                  }
                                });
                  if (k == "fitness")
                    read_object(v, "fitness", {"fe_div", "de_mul", "v_div"},
                                [&](const std::string& fk, const nlohmann::json& fv) {
                                  if (fk == "fe_div") c.fitness.fe_div = fv.get<double>();
                                  if (fk == "de_mul") c.fitness.de_mul = fv.get<double>();
                                  if (fk == "v_div") c.fitness.v_div = fv.get<double>();
                                });
                });
    shared.edge_dim = static_cast<int>(c.graph.basis_size());
    c.models = {shared, shared, shared};
    if (per_property)
      read_object(*per_property, "models", {"fe", "v", "de"}, [&](const std::string& pk, const nlohmann::json& pv) {
        atl_detail::read_model(pv, "models." + pk, c.models[static_cast<std::size_t>(property_from_key(pk))]);
      });
  } catch (const nlohmann::json::exception& e) {
    throw Error(Errc::InvalidConfig, std::string("run config: ") + e.what());
  }
  c.dataset_manifest = atl_detail::resolve(base_dir, c.dataset_manifest);
  c.holdout_manifest = atl_detail::resolve(base_dir, c.holdout_manifest);
  c.pool_dir = atl_detail::resolve(base_dir, c.pool_dir);
  c.output_dir = atl_detail::resolve(base_dir, c.output_dir);
  c.validate();
  return c;
}

inline RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(Errc::InvalidConfig, "cannot read run config " + path);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw Error(Errc::InvalidConfig, path + ": " + e.what());
  }
  return run_config_from_json(j, fs::path(path).parent_path());
}

/// Every *.cif in the directory, ordered by file name.
inline std::vector<CrystalStructure> load_pool(const std::string& dir) {
  if (!fs::is_directory(dir)) throw Error(Errc::FileNotFound, "pool directory " + dir);
  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(dir))
    if (entry.is_regular_file() && entry.path().extension() == ".cif") files.push_back(entry.path());
  std::sort(files.begin(), files.end());
  std::vector<CrystalStructure> pool;
  pool.reserve(files.size());
  for (const auto& f : files) pool.push_back(read_cif_file(f.string()));
  return pool;
}

// ---- report ---------------------------------------------------------------

struct MaximumRecord {
  std::string id;
  PropertyVector properties;
  double fitness = 0.0;
};

struct ValidationRow {
  std::string id;
  Property property = Property::FE;
  double label = 0.0;
  double prediction = 0.0;
};

struct CycleReport {
  int cycle = 0;
  std::array<TrainReport, 3> training{};
  std::vector<GenerationRecord> generations;
  std::vector<MaximumRecord> maxima;
  std::size_t training_set_size = 0;  // after appending this cycle's maxima
  std::vector<ValidationRow> validation;
  std::string best_id;
  double best_fitness = 0.0;
  PropertyVector best_properties;
};

struct RunReport {
  std::vector<CycleReport> cycles;
  std::optional<CrystalStructure> best_structure;
  double best_fitness = 0.0;
  PropertyVector best_properties;
};

inline nlohmann::json properties_to_json(const PropertyVector& p) { return {{"fe", p.fe}, {"v", p.v}, {"de", p.de}}; }

inline PropertyVector properties_from_json(const nlohmann::json& j) {
  return {j.at("fe").get<double>(), j.at("v").get<double>(), j.at("de").get<double>()};
}

inline nlohmann::json report_to_json(const RunReport& r) {
  nlohmann::json cycles = nlohmann::json::array();
  for (const auto& c : r.cycles) {
    nlohmann::json training = nlohmann::json::object();
    for (Property p : kAllProperties) {
      const auto& t = c.training[static_cast<std::size_t>(p)];
      training[std::string(property_key(p))] = {
          {"loss_history", t.loss_history}, {"final_train_mse", t.final_train_mse}, {"epochs_run", t.epochs_run}};
    }
    nlohmann::json gens = nlohmann::json::array();
    for (const auto& g : c.generations) gens.push_back(record_to_json(g));
    nlohmann::json maxima = nlohmann::json::array();
    for (const auto& m : c.maxima)
      maxima.push_back({{"id", m.id}, {"properties", properties_to_json(m.properties)}, {"fitness", m.fitness}});
    nlohmann::json validation = nlohmann::json::array();
    for (const auto& v : c.validation)
      validation.push_back({{"id", v.id}, {"property", std::string(property_key(v.property))}, {"label", v.label},
                            {"prediction", v.prediction}});
    cycles.push_back({{"cycle", c.cycle},
                      {"training", training},
                      {"generations", gens},
                      {"maxima", maxima},
                      {"training_set_size", c.training_set_size},
                      {"validation", validation},
                      {"best", {{"id", c.best_id}, {"fitness", c.best_fitness},
                                {"properties", properties_to_json(c.best_properties)}}}});
  }
  nlohmann::json best = nullptr;
  if (r.best_structure)
    best = {{"id", r.best_structure->id}, {"fitness", r.best_fitness},
            {"properties", properties_to_json(r.best_properties)}, {"structure", structure_to_json(*r.best_structure)}};
  return {{"cycles", cycles}, {"best", best}};
}

inline RunReport report_from_json(const nlohmann::json& j) {
  RunReport r;
  for (const auto& cj : j.at("cycles")) {
    CycleReport c;
    c.cycle = cj.at("cycle").get<int>();
    for (Property p : kAllProperties) {
      const auto& tj = cj.at("training").at(std::string(property_key(p)));
      auto& t = c.training[static_cast<std::size_t>(p)];
      t.loss_history = tj.at("loss_history").get<std::vector<double>>();
      t.final_train_mse = tj.at("final_train_mse").get<double>();
      t.epochs_run = tj.at("epochs_run").get<int>();
    }
    for (const auto& g : cj.at("generations")) c.generations.push_back(record_from_json(g));
    for (const auto& m : cj.at("maxima"))
      c.maxima.push_back({m.at("id").get<std::string>(), properties_from_json(m.at("properties")),
                          m.at("fitness").get<double>()});
    c.training_set_size = cj.at("training_set_size").get<std::size_t>();
    for (const auto& v : cj.at("validation"))
      c.validation.push_back({v.at("id").get<std::string>(), property_from_key(v.at("property").get<std::string>()),
                              v.at("label").get<double>(), v.at("prediction").get<double>()});
    const auto& b = cj.at("best");
    c.best_id = b.at("id").get<std::string>();
    c.best_fitness = b.at("fitness").get<double>();
    c.best_properties = properties_from_json(b.at("properties"));
    r.cycles.push_back(std::move(c));
  }
  if (const auto& b = j.at("best"); !b.is_null()) {
    r.best_structure = structure_from_json(b.at("structure"));
    r.best_fitness = b.at("fitness").get<double>();
    r.best_properties = properties_from_json(b.at("properties"));
  }
  return r;
}

// ---- checkpoint -----------------------------------------------------------

inline constexpr int kCheckpointSchemaVersion = 1;
inline constexpr const char* kCheckpointEndMarker = "end_of_checkpoint";

struct RunState {
  int completed_cycles = 0;
  std::vector<LabeledEntry> training_set;
  RunReport report;
};

/// The terminal marker is the last key written, so a truncated file is
/// detected even if the truncation happens to leave valid JSON.
inline void checkpoint(const RunState& state, const std::string& path) {
  nlohmann::ordered_json j;
  j["schema_version"] = kCheckpointSchemaVersion;
  j["completed_cycles"] = state.completed_cycles;
  nlohmann::json entries = nlohmann::json::array();
  for (const auto& e : state.training_set) entries.push_back(entry_to_json(e));
  j["training_set"] = entries;
  j["report"] = report_to_json(state.report);
  j[kCheckpointEndMarker] = true;
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(Errc::IoError, "cannot write " + tmp);
    out << j.dump() << '\n';
    if (!out) throw Error(Errc::IoError, "write failed for " + tmp);
  }
  fs::rename(tmp, path);
}

inline RunState resume(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(Errc::IoError, "cannot read checkpoint " + path);
  nlohmann::ordered_json j;
  try {
    j = nlohmann::ordered_json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw Error(Errc::PartialCheckpoint, path + ": " + e.what());
  }
  if (!j.is_object() || !j.contains("schema_version") || !j["schema_version"].is_number_integer())
    throw Error(Errc::PartialCheckpoint, path + ": missing schema_version");
  if (j["schema_version"].get<int>() != kCheckpointSchemaVersion)
    throw Error(Errc::SchemaVersionMismatch, path + ": checkpoint schema_version " +
                                                 std::to_string(j["schema_version"].get<int>()));
  if (!j.contains(kCheckpointEndMarker) || j.back() != true)
    throw Error(Errc::PartialCheckpoint, path + ": terminal marker missing");
  try {
    RunState s;
    s.completed_cycles = j.at("completed_cycles").get<int>();
    for (const auto& e : j.at("training_set")) s.training_set.push_back(entry_from_json(nlohmann::json(e)));
    s.report = report_from_json(nlohmann::json(j.at("report")));
    return s;
  } catch (const nlohmann::json::exception& e) {
    throw Error(Errc::PartialCheckpoint, path + ": " + e.what());
  }
}

// ---- the loop -------------------------------------------------------------

struct RunOptions {
  std::optional<std::string> resume_from;
  /// Stop after this many cycles have completed in total (simulates an
  /// interruption; the checkpoint is left for a later resume).
  std::optional<int> stop_after_cycles;
};

namespace atl_detail {

inline void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(Errc::IoError, "cannot write " + path.string());
  out << text;
  if (!out) throw Error(Errc::IoError, "write failed for " + path.string());
}

inline std::string phase_tag(int cycle, const char* phase) {
  return "cycle " + std::to_string(cycle) + ", phase " + phase;
}

}  // namespace atl_detail

/// Train one model per property on the entries carrying that label.
inline SurrogateSet train_surrogates(const std::vector<LabeledEntry>& training_set, const RunConfig& config,
                                     std::array<TrainReport, 3>* reports = nullptr,
                                     const SurrogateSet* start = nullptr) {
  std::vector<CrystalGraph> graphs;
  graphs.reserve(training_set.size());
  for (const auto& e : training_set) graphs.push_back(build_graph(e.structure, config.graph));
  SurrogateSet set;
  for (Property p : kAllProperties) {
    std::vector<TrainingSample> samples;
    for (std::size_t k = 0; k < training_set.size(); ++k)
      if (auto y = training_set[k].labels.get(p)) samples.push_back({graphs[k], *y});
    try {
      SurrogateModel initial = start ? start->get(p) : init_model(config.model(p), p);
      auto [model, report] = train(std::move(initial), samples, config.train_epochs, config.learning_rate);
      set.get(p) = std::move(model);
      if (reports) (*reports)[static_cast<std::size_t>(p)] = std::move(report);
    } catch (const Error& e) {
      rethrow_with_context(e, "property " + std::string(property_key(p)));
    }
  }
  return set;
}

inline RunReport run(const RunConfig& config_in, const RunOptions& options = {}) {
  using namespace atl_detail;
  config_in.validate();
  RunConfig config = config_in;

  const std::vector<CrystalStructure> pool = load_pool(config.pool_dir);
  if (config.evolution.allowed_elements.empty()) config.evolution.allowed_elements = default_allowed_elements(pool);
  std::vector<LabeledEntry> holdout;
  if (!config.holdout_manifest.empty()) holdout = load_dataset(config.holdout_manifest);

  const fs::path out_dir(config.output_dir);
  fs::create_directories(out_dir);
  const fs::path checkpoint_path = out_dir / "checkpoint.json";

  RunState state;
  if (options.resume_from) {
    state = resume(*options.resume_from);
  } else {
    state.training_set = load_dataset(config.dataset_manifest);
  }

  auto write_report = [&] {
    write_text(out_dir / "report.json", report_to_json(state.report).dump(2) + "\n");
    if (state.report.best_structure) write_text(out_dir / "best.cif", write_cif(*state.report.best_structure));
  };

  for (int cycle = state.completed_cycles + 1; cycle <= config.atl_cycles; ++cycle) {
    if (options.stop_after_cycles && state.completed_cycles >= *options.stop_after_cycles) break;
    CycleReport cr;
    cr.cycle = cycle;
    const fs::path cycle_dir = out_dir / ("cycle_" + std::to_string(cycle));
    fs::create_directories(cycle_dir / "models");
    fs::create_directories(cycle_dir / "maxima");

    SurrogateSet models;
    try {
      std::optional<SurrogateSet> previous;
      if (config.fine_tune && cycle > 1) {
        const fs::path dir = out_dir / ("cycle_" + std::to_string(cycle - 1)) / "models";
        previous = SurrogateSet{load_model((dir / "fe.json").string()), load_model((dir / "v.json").string()),
                                load_model((dir / "de.json").string())};
      }
      models = train_surrogates(state.training_set, config, &cr.training, previous ? &*previous : nullptr);
      for (Property p : kAllProperties)
        save_model(models.get(p), (cycle_dir / "models" / (std::string(property_key(p)) + ".json")).string());
    } catch (const Error& e) {
      rethrow_with_context(e, phase_tag(cycle, "train"));
    }

    const Evaluator evaluate{models, config.graph, config.fitness};
    EvolutionTrace trace;
    try {
      Population pop = seed_population(pool, evaluate, config.evolution);
      Rng rng(derive_seed(config.evolution.rng_seed, static_cast<std::uint64_t>(cycle)));
      trace = evolve(std::move(pop), evaluate, config.evolution, rng);
      std::string lines;
      for (const auto& g : trace.records) lines += record_to_json(g).dump() + "\n";
      write_text(cycle_dir / "generations.jsonl", lines);
    } catch (const Error& e) {
      rethrow_with_context(e, phase_tag(cycle, "evolve"));
    }
    cr.generations = trace.records;

    try {
      std::set<std::string> taken;
      for (const auto& e : state.training_set) taken.insert(e.structure.id);
      const auto& members = trace.final_population.members;
      for (std::size_t idx : elite_indices(trace.final_population, members.size())) {
        if (static_cast<int>(cr.maxima.size()) == config.maxima_per_cycle) break;
        const Member& m = members[idx];
        if (!taken.insert(m.structure.id).second) continue;
        state.training_set.push_back({m.structure, PartialLabels::from(m.eval.properties), Provenance::Predicted});
        cr.maxima.push_back({m.structure.id, m.eval.properties, m.eval.fitness});
        write_text(cycle_dir / "maxima" / (m.structure.id + ".cif"), write_cif(m.structure));
      }
      if (static_cast<int>(cr.maxima.size()) != config.maxima_per_cycle)
        throw Error(Errc::RunFailure, "only " + std::to_string(cr.maxima.size()) +
                                          " distinct new structures available for re-insertion");
    } catch (const Error& e) {
      rethrow_with_context(e, phase_tag(cycle, "maxima"));
    }
    cr.training_set_size = state.training_set.size();

    try {
      for (const auto& entry : holdout) {
        const CrystalGraph g = build_graph(entry.structure, config.graph);
        for (Property p : kAllProperties)
          if (auto label = entry.labels.get(p))
            cr.validation.push_back({entry.structure.id, p, *label, predict_physical(models.get(p), g)});
      }
    } catch (const Error& e) {
      rethrow_with_context(e, phase_tag(cycle, "validate"));
    }

    const Member& best = trace.final_population.members[elite_indices(trace.final_population, 1).front()];
    cr.best_id = best.structure.id;
    cr.best_fitness = best.eval.fitness;
    cr.best_properties = best.eval.properties;
    state.report.best_structure = best.structure;
    state.report.best_fitness = best.eval.fitness;
    state.report.best_properties = best.eval.properties;
    state.report.cycles.push_back(std::move(cr));
    state.completed_cycles = cycle;

    checkpoint(state, checkpoint_path.string());
    write_report();
  }
  write_report();
  return state.report;
}

}  // namespace crystal_evolve
