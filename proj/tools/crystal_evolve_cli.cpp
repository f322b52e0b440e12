// SPDX-License-Identifier: Apache-2.0
//
// crystal-evolve: command-line front end.
//
// Exit codes: 0 ok, 1 config/flag error, 2 parse error, 3 training error,
// 4 run error, 5 report error.

#include <charconv>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "crystal_evolve/crystal_evolve.hpp"

namespace ce = crystal_evolve;
namespace fs = std::filesystem;

namespace {

enum ExitCode : int { kOk = 0, kConfig = 1, kParse = 2, kTrain = 3, kRun = 4, kReport = 5 };

/// Carries an exit code out of a command body.
struct Failure {
  int code;
  std::string message;
};

std::string num(double v) {
  char buf[32];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

template <class F>
auto guarded(int code, F&& f) -> decltype(f()) {
  try {
    return f();
  } catch (const Failure&) {
    throw;
  } catch (const std::exception& e) {
    throw Failure{code, e.what()};
  }
}

std::optional<ce::RunConfig> maybe_config(const std::string& path) {
  if (path.empty()) return std::nullopt;
  return guarded(kConfig, [&] { return ce::load_run_config(path); });
}

// ---------------------------------------------------------------- parse

struct ParseArgs {
  std::string cif;
  bool echo = false;
};

int cmd_parse(const ParseArgs& a) {
  std::vector<std::string> warnings;
  const ce::CrystalStructure s = guarded(kParse, [&] { return ce::read_cif_file(a.cif, &warnings); });
  for (const auto& w : warnings) std::cerr << "warning: " << w << "\n";
  const auto& c = s.cell;
  std::cout << "id=" << s.id << " formula=" << ce::formula(s) << " cell=" << num(c.a) << "," << num(c.b) << ","
            << num(c.c) << "," << num(c.alpha) << "," << num(c.beta) << "," << num(c.gamma)
            << " sites=" << s.sites.size() << "\n";
  if (a.echo) std::cout << ce::write_cif(s);
  return kOk;
}

// ---------------------------------------------------------------- graph

struct GraphArgs {
  std::string cif;
  std::string config;
  bool edges = false;
};

int cmd_graph(const GraphArgs& a) {
  const auto config = maybe_config(a.config);
  const ce::GraphConfig gc = config ? config->graph : ce::GraphConfig{};
  const ce::CrystalStructure s = guarded(kParse, [&] { return ce::read_cif_file(a.cif); });
  const ce::CrystalGraph g = guarded(kParse, [&] { return ce::build_graph(s, gc); });
  std::cout << "id=" << s.id << " nodes=" << g.node_count() << " edges=" << g.edges.size()
            << " edge_features=" << g.edge_features.cols << "\n";
  if (a.edges)
    for (const auto& e : g.edges)
      std::cout << e.i << " " << e.j << " " << e.image[0] << " " << e.image[1] << " " << e.image[2] << " "
                << num(e.distance) << "\n";
  return kOk;
}

// ---------------------------------------------------------------- train

struct TrainArgs {
  std::string manifest;
  std::string property;
  std::string out;
  std::string config;
  std::optional<int> epochs;
  std::optional<double> lr;
  std::optional<std::uint64_t> seed;
};

int cmd_train(const TrainArgs& a) {
  const auto config = maybe_config(a.config);
  const ce::Property prop = guarded(kConfig, [&] { return ce::property_from_key(a.property); });
  const ce::RunConfig defaults;
  const int epochs = a.epochs.value_or(config ? config->train_epochs : defaults.train_epochs);
  const double lr = a.lr.value_or(config ? config->learning_rate : defaults.learning_rate);
  if (epochs < 0) throw Failure{kConfig, "--epochs must be non-negative"};
  if (!(lr > 0.0)) throw Failure{kConfig, "--lr must be positive"};
  const fs::path out_parent = fs::absolute(a.out).parent_path();
  if (!fs::is_directory(out_parent)) throw Failure{kConfig, "output directory " + out_parent.string() + " does not exist"};

  const ce::GraphConfig gc = config ? config->graph : ce::GraphConfig{};
  ce::ModelConfig mc = config ? config->model(prop) : ce::ModelConfig{};
  mc.edge_dim = static_cast<int>(gc.basis_size());
  if (a.seed) mc.seed = *a.seed;

  const auto data = guarded(kParse, [&] { return ce::load_dataset(a.manifest); });
  std::vector<ce::CrystalGraph> graphs;
  std::vector<ce::TrainingSample> samples;
  graphs.reserve(data.size());
  guarded(kParse, [&] {
    for (const auto& e : data) graphs.push_back(ce::build_graph(e.structure, gc));
  });
  for (std::size_t k = 0; k < data.size(); ++k)
    if (auto y = data[k].labels.get(prop)) samples.push_back({graphs[k], *y});

  auto result = guarded(kTrain, [&] { return ce::train(ce::init_model(mc, prop), samples, epochs, lr); });
  guarded(kTrain, [&] { ce::save_model(result.model, a.out); });
  std::cout << "property=" << ce::property_key(prop) << " samples=" << samples.size()
            << " epochs=" << result.report.epochs_run << " final_mse=" << num(result.report.final_train_mse) << "\n";
  return kOk;
}

// ---------------------------------------------------------------- predict

struct PredictArgs {
  std::vector<std::string> models;
  std::string cif;
  std::string config;
};

int cmd_predict(const PredictArgs& a) {
  const auto config = maybe_config(a.config);
  const ce::GraphConfig gc = config ? config->graph : ce::GraphConfig{};
  std::vector<ce::SurrogateModel> models;
  for (const auto& path : a.models) models.push_back(guarded(kParse, [&] { return ce::load_model(path); }));
  const ce::CrystalStructure s = guarded(kParse, [&] { return ce::read_cif_file(a.cif); });
  const ce::CrystalGraph g = guarded(kParse, [&] { return ce::build_graph(s, gc); });

  ce::PartialLabels seen;
  for (const auto& m : models) {
    const double y = guarded(kParse, [&] { return ce::predict_physical(m, g); });
    seen.set(m.property, y);
    std::cout << ce::property_key(m.property) << "=" << num(y) << "\n";
  }
  if (seen.fe && seen.v && seen.de) {
    const ce::FitnessCoefficients k = config ? config->fitness : ce::FitnessCoefficients{};
    std::cout << "fitness=" << num(ce::fitness({*seen.fe, *seen.v, *seen.de}, k)) << "\n";
  }
  return kOk;
}

// ---------------------------------------------------------------- evolve

struct EvolveArgs {
  std::string config;
  std::string models_dir;
  std::string out;
  std::optional<int> generations;
  std::optional<std::uint64_t> seed;
};

int cmd_evolve(const EvolveArgs& a) {
  ce::RunConfig config = *maybe_config(a.config);
  if (a.generations) config.evolution.generations = *a.generations;
  if (a.seed) config.evolution.rng_seed = *a.seed;
  guarded(kConfig, [&] { config.validate(); });

  ce::SurrogateSet models;
  for (ce::Property p : ce::kAllProperties) {
    const fs::path path = fs::path(a.models_dir) / (std::string(ce::property_key(p)) + ".json");
    models.get(p) = guarded(kParse, [&] { return ce::load_model(path.string()); });
    if (models.get(p).property != p) throw Failure{kParse, path.string() + " holds a model for another property"};
  }
  const auto pool = guarded(kParse, [&] { return ce::load_pool(config.pool_dir); });
  if (config.evolution.allowed_elements.empty()) config.evolution.allowed_elements = ce::default_allowed_elements(pool);

  const ce::Evaluator evaluate{models, config.graph, config.fitness};
  const ce::EvolutionTrace trace = guarded(kRun, [&] {
    ce::Rng rng(config.evolution.rng_seed);
    return ce::evolve(ce::seed_population(pool, evaluate, config.evolution), evaluate, config.evolution, rng);
  });

  const fs::path out = a.out.empty() ? fs::path(config.output_dir) / "evolve" : fs::path(a.out);
  const auto& members = trace.final_population.members;
  const ce::Member& best = members[ce::elite_indices(trace.final_population, 1).front()];
  guarded(kRun, [&] {
    fs::create_directories(out);
    std::ofstream gen(out / "generations.jsonl", std::ios::binary | std::ios::trunc);
    for (const auto& r : trace.records) gen << ce::record_to_json(r).dump() << "\n";
    std::ofstream cif(out / "best.cif", std::ios::binary | std::ios::trunc);
    cif << ce::write_cif(best.structure);
    if (!gen || !cif) throw ce::Error(ce::Errc::IoError, "cannot write to " + out.string());
  });
  std::cout << "best=" << best.structure.id << " fitness=" << num(best.eval.fitness) << "\n";
  return kOk;
}

// ---------------------------------------------------------------- run

struct RunArgs {
  std::string config;
  std::string resume;
  std::string out;
  std::optional<int> stop_after;
};

int cmd_run(const RunArgs& a) {
  ce::RunConfig config = *maybe_config(a.config);
  if (!a.out.empty()) config.output_dir = fs::absolute(a.out).lexically_normal().string();
  if (a.stop_after && *a.stop_after < 0) throw Failure{kConfig, "--stop-after must be non-negative"};
  if (!a.resume.empty() && !fs::is_regular_file(a.resume))
    throw Failure{kConfig, "checkpoint " + a.resume + " does not exist"};

  ce::RunOptions options;
  if (!a.resume.empty()) options.resume_from = a.resume;
  options.stop_after_cycles = a.stop_after;
  const ce::RunReport report = guarded(kRun, [&] { return ce::run(config, options); });
  if (report.best_structure)
    std::cout << "best=" << report.best_structure->id << " fitness=" << num(report.best_fitness) << "\n";
  std::cout << "cycles=" << report.cycles.size() << " report=" << (fs::path(config.output_dir) / "report.json").string()
            << "\n";
  return kOk;
}

// ---------------------------------------------------------------- report

struct ReportArgs {
  std::string run_dir;
  std::string what;
  std::string format = "csv";
  std::optional<int> cycle;
};

int cmd_report(const ReportArgs& a) {
  const fs::path path = fs::path(a.run_dir) / "report.json";
  if (!fs::is_regular_file(path)) throw Failure{kReport, "no report.json in " + a.run_dir};
  const ce::RunReport report = guarded(kReport, [&] {
    std::ifstream in(path);
    return ce::report_from_json(nlohmann::json::parse(in));
  });
  if (report.cycles.empty()) throw Failure{kReport, a.run_dir + " has no completed cycles"};

  const ce::CycleReport* cycle = &report.cycles.back();
  if (a.cycle) {
    cycle = nullptr;
    for (const auto& c : report.cycles)
      if (c.cycle == *a.cycle) cycle = &c;
    if (!cycle) throw Failure{kReport, "cycle " + std::to_string(*a.cycle) + " not found in " + path.string()};
  }

  if (a.what == "fitness-hist") {
    if (cycle->generations.empty()) throw Failure{kReport, "no generation records for cycle " + std::to_string(cycle->cycle)};
    std::cout << "generation,bin_low,bin_high,count\n";
    for (const auto& g : cycle->generations)
      for (int b = 0; b < static_cast<int>(g.histogram.size()); ++b)
        std::cout << g.generation_index << "," << num(g.bin_low(b)) << "," << num(g.bin_high(b)) << ","
                  << g.histogram[static_cast<std::size_t>(b)] << "\n";
  } else {
    if (cycle->validation.empty())
      throw Failure{kReport, "no validation rows for cycle " + std::to_string(cycle->cycle) + " (no holdout manifest?)"};
    std::cout << "id,property,label,prediction\n";
    for (const auto& r : cycle->validation)
      std::cout << r.id << "," << ce::property_key(r.property) << "," << num(r.label) << "," << num(r.prediction)
                << "\n";
  }
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Surrogate-guided evolutionary search over crystal structures"};
  app.require_subcommand(1);

  ParseArgs parse_args;
  auto* parse = app.add_subcommand("parse", "Parse a CIF and print a summary");
  parse->add_option("--cif", parse_args.cif, "CIF file")->required();
  parse->add_flag("--echo", parse_args.echo, "Re-emit the structure as canonical CIF");

  GraphArgs graph_args;
  auto* graph = app.add_subcommand("graph", "Build the crystal graph of a CIF");
  graph->add_option("--cif", graph_args.cif, "CIF file")->required();
  graph->add_option("--config", graph_args.config, "Run config supplying graph settings");
  graph->add_flag("--edges", graph_args.edges, "List every edge");

  TrainArgs train_args;
  auto* train = app.add_subcommand("train", "Train one property surrogate");
  train->add_option("--manifest", train_args.manifest, "Dataset manifest (JSON lines)")->required();
  train->add_option("--property", train_args.property, "fe, v or de")->required()->check(CLI::IsMember({"fe", "v", "de"}));
  train->add_option("--out", train_args.out, "Model checkpoint to write")->required();
  train->add_option("--epochs", train_args.epochs, "Gradient steps (default: config train_epochs, else 2000)");
  train->add_option("--lr", train_args.lr, "Learning rate (default: config learning_rate, else 1e-5)");
  train->add_option("--seed", train_args.seed, "Initialisation seed");
  train->add_option("--config", train_args.config, "Run config supplying graph and model settings");

  PredictArgs predict_args;
  auto* predict = app.add_subcommand("predict", "Predict properties of a CIF");
  predict->add_option("--model", predict_args.models, "Model checkpoint (repeatable)")->required();
  predict->add_option("--cif", predict_args.cif, "CIF file")->required();
  predict->add_option("--config", predict_args.config, "Run config supplying graph settings");

  EvolveArgs evolve_args;
  auto* evolve = app.add_subcommand("evolve", "Evolve the seed pool with trained models");
  evolve->add_option("--config", evolve_args.config, "Run config")->required();
  evolve->add_option("--models", evolve_args.models_dir, "Directory holding fe.json, v.json, de.json")->required();
  evolve->add_option("--out", evolve_args.out, "Output directory (default <output_dir>/evolve)");
  evolve->add_option("--generations", evolve_args.generations, "Override generation count");
  evolve->add_option("--seed", evolve_args.seed, "Override evolution seed");

  RunArgs run_args;
  auto* run = app.add_subcommand("run", "Run the full active-learning loop");
  run->add_option("--config", run_args.config, "Run config")->required();
  run->add_option("--resume", run_args.resume, "Checkpoint to continue from");
  run->add_option("--out", run_args.out, "Override output_dir");
  run->add_option("--stop-after", run_args.stop_after, "Stop once this many cycles are complete");

  ReportArgs report_args;
  auto* report = app.add_subcommand("report", "Emit CSV data from a finished run");
  report->add_option("--run", report_args.run_dir, "Run output directory")->required();
  report->add_option("--what", report_args.what, "fitness-hist or validation")
      ->required()
      ->check(CLI::IsMember({"fitness-hist", "validation"}));
  report->add_option("--format", report_args.format, "Output format")->check(CLI::IsMember({"csv"}));
  report->add_option("--cycle", report_args.cycle, "Cycle to report (default: last)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kConfig;
  }

  try {
    if (*parse) return cmd_parse(parse_args);
    if (*graph) return cmd_graph(graph_args);
    if (*train) return cmd_train(train_args);
    if (*predict) return cmd_predict(predict_args);
    if (*evolve) return cmd_evolve(evolve_args);
    if (*run) return cmd_run(run_args);
    if (*report) return cmd_report(report_args);
  } catch (const Failure& f) {
    std::cerr << "error: " << f.message << "\n";
    return f.code;
  }
  return kConfig;
}
