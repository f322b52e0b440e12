// SPDX-License-Identifier: Apache-2.0
//
// Elitist evolution over a pool of crystal structures. Each generation keeps
// the top elite_k verbatim and refills the rest from elite parents with one
// of four operators: whole-structure jitter, element replacement, atom
// addition, or slab crossover.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "crystal_evolve/error.hpp"
#include "crystal_evolve/fitness.hpp"
#include "crystal_evolve/lattice.hpp"
#include "crystal_evolve/parallel.hpp"
#include "crystal_evolve/rng.hpp"
#include "crystal_evolve/structure.hpp"

namespace crystal_evolve {

struct EvolutionConfig {
  int pool_size = 500;
  int elite_k = 50;
  int generations = 15;
  double p_struct_mut = 0.2;
  double p_replace = 0.4;
  double p_add = 0.1;
  double p_crossover = 0.3;
  double struct_mut_sigma = 0.3;  // Å
  std::vector<int> allowed_elements;  // atomic numbers; empty = derive from the seed pool
  std::uint64_t rng_seed = 0;

  void validate() const {
    if (pool_size < 1) throw Error(Errc::InvalidConfig, "pool_size must be at least 1");
    if (elite_k < 1 || elite_k > pool_size)
      throw Error(Errc::InvalidConfig, "elite_k must lie in [1, pool_size]; got " + std::to_string(elite_k) +
                                           " with pool_size " + std::to_string(pool_size));
    if (generations < 0) throw Error(Errc::InvalidConfig, "generations must be non-negative");
    for (double p : {p_struct_mut, p_replace, p_add, p_crossover})
      if (!(p >= 0.0 && p <= 1.0)) throw Error(Errc::InvalidConfig, "operator probabilities must lie in [0, 1]");
    if (std::abs(p_struct_mut + p_replace + p_add + p_crossover - 1.0) > 1e-12)
      throw Error(Errc::InvalidConfig, "operator probabilities must sum to 1");
    if (!(struct_mut_sigma >= 0.0)) throw Error(Errc::InvalidConfig, "struct_mut_sigma must be non-negative");
    for (int z : allowed_elements)
      if (!valid_atomic_number(z)) throw Error(Errc::InvalidConfig, "allowed element " + std::to_string(z) + " out of range");
  }
};

/// Elements present in the pool plus Mg, Se, Sn and Zn, sorted.
inline std::vector<int> default_allowed_elements(std::span<const CrystalStructure> pool) {
  std::set<int> out = {12, 30, 34, 50};
  for (const auto& s : pool)
    for (const auto& site : s.sites) out.insert(site.element);
  return {out.begin(), out.end()};
}

struct Member {
  CrystalStructure structure;
  Evaluation eval;
};

struct Population {
  std::vector<Member> members;
  int generation_index = 0;
};

inline constexpr int kHistogramBins = 20;

struct GenerationRecord {
  int generation_index = 0;
  double fitness_min = 0.0;
  double fitness_mean = 0.0;
  double fitness_max = 0.0;
  std::vector<std::string> elite_ids;
  std::vector<int> histogram;  // kHistogramBins equal-width bins over [min, max]

  double bin_low(int k) const { return fitness_min + (fitness_max - fitness_min) * k / kHistogramBins; }
  double bin_high(int k) const {
    return k + 1 == kHistogramBins ? fitness_max : fitness_min + (fitness_max - fitness_min) * (k + 1) / kHistogramBins;
  }

  friend bool operator==(const GenerationRecord&, const GenerationRecord&) = default;
};

enum class Operator { StructureMutation, Replace, Add, Crossover };

inline Operator draw_operator(Rng& rng, const EvolutionConfig& c) {
  const double u = rng.uniform();
  if (u < c.p_struct_mut) return Operator::StructureMutation;
  if (u < c.p_struct_mut + c.p_replace) return Operator::Replace;
  if (u < c.p_struct_mut + c.p_replace + c.p_add) return Operator::Add;
  return Operator::Crossover;
}

/// "<root>~<12 hex digits>" where root is the parent id up to its first '~'.
inline std::string derive_child_id(const std::string& parent_id, Rng& rng) {
  const std::string root = parent_id.substr(0, parent_id.find('~'));
  char buf[16];
  std::snprintf(buf, sizeof buf, "%012llx", static_cast<unsigned long long>(rng.next_u64() >> 16));
  return root + "~" + buf;
}

// ---- operators ------------------------------------------------------------

/// Gaussian jitter of every Cartesian site position (stddev sigma) and an
/// independent Normal(1, sigma/10) scale of each cell length, clamped to
/// [0.8, 1.2]. Elements and angles are unchanged.
inline CrystalStructure mutate_structure(const CrystalStructure& s, double sigma, Rng& rng) {
  if (!(sigma >= 0.0)) throw Error(Errc::InvalidConfig, "sigma must be non-negative");
  CrystalStructure out = s;
  out.id = derive_child_id(s.id, rng);
  const Mat3 to_frac = inverse(lattice_from_params(s.cell).m);
  for (auto& site : out.sites) {
    const Vec3 dr = {rng.normal(0.0, sigma), rng.normal(0.0, sigma), rng.normal(0.0, sigma)};
    const Vec3 df = row_times(dr, to_frac);
    site.fx = wrap_fraction(site.fx + df[0]);
    site.fy = wrap_fraction(site.fy + df[1]);
    site.fz = wrap_fraction(site.fz + df[2]);
  }
  for (double* len : {&out.cell.a, &out.cell.b, &out.cell.c})
    *len *= std::clamp(rng.normal(1.0, sigma / 10.0), 0.8, 1.2);
  return out;
}

enum class AtomMutation { Replace, Add };

/// Replace: one site (uniform over sites that have an alternative) takes an
/// element drawn uniformly from allowed minus its current element.
/// Add: one new site at uniform fractional coordinates.
inline CrystalStructure mutate_atoms(const CrystalStructure& s, AtomMutation mode, std::span<const int> allowed,
                                     Rng& rng) {
  if (allowed.empty()) throw Error(Errc::InvalidConfig, "allowed_elements is empty");
  CrystalStructure out = s;
  out.id = derive_child_id(s.id, rng);
  if (mode == AtomMutation::Add) {
    AtomSite site;
    site.fx = rng.uniform();
    site.fy = rng.uniform();
    site.fz = rng.uniform();
    site.element = allowed[rng.index(allowed.size())];
    out.sites.push_back(site);
    return out;
  }
  auto alternatives = [&](int current) {
    std::vector<int> opts;
    for (int z : allowed)
      if (z != current && std::find(opts.begin(), opts.end(), z) == opts.end()) opts.push_back(z);
    return opts;
  };
  std::vector<std::size_t> eligible;
  for (std::size_t i = 0; i < s.sites.size(); ++i)
    if (!alternatives(s.sites[i].element).empty()) eligible.push_back(i);
  if (eligible.empty())
    throw Error(Errc::SingleElementUniverse, "structure '" + s.id + "': no site has an alternative element");
  const std::size_t site = eligible[rng.index(eligible.size())];
  const auto opts = alternatives(s.sites[site].element);
  out.sites[site].element = opts[rng.index(opts.size())];
  return out;
}

inline CellParameters mean_cell(const CellParameters& x, const CellParameters& y) {
  return {(x.a + y.a) / 2, (x.b + y.b) / 2, (x.c + y.c) / 2,
          (x.alpha + y.alpha) / 2, (x.beta + y.beta) / 2, (x.gamma + y.gamma) / 2};
}

/// Deterministic slab splice: a's sites with fractional coordinate on `axis`
/// below `cut` plus b's sites at or above it, in the parents' mean cell.
/// Returns nullopt if either side contributes nothing. The child keeps a's id.
inline std::optional<CrystalStructure> crossover_slab_at(const CrystalStructure& a, const CrystalStructure& b,
                                                         int axis, double cut) {
  CrystalStructure child;
  child.id = a.id;
  child.cell = mean_cell(a.cell, b.cell);
  std::size_t from_a = 0, from_b = 0;
  for (const auto& site : a.sites)
    if (site.frac(axis) < cut) {
      child.sites.push_back(site);
      ++from_a;
    }
  for (const auto& site : b.sites)
    if (site.frac(axis) >= cut) {
      child.sites.push_back(site);
      ++from_b;
    }
  if (from_a == 0 || from_b == 0) return std::nullopt;
  return child;
}

struct CrossoverResult {
  CrystalStructure structure;
  bool failed = false;  // true: no usable cut found, `structure` is a unchanged
};

inline constexpr int kCrossoverRetries = 8;

inline CrossoverResult crossover_slab(const CrystalStructure& a, const CrystalStructure& b, Rng& rng) {
  const std::string id = derive_child_id(a.id, rng);
  for (int attempt = 0; attempt <= kCrossoverRetries; ++attempt) {
    const int axis = static_cast<int>(rng.index(3));
    const double cut = rng.uniform(0.3, 0.7);
    if (auto child = crossover_slab_at(a, b, axis, cut)) {
      child->id = id;
      return {std::move(*child), false};
    }
  }
  return {a, true};
}

// ---- population -----------------------------------------------------------

inline Population seed_population(std::span<const CrystalStructure> pool, const Evaluator& evaluate,
                                  const EvolutionConfig& config) {
  config.validate();
  const auto n = static_cast<std::size_t>(config.pool_size);
  if (pool.size() < n)
    throw Error(Errc::PoolTooSmall, "pool has " + std::to_string(pool.size()) + " structures, pool_size is " +
                                        std::to_string(n));
  Population pop;
  pop.members.resize(n);
  parallel_for(n, [&](std::size_t i) {
    pop.members[i].structure = pool[i];
    pop.members[i].eval = evaluate(pool[i]);
  });
  return pop;
}

/// Indices of the top-k members: fitness descending, then id ascending.
inline std::vector<std::size_t> elite_indices(const Population& pop, std::size_t k) {
  std::vector<std::size_t> order(pop.members.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t x, std::size_t y) {
    const auto& mx = pop.members[x];
    const auto& my = pop.members[y];
    if (mx.eval.fitness != my.eval.fitness) return mx.eval.fitness > my.eval.fitness;
    return mx.structure.id < my.structure.id;
  });
  order.resize(std::min(k, order.size()));
  return order;
}

inline std::vector<Member> select_elite(const Population& pop, std::size_t k) {
  std::vector<Member> out;
  for (std::size_t i : elite_indices(pop, k)) out.push_back(pop.members[i]);
  return out;
}

inline GenerationRecord make_record(const Population& pop, std::size_t elite_k) {
  GenerationRecord r;
  r.generation_index = pop.generation_index;
  r.histogram.assign(kHistogramBins, 0);
  if (pop.members.empty()) return r;
  r.fitness_min = r.fitness_max = pop.members[0].eval.fitness;
  double sum = 0.0;
  for (const auto& m : pop.members) {
    r.fitness_min = std::min(r.fitness_min, m.eval.fitness);
    r.fitness_max = std::max(r.fitness_max, m.eval.fitness);
    sum += m.eval.fitness;
  }
  r.fitness_mean = std::clamp(sum / static_cast<double>(pop.members.size()), r.fitness_min, r.fitness_max);
  const double width = (r.fitness_max - r.fitness_min) / kHistogramBins;
  for (const auto& m : pop.members) {
    int bin = 0;
    if (width > 0.0) bin = std::min(kHistogramBins - 1, static_cast<int>((m.eval.fitness - r.fitness_min) / width));
    ++r.histogram[static_cast<std::size_t>(bin)];
  }
  for (std::size_t i : elite_indices(pop, elite_k)) r.elite_ids.push_back(pop.members[i].structure.id);
  return r;
}

inline constexpr int kSlotAttempts = 20;

/// Per-slot random stream: slot s of a step whose base draw was `base`.
inline Rng slot_rng(std::uint64_t base, std::size_t slot) { return Rng(derive_seed(base, slot)); }

struct StepResult {
  Population next;
  GenerationRecord record;  // describes the input population
};

/// One generation. Draws exactly one value from `rng`; each refill slot then
/// uses its own derived stream, so slots can be evaluated in parallel with
/// results independent of the worker count.
///
/// Slot stream order: parent index, operator, [second parent for crossover],
/// then the operator's own draws. Children whose graph is edgeless (or that
/// hit SingleElementUniverse) are regenerated; after kSlotAttempts failures
/// the last parent is copied.
inline StepResult step_generation(const Population& pop, const Evaluator& evaluate, const EvolutionConfig& config,
                                  Rng& rng) {
  config.validate();
  const auto pool_size = static_cast<std::size_t>(config.pool_size);
  const auto elite_k = static_cast<std::size_t>(config.elite_k);
  if (pop.members.size() != pool_size)
    throw Error(Errc::InvalidConfig, "population has " + std::to_string(pop.members.size()) +
                                         " members, pool_size is " + std::to_string(pool_size));
  if (config.allowed_elements.empty()) throw Error(Errc::InvalidConfig, "allowed_elements is empty");

  StepResult out;
  out.record = make_record(pop, elite_k);
  const std::vector<Member> elite = select_elite(pop, elite_k);
  const std::uint64_t base = rng.next_u64();

  std::vector<Member> children(pool_size - elite_k);
  parallel_for(children.size(), [&](std::size_t slot) {
    Rng r = slot_rng(base, slot);
    const Member* parent = nullptr;
    for (int attempt = 0; attempt < kSlotAttempts; ++attempt) {
      parent = &elite[r.index(elite.size())];
      const Operator op = draw_operator(r, config);
      CrystalStructure child;
      switch (op) {
        case Operator::StructureMutation:
          child = mutate_structure(parent->structure, config.struct_mut_sigma, r);
          break;
        case Operator::Replace:
        case Operator::Add:
          try {
            child = mutate_atoms(parent->structure, op == Operator::Add ? AtomMutation::Add : AtomMutation::Replace,
                                 config.allowed_elements, r);
          } catch (const Error& e) {
            if (e.code() == Errc::SingleElementUniverse) continue;
            throw;
          }
          break;
        case Operator::Crossover: {
          const Member& other = elite[r.index(elite.size())];
          child = crossover_slab(parent->structure, other.structure, r).structure;
          break;
        }
      }
      try {
        children[slot] = {child, evaluate(child)};
        return;
      } catch (const Error& e) {
        if (e.code() != Errc::EdgelessGraph) throw;
      }
    }
    children[slot] = *parent;
  });

  out.next.generation_index = pop.generation_index + 1;
  out.next.members = elite;
  for (auto& c : children) out.next.members.push_back(std::move(c));
  return out;
}

struct EvolutionTrace {
  Population final_population;
  std::vector<GenerationRecord> records;  // generations + 1 entries: every input population, then the final one
};

inline EvolutionTrace evolve(Population pop, const Evaluator& evaluate, const EvolutionConfig& config, Rng& rng) {
  EvolutionTrace trace;
  for (int g = 0; g < config.generations; ++g) {
    auto step = step_generation(pop, evaluate, config, rng);
    trace.records.push_back(std::move(step.record));
    pop = std::move(step.next);
  }
  trace.records.push_back(make_record(pop, static_cast<std::size_t>(config.elite_k)));
  trace.final_population = std::move(pop);
  return trace;
}

// ---- JSON -----------------------------------------------------------------

inline nlohmann::json record_to_json(const GenerationRecord& r) {
  return {{"generation", r.generation_index}, {"fitness_min", r.fitness_min}, {"fitness_mean", r.fitness_mean},
          {"fitness_max", r.fitness_max},     {"elite_ids", r.elite_ids},     {"histogram", r.histogram}};
}

inline GenerationRecord record_from_json(const nlohmann::json& j) {
  GenerationRecord r;
  r.generation_index = j.at("generation").get<int>();
  r.fitness_min = j.at("fitness_min").get<double>();
  r.fitness_mean = j.at("fitness_mean").get<double>();
  r.fitness_max = j.at("fitness_max").get<double>();
  r.elite_ids = j.at("elite_ids").get<std::vector<std::string>>();
  r.histogram = j.at("histogram").get<std::vector<int>>();
  return r;
}

}  // namespace crystal_evolve
