// SPDX-License-Identifier: Apache-2.0
//
// Shared fixtures and independent oracles for the test binaries.

#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <filesystem>
#include <numbers>
#include <string>
#include <tuple>
#include <vector>

#include "crystal_evolve/crystal_evolve.hpp"

namespace testing_support {

namespace ce = crystal_evolve;

inline std::string data_path(const std::string& rel) { return std::string(CRYSTAL_EVOLVE_DATA_DIR) + "/" + rel; }

/// Fresh, empty scratch directory under the build tree.
inline std::filesystem::path scratch_dir(const std::string& name) {
  const auto p = std::filesystem::path(CRYSTAL_EVOLVE_SCRATCH_DIR) / name;
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

// ---- random structures ------------------------------------------------

inline ce::CellParameters random_cell(ce::Rng& rng, double len_lo = 4.0, double len_hi = 8.0) {
  for (;;) {
    ce::CellParameters c{rng.uniform(len_lo, len_hi), rng.uniform(len_lo, len_hi), rng.uniform(len_lo, len_hi),
                         rng.uniform(70.0, 110.0),     rng.uniform(70.0, 110.0),     rng.uniform(70.0, 110.0)};
    if (ce::cell_volume_radicand(c) > 0.3) return c;
  }
}

inline ce::CrystalStructure random_structure(ce::Rng& rng, int max_sites = 4, const std::string& id = "rand") {
  static constexpr int kElements[] = {1, 6, 7, 8, 12, 26, 29, 30, 34, 50};
  ce::CrystalStructure s;
  s.id = id;
  s.cell = random_cell(rng);
  const int n = 1 + static_cast<int>(rng.index(static_cast<std::size_t>(max_sites)));
  for (int k = 0; k < n; ++k) {
    ce::AtomSite site;
    site.element = kElements[rng.index(std::size(kElements))];
    site.fx = rng.uniform();
    site.fy = rng.uniform();
    site.fz = rng.uniform();
    s.sites.push_back(site);
  }
  return s;
}

// ---- lattice oracle -----------------------------------------------------

/// Cell vectors from the textbook construction, c_z via the unit-vector
/// norm rather than the volume expression.
inline std::array<std::array<double, 3>, 3> oracle_lattice(const ce::CellParameters& p) {
  const double r = std::numbers::pi / 180.0;
  const double ca = std::cos(p.alpha * r), cb = std::cos(p.beta * r), cg = std::cos(p.gamma * r);
  const double sg = std::sin(p.gamma * r);
  const double cy = (ca - cb * cg) / sg;
  const double cz = std::sqrt(1.0 - cb * cb - cy * cy);
  return {{{p.a, 0.0, 0.0}, {p.b * cg, p.b * sg, 0.0}, {p.c * cb, p.c * cy, p.c * cz}}};
}

struct OracleEdge {
  int i, j;
  std::array<int, 3> image;
  double d;
};

/// Brute force over every image in a ±range supercell: keep each atom's
/// max_nb nearest (ties by j, image), then add reversed copies.
inline std::vector<OracleEdge> oracle_neighbors(const ce::CrystalStructure& s, double cutoff, int max_nb, int range = 3) {
  const auto m = oracle_lattice(s.cell);
  auto cart = [&](double x, double y, double z) {
    std::array<double, 3> out{};
    for (int k = 0; k < 3; ++k) out[k] = x * m[0][k] + y * m[1][k] + z * m[2][k];
    return out;
  };
  const int n = static_cast<int>(s.sites.size());
  std::vector<OracleEdge> kept;
  for (int i = 0; i < n; ++i) {
    std::vector<OracleEdge> cand;
    const auto ri = cart(s.sites[i].fx, s.sites[i].fy, s.sites[i].fz);
    for (int j = 0; j < n; ++j)
      for (int a = -range; a <= range; ++a)
        for (int b = -range; b <= range; ++b)
          for (int c = -range; c <= range; ++c) {
            const auto rj = cart(s.sites[j].fx + a, s.sites[j].fy + b, s.sites[j].fz + c);
            const double d = std::hypot(rj[0] - ri[0], rj[1] - ri[1], rj[2] - ri[2]);
            if (d > 1e-12 && d <= cutoff) cand.push_back({i, j, {a, b, c}, d});
          }
    std::sort(cand.begin(), cand.end(), [](const OracleEdge& x, const OracleEdge& y) {
      return std::tie(x.d, x.j, x.image) < std::tie(y.d, y.j, y.image);
    });
    for (std::size_t k = 0; k < cand.size() && k < static_cast<std::size_t>(max_nb); ++k) kept.push_back(cand[k]);
  }
  std::vector<OracleEdge> out = kept;
  for (const auto& e : kept) out.push_back({e.j, e.i, {-e.image[0], -e.image[1], -e.image[2]}, e.d});
  std::sort(out.begin(), out.end(), [](const OracleEdge& x, const OracleEdge& y) {
    return std::tie(x.i, x.j, x.image) < std::tie(y.i, y.j, y.image);
  });
  out.erase(std::unique(out.begin(), out.end(),
                        [](const OracleEdge& x, const OracleEdge& y) {
                          return std::tie(x.i, x.j, x.image) == std::tie(y.i, y.j, y.image);
                        }),
            out.end());
  return out;
}

/// Compare an implementation edge list against the oracle as keyed sets,
/// distances to `tol`. Returns an empty string on agreement.
inline std::string compare_edges(const std::vector<ce::Edge>& got, std::vector<OracleEdge> want, double tol = 1e-9) {
  std::vector<OracleEdge> g;
  for (const auto& e : got) g.push_back({e.i, e.j, {e.image[0], e.image[1], e.image[2]}, e.distance});
  auto key_less = [](const OracleEdge& x, const OracleEdge& y) {
    return std::tie(x.i, x.j, x.image) < std::tie(y.i, y.j, y.image);
  };
  std::sort(g.begin(), g.end(), key_less);
  std::sort(want.begin(), want.end(), key_less);
  if (g.size() != want.size())
    return "edge count " + std::to_string(g.size()) + " vs oracle " + std::to_string(want.size());
  for (std::size_t k = 0; k < g.size(); ++k) {
    if (key_less(g[k], want[k]) || key_less(want[k], g[k])) return "edge key mismatch at " + std::to_string(k);
    if (std::abs(g[k].d - want[k].d) > tol) return "distance mismatch at " + std::to_string(k);
  }
  return {};
}

// ---- surrogate helpers --------------------------------------------------

inline ce::ModelConfig small_model(std::uint64_t seed, int embed = 4, int n_conv = 2, int hidden = 4) {
  ce::ModelConfig mc;
  mc.embed_dim = embed;
  mc.n_conv = n_conv;
  mc.hidden_dim = hidden;
  mc.seed = seed;
  return mc;
}

/// Node-relabelled copy of a graph: new node k is old node perm[k].
inline ce::CrystalGraph permute_graph(const ce::CrystalGraph& g, const std::vector<int>& perm) {
  std::vector<int> inv(perm.size());
  for (std::size_t k = 0; k < perm.size(); ++k) inv[static_cast<std::size_t>(perm[k])] = static_cast<int>(k);
  ce::CrystalGraph out = g;
  for (std::size_t k = 0; k < perm.size(); ++k) {
    const auto src = g.node_features.row(static_cast<std::size_t>(perm[k]));
    std::copy(src.begin(), src.end(), out.node_features.row(k).begin());
  }
  for (auto& e : out.edges) {
    e.i = inv[static_cast<std::size_t>(e.i)];
    e.j = inv[static_cast<std::size_t>(e.j)];
  }
  return out;
}

inline std::vector<ce::CrystalGraph> random_graphs(std::uint64_t seed, int count, int max_sites = 4,
                                            const ce::GraphConfig& gc = {}) {
  ce::Rng rng(seed);
  std::vector<ce::CrystalGraph> out;
  for (int k = 0; k < count; ++k) out.push_back(ce::build_graph(random_structure(rng, max_sites), gc));
  return out;
}

inline ce::GraphConfig toy_graph() {
  ce::GraphConfig gc;
  gc.max_neighbors = 6;
  return gc;
}

struct ToySet {
  std::vector<ce::LabeledEntry> entries;
  std::vector<ce::CrystalGraph> graphs;

  std::vector<ce::TrainingSample> samples(ce::Property p, std::size_t limit = 1000) const {
    std::vector<ce::TrainingSample> out;
    for (std::size_t k = 0; k < entries.size() && k < limit; ++k) out.push_back({graphs[k], *entries[k].labels.get(p)});
    return out;
  }
};

inline const ToySet& toy_set() {
  static const ToySet set = [] {
    ToySet s;
    s.entries = ce::load_dataset(data_path("toy/manifest.jsonl"));
    for (const auto& e : s.entries) s.graphs.push_back(ce::build_graph(e.structure, toy_graph()));
    return s;
  }();
  return set;
}

/// Central-difference check of loss_and_gradients on chosen coordinates.
/// Returns the worst error, where a coordinate passes when
/// |analytic - numeric| <= max(rel * max(|analytic|, |numeric|), abs_floor).
struct GradientCheck {
  double worst_ratio = 0.0;  // error / allowed; < 1 means pass
  double worst_rel = 0.0;     // over coordinates at or above the floor
  int checked = 0;
  int below_floor = 0;  // gradient too small for central differences to resolve
};

inline GradientCheck check_gradients(const ce::SurrogateModel& model, const std::vector<ce::TrainingSample>& batch,
                                     const std::vector<std::size_t>& coords, double h = 1e-5, double rel = 1e-4,
                                     double abs_floor = 1e-9) {
  const auto analytic = ce::loss_and_gradients(model, batch).gradients;
  auto grad_coords = const_cast<ce::Parameters&>(analytic).coordinates();
  GradientCheck out;
  for (std::size_t c : coords) {
    ce::SurrogateModel plus = model, minus = model;
    *plus.params.coordinates()[c] += h;
    *minus.params.coordinates()[c] -= h;
    const double numeric =
        (ce::loss_and_gradients(plus, batch).mse - ce::loss_and_gradients(minus, batch).mse) / (2.0 * h);
    const double a = *grad_coords[c];
    const double err = std::abs(a - numeric);
    const double scale = std::max(std::abs(a), std::abs(numeric));
    const double allowed = std::max(rel * scale, abs_floor);
    out.worst_ratio = std::max(out.worst_ratio, err / allowed);
    if (scale >= abs_floor) {
      out.worst_rel = std::max(out.worst_rel, err / scale);
    } else {
      ++out.below_floor;
    }
    ++out.checked;
  }
  return out;
}

/// Surrogate whose prediction is a fixed physical value on every graph.
inline ce::SurrogateModel constant_model(ce::Property p, double value, int edge_dim) {
  ce::ModelConfig mc = small_model(0, 2, 1, 2);
  mc.edge_dim = edge_dim;
  ce::SurrogateModel m = ce::init_model(mc, p);
  m.params.out_w.set_zero();
  m.params.out_b.data[0] = 0.0;
  m.scaler = ce::TargetScaler{value, value + 1.0};
  return m;
}

}  // namespace testing_support
