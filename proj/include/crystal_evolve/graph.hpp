// SPDX-License-Identifier: Apache-2.0
//
// Crystal structure -> periodic multigraph. Nodes are atoms with one-hot
// element features; edges join each atom to its nearest periodic images,
// with the distance expanded on a Gaussian basis.

#pragma once

#include <algorithm>
#include <cmath>
#include <set>
#include <string>
#include <tuple>
#include <vector>

#include "crystal_evolve/elements.hpp"
#include "crystal_evolve/error.hpp"
#include "crystal_evolve/lattice.hpp"
#include "crystal_evolve/matrix.hpp"
#include "crystal_evolve/structure.hpp"

namespace crystal_evolve {

inline constexpr std::size_t kAtomFeatureWidth = kMaxAtomicNumber;

struct GraphConfig {
  double cutoff = 8.0;  // Å
  int max_neighbors = 12;
  double gaussian_min = 0.0;
  double gaussian_max = 8.0;
  double gaussian_step = 0.2;
  double gaussian_width = 0.2;

  /// floor((max - min) / step) + 1; the small slack keeps 8/0.2 at 40.
  std::size_t basis_size() const {
    return static_cast<std::size_t>(std::floor((gaussian_max - gaussian_min) / gaussian_step + 1e-9)) + 1;
  }

  void validate() const {
    if (!(cutoff > 0.0)) throw Error(Errc::InvalidConfig, "graph cutoff must be positive");
    if (max_neighbors < 1) throw Error(Errc::InvalidConfig, "max_neighbors must be at least 1");
    if (!(gaussian_max > gaussian_min)) throw Error(Errc::InvalidConfig, "gaussian_max must exceed gaussian_min");
    if (!(gaussian_step > 0.0)) throw Error(Errc::InvalidConfig, "gaussian_step must be positive");
    if (!(gaussian_width > 0.0)) throw Error(Errc::InvalidConfig, "gaussian_width must be positive");
  }

  friend bool operator==(const GraphConfig&, const GraphConfig&) = default;
};

/// Directed half of an undirected periodic bond: atom j shifted by `image`
/// lattice vectors, seen from atom i.
struct Edge {
  int i = 0;
  int j = 0;
  IVec3 image{};
  double distance = 0.0;

  friend bool operator==(const Edge&, const Edge&) = default;
};

struct CrystalGraph {
  Matrix node_features;  // N x F0
  std::vector<Edge> edges;
  Matrix edge_features;  // E x G
  std::string source_id;

  std::size_t node_count() const { return node_features.rows; }
};

/// Neighbour candidates of every atom within the cutoff, each atom keeping
/// its max_neighbors nearest (ties by j, then image, ascending). The kept set
/// is then closed under reversal so that (i, j, n) implies (j, i, -n).
///
/// Images are scanned over n_k in [-m_k, m_k] with
/// m_k = ceil(cutoff / w_k) + 1, w_k the perpendicular width of axis k. With
/// wrapped coordinates |Δf_k| < 1, so any image within the cutoff satisfies
/// |n_k| < cutoff / w_k + 1.
inline std::vector<Edge> neighbor_list(const CrystalStructure& s, const GraphConfig& config) {
  config.validate();
  const Lattice lattice = lattice_from_params(s.cell);
  const Vec3 widths = lattice.perpendicular_widths();
  IVec3 reach{};
  for (int k = 0; k < 3; ++k) reach[k] = static_cast<int>(std::ceil(config.cutoff / widths[k])) + 1;

  const int n = static_cast<int>(s.sites.size());
  auto key = [](const Edge& e) { return std::tuple(e.i, e.j, e.image[0], e.image[1], e.image[2]); };
  using Key = decltype(key(Edge{}));
  std::set<Key> seen;
  std::vector<Edge> edges;
  std::vector<Edge> candidates;

  for (int i = 0; i < n; ++i) {
    candidates.clear();
    const auto& si = s.sites[static_cast<std::size_t>(i)];
    for (int j = 0; j < n; ++j) {
      const auto& sj = s.sites[static_cast<std::size_t>(j)];
      const Vec3 df = {sj.fx - si.fx, sj.fy - si.fy, sj.fz - si.fz};
      for (int a = -reach[0]; a <= reach[0]; ++a)
        for (int b = -reach[1]; b <= reach[1]; ++b)
          for (int c = -reach[2]; c <= reach[2]; ++c) {
            const Vec3 shift = {df[0] + a, df[1] + b, df[2] + c};
            const double d = norm(row_times(shift, lattice.m));
            if (d > 0.0 && d <= config.cutoff) candidates.push_back({i, j, {a, b, c}, d});
          }
    }
    std::sort(candidates.begin(), candidates.end(), [](const Edge& x, const Edge& y) {
      return std::tie(x.distance, x.j, x.image) < std::tie(y.distance, y.j, y.image);
    });
    const std::size_t keep = std::min(candidates.size(), static_cast<std::size_t>(config.max_neighbors));
    for (std::size_t k = 0; k < keep; ++k) {
      const Edge& e = candidates[k];
      const Edge rev{e.j, e.i, {-e.image[0], -e.image[1], -e.image[2]}, e.distance};
      if (seen.insert(key(e)).second) edges.push_back(e);
      if (seen.insert(key(rev)).second) edges.push_back(rev);
    }
  }
  std::sort(edges.begin(), edges.end(), [](const Edge& x, const Edge& y) {
    return std::tie(x.i, x.distance, x.j, x.image) < std::tie(y.i, y.distance, y.j, y.image);
  });
  return edges;
}

/// Gaussian basis responses exp(-(d - μ_k)² / width²), μ_k = min + k·step.
inline std::vector<double> expand_distance(double d, const GraphConfig& config) {
  const std::size_t g = config.basis_size();
  std::vector<double> out(g);
  const double inv_w2 = 1.0 / (config.gaussian_width * config.gaussian_width);
  for (std::size_t k = 0; k < g; ++k) {
    const double mu = config.gaussian_min + static_cast<double>(k) * config.gaussian_step;
    const double diff = d - mu;
    out[k] = std::exp(-diff * diff * inv_w2);
  }
  return out;
}

inline std::vector<double> atom_features(int element) {
  if (!valid_atomic_number(element))
    throw Error(Errc::OutOfRange, "atomic number " + std::to_string(element) + " outside 1.." +
                                      std::to_string(kMaxAtomicNumber));
  std::vector<double> out(kAtomFeatureWidth, 0.0);
  out[static_cast<std::size_t>(element - 1)] = 1.0;
  return out;
}

inline CrystalGraph build_graph(const CrystalStructure& s, const GraphConfig& config) {
  CrystalGraph g;
  g.source_id = s.id;
  g.edges = neighbor_list(s, config);

  const std::size_t n = s.sites.size();
  std::vector<int> degree(n, 0);
  for (const auto& e : g.edges) ++degree[static_cast<std::size_t>(e.i)];
  for (std::size_t i = 0; i < n; ++i)
    if (degree[i] == 0)
      throw Error(Errc::EdgelessGraph, "structure '" + s.id + "': atom " + std::to_string(i) +
                                           " has no neighbour within " + std::to_string(config.cutoff) + " Å");

  g.node_features = Matrix(n, kAtomFeatureWidth);
  for (std::size_t i = 0; i < n; ++i) {
    const auto f = atom_features(s.sites[i].element);
    std::copy(f.begin(), f.end(), g.node_features.row(i).begin());
  }
  const std::size_t gsize = config.basis_size();
  g.edge_features = Matrix(g.edges.size(), gsize);
  for (std::size_t e = 0; e < g.edges.size(); ++e) {
    const auto f = expand_distance(g.edges[e].distance, config);
    std::copy(f.begin(), f.end(), g.edge_features.row(e).begin());
  }
  return g;
}

}  // namespace crystal_evolve
