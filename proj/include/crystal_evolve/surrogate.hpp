// SPDX-License-Identifier: Apache-2.0
//
// Crystal-graph convolutional regressor for one scalar property.
//
//   v⁰ᵢ   = xᵢ · Embedding
//   vᵢ   ← vᵢ + Σ_{(i,j,e)} σ(z·W_f + b_f) ⊙ softplus(z·W_s + b_s),  z = [vᵢ, vⱼ, eᵢⱼ]
//   h    = mean_i vᵢ
//   y    = softplus(h·W_h + b_h) · W_o + b_o
//
// The output lives in min-max normalised target space; predict_physical maps
// it back through the scaler fitted at training time. Gradients are written
// out by hand (reverse mode over the forward above).

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <functional>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "crystal_evolve/error.hpp"
#include "crystal_evolve/graph.hpp"
#include "crystal_evolve/matrix.hpp"
#include "crystal_evolve/parallel.hpp"
#include "crystal_evolve/properties.hpp"
#include "crystal_evolve/rng.hpp"

namespace crystal_evolve {

struct ModelConfig {
  int embed_dim = 64;
  int n_conv = 3;
  int hidden_dim = 32;
  std::uint64_t seed = 0;
  /// Width of the edge feature (Gaussian basis size) the model consumes.
  int edge_dim = static_cast<int>(GraphConfig{}.basis_size());

  void validate() const {
    if (embed_dim < 1) throw Error(Errc::InvalidConfig, "embed_dim must be at least 1");
    if (n_conv < 1) throw Error(Errc::InvalidConfig, "n_conv must be at least 1");
    if (hidden_dim < 1) throw Error(Errc::InvalidConfig, "hidden_dim must be at least 1");
    if (edge_dim < 1) throw Error(Errc::InvalidConfig, "edge_dim must be at least 1");
  }

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

struct ConvLayer {
  Matrix gate_w;  // (2E + G) x E
  Matrix gate_b;  // 1 x E
  Matrix core_w;  // (2E + G) x E
  Matrix core_b;  // 1 x E

  friend bool operator==(const ConvLayer&, const ConvLayer&) = default;
};

/// All trainable tensors. Gradients use the same type.
struct Parameters {
  Matrix embedding;  // F0 x E
  std::vector<ConvLayer> conv;
  Matrix hidden_w;  // E x H
  Matrix hidden_b;  // 1 x H
  Matrix out_w;     // H x 1
  Matrix out_b;     // 1 x 1

  /// Visit every tensor as (name, tensor) in a fixed order.
  template <class Self, class Fn>
  static void visit(Self& p, Fn&& fn) {
    fn(std::string("embedding"), p.embedding);
    for (std::size_t l = 0; l < p.conv.size(); ++l) {
      const std::string prefix = "conv." + std::to_string(l) + ".";
      fn(prefix + "gate_w", p.conv[l].gate_w);
      fn(prefix + "gate_b", p.conv[l].gate_b);
      fn(prefix + "core_w", p.conv[l].core_w);
      fn(prefix + "core_b", p.conv[l].core_b);
    }
    fn(std::string("head.hidden_w"), p.hidden_w);
    fn(std::string("head.hidden_b"), p.hidden_b);
    fn(std::string("head.out_w"), p.out_w);
    fn(std::string("head.out_b"), p.out_b);
  }
  template <class Fn>
  void for_each(Fn&& fn) { visit(*this, fn); }
  template <class Fn>
  void for_each(Fn&& fn) const { visit(*this, fn); }

  Parameters zeros_like() const {
    Parameters z = *this;
    z.for_each([](const std::string&, Matrix& m) { m.set_zero(); });
    return z;
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for_each([&](const std::string&, const Matrix& m) { n += m.size(); });
    return n;
  }

  /// Flat view for coordinate-wise access (gradient checks, optimisers).
  std::vector<double*> coordinates() {
    std::vector<double*> out;
    for_each([&](const std::string&, Matrix& m) {
      for (auto& x : m.data) out.push_back(&x);
    });
    return out;
  }

  friend bool operator==(const Parameters&, const Parameters&) = default;
};

struct TargetScaler {
  double min = 0.0;
  double max = 1.0;

  double normalize(double y) const { return (y - min) / (max - min); }
  double denormalize(double y) const { return min + y * (max - min); }

  friend bool operator==(const TargetScaler&, const TargetScaler&) = default;
};

struct SurrogateModel {
  ModelConfig config;
  Property property = Property::FE;
  Parameters params;
  std::optional<TargetScaler> scaler;

  std::size_t embed_dim() const { return static_cast<std::size_t>(config.embed_dim); }
  std::size_t edge_dim() const { return params.conv.empty() ? 0 : params.conv[0].gate_w.rows - 2 * embed_dim(); }
};

struct TrainReport {
  std::vector<double> loss_history;
  double final_train_mse = 0.0;
  int epochs_run = 0;
};

namespace surrogate_detail {

inline double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

inline double softplus(double x) { return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }

/// softplus(x) and sigmoid(x) from a single exponential.
inline void softplus_and_sigmoid(double x, double& sp, double& sig) {
  const double e = std::exp(-std::abs(x));
  sp = std::max(x, 0.0) + std::log1p(e);
  sig = x >= 0.0 ? 1.0 / (1.0 + e) : e / (1.0 + e);
}

struct LayerCache {
  Matrix gate;      // σ(gate_pre), edges x E
  Matrix core;      // softplus(core_pre)
  Matrix core_sig;  // σ(core_pre)
};

struct ForwardCache {
  std::vector<Matrix> node_states;  // n_conv + 1 entries, each N x E
  std::vector<LayerCache> layers;
  std::vector<double> pooled;
  std::vector<double> hidden_pre;
  std::vector<double> hidden;
};

inline void check_shapes(const SurrogateModel& model, const CrystalGraph& graph) {
  const auto& p = model.params;
  if (graph.node_count() == 0) throw Error(Errc::ShapeMismatch, "graph '" + graph.source_id + "' has no nodes");
  if (graph.node_features.cols != p.embedding.rows)
    throw Error(Errc::ShapeMismatch, "graph '" + graph.source_id + "' node feature width " +
                                         std::to_string(graph.node_features.cols) + " != model input width " +
                                         std::to_string(p.embedding.rows));
  if (graph.edge_features.cols != model.edge_dim())
    throw Error(Errc::ShapeMismatch, "graph '" + graph.source_id + "' edge feature width " +
                                         std::to_string(graph.edge_features.cols) + " != model edge width " +
                                         std::to_string(model.edge_dim()));
  if (graph.edge_features.rows != graph.edges.size())
    throw Error(Errc::ShapeMismatch, "graph '" + graph.source_id + "' edge feature rows != edge count");
}

/// Node-to-projection for the self (offset 0) or neighbour (offset E) block of W.
inline Matrix project_nodes(const Matrix& v, const Matrix& w, std::size_t row_offset) {
  Matrix out(v.rows, w.cols);
  for (std::size_t i = 0; i < v.rows; ++i) accumulate_row_times(v.row(i), w, row_offset, out.row(i));
  return out;
}

inline double forward_impl(const SurrogateModel& model, const CrystalGraph& graph, ForwardCache* cache) {
  check_shapes(model, graph);
  const auto& p = model.params;
  const std::size_t n = graph.node_count();
  const std::size_t ed = model.embed_dim();
  const std::size_t ne = graph.edges.size();

  Matrix v(n, ed);
  for (std::size_t i = 0; i < n; ++i) accumulate_row_times(graph.node_features.row(i), p.embedding, 0, v.row(i));
  if (cache) {
    cache->node_states.clear();
    cache->layers.clear();
    cache->node_states.push_back(v);
  }

  std::vector<double> gate_pre(ed), core_pre(ed);
  for (const auto& layer : p.conv) {
    const Matrix gate_self = project_nodes(v, layer.gate_w, 0);
    const Matrix gate_nbr = project_nodes(v, layer.gate_w, ed);
    const Matrix core_self = project_nodes(v, layer.core_w, 0);
    const Matrix core_nbr = project_nodes(v, layer.core_w, ed);
    LayerCache lc;
    if (cache) lc = {Matrix(ne, ed), Matrix(ne, ed), Matrix(ne, ed)};
    Matrix next = v;
    for (std::size_t e = 0; e < ne; ++e) {
      const auto i = static_cast<std::size_t>(graph.edges[e].i);
      const auto j = static_cast<std::size_t>(graph.edges[e].j);
      for (std::size_t c = 0; c < ed; ++c) {
        gate_pre[c] = gate_self(i, c) + gate_nbr(j, c) + layer.gate_b.data[c];
        core_pre[c] = core_self(i, c) + core_nbr(j, c) + layer.core_b.data[c];
      }
      accumulate_row_times(graph.edge_features.row(e), layer.gate_w, 2 * ed, gate_pre);
      accumulate_row_times(graph.edge_features.row(e), layer.core_w, 2 * ed, core_pre);
      auto out = next.row(i);
      for (std::size_t c = 0; c < ed; ++c) {
        const double g = sigmoid(gate_pre[c]);
        double sp, sig;
        softplus_and_sigmoid(core_pre[c], sp, sig);
        out[c] += g * sp;
        if (cache) {
          lc.gate(e, c) = g;
          lc.core(e, c) = sp;
          lc.core_sig(e, c) = sig;
        }
      }
    }
    v = std::move(next);
    if (cache) {
      cache->layers.push_back(std::move(lc));
      cache->node_states.push_back(v);
    }
  }

  std::vector<double> pooled(ed, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t c = 0; c < ed; ++c) pooled[c] += v(i, c);
  for (auto& x : pooled) x /= static_cast<double>(n);

  std::vector<double> hidden_pre(p.hidden_b.data);
  accumulate_row_times(pooled, p.hidden_w, 0, hidden_pre);
  std::vector<double> hidden(hidden_pre.size());
  for (std::size_t k = 0; k < hidden.size(); ++k) hidden[k] = softplus(hidden_pre[k]);
  double y = p.out_b.data[0];
  for (std::size_t k = 0; k < hidden.size(); ++k) y += hidden[k] * p.out_w.data[k];

  if (cache) {
    cache->pooled = std::move(pooled);
    cache->hidden_pre = std::move(hidden_pre);
    cache->hidden = std::move(hidden);
  }
  return y;
}

/// Accumulate d(output)/d(params) scaled by `upstream` into `grad`.
inline void backward_impl(const SurrogateModel& model, const CrystalGraph& graph, const ForwardCache& cache,
                          double upstream, Parameters& grad) {
  const auto& p = model.params;
  const std::size_t n = graph.node_count();
  const std::size_t ed = model.embed_dim();
  const std::size_t ne = graph.edges.size();
  const std::size_t hd = p.hidden_b.cols;

  // Head.
  grad.out_b.data[0] += upstream;
  std::vector<double> d_hidden_pre(hd);
  for (std::size_t k = 0; k < hd; ++k) {
    grad.out_w.data[k] += cache.hidden[k] * upstream;
    d_hidden_pre[k] = p.out_w.data[k] * upstream * sigmoid(cache.hidden_pre[k]);
    grad.hidden_b.data[k] += d_hidden_pre[k];
  }
  accumulate_outer(cache.pooled, d_hidden_pre, grad.hidden_w, 0);
  std::vector<double> d_pooled(ed, 0.0);
  accumulate_times_transpose(p.hidden_w, 0, d_hidden_pre, d_pooled);

  // Mean pool.
  Matrix dv(n, ed);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t c = 0; c < ed; ++c) dv(i, c) = d_pooled[c] / static_cast<double>(n);

  std::vector<double> d_gate(ed), d_core(ed);
  for (std::size_t l = p.conv.size(); l-- > 0;) {
    const auto& layer = p.conv[l];
    auto& glayer = grad.conv[l];
    const Matrix& v_in = cache.node_states[l];
    const LayerCache& lc = cache.layers[l];

    // Per-node sums of the pre-activation gradients, split by whether the
    // node is the edge's centre (self block) or its neighbour.
    Matrix gate_self_sum(n, ed), gate_nbr_sum(n, ed), core_self_sum(n, ed), core_nbr_sum(n, ed);
    for (std::size_t e = 0; e < ne; ++e) {
      const auto i = static_cast<std::size_t>(graph.edges[e].i);
      const auto j = static_cast<std::size_t>(graph.edges[e].j);
      for (std::size_t c = 0; c < ed; ++c) {
        const double g = lc.gate(e, c);
        const double up = dv(i, c);
        d_gate[c] = up * lc.core(e, c) * g * (1.0 - g);
        d_core[c] = up * g * lc.core_sig(e, c);
        gate_self_sum(i, c) += d_gate[c];
        gate_nbr_sum(j, c) += d_gate[c];
        core_self_sum(i, c) += d_core[c];
        core_nbr_sum(j, c) += d_core[c];
        glayer.gate_b.data[c] += d_gate[c];
        glayer.core_b.data[c] += d_core[c];
      }
      accumulate_outer(graph.edge_features.row(e), d_gate, glayer.gate_w, 2 * ed);
      accumulate_outer(graph.edge_features.row(e), d_core, glayer.core_w, 2 * ed);
    }
    // Residual path carries dv through unchanged; add the message paths.
    Matrix dv_in = dv;
    for (std::size_t i = 0; i < n; ++i) {
      accumulate_outer(v_in.row(i), gate_self_sum.row(i), glayer.gate_w, 0);
      accumulate_outer(v_in.row(i), gate_nbr_sum.row(i), glayer.gate_w, ed);
      accumulate_outer(v_in.row(i), core_self_sum.row(i), glayer.core_w, 0);
      accumulate_outer(v_in.row(i), core_nbr_sum.row(i), glayer.core_w, ed);
      accumulate_times_transpose(layer.gate_w, 0, gate_self_sum.row(i), dv_in.row(i));
      accumulate_times_transpose(layer.gate_w, ed, gate_nbr_sum.row(i), dv_in.row(i));
      accumulate_times_transpose(layer.core_w, 0, core_self_sum.row(i), dv_in.row(i));
      accumulate_times_transpose(layer.core_w, ed, core_nbr_sum.row(i), dv_in.row(i));
    }
    dv = std::move(dv_in);
  }

  for (std::size_t i = 0; i < n; ++i) accumulate_outer(graph.node_features.row(i), dv.row(i), grad.embedding, 0);
}

inline void add_scaled(Parameters& dst, const Parameters& src, double scale) {
  std::vector<Matrix*> d;
  dst.for_each([&](const std::string&, Matrix& m) { d.push_back(&m); });
  std::size_t k = 0;
  src.for_each([&](const std::string&, const Matrix& m) {
    auto& out = d[k++]->data;
    for (std::size_t q = 0; q < m.data.size(); ++q) out[q] += scale * m.data[q];
  });
}

}  // namespace surrogate_detail

/// Fresh model with weights uniform in ±1/sqrt(fan_in), drawn in tensor
/// visiting order from a stream seeded by config.seed.
inline SurrogateModel init_model(const ModelConfig& config, Property property) {
  config.validate();
  const auto ed = static_cast<std::size_t>(config.embed_dim);
  const auto hd = static_cast<std::size_t>(config.hidden_dim);
  const auto gd = static_cast<std::size_t>(config.edge_dim);
  const std::size_t z = 2 * ed + gd;

  SurrogateModel m;
  m.config = config;
  m.property = property;
  auto& p = m.params;
  p.embedding = Matrix(kAtomFeatureWidth, ed);
  p.conv.resize(static_cast<std::size_t>(config.n_conv));
  for (auto& layer : p.conv) layer = {Matrix(z, ed), Matrix(1, ed), Matrix(z, ed), Matrix(1, ed)};
  p.hidden_w = Matrix(ed, hd);
  p.hidden_b = Matrix(1, hd);
  p.out_w = Matrix(hd, 1);
  p.out_b = Matrix(1, 1);

  Rng rng(config.seed);
  p.for_each([&](const std::string& name, Matrix& t) {
    std::size_t fan_in = z;
    if (name == "embedding") fan_in = kAtomFeatureWidth;
    else if (name.rfind("head.hidden", 0) == 0) fan_in = ed;
    else if (name.rfind("head.out", 0) == 0) fan_in = hd;
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    for (auto& x : t.data) x = rng.uniform(-bound, bound);
  });
  return m;
}

/// Normalised-space prediction.
inline double forward(const SurrogateModel& model, const CrystalGraph& graph) {
  return surrogate_detail::forward_impl(model, graph, nullptr);
}

struct TrainingSample {
  std::reference_wrapper<const CrystalGraph> graph;
  double target;  // normalised for loss_and_gradients, physical for train
};

struct LossAndGradients {
  double mse = 0.0;
  Parameters gradients;
};

/// Mean squared error over the batch and its exact gradient. Per-sample
/// gradients are reduced in batch order, so the result does not depend on
/// the worker count.
inline LossAndGradients loss_and_gradients(const SurrogateModel& model, std::span<const TrainingSample> batch) {
  using namespace surrogate_detail;
  if (batch.empty()) throw Error(Errc::EmptyBatch, "loss requested on an empty batch");
  const double inv_b = 1.0 / static_cast<double>(batch.size());
  std::vector<Parameters> per_sample(batch.size());
  std::vector<double> sq(batch.size());
  parallel_for(batch.size(), [&](std::size_t k) {
    ForwardCache cache;
    const CrystalGraph& g = batch[k].graph.get();
    const double y = forward_impl(model, g, &cache);
    const double residual = y - batch[k].target;
    sq[k] = residual * residual;
    per_sample[k] = model.params.zeros_like();
    backward_impl(model, g, cache, 2.0 * residual * inv_b, per_sample[k]);
  });
  LossAndGradients out;
  out.gradients = model.params.zeros_like();
  for (std::size_t k = 0; k < batch.size(); ++k) {
    out.mse += sq[k];
    add_scaled(out.gradients, per_sample[k], 1.0);
  }
  out.mse *= inv_b;
  return out;
}

struct TrainResult {
  SurrogateModel model;
  TrainReport report;
};

/// Full-batch gradient descent on min-max normalised targets. The scaler is
/// refitted from `dataset` (physical-unit targets).
inline TrainResult train(SurrogateModel model, std::span<const TrainingSample> dataset, int epochs,
                         double learning_rate) {
  if (dataset.empty()) throw Error(Errc::EmptyDataset, "no training samples for property " +
                                                           std::string(property_key(model.property)));
  TargetScaler scaler{dataset[0].target, dataset[0].target};
  for (const auto& s : dataset) {
    scaler.min = std::min(scaler.min, s.target);
    scaler.max = std::max(scaler.max, s.target);
  }
  if (!(scaler.max > scaler.min))
    throw Error(Errc::DegenerateLabels, "all " + std::to_string(dataset.size()) + " labels for property " +
                                            std::string(property_key(model.property)) + " equal " +
                                            std::to_string(scaler.min));
  model.scaler = scaler;

  std::vector<TrainingSample> normalized;
  normalized.reserve(dataset.size());
  for (const auto& s : dataset) normalized.push_back({s.graph, scaler.normalize(s.target)});

  TrainReport report;
  report.loss_history.reserve(static_cast<std::size_t>(std::max(epochs, 0)));
  for (int epoch = 0; epoch < epochs; ++epoch) {
    auto [mse, grad] = loss_and_gradients(model, normalized);
    if (!std::isfinite(mse))
      throw Error(Errc::TrainingDiverged, "loss became non-finite at epoch " + std::to_string(epoch));
    report.loss_history.push_back(mse);
    surrogate_detail::add_scaled(model.params, grad, -learning_rate);
  }
  report.epochs_run = epochs;
  double final_mse = 0.0;
  for (const auto& s : normalized) {
    const double r = forward(model, s.graph.get()) - s.target;
    final_mse += r * r;
  }
  report.final_train_mse = final_mse / static_cast<double>(normalized.size());
  if (!std::isfinite(report.final_train_mse))
    throw Error(Errc::TrainingDiverged, "final training loss is non-finite");
  return {std::move(model), std::move(report)};
}

inline double predict_physical(const SurrogateModel& model, const CrystalGraph& graph) {
  if (!model.scaler)
    throw Error(Errc::UnfittedScaler, "model for property " + std::string(property_key(model.property)) +
                                          " has no fitted target scaler");
  return model.scaler->denormalize(forward(model, graph));
}

// ---- checkpoint JSON ------------------------------------------------------

inline constexpr int kModelSchemaVersion = 1;

inline nlohmann::json model_to_json(const SurrogateModel& model) {
  nlohmann::json tensors = nlohmann::json::object();
  model.params.for_each([&](const std::string& name, const Matrix& m) {
    tensors[name] = {{"shape", {m.rows, m.cols}}, {"data", m.data}};
  });
  nlohmann::json scaler = nullptr;
  if (model.scaler) scaler = {{"min", model.scaler->min}, {"max", model.scaler->max}};
  return {{"schema_version", kModelSchemaVersion},
          {"property_name", std::string(property_key(model.property))},
          {"config",
           {{"embed_dim", model.config.embed_dim},
            {"n_conv", model.config.n_conv},
            {"hidden_dim", model.config.hidden_dim},
            {"seed", model.config.seed},
            {"edge_dim", model.config.edge_dim}}},
          {"target_scaler", scaler},
          {"tensors", tensors}};
}

inline SurrogateModel model_from_json(const nlohmann::json& j) {
  try {
    if (!j.is_object() || !j.contains("schema_version") || j.at("schema_version") != kModelSchemaVersion)
      throw Error(Errc::SchemaVersionMismatch, "expected model schema_version " + std::to_string(kModelSchemaVersion));
    ModelConfig config;
    const auto& c = j.at("config");
    config.embed_dim = c.at("embed_dim").get<int>();
    config.n_conv = c.at("n_conv").get<int>();
    config.hidden_dim = c.at("hidden_dim").get<int>();
    config.seed = c.at("seed").get<std::uint64_t>();
    config.edge_dim = c.at("edge_dim").get<int>();
    SurrogateModel model = init_model(config, property_from_key(j.at("property_name").get<std::string>()));
    const auto& tensors = j.at("tensors");
    model.params.for_each([&](const std::string& name, Matrix& m) {
      if (!tensors.contains(name)) throw Error(Errc::SchemaVersionMismatch, "checkpoint lacks tensor " + name);
      const auto& t = tensors.at(name);
      const auto shape = t.at("shape").get<std::vector<std::size_t>>();
      auto data = t.at("data").get<std::vector<double>>();
      if (shape.size() != 2 || shape[0] != m.rows || shape[1] != m.cols || data.size() != m.size())
        throw Error(Errc::ShapeMismatch, "tensor " + name + " does not match the checkpoint config");
      for (double x : data)
        if (!std::isfinite(x)) throw Error(Errc::SchemaVersionMismatch, "tensor " + name + " has non-finite values");
      m.data = std::move(data);
    });
    if (const auto& s = j.at("target_scaler"); !s.is_null()) {
      TargetScaler scaler{s.at("min").get<double>(), s.at("max").get<double>()};
      if (!(scaler.max > scaler.min)) throw Error(Errc::SchemaVersionMismatch, "degenerate target scaler");
      model.scaler = scaler;
    }
    return model;
  } catch (const nlohmann::json::exception& e) {
    throw Error(Errc::SchemaVersionMismatch, std::string("malformed model checkpoint: ") + e.what());
  }
}

inline void save_model(const SurrogateModel& model, const std::string& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(Errc::IoError, "cannot write " + path);
  out << model_to_json(model).dump() << '\n';
  if (!out) throw Error(Errc::IoError, "write failed for " + path);
}

inline SurrogateModel load_model(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(Errc::IoError, "cannot read " + path);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw Error(Errc::IoError, path + ": " + e.what());
  }
  try {
    return model_from_json(j);
  } catch (const Error& e) {
    rethrow_with_context(e, path);
  }
}

}  // namespace crystal_evolve
