// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <numeric>

#include "support.hpp"

namespace ce = crystal_evolve;
using namespace testing_support;

TEST(InitModel, SameSeedIsBitIdentical) {
  const auto a = ce::init_model(small_model(42), ce::Property::FE);
  const auto b = ce::init_model(small_model(42), ce::Property::FE);
  EXPECT_EQ(a.params, b.params);
  const auto c = ce::init_model(small_model(43), ce::Property::FE);
  EXPECT_NE(a.params, c.params);
}

TEST(InitModel, RejectsInvalidConfig) {
  auto mc = small_model(1);
  mc.embed_dim = 0;
  EXPECT_THROW(ce::init_model(mc, ce::Property::V), ce::Error);
  mc = small_model(1);
  mc.n_conv = 0;
  EXPECT_THROW(ce::init_model(mc, ce::Property::V), ce::Error);
}

TEST(InitModel, WeightsWithinFanInBounds) {
  const auto m = ce::init_model(small_model(9, 5, 2, 3), ce::Property::dE);
  const double z = 2 * 5 + 41;
  auto check = [](const ce::Matrix& t, double fan_in) {
    for (double x : t.data) EXPECT_LE(std::abs(x), 1.0 / std::sqrt(fan_in));
  };
  check(m.params.embedding, 100);
  for (const auto& l : m.params.conv) {
    check(l.gate_w, z);
    check(l.core_b, z);
  }
  check(m.params.hidden_w, 5);
  check(m.params.out_w, 3);
  EXPECT_EQ(m.params.conv[0].gate_w.rows, 51u);
  EXPECT_EQ(m.params.conv[0].gate_w.cols, 5u);
}

TEST(Forward, PermutationInvariantExhaustive) {
  ce::Rng rng(77);
  const auto model = ce::init_model(small_model(5, 6, 3, 5), ce::Property::FE);
  int checked = 0;
  while (checked < 6) {
    auto s = random_structure(rng, 5);
    if (s.sites.size() < 3) continue;
    const auto g = ce::build_graph(s, ce::GraphConfig{});
    const double y = ce::forward(model, g);
    std::vector<int> perm(g.node_count());
    std::iota(perm.begin(), perm.end(), 0);
    do {
      EXPECT_NEAR(ce::forward(model, permute_graph(g, perm)), y, 1e-9);
    } while (std::next_permutation(perm.begin(), perm.end()));
    ++checked;
  }
}

TEST(Forward, ZeroHeadGivesOutputBias) {
  auto model = ce::init_model(small_model(3), ce::Property::V);
  model.params.out_w.set_zero();
  model.params.out_b.data[0] = 0.3125;
  for (const auto& g : random_graphs(8, 5)) EXPECT_EQ(ce::forward(model, g), 0.3125);
}

TEST(Forward, ShapeMismatch) {
  const auto model = ce::init_model(small_model(3), ce::Property::V);
  ce::GraphConfig narrow;
  narrow.gaussian_max = 4.0;
  const auto g = random_graphs(4, 1, 3, narrow).front();
  ASSERT_EQ(g.edge_features.cols, 21u);
  try {
    ce::forward(model, g);
    FAIL();
  } catch (const ce::Error& e) {
    EXPECT_EQ(e.code(), ce::Errc::ShapeMismatch);
  }
}

TEST(Gradients, RandomCoordinatesMatchCentralDifferences) {
  const auto graphs = random_graphs(101, 5);
  ce::Rng rng(102);
  for (std::size_t k = 0; k < graphs.size(); ++k) {
    const auto model = ce::init_model(small_model(200 + k, 4, 2, 4), ce::Property::FE);
    const std::vector<ce::TrainingSample> batch = {{graphs[k], rng.uniform()}};
    const std::size_t n = model.params.parameter_count();
    std::vector<std::size_t> coords;
    for (int c = 0; c < 10; ++c) coords.push_back(rng.index(n));
    const auto r = check_gradients(model, batch, coords);
    EXPECT_LT(r.worst_ratio, 1.0) << "graph " << k << " worst relative error " << r.worst_rel;
  }
}

TEST(Gradients, EveryCoordinateOnTwoSampleBatch) {
  const auto graphs = random_graphs(103, 2, 3);
  const auto model = ce::init_model(small_model(7, 3, 2, 3), ce::Property::dE);
  const std::vector<ce::TrainingSample> batch = {{graphs[0], 0.2}, {graphs[1], 0.9}};
  std::vector<std::size_t> coords(model.params.parameter_count());
  std::iota(coords.begin(), coords.end(), std::size_t{0});
  const auto r = check_gradients(model, batch, coords);
  EXPECT_EQ(r.checked, static_cast<int>(coords.size()));
  EXPECT_LT(r.worst_ratio, 1.0) << "worst relative error " << r.worst_rel;
}

TEST(Loss, PerfectFitIsStationary) {
  const auto graphs = random_graphs(104, 3);
  const auto model = ce::init_model(small_model(8), ce::Property::FE);
  std::vector<ce::TrainingSample> batch;
  for (const auto& g : graphs) batch.push_back({g, ce::forward(model, g)});
  auto [mse, grad] = ce::loss_and_gradients(model, batch);
  EXPECT_EQ(mse, 0.0);
  grad.for_each([](const std::string& name, const ce::Matrix& m) {
    for (double x : m.data) EXPECT_EQ(x, 0.0) << name;
  });
}

TEST(Loss, SingleSampleIsSquaredResidual) {
  const auto g = random_graphs(105, 1).front();
  const auto model = ce::init_model(small_model(8), ce::Property::FE);
  const double r = ce::forward(model, g) - 0.75;
  const std::vector<ce::TrainingSample> batch = {{g, 0.75}};
  EXPECT_DOUBLE_EQ(ce::loss_and_gradients(model, batch).mse, r * r);
}

TEST(Loss, EmptyBatch) {
  const auto model = ce::init_model(small_model(8), ce::Property::FE);
  try {
    ce::loss_and_gradients(model, {});
    FAIL();
  } catch (const ce::Error& e) {
    EXPECT_EQ(e.code(), ce::Errc::EmptyBatch);
  }
}

TEST(Loss, IndependentOfWorkerCount) {
  const auto graphs = random_graphs(106, 6);
  const auto model = ce::init_model(small_model(8), ce::Property::FE);
  std::vector<ce::TrainingSample> batch;
  for (const auto& g : graphs) batch.push_back({g, 0.5});
  ::setenv("CRYSTAL_EVOLVE_THREADS", "1", 1);
  const auto serial = ce::loss_and_gradients(model, batch);
  ::setenv("CRYSTAL_EVOLVE_THREADS", "4", 1);
  const auto parallel = ce::loss_and_gradients(model, batch);
  ::unsetenv("CRYSTAL_EVOLVE_THREADS");
  EXPECT_EQ(serial.mse, parallel.mse);
  EXPECT_EQ(serial.gradients, parallel.gradients);
}

TEST(Train, MonotoneAtSmallLearningRate) {
  const auto samples = toy_set().samples(ce::Property::FE);
  const auto model = ce::init_model(small_model(7, 8, 1, 8), ce::Property::FE);
  const auto result = ce::train(model, samples, 50, 1e-3);
  const auto& h = result.report.loss_history;
  ASSERT_EQ(h.size(), 50u);
  EXPECT_EQ(result.report.epochs_run, 50);
  for (std::size_t k = 1; k < h.size(); ++k) EXPECT_LE(h[k], h[k - 1]) << "epoch " << k;
}

TEST(Train, Deterministic) {
  const auto samples = toy_set().samples(ce::Property::V);
  const auto model = ce::init_model(small_model(7, 8, 1, 8), ce::Property::V);
  const auto a = ce::train(model, samples, 40, 0.02);
  const auto b = ce::train(model, samples, 40, 0.02);
  EXPECT_EQ(a.report.loss_history, b.report.loss_history);
  EXPECT_EQ(a.model.params, b.model.params);
  EXPECT_EQ(a.model.scaler, b.model.scaler);
}

TEST(Train, ThreeEntryOverfit) {
  for (ce::Property p : ce::kAllProperties) {
    const auto samples = toy_set().samples(p, 3);
    const auto model = ce::init_model(small_model(7, 8, 1, 8), p);
    const auto result = ce::train(model, samples, 2000, 0.05);
    EXPECT_LT(result.report.final_train_mse, 1e-3) << ce::property_key(p);
  }
}

TEST(Train, ErrorCases) {
  const auto& set = toy_set();
  const auto model = ce::init_model(small_model(7, 8, 1, 8), ce::Property::FE);
  try {
    ce::train(model, {}, 10, 0.01);
    FAIL();
  } catch (const ce::Error& e) {
    EXPECT_EQ(e.code(), ce::Errc::EmptyDataset);
  }
  const std::vector<ce::TrainingSample> flat = {{set.graphs[0], 3.0}, {set.graphs[1], 3.0}};
  try {
    ce::train(model, flat, 10, 0.01);
    FAIL();
  } catch (const ce::Error& e) {
    EXPECT_EQ(e.code(), ce::Errc::DegenerateLabels);
  }
}

TEST(Train, ScalerFromLabels) {
  const auto samples = toy_set().samples(ce::Property::FE);
  double lo = 1e300, hi = -1e300;
  for (const auto& s : samples) {
    lo = std::min(lo, s.target);
    hi = std::max(hi, s.target);
  }
  const auto result = ce::train(ce::init_model(small_model(7, 8, 1, 8), ce::Property::FE), samples, 1, 0.01);
  ASSERT_TRUE(result.model.scaler);
  EXPECT_EQ(result.model.scaler->min, lo);
  EXPECT_EQ(result.model.scaler->max, hi);
}

TEST(PredictPhysical, AffineMap) {
  const auto g = random_graphs(107, 1).front();
  auto m = ce::init_model(small_model(1), ce::Property::FE);
  m.params.out_w.set_zero();
  m.scaler = ce::TargetScaler{40.0, 100.0};
  m.params.out_b.data[0] = 0.0;
  EXPECT_EQ(ce::predict_physical(m, g), 40.0);
  m.params.out_b.data[0] = 1.0;
  EXPECT_EQ(ce::predict_physical(m, g), 100.0);
  m.params.out_b.data[0] = 0.5;
  EXPECT_EQ(ce::predict_physical(m, g), 70.0);
  m.params.out_b.data[0] = 1.5;
  EXPECT_EQ(ce::predict_physical(m, g), 130.0);
}

TEST(PredictPhysical, Unfitted) {
  const auto g = random_graphs(108, 1).front();
  const auto m = ce::init_model(small_model(1), ce::Property::FE);
  try {
    ce::predict_physical(m, g);
    FAIL();
  } catch (const ce::Error& e) {
    EXPECT_EQ(e.code(), ce::Errc::UnfittedScaler);
  }
}

TEST(Checkpoint, SaveLoadRoundTrip) {
  const auto dir = scratch_dir("checkpoint");
  const auto samples = toy_set().samples(ce::Property::dE);
  const auto trained = ce::train(ce::init_model(small_model(4, 8, 2, 8), ce::Property::dE), samples, 20, 0.01).model;
  const std::string path = (dir / "de.json").string();
  ce::save_model(trained, path);
  const auto loaded = ce::load_model(path);
  EXPECT_EQ(loaded.params, trained.params);
  EXPECT_EQ(loaded.config, trained.config);
  EXPECT_EQ(loaded.property, ce::Property::dE);
  EXPECT_EQ(loaded.scaler, trained.scaler);
  for (const auto& g : random_graphs(109, 5, 4, toy_graph()))
    EXPECT_EQ(ce::predict_physical(loaded, g), ce::predict_physical(trained, g));

  const auto j = nlohmann::json::parse(std::ifstream(path));
  EXPECT_EQ(j.at("schema_version"), 1);
  EXPECT_EQ(j.at("property_name"), "de");
  EXPECT_EQ(j.at("tensors").at("embedding").at("shape"), nlohmann::json({100, 8}));
}

TEST(Checkpoint, CorruptedFilesAreRejected) {
  const auto dir = scratch_dir("checkpoint_bad");
  const auto model = ce::init_model(small_model(4), ce::Property::FE);
  const std::string path = (dir / "m.json").string();
  ce::save_model(model, path);
  std::string text;
  {
    std::ifstream in(path);
    text.assign(std::istreambuf_iterator<char>(in), {});
  }
  std::ofstream(dir / "truncated.json") << text.substr(0, text.size() / 2);
  EXPECT_THROW(ce::load_model((dir / "truncated.json").string()), ce::Error);

  auto j = nlohmann::json::parse(text);
  j["schema_version"] = 2;
  std::ofstream(dir / "v2.json") << j.dump();
  try {
    ce::load_model((dir / "v2.json").string());
    FAIL();
  } catch (const ce::Error& e) {
    EXPECT_EQ(e.code(), ce::Errc::SchemaVersionMismatch);
  }

  j = nlohmann::json::parse(text);
  j["tensors"]["head.out_w"]["data"].push_back(1.0);
  std::ofstream(dir / "shape.json") << j.dump();
  EXPECT_THROW(ce::load_model((dir / "shape.json").string()), ce::Error);

  try {
    ce::load_model((dir / "absent.json").string());
    FAIL();
  } catch (const ce::Error& e) {
    EXPECT_EQ(e.code(), ce::Errc::IoError);
  }
}

TEST(Checkpoint, DifferentBasisSizeFailsAtForward) {
  const auto dir = scratch_dir("checkpoint_basis");
  auto mc = small_model(4);
  mc.edge_dim = 21;
  auto model = ce::init_model(mc, ce::Property::FE);
  model.scaler = ce::TargetScaler{0, 1};
  ce::save_model(model, (dir / "g21.json").string());
  const auto loaded = ce::load_model((dir / "g21.json").string());
  const auto g = random_graphs(110, 1).front();
  try {
    ce::predict_physical(loaded, g);
    FAIL();
  } catch (const ce::Error& e) {
    EXPECT_EQ(e.code(), ce::Errc::ShapeMismatch);
  }
}
