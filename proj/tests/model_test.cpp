// Copyright 2026 The ptseg Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>

#include "ptseg/gradcheck.hpp"
#include "ptseg/model.hpp"

namespace ptseg {
namespace {

PointCloud random_cloud(size_t n, uint64_t seed) {
  Rng rng(seed);
  PointCloud p;
  p.channels = 1;
  for (size_t i = 0; i < n; ++i) {
    p.coords.push_back({rng.uniform(), rng.uniform(), rng.uniform()});
    p.feats.push_back(static_cast<float>(rng.uniform()));
    p.labels.push_back(static_cast<int>(rng.below(kNumClasses)));
  }
  return p;
}

ModelConfig tiny_config(char ablation = 'd') {
  ModelConfig c = ModelConfig::desk();
  c.grid_size_level1 = 8;
  c.radius_level1 = 0.2;
  c.channels = {4, 5, 6, 7};
  c.head = {6, 8};
  c.max_neighbors = 6;
  return ModelConfig::with_ablation(c, ablation);
}

LevelData single_level(const std::vector<Vec3>& coords, const std::vector<std::vector<uint32_t>>& lists,
                       const std::vector<Vec3>& prev_coords) {
  LevelData level;
  level.coords = coords;
  for (size_t q = 0; q < lists.size(); ++q) {
    for (uint32_t id : lists[q]) {
      level.neighbors.ids.push_back(id);
      level.neighbor_offsets.push_back(
          {prev_coords[id][0] - coords[q][0], prev_coords[id][1] - coords[q][1], prev_coords[id][2] - coords[q][2]});
    }
    level.neighbors.start.push_back(static_cast<uint32_t>(level.neighbors.ids.size()));
  }
  return level;
}

TEST(PointAggregate, SelfNeighborIsPointwiseMlp) {
  Rng rng(3);
  std::vector<Vec3> coords = {{0.1, 0.2, 0.3}, {0.5, 0.5, 0.5}, {0.9, 0.1, 0.4}};
  LevelData level = single_level(coords, {{0}, {1}, {2}}, coords);
  Matrix<double> prev(3, 2);
  for (auto& v : prev.data) v = rng.uniform(-1, 1);
  Linear<double> edge("e", 5, 4);
  edge.init(rng);
  const Matrix<double> out = point_aggregate(level, prev, edge);
  for (size_t j = 0; j < 3; ++j)
    for (size_t c = 0; c < 4; ++c) {
      double s = edge.bias.value[c];
      for (size_t i = 0; i < 2; ++i) s += edge.weight.value[c * 5 + i] * prev(j, i);
      EXPECT_DOUBLE_EQ(out(j, c), std::max(0.0, s));
    }
}

TEST(PointAggregate, DuplicateNeighborsLeaveOutputUnchanged) {
  Rng rng(4);
  std::vector<Vec3> coords;
  for (int i = 0; i < 5; ++i) coords.push_back({rng.uniform(), rng.uniform(), rng.uniform()});
  Matrix<double> prev(5, 3);
  for (auto& v : prev.data) v = rng.uniform(-1, 1);
  Linear<double> edge("e", 6, 8);
  edge.init(rng);
  const auto a = point_aggregate(single_level(coords, {{0, 1}, {2, 3, 4}}, coords), prev, edge);
  const auto b = point_aggregate(single_level(coords, {{0, 1, 1, 0}, {2, 3, 3, 4, 2}}, coords), prev, edge);
  EXPECT_EQ(a.data, b.data);
}

TEST(PointAggregate, MatchesNaiveLoop) {
  for (uint64_t seed = 0; seed < 5; ++seed) {
    Rng rng(seed);
    const size_t np = 12, nq = 5, cp = 3, c = 7;
    std::vector<Vec3> prev_coords, coords;
    for (size_t i = 0; i < np; ++i) prev_coords.push_back({rng.uniform(), rng.uniform(), rng.uniform()});
    for (size_t i = 0; i < nq; ++i) coords.push_back({rng.uniform(), rng.uniform(), rng.uniform()});
    std::vector<std::vector<uint32_t>> lists(nq);
    for (auto& l : lists)
      for (size_t k = 0, n = 1 + rng.below(5); k < n; ++k) l.push_back(static_cast<uint32_t>(rng.below(np)));
    Matrix<double> prev(np, cp);
    for (auto& v : prev.data) v = rng.uniform(-1, 1);
    Linear<double> edge("e", cp + 3, c);
    edge.init(rng);
    for (auto& b : edge.bias.value) b = rng.uniform(-0.5, 0.5);
    const auto out = point_aggregate(single_level(coords, lists, prev_coords), prev, edge);
    for (size_t j = 0; j < nq; ++j)
      for (size_t ch = 0; ch < c; ++ch) {
        double best = -1.0;
        for (uint32_t n : lists[j]) {
          double in[6];
          for (size_t i = 0; i < cp; ++i) in[i] = prev(n, i);
          for (int a = 0; a < 3; ++a) in[cp + a] = prev_coords[n][a] - coords[j][a];
          double s = edge.bias.value[ch];
          for (size_t i = 0; i < cp + 3; ++i) s += edge.weight.value[ch * (cp + 3) + i] * in[i];
          best = std::max(best, std::max(0.0, s));
        }
        EXPECT_NEAR(out(j, ch), best, 1e-12);
      }
  }
}

TEST(Model, ToyCloudShapeAndFinite) {
  const auto points = random_cloud(16, 1);
  const auto config = tiny_config();
  const auto params = init_params<float>(config, 1);
  const auto h = build_hierarchy(points.coords, config.hierarchy(1));
  const auto logits = forward(points, h, params, config);
  EXPECT_EQ(logits.rows, 16u);
  EXPECT_EQ(logits.cols, 8u);
  for (float v : logits.data) EXPECT_TRUE(std::isfinite(v));
}

TEST(Model, AblationAInvokesNoGridOps) {
  const auto points = random_cloud(64, 2);
  const auto h = build_hierarchy(points.coords, tiny_config().hierarchy(2));
  for (char ab : {'a', 'b', 'c', 'd'}) {
    const auto config = tiny_config(ab);
    auto params = init_params<float>(config, 2);
    op_counters() = {};
    loss_and_grad(points, h, params, config);
    const OpCounters c = op_counters();
    if (ab == 'a') {
      EXPECT_EQ(c.grid_ops(), 0u);
    } else {
      EXPECT_GT(c.voxelize, 0u);
      EXPECT_GT(c.devoxelize, 0u);
      EXPECT_EQ(c.conv3d > 0, ab == 'b' || ab == 'd') << ab;
      EXPECT_EQ(c.graph_reason > 0, ab == 'c' || ab == 'd') << ab;
    }
  }
}

TEST(Model, DisabledComponentsAllocateNothing) {
  for (char ab : {'a', 'b', 'c', 'd'}) {
    const auto config = tiny_config(ab);
    const auto params = init_params<float>(config, 0);
    size_t conv = 0, attention = 0;
    params.for_each([&](const Param<float>& p) {
      if (p.name.find(".embed") != std::string::npos) conv += p.size();
      if (p.name.find(".graph") != std::string::npos) attention += p.size();
    });
    EXPECT_EQ(conv > 0, config.enable_grid_embeddings) << ab;
    EXPECT_EQ(attention > 0, config.enable_graph_reasoning) << ab;
    for (const auto& level : params.levels) {
      EXPECT_EQ(level.embed1.has_value(), config.enable_grid_embeddings);
      EXPECT_EQ(level.attention.has_value(), config.enable_graph_reasoning);
    }
  }
  EXPECT_LT(init_params<float>(tiny_config('a'), 0).parameter_count(),
            init_params<float>(tiny_config('d'), 0).parameter_count());
}

TEST(Model, EndToEndGradientMatchesFiniteDifferences) {
  for (char ab : {'a', 'd'}) {
    const auto points = random_cloud(32, 7);
    const auto config = tiny_config(ab);
    const auto h = build_hierarchy(points.coords, config.hierarchy(7));
    auto params = init_params<double>(config, 7);
    // Move off the zero-offset lattice and the zero-bias point.
    Rng rng(99);
    params.for_each([&](Param<double>& p) {
      for (auto& v : p.value) v += rng.uniform(-0.1, 0.1);
    });
    loss_and_grad(points, h, params, config);
    std::vector<GradSlot> slots;
    std::vector<std::vector<double>> analytic;
    params.for_each([&](Param<double>& p) { analytic.push_back(p.grad); });
    size_t i = 0;
    params.for_each([&](Param<double>& p) {
      slots.push_back({p.name, std::span<double>(p.value), std::span<const double>(analytic[i++])});
    });
    auto loss = [&] {
      return static_cast<double>(cross_entropy(forward(points, h, params, config), std::span<const int>(points.labels)));
    };
    GradCheckOptions opt;
    opt.step = 1e-6;
    opt.tol = 1e-3;
    opt.sample = 20;
    opt.seed = 5;
    const auto report = grad_check("model", slots, loss, opt);
    EXPECT_EQ(report.checked, 20u);
    EXPECT_TRUE(report.passed()) << ab << " " << report.worst << " " << report.max_rel_err;
  }
}

TEST(Model, CastRoundTripIsLossless) {
  const auto p = init_params<float>(tiny_config(), 3);
  const auto back = cast_params<float>(cast_params<double>(p));
  std::vector<float> a, b;
  p.for_each([&](const Param<float>& x) { a.insert(a.end(), x.value.begin(), x.value.end()); });
  back.for_each([&](const Param<float>& x) { b.insert(b.end(), x.value.begin(), x.value.end()); });
  EXPECT_EQ(a, b);
}

// Renumber level 0 so that new point i is old point perm[i].
Hierarchy permute_hierarchy(const Hierarchy& h, const std::vector<size_t>& perm) {
  std::vector<uint32_t> inv(perm.size());
  for (size_t i = 0; i < perm.size(); ++i) inv[perm[i]] = static_cast<uint32_t>(i);
  Hierarchy out = h;
  LevelData& l0 = out.levels[0];
  const LevelData& o0 = h.levels[0];
  l0.neighbors = {};
  l0.neighbor_offsets.clear();
  for (size_t i = 0; i < perm.size(); ++i) {
    l0.coords[i] = o0.coords[perm[i]];
    l0.indices[i] = static_cast<uint32_t>(i);
    l0.input_indices[i] = static_cast<uint32_t>(i);
    const uint32_t q = static_cast<uint32_t>(perm[i]);
    for (uint32_t e = o0.neighbors.start[q]; e < o0.neighbors.start[q + 1]; ++e) {
      l0.neighbors.ids.push_back(inv[o0.neighbors.ids[e]]);
      l0.neighbor_offsets.push_back(o0.neighbor_offsets[e]);
    }
    l0.neighbors.start.push_back(static_cast<uint32_t>(l0.neighbors.ids.size()));
    l0.neighbors.fallback.push_back(o0.neighbors.fallback[q]);
  }
  LevelData& l1 = out.levels[1];
  for (auto& id : l1.indices) id = inv[id];
  for (auto& id : l1.neighbors.ids) id = inv[id];
  for (size_t l = 1; l < out.levels.size(); ++l)
    for (auto& id : out.levels[l].input_indices) id = inv[id];
  return out;
}

TEST(Model, PermutationEquivariance) {
  const auto points = random_cloud(48, 11);
  const auto config = tiny_config();
  const auto h = build_hierarchy(points.coords, config.hierarchy(11));
  const auto params = init_params<double>(config, 11);
  std::vector<size_t> perm(points.size());
  for (size_t i = 0; i < perm.size(); ++i) perm[i] = i;
  Rng rng(12);
  for (size_t i = perm.size() - 1; i > 0; --i) std::swap(perm[i], perm[rng.below(i + 1)]);
  const auto a = forward(points, h, params, config);
  const auto b = forward(points.select(perm), permute_hierarchy(h, perm), params, config);
  for (size_t i = 0; i < perm.size(); ++i)
    for (size_t c = 0; c < 8; ++c) EXPECT_NEAR(b(i, c), a(perm[i], c), 1e-9);
}

Volume toy_volume(VolumeKind kind, const Vec3& origin) {
  VolumeGeometry g;
  g.dims = {6, 5, 4};
  g.spacing = {1.0, 0.8, 2.0};
  g.origin = origin;
  return Volume::zeros(g, kind);
}

TEST(Model, TranslationLeavesLogitsUnchanged) {
  auto build = [](const Vec3& origin) {
    Volume img = toy_volume(VolumeKind::kIntensity, origin);
    Volume mask = toy_volume(VolumeKind::kMask, origin);
    Rng rng(5);
    for (size_t i = 0; i < img.values.size(); ++i) {
      img.values[i] = static_cast<float>(rng.uniform(-100, 300));
      mask.values[i] = rng.uniform() < 0.7 ? 1.0f : 0.0f;
    }
    return extract_liver_points(window_hu(img), mask);
  };
  const auto a = build({0, 0, 0});
  const auto b = build({-37.5, 12.25, 400.0});
  const auto config = tiny_config();
  const auto params = init_params<float>(config, 4);
  const auto la = forward(a, build_hierarchy(a.coords, config.hierarchy(4)), params, config);
  const auto lb = forward(b, build_hierarchy(b.coords, config.hierarchy(4)), params, config);
  EXPECT_EQ(la.data, lb.data);
}

TEST(Model, ArgmaxTieBreaksLow) {
  Matrix<float> logits(2, 8);
  logits(0, 6) = 3.0f;
  logits(1, 2) = 1.0f;
  logits(1, 5) = 1.0f;
  EXPECT_EQ(argmax_labels(logits), (std::vector<int>{6, 2}));
}

TEST(Model, LabelsToVolumeRoundTrip) {
  Volume img = toy_volume(VolumeKind::kIntensity, {1, 2, 3});
  Volume mask = toy_volume(VolumeKind::kMask, {1, 2, 3});
  Volume labels = toy_volume(VolumeKind::kLabel, {1, 2, 3});
  Rng rng(8);
  for (size_t i = 0; i < img.values.size(); ++i) {
    labels.values[i] = static_cast<float>(rng.below(9));
    mask.values[i] = labels.values[i] > 0 ? 1.0f : 0.0f;
  }
  const auto points = extract_liver_points(img, mask, &labels);
  const Volume out = labels_to_volume(points, points.labels, labels.geometry);
  EXPECT_EQ(out.values, labels.values);
}

TEST(Model, InferCaseLabelsEveryPoint) {
  const auto points = random_cloud(200, 9);
  const auto config = tiny_config();
  const auto params = init_params<float>(config, 9);
  const auto a = infer_case(points, params, config, 0.25, 1);
  ASSERT_EQ(a.size(), 200u);
  for (int l : a) EXPECT_TRUE(l >= 0 && l < 8);
  EXPECT_EQ(a, infer_case(points, params, config, 0.25, 1));
}

TEST(Model, MismatchedHierarchyIsConfigError) {
  const auto points = random_cloud(32, 1);
  auto config = tiny_config();
  const auto h = build_hierarchy(points.coords, config.hierarchy(1));
  const auto params = init_params<float>(config, 1);
  try {
    forward(random_cloud(20, 2), h, params, config);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kConfig);
  }
  config.grid_size_level1 = 16;
  EXPECT_THROW(forward(points, h, params, config), Error);
}

TEST(Model, ConfigValidation) {
  ModelConfig c;
  c.head = {64, 7};
  EXPECT_THROW(c.validate(), Error);
  EXPECT_EQ(ModelConfig::msd().grid_size_level1, 64);
  EXPECT_DOUBLE_EQ(ModelConfig::msd().radius_level1, 1.0 / 128.0);
  EXPECT_EQ(ModelConfig::with_ablation(ModelConfig::desk(), 'c').ablation(), 'c');
  EXPECT_THROW(ModelConfig::with_ablation(ModelConfig::desk(), 'e'), Error);
}

}  // namespace
}  // namespace ptseg
