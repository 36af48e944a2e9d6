// Copyright 2026 The ptseg Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cmath>

#include "oracles.hpp"
#include "ptseg/metrics.hpp"

namespace ptseg {
namespace {

struct Case {
  Volume pred, gt, mask;
};

Case empty_case(Index3 dims, Vec3 spacing = {1, 1, 1}) {
  VolumeGeometry g;
  g.dims = dims;
  g.spacing = spacing;
  return {Volume::zeros(g, VolumeKind::kLabel), Volume::zeros(g, VolumeKind::kLabel), Volume::zeros(g, VolumeKind::kMask)};
}

// Blobby random labels: a few random boxes per class over a random mask.
Case random_case(uint64_t seed, oracle::LabelGrid* grid) {
  Rng rng(seed);
  const Index3 dims{2 + static_cast<int64_t>(rng.below(15)), 2 + static_cast<int64_t>(rng.below(15)),
                    2 + static_cast<int64_t>(rng.below(15))};
  const Vec3 spacing{rng.uniform(0.5, 2.0), rng.uniform(0.5, 2.0), rng.uniform(0.5, 5.0)};
  Case c = empty_case(dims, spacing);
  auto paint = [&](Volume& v) {
    for (int b = 0; b < 12; ++b) {
      const float label = static_cast<float>(1 + rng.below(8));
      Index3 lo, hi;
      for (int a = 0; a < 3; ++a) {
        lo[a] = static_cast<int64_t>(rng.below(static_cast<uint64_t>(dims[a])));
        hi[a] = std::min<int64_t>(dims[a], lo[a] + 1 + static_cast<int64_t>(rng.below(6)));
      }
      for (int64_t z = lo[2]; z < hi[2]; ++z)
        for (int64_t y = lo[1]; y < hi[1]; ++y)
          for (int64_t x = lo[0]; x < hi[0]; ++x) v.at({x, y, z}) = label;
    }
  };
  paint(c.gt);
  paint(c.pred);
  for (auto& m : c.mask.values) m = rng.uniform() < 0.9 ? 1.0f : 0.0f;
  grid->d = {static_cast<int>(dims[0]), static_cast<int>(dims[1]), static_cast<int>(dims[2])};
  grid->s = spacing;
  for (size_t i = 0; i < c.gt.values.size(); ++i) {
    grid->pred.push_back(static_cast<int>(c.pred.values[i]));
    grid->gt.push_back(static_cast<int>(c.gt.values[i]));
    grid->mask.push_back(static_cast<int>(c.mask.values[i]));
  }
  return c;
}

TEST(Metrics, DiceThreeOfFourOverlap) {
  Case c = empty_case({4, 2, 1});
  std::fill(c.mask.values.begin(), c.mask.values.end(), 1.0f);
  for (int i : {0, 1, 2, 3}) c.gt.values[i] = 3;
  for (int i : {1, 2, 3, 4}) c.pred.values[i] = 3;
  EXPECT_DOUBLE_EQ(dice(c.pred, c.gt, c.mask, 3), 0.75);
  EXPECT_DOUBLE_EQ(dice(c.pred, c.gt, c.mask, 5), 1.0);
}

TEST(Metrics, DiceDisjointIsZeroAndMaskRestricts) {
  Case c = empty_case({4, 1, 1});
  std::fill(c.mask.values.begin(), c.mask.values.end(), 1.0f);
  c.gt.values[0] = 1;
  c.pred.values[3] = 1;
  EXPECT_DOUBLE_EQ(dice(c.pred, c.gt, c.mask, 1), 0.0);
  c.mask.values[3] = 0;
  EXPECT_DOUBLE_EQ(dice(c.pred, c.gt, c.mask, 1), 0.0);
  c.pred.values[0] = 1;
  EXPECT_DOUBLE_EQ(dice(c.pred, c.gt, c.mask, 1), 1.0);
}

TEST(Metrics, SingleVoxelOffset) {
  Case c = empty_case({5, 5, 5});
  std::fill(c.mask.values.begin(), c.mask.values.end(), 1.0f);
  c.gt.at({2, 2, 2}) = 4;
  c.pred.at({3, 2, 2}) = 4;
  EXPECT_DOUBLE_EQ(*asd(c.pred, c.gt, c.mask, 4), 1.0);
}

TEST(Metrics, AnisotropicZOffsetIsFiveMm) {
  Case c = empty_case({5, 5, 5}, {1, 1, 5});
  std::fill(c.mask.values.begin(), c.mask.values.end(), 1.0f);
  c.gt.at({2, 2, 2}) = 4;
  c.pred.at({2, 2, 3}) = 4;
  EXPECT_DOUBLE_EQ(*asd(c.pred, c.gt, c.mask, 4), 5.0);
}

TEST(Metrics, AsdUndefinedForMissingClass) {
  Case c = empty_case({3, 3, 3});
  std::fill(c.mask.values.begin(), c.mask.values.end(), 1.0f);
  c.gt.at({1, 1, 1}) = 2;
  EXPECT_FALSE(asd(c.pred, c.gt, c.mask, 2).has_value());
  EXPECT_FALSE(asd(c.pred, c.gt, c.mask, 6).has_value());
}

TEST(Metrics, GeometryMismatch) {
  Case c = empty_case({3, 3, 3});
  Case d = empty_case({3, 3, 3}, {1, 1, 2});
  try {
    dice(c.pred, d.gt, c.mask, 1);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kGeometry);
  }
}

TEST(Metrics, PerfectPrediction) {
  oracle::LabelGrid g;
  Case c = random_case(3, &g);
  const auto r = evaluate_case(c.gt, c.gt, c.mask, "x");
  for (const auto& k : r.classes) {
    EXPECT_EQ(k.dice, 1.0);
    if (k.asd) EXPECT_EQ(k.asd->symmetric, 0.0);
  }
  EXPECT_EQ(r.mean_dice, 1.0);
}

TEST(Metrics, AbsentClassExcludedFromAverages) {
  Case c = empty_case({4, 4, 4});
  std::fill(c.mask.values.begin(), c.mask.values.end(), 1.0f);
  for (int i = 0; i < 32; ++i) c.gt.values[i] = c.pred.values[i] = 1;
  for (int i = 32; i < 64; ++i) c.gt.values[i] = 2;
  for (int i = 32; i < 64; ++i) c.pred.values[i] = 3;
  const auto r = evaluate_case(c.pred, c.gt, c.mask);
  EXPECT_TRUE(r.classes[0].in_average);
  EXPECT_FALSE(r.classes[4].in_average);
  EXPECT_EQ(r.classes[4].dice, 1.0);
  EXPECT_DOUBLE_EQ(r.mean_dice, 1.0 / 3.0);
  EXPECT_DOUBLE_EQ(*r.mean_asd, 0.0);
  const auto j = to_json(r);
  EXPECT_TRUE(j["classes"][4]["asd"].is_null());
  EXPECT_FALSE(j["classes"][4]["in_average"].get<bool>());
}

TEST(Metrics, MatchBruteForceExactly) {
  for (uint64_t seed = 0; seed < 20; ++seed) {
    oracle::LabelGrid g;
    Case c = random_case(seed, &g);
    for (int k = 1; k <= 8; ++k) {
      EXPECT_EQ(dice(c.pred, c.gt, c.mask, k), oracle::dice(g, k)) << seed << " " << k;
      const auto a = asd(c.pred, c.gt, c.mask, k);
      const double o = oracle::asd(g, k);
      EXPECT_EQ(a.has_value(), !std::isnan(o));
      if (a) EXPECT_EQ(*a, o) << seed << " " << k;
    }
  }
}

TEST(Metrics, SymmetryAndSpacingScaling) {
  for (uint64_t seed = 0; seed < 5; ++seed) {
    oracle::LabelGrid g;
    Case c = random_case(seed + 100, &g);
    Case s = c;
    for (auto* v : {&s.pred, &s.gt, &s.mask})
      for (auto& x : v->geometry.spacing) x *= 2.0;
    for (int k = 1; k <= 8; ++k) {
      EXPECT_EQ(dice(c.pred, c.gt, c.mask, k), dice(c.gt, c.pred, c.mask, k));
      EXPECT_EQ(dice(c.pred, c.gt, c.mask, k), dice(s.pred, s.gt, s.mask, k));
      const auto a = asd(c.pred, c.gt, c.mask, k), b = asd(c.gt, c.pred, c.mask, k);
      ASSERT_EQ(a.has_value(), b.has_value());
      if (!a) continue;
      EXPECT_NEAR(*a, *b, 1e-12);
      EXPECT_NEAR(*asd(s.pred, s.gt, s.mask, k), 2.0 * *a, 1e-9);
    }
  }
}

TEST(Metrics, JsonRoundTripAndCsv) {
  oracle::LabelGrid g;
  Case c = random_case(9, &g);
  const auto r = evaluate_case(c.pred, c.gt, c.mask, "case_009");
  const auto back = report_from_json(to_json(r));
  EXPECT_EQ(to_json(back).dump(), to_json(r).dump());
  const std::string csv = metrics_table_csv({evaluate_case(c.gt, c.gt, c.mask), evaluate_case(c.gt, c.gt, c.mask)});
  EXPECT_NE(csv.find("\nI,1.000000,0.000000,2,"), std::string::npos) << csv;
  EXPECT_NE(csv.find("\nAvg,1.000000,"), std::string::npos);
}

}  // namespace
}  // namespace ptseg
