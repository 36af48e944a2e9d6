// Copyright 2026 The ptseg Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <algorithm>
#include <filesystem>
#include <set>

#include <json.hpp>

#include "ptseg/fileio.hpp"
#include "ptseg/phantom.hpp"

namespace ptseg {
namespace {

namespace fs = std::filesystem;

bool is_superior(int label) {
  return std::find(kSuperiorSegments.begin(), kSuperiorSegments.end(), label) != kSuperiorSegments.end();
}

TEST(Phantom, PortalPlaneVoxelIsSuperior) {
  PhantomSpec s;
  s.dims = {33, 33, 33};
  s.spacing = {1, 1, 1};
  s.semi_axes = {16, 16, 16};
  s.portal_height = 0.5;  // the plane passes exactly through z index 16
  const Phantom p = generate(s);
  for (int64_t y = 0; y < 33; ++y)
    for (int64_t x = 0; x < 33; ++x) {
      if (p.mask.at({x, y, 16}) == 0.0f) continue;
      EXPECT_TRUE(is_superior(static_cast<int>(p.labels.at({x, y, 16}))));
      if (p.mask.at({x, y, 15}) != 0.0f) EXPECT_FALSE(is_superior(static_cast<int>(p.labels.at({x, y, 15}))));
    }
}

TEST(Phantom, NoiselessWithoutVesselsHasTwoValues) {
  PhantomSpec s;
  s.noise_sigma = 0;
  s.tube_radius = 0;
  const Phantom p = generate(s);
  std::set<float> values(p.intensity.values.begin(), p.intensity.values.end());
  EXPECT_EQ(values, (std::set<float>{0.0f, kParenchymaHu}));
}

TEST(Phantom, VesselBandsAreBright) {
  PhantomSpec s;
  s.noise_sigma = 0;
  const Phantom p = generate(s);
  size_t bright = 0, liver = 0;
  for (size_t i = 0; i < p.mask.values.size(); ++i) {
    liver += p.mask.values[i] != 0.0f;
    bright += p.intensity.values[i] == kVesselHu;
    if (p.mask.values[i] == 0.0f) EXPECT_EQ(p.intensity.values[i], 0.0f);
  }
  EXPECT_GT(bright, 0u);
  EXPECT_LT(bright, liver / 2);
}

TEST(Phantom, LabelsPartitionTheMask) {
  for (uint64_t seed = 0; seed < 5; ++seed) {
    PhantomSpec s = jitter_spec(PhantomSpec{}, PhantomJitter{}, seed);
    const Phantom p = generate(s);
    std::set<int> seen;
    for (size_t i = 0; i < p.mask.values.size(); ++i) {
      const int label = static_cast<int>(p.labels.values[i]);
      if (p.mask.values[i] == 0.0f) {
        EXPECT_EQ(label, 0);
      } else {
        EXPECT_GE(label, 1);
        EXPECT_LE(label, 8);
        seen.insert(label);
      }
    }
    EXPECT_EQ(seen.size(), 8u);
  }
}

TEST(Phantom, SectorOrderFollowsAzimuth) {
  PhantomSpec s;
  s.noise_sigma = 0;
  const Phantom p = generate(s);
  // Sector k holds azimuths past k of the three veins: +x is 0, +y is 1, -x is 2, -y is 3.
  const int64_t cx = 24, cy = 24, up = 20, down = 12;
  EXPECT_EQ(p.labels.at({cx + 10, cy, up}), kSuperiorSegments[0]);
  EXPECT_EQ(p.labels.at({cx, cy + 10, up}), kSuperiorSegments[1]);
  EXPECT_EQ(p.labels.at({cx - 10, cy, up}), kSuperiorSegments[2]);
  EXPECT_EQ(p.labels.at({cx, cy - 10, up}), kSuperiorSegments[3]);
  EXPECT_EQ(p.labels.at({cx + 10, cy, down}), kInferiorSegments[0]);
  EXPECT_EQ(p.labels.at({cx, cy - 10, down}), kInferiorSegments[3]);
}

TEST(Phantom, Validation) {
  PhantomSpec s;
  s.azimuths = {3.0, 1.5, 4.5};
  EXPECT_THROW(generate(s), Error);
  s = PhantomSpec{};
  s.portal_height = 1.0;
  EXPECT_THROW(generate(s), Error);
}

TEST(Phantom, SplitSizes) {
  const SplitSizes s = split_sizes(20);
  EXPECT_EQ(s.train, 10u);
  EXPECT_EQ(s.val, 3u);
  EXPECT_EQ(s.test, 7u);
  for (size_t n = 1; n < 50; ++n) {
    const SplitSizes t = split_sizes(n);
    EXPECT_EQ(t.train + t.val + t.test, n);
  }
}

TEST(Phantom, NoJitterReproducesBase) {
  PhantomSpec base;
  base.seed = 3;
  const PhantomSpec s = jitter_spec(base, PhantomJitter::none(), 99);
  EXPECT_EQ(s.azimuths, base.azimuths);
  EXPECT_EQ(s.portal_height, base.portal_height);
  EXPECT_EQ(s.semi_axes, base.semi_axes);
  EXPECT_EQ(generate(s).intensity.values, generate(base).intensity.values);
}

TEST(Phantom, DatasetIsReproducible) {
  const fs::path root = fs::temp_directory_path() / "ptseg_phantom_test";
  fs::remove_all(root);
  PhantomSpec base;
  base.dims = {16, 16, 12};
  base.semi_axes = {7, 6, 7};
  const auto a = make_dataset(4, base, PhantomJitter{}, 5, root / "a");
  make_dataset(4, base, PhantomJitter{}, 5, root / "b");
  ASSERT_EQ(a.size(), 4u);
  EXPECT_EQ(a[0].split, "train");
  for (const auto& c : a)
    for (const char* part : {"image.raw", "image.json", "mask.raw", "label.raw"})
      EXPECT_EQ(read_file(root / "a" / c.id / part), read_file(root / "b" / c.id / part)) << c.id << part;
  EXPECT_EQ(read_file(root / "a" / "manifest.json"), read_file(root / "b" / "manifest.json"));
  const auto manifest = nlohmann::json::parse(read_file(root / "a" / "manifest.json"));
  EXPECT_EQ(manifest["cases"].size(), 4u);
  // Different seeds give different cases.
  make_dataset(1, base, PhantomJitter{}, 6, root / "c");
  EXPECT_NE(read_file(root / "a" / "case_000" / "image.raw"), read_file(root / "c" / "case_000" / "image.raw"));
}

}  // namespace
}  // namespace ptseg
