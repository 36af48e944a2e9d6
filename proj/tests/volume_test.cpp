// Copyright 2026 The ptseg Authors
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cmath>
#include <cstring>
#include <filesystem>
#include <limits>

#include "ptseg/fileio.hpp"
#include "ptseg/volume.hpp"

namespace ptseg {
namespace {

namespace fs = std::filesystem;

fs::path temp_dir(const std::string& name) {
  const fs::path d = fs::temp_directory_path() / ("ptseg_volume_test_" + name);
  fs::remove_all(d);
  fs::create_directories(d);
  return d;
}

template <class Fn>
ErrorCode code_of(Fn&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  return ErrorCode{};
}

TEST(Window, Endpoints) {
  EXPECT_FLOAT_EQ(window_hu_value(-250.0f), 0.0f);
  EXPECT_FLOAT_EQ(window_hu_value(300.0f), 1.0f);
  EXPECT_FLOAT_EQ(window_hu_value(100.0f), 0.5f);
  EXPECT_FLOAT_EQ(window_hu_value(1e6f), 1.0f);
}

TEST(Window, RangeAndKind) {
  VolumeGeometry g;
  g.dims = {10, 10, 1};
  Volume v = Volume::zeros(g, VolumeKind::kIntensity);
  Rng rng(1);
  for (auto& x : v.values) x = static_cast<float>(rng.uniform(-2000, 3000));
  const Volume w = window_hu(v);
  for (float x : w.values) EXPECT_TRUE(x >= 0.0f && x <= 1.0f);
  // Idempotent once mapped back to HU.
  Volume back = w;
  for (auto& x : back.values) x = x * 400.0f - 100.0f;
  const Volume again = window_hu(back);
  for (size_t i = 0; i < w.values.size(); ++i) EXPECT_NEAR(again.values[i], w.values[i], 1e-6);
  EXPECT_EQ(code_of([&] { window_hu(Volume::zeros(g, VolumeKind::kMask)); }), ErrorCode::kInvalidArgument);
}

TEST(VoxelToPhysical, Examples) {
  VolumeGeometry g;
  g.dims = {5, 5, 5};
  EXPECT_EQ(voxel_to_physical(g, {2, 3, 4}), (Vec3{2, 3, 4}));
  g.spacing = {2, 2, 2};
  g.origin = {10, 0, 0};
  EXPECT_EQ(voxel_to_physical(g, {1, 0, 0}), (Vec3{12, 0, 0}));
  EXPECT_EQ(code_of([&] { voxel_to_physical(g, {5, 0, 0}); }), ErrorCode::kOutOfBounds);
}

TEST(VoxelToPhysical, MatchesHomogeneousAffine) {
  Rng rng(2);
  for (int trial = 0; trial < 20; ++trial) {
    // Random rotation from a normalized quaternion.
    double q[4];
    double n = 0;
    for (auto& x : q) {
      x = rng.normal();
      n += x * x;
    }
    for (auto& x : q) x /= std::sqrt(n);
    const double w = q[0], x = q[1], y = q[2], z = q[3];
    const double r[9] = {1 - 2 * (y * y + z * z), 2 * (x * y - z * w),     2 * (x * z + y * w),
                         2 * (x * y + z * w),     1 - 2 * (x * x + z * z), 2 * (y * z - x * w),
                         2 * (x * z - y * w),     2 * (y * z + x * w),     1 - 2 * (x * x + y * y)};
    VolumeGeometry g;
    g.dims = {7, 8, 9};
    for (int i = 0; i < 9; ++i) g.direction[i] = r[i];
    for (int a = 0; a < 3; ++a) {
      g.spacing[a] = rng.uniform(0.3, 3.0);
      g.origin[a] = rng.uniform(-100, 100);
    }
    // 4x4 matrix [R diag(s) | o; 0 0 0 1] times [i j k 1].
    double m[4][4] = {};
    for (int row = 0; row < 3; ++row) {
      for (int col = 0; col < 3; ++col) m[row][col] = r[row * 3 + col] * g.spacing[col];
      m[row][3] = g.origin[row];
    }
    m[3][3] = 1;
    const Index3 v{static_cast<int64_t>(rng.below(7)), static_cast<int64_t>(rng.below(8)),
                   static_cast<int64_t>(rng.below(9))};
    const double h[4] = {static_cast<double>(v[0]), static_cast<double>(v[1]), static_cast<double>(v[2]), 1.0};
    const Vec3 p = voxel_to_physical(g, v);
    for (int row = 0; row < 3; ++row) {
      double want = 0;
      for (int k = 0; k < 4; ++k) want += m[row][k] * h[k];
      EXPECT_NEAR(p[row], want, 1e-9);
    }
  }
}

TEST(VoxelToPhysical, AdditiveUnderIdentityDirection) {
  VolumeGeometry g;
  g.dims = {10, 10, 10};
  g.spacing = {0.7, 1.3, 2.5};
  g.origin = {3, -4, 5};
  const Vec3 a = voxel_to_physical(g, {1, 2, 3}), b = voxel_to_physical(g, {4, 1, 2}),
             zero = voxel_to_physical(g, {0, 0, 0}), ab = voxel_to_physical(g, {5, 3, 5});
  for (int k = 0; k < 3; ++k) EXPECT_NEAR(a[k] + b[k] - zero[k], ab[k], 1e-12);
}

struct Trio {
  Volume image, mask, labels;
};

Trio make_trio(Index3 dims) {
  VolumeGeometry g;
  g.dims = dims;
  return {Volume::zeros(g, VolumeKind::kIntensity), Volume::zeros(g, VolumeKind::kMask), Volume::zeros(g, VolumeKind::kLabel)};
}

TEST(ExtractLiverPoints, SingleVoxelDegenerateNormalization) {
  Trio t = make_trio({2, 2, 2});
  t.mask.at({1, 0, 1}) = 1;
  t.labels.at({1, 0, 1}) = 4;
  t.image.at({1, 0, 1}) = 100;
  const PointCloud p = extract_liver_points(t.image, t.mask, &t.labels);
  ASSERT_EQ(p.size(), 1u);
  EXPECT_EQ(p.coords[0], (Vec3{0, 0, 0}));
  EXPECT_EQ(p.labels[0], 3);
  EXPECT_FLOAT_EQ(p.feats[0], 0.5f);
}

TEST(ExtractLiverPoints, FullMaskCornersAndCount) {
  Trio t = make_trio({3, 3, 3});
  std::fill(t.mask.values.begin(), t.mask.values.end(), 1.0f);
  const PointCloud p = extract_liver_points(t.image, t.mask);
  ASSERT_EQ(p.size(), 27u);
  EXPECT_EQ(p.coords.front(), (Vec3{0, 0, 0}));
  EXPECT_EQ(p.coords.back(), (Vec3{1, 1, 1}));
  EXPECT_FALSE(p.has_labels());
}

TEST(ExtractLiverPoints, PopcountAndUnitCube) {
  Trio t = make_trio({9, 7, 5});
  t.mask.geometry.spacing = t.image.geometry.spacing = {0.8, 1.1, 2.5};
  Rng rng(4);
  size_t count = 0;
  for (auto& m : t.mask.values) {
    m = rng.uniform() < 0.4 ? 1.0f : 0.0f;
    count += m == 1.0f;
  }
  const PointCloud p = extract_liver_points(t.image, t.mask);
  EXPECT_EQ(p.size(), count);
  for (const auto& c : p.coords)
    for (double x : c) EXPECT_TRUE(x >= 0.0 && x <= 1.0);
}

TEST(ExtractLiverPoints, Errors) {
  Trio t = make_trio({2, 2, 2});
  EXPECT_EQ(code_of([&] { extract_liver_points(t.image, t.mask); }), ErrorCode::kEmptyRegion);
  Trio u = make_trio({2, 2, 3});
  u.mask.values[0] = 1;
  EXPECT_EQ(code_of([&] { extract_liver_points(t.image, u.mask); }), ErrorCode::kGeometry);
  t.mask.values[0] = 1;
  EXPECT_EQ(code_of([&] { extract_liver_points(t.image, t.mask, &t.labels); }), ErrorCode::kLabel);
}

TEST(RawFormat, RoundTripIsBitExact) {
  const fs::path d = temp_dir("raw");
  VolumeGeometry g;
  g.dims = {4, 4, 4};
  g.spacing = {0.5, 0.75, 2.0};
  g.origin = {-1.5, 2.25, 100.0};
  g.direction = {0, 1, 0, 1, 0, 0, 0, 0, -1};
  Volume v = Volume::zeros(g, VolumeKind::kIntensity);
  Rng rng(5);
  for (auto& x : v.values) {
    uint32_t bits;
    do {
      bits = static_cast<uint32_t>(rng.next_u64());
      std::memcpy(&x, &bits, 4);
    } while (!std::isfinite(x));
  }
  v.values[0] = -0.0f;
  v.values[1] = std::numeric_limits<float>::denorm_min();
  write_volume(v, d / "img");
  const Volume back = read_volume(d / "img");
  EXPECT_EQ(std::memcmp(back.values.data(), v.values.data(), v.values.size() * 4), 0);
  EXPECT_TRUE(back.geometry.same_as(g, 0.0));
  EXPECT_EQ(back.kind, VolumeKind::kIntensity);

  Volume labels = Volume::zeros(g, VolumeKind::kLabel);
  for (auto& x : labels.values) x = static_cast<float>(rng.below(9));
  write_volume(labels, d / "lab");
  EXPECT_EQ(read_volume(d / "lab").values, labels.values);
}

TEST(RawFormat, LengthAndFormatErrors) {
  const fs::path d = temp_dir("raw_err");
  VolumeGeometry g;
  g.dims = {2, 2, 2};
  write_volume(Volume::zeros(g, VolumeKind::kIntensity), d / "v");
  write_file_atomic(d / "v.raw", std::string(7, '\0'));
  EXPECT_EQ(code_of([&] { read_volume(d / "v"); }), ErrorCode::kLength);
  write_file_atomic(d / "v.json", "{not json");
  EXPECT_EQ(code_of([&] { read_volume(d / "v"); }), ErrorCode::kFormat);
}

// A NIfTI-1 file assembled byte by byte from the public header layout.
std::string nifti_fixture(int16_t datatype, const std::string& payload, bool sform) {
  std::string h(352, '\0');
  auto put = [&](size_t off, auto value) { std::memcpy(h.data() + off, &value, sizeof value); };
  put(0, int32_t{348});
  put(40, int16_t{3});
  put(42, int16_t{2});
  put(44, int16_t{2});
  put(46, int16_t{2});
  put(48, int16_t{1});
  put(70, datatype);
  put(72, int16_t(datatype == 4 ? 16 : datatype == 2 ? 8 : 32));
  put(80, 1.5f);
  put(84, 2.0f);
  put(88, 3.0f);
  put(108, 352.0f);
  put(112, 0.0f);
  if (sform) {
    put(254, int16_t{1});
    const float rows[3][4] = {{-1.5f, 0, 0, 10}, {0, 2.0f, 0, 20}, {0, 0, 3.0f, 30}};
    for (int r = 0; r < 3; ++r)
      for (int c = 0; c < 4; ++c) put(280 + 16 * r + 4 * c, rows[r][c]);
  }
  std::memcpy(h.data() + 344, "n+1\0", 4);
  return h + payload;
}

TEST(Nifti, Int16FixtureWithPixdim) {
  const fs::path d = temp_dir("nifti");
  std::string payload;
  const int16_t values[8] = {-1000, -1, 0, 1, 42, 300, 1200, 32767};
  payload.append(reinterpret_cast<const char*>(values), sizeof values);
  write_file_atomic(d / "a.nii", nifti_fixture(4, payload, false));
  const Volume v = read_nifti_minimal(d / "a.nii");
  EXPECT_EQ(v.geometry.dims, (Index3{2, 2, 2}));
  EXPECT_EQ(v.geometry.spacing, (Vec3{1.5, 2.0, 3.0}));
  for (int i = 0; i < 8; ++i) EXPECT_EQ(v.values[static_cast<size_t>(i)], values[i]);
}

TEST(Nifti, SformAffine) {
  const fs::path d = temp_dir("nifti_sform");
  std::string payload(8, '\1');
  write_file_atomic(d / "m.nii", nifti_fixture(2, payload, true));
  const Volume v = read_nifti_minimal(d / "m.nii", VolumeKind::kMask);
  EXPECT_EQ(v.geometry.spacing, (Vec3{1.5, 2.0, 3.0}));
  EXPECT_EQ(v.geometry.direction[0], -1.0);
  EXPECT_EQ(v.geometry.origin, (Vec3{10, 20, 30}));
  EXPECT_EQ(voxel_to_physical(v.geometry, {1, 1, 1}), (Vec3{8.5, 22, 33}));
}

TEST(Nifti, Errors) {
  const fs::path d = temp_dir("nifti_err");
  std::string bad = nifti_fixture(4, std::string(16, '\0'), false);
  bad[345] = 'x';
  write_file_atomic(d / "magic.nii", bad);
  EXPECT_EQ(code_of([&] { read_nifti_minimal(d / "magic.nii"); }), ErrorCode::kFormat);
  write_file_atomic(d / "dtype.nii", nifti_fixture(64, std::string(64, '\0'), false));
  EXPECT_EQ(code_of([&] { read_nifti_minimal(d / "dtype.nii"); }), ErrorCode::kFormat);
  write_file_atomic(d / "short.nii", nifti_fixture(4, std::string(10, '\0'), false));
  EXPECT_EQ(code_of([&] { read_nifti_minimal(d / "short.nii"); }), ErrorCode::kLength);
}

TEST(PointFile, RoundTrip) {
  const fs::path d = temp_dir("points");
  Trio t = make_trio({4, 3, 2});
  Rng rng(6);
  for (size_t i = 0; i < t.mask.values.size(); ++i) {
    t.mask.values[i] = i % 3 ? 1.0f : 0.0f;
    t.labels.values[i] = static_cast<float>(1 + rng.below(8));
    t.image.values[i] = static_cast<float>(rng.uniform(-200, 400));
  }
  const PointCloud p = extract_liver_points(t.image, t.mask, &t.labels);
  write_points(p, t.mask.geometry, d / "pts");
  VolumeGeometry g;
  const PointCloud q = read_points(d / "pts", &g);
  EXPECT_EQ(q.coords, p.coords);
  EXPECT_EQ(q.feats, p.feats);
  EXPECT_EQ(q.labels, p.labels);
  EXPECT_EQ(q.source_voxels, p.source_voxels);
  EXPECT_TRUE(g.same_as(t.mask.geometry, 0.0));
}

}  // namespace
}  // namespace ptseg
