// Copyright 2026 The ptseg Authors
// SPDX-License-Identifier: Apache-2.0

#include "ptseg/phantom.hpp"

#include <cmath>
#include <numbers>

#include <json.hpp>

#include "ptseg/fileio.hpp"

namespace ptseg {

void PhantomSpec::validate() const {
  for (int a = 0; a < 3; ++a) {
    if (dims[a] < 1) fail(ErrorCode::kInvalidArgument, "phantom dims must be >= 1");
    if (!(spacing[a] > 0.0)) fail(ErrorCode::kInvalidArgument, "phantom spacing must be > 0");
    if (!(semi_axes[a] > 0.0)) fail(ErrorCode::kInvalidArgument, "phantom semi-axes must be > 0");
  }
  double prev = 0.0;
  for (double az : azimuths) {
    if (!(az > prev && az < 2.0 * std::numbers::pi))
      fail(ErrorCode::kInvalidArgument, "azimuths must increase strictly within (0, 2pi)");
    prev = az;
  }
  if (!(portal_height > 0.0 && portal_height < 1.0)) fail(ErrorCode::kInvalidArgument, "portal height must be in (0,1)");
  if (!(tube_radius >= 0.0)) fail(ErrorCode::kInvalidArgument, "tube radius must be >= 0");
  if (!(noise_sigma >= 0.0)) fail(ErrorCode::kInvalidArgument, "noise sigma must be >= 0");
}

VolumeGeometry PhantomSpec::geometry() const {
  VolumeGeometry g;
  g.dims = dims;
  g.spacing = spacing;
  return g;
}

namespace {

// Distance from (x, y) to the vertical half-plane at azimuth `az` whose
// edge is the z axis.
double half_plane_distance(double x, double y, double az) {
  const double along = x * std::cos(az) + y * std::sin(az);
  if (along < 0.0) return std::hypot(x, y);
  return std::abs(-x * std::sin(az) + y * std::cos(az));
}

}  // namespace

Phantom generate(const PhantomSpec& spec) {
  spec.validate();
  const VolumeGeometry g = spec.geometry();
  Phantom p{Volume::zeros(g, VolumeKind::kIntensity), Volume::zeros(g, VolumeKind::kMask),
            Volume::zeros(g, VolumeKind::kLabel)};
  Vec3 center;
  for (int a = 0; a < 3; ++a) center[a] = spec.spacing[a] * static_cast<double>(spec.dims[a] - 1) / 2.0;
  const double z_portal = center[2] - spec.semi_axes[2] + 2.0 * spec.semi_axes[2] * spec.portal_height;
  Rng rng(derive_seed(spec.seed, "phantom/noise"));

  for (int64_t i = 0; i < g.voxel_count(); ++i) {
    const Index3 v = g.voxel_of(i);
    double d[3], r2 = 0.0;
    for (int a = 0; a < 3; ++a) {
      d[a] = spec.spacing[a] * static_cast<double>(v[a]) - center[a];
      r2 += (d[a] / spec.semi_axes[a]) * (d[a] / spec.semi_axes[a]);
    }
    if (r2 > 1.0) continue;
    double az = std::atan2(d[1], d[0]);
    if (az < 0.0) az += 2.0 * std::numbers::pi;
    int sector = 0;
    while (sector < 3 && az >= spec.azimuths[sector]) ++sector;
    const bool superior = d[2] + center[2] >= z_portal;
    const size_t k = static_cast<size_t>(i);
    p.mask.values[k] = 1.0f;
    p.labels.values[k] = static_cast<float>(superior ? kSuperiorSegments[sector] : kInferiorSegments[sector]);

    bool vessel = std::abs(d[2] + center[2] - z_portal) < spec.tube_radius;
    for (double vein : spec.azimuths) vessel = vessel || half_plane_distance(d[0], d[1], vein) < spec.tube_radius;
    float hu = vessel ? kVesselHu : kParenchymaHu;
    if (spec.noise_sigma > 0.0) hu += static_cast<float>(spec.noise_sigma * rng.normal());
    p.intensity.values[k] = hu;
  }
  return p;
}

PhantomSpec jitter_spec(const PhantomSpec& base, const PhantomJitter& jitter, uint64_t seed) {
  PhantomSpec s = base;
  Rng rng(seed);
  for (auto& az : s.azimuths) az += jitter.azimuth * rng.uniform(-1.0, 1.0);
  s.portal_height += jitter.height * rng.uniform(-1.0, 1.0);
  for (auto& a : s.semi_axes) a *= 1.0 + jitter.axes * rng.uniform(-1.0, 1.0);
  if (jitter.reseed_noise) s.seed = derive_seed(seed, "noise");
  s.validate();
  return s;
}

SplitSizes split_sizes(size_t n) {
  SplitSizes s;
  s.val = static_cast<size_t>(std::lround(static_cast<double>(n) * 3.0 / 20.0));
  s.test = static_cast<size_t>(std::lround(static_cast<double>(n) * 7.0 / 20.0));
  if (s.val + s.test > n) s.test = n - s.val;
  s.train = n - s.val - s.test;
  return s;
}

std::vector<DatasetCase> make_dataset(size_t n_cases, const PhantomSpec& base, const PhantomJitter& jitter,
                                      uint64_t seed, const std::filesystem::path& out) {
  if (n_cases < 1) fail(ErrorCode::kInvalidArgument, "need at least one case");
  base.validate();
  const SplitSizes split = split_sizes(n_cases);
  std::vector<DatasetCase> cases;
  nlohmann::json list = nlohmann::json::array();
  for (size_t i = 0; i < n_cases; ++i) {
    char id[32];
    std::snprintf(id, sizeof id, "case_%03zu", i);
    DatasetCase c;
    c.id = id;
    c.split = i < split.train ? "train" : i < split.train + split.val ? "val" : "test";
    c.spec = jitter_spec(base, jitter, derive_seed(seed, std::string("phantom/") + id));
    const Phantom p = generate(c.spec);
    write_volume(p.intensity, out / c.id / "image");
    write_volume(p.mask, out / c.id / "mask");
    write_volume(p.labels, out / c.id / "label");
    list.push_back({{"id", c.id},
                    {"split", c.split},
                    {"azimuths", c.spec.azimuths},
                    {"portal_height", c.spec.portal_height},
                    {"semi_axes", c.spec.semi_axes},
                    {"seed", c.spec.seed}});
    cases.push_back(std::move(c));
  }
  nlohmann::json manifest{{"seed", seed},
                          {"split", {{"train", split.train}, {"val", split.val}, {"test", split.test}}},
                          {"cases", list}};
  write_file_atomic(out / "manifest.json", manifest.dump(2) + "\n");
  return cases;
}

}  // namespace ptseg
