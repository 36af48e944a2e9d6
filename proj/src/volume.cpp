// Copyright 2026 The ptseg Authors
// SPDX-License-Identifier: Apache-2.0

#include "ptseg/volume.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace ptseg {

Index3 VolumeGeometry::voxel_of(int64_t linear) const {
  const int64_t x = linear % dims[0];
  const int64_t rest = linear / dims[0];
  return {x, rest % dims[1], rest / dims[1]};
}

bool VolumeGeometry::contains(const Index3& v) const {
  for (int a = 0; a < 3; ++a)
    if (v[a] < 0 || v[a] >= dims[a]) return false;
  return true;
}

void VolumeGeometry::validate() const {
  for (int a = 0; a < 3; ++a) {
    if (!(spacing[a] > 0.0) || !std::isfinite(spacing[a]))
      fail(ErrorCode::kGeometry, "spacing components must be positive");
    if (dims[a] < 1) fail(ErrorCode::kGeometry, "dims components must be >= 1");
  }
  // Columns of the row-major direction matrix must be orthonormal.
  for (int i = 0; i < 3; ++i) {
    for (int j = i; j < 3; ++j) {
      double dot = 0.0;
      for (int r = 0; r < 3; ++r) dot += direction[r * 3 + i] * direction[r * 3 + j];
      const double want = i == j ? 1.0 : 0.0;
      if (std::abs(dot - want) > 1e-6) fail(ErrorCode::kGeometry, "direction is not orthonormal");
    }
  }
}

bool VolumeGeometry::same_as(const VolumeGeometry& other, double tol) const {
  if (dims != other.dims) return false;
  for (int a = 0; a < 3; ++a) {
    if (std::abs(spacing[a] - other.spacing[a]) > tol) return false;
    if (std::abs(origin[a] - other.origin[a]) > tol) return false;
  }
  for (int i = 0; i < 9; ++i)
    if (std::abs(direction[i] - other.direction[i]) > tol) return false;
  return true;
}

std::string to_string(VolumeKind kind) {
  switch (kind) {
    case VolumeKind::kIntensity: return "intensity";
    case VolumeKind::kLabel: return "label";
    case VolumeKind::kMask: return "mask";
  }
  return "intensity";
}

VolumeKind volume_kind_from_string(const std::string& s) {
  if (s == "intensity") return VolumeKind::kIntensity;
  if (s == "label") return VolumeKind::kLabel;
  if (s == "mask") return VolumeKind::kMask;
  fail(ErrorCode::kFormat, "unknown volume kind '" + s + "'");
}

Volume Volume::zeros(const VolumeGeometry& geometry, VolumeKind kind) {
  Volume v;
  v.geometry = geometry;
  v.kind = kind;
  v.values.assign(static_cast<size_t>(geometry.voxel_count()), 0.0f);
  return v;
}

void Volume::validate() const {
  geometry.validate();
  if (static_cast<int64_t>(values.size()) != geometry.voxel_count())
    fail(ErrorCode::kLength, "value count does not match dims");
  if (kind == VolumeKind::kMask) {
    for (float v : values)
      if (v != 0.0f && v != 1.0f) fail(ErrorCode::kDomain, "mask values must be 0 or 1");
  } else if (kind == VolumeKind::kLabel) {
    for (float v : values)
      if (v < 0.0f || v > 8.0f || v != std::floor(v))
        fail(ErrorCode::kDomain, "label values must be integers in 0..8");
  }
}

void PointCloud::validate() const {
  for (const auto& c : coords)
    for (double x : c)
      if (!(x >= 0.0 && x <= 1.0)) fail(ErrorCode::kDomain, "point coordinate outside [0,1]");
  if (feats.size() != coords.size() * channels)
    fail(ErrorCode::kLength, "feature rows do not match point count");
  if (!labels.empty() && labels.size() != coords.size())
    fail(ErrorCode::kLength, "label count does not match point count");
  if (!source_voxels.empty() && source_voxels.size() != coords.size())
    fail(ErrorCode::kLength, "source voxel count does not match point count");
}

PointCloud PointCloud::select(const std::vector<size_t>& indices) const {
  PointCloud out;
  out.channels = channels;
  out.coords.reserve(indices.size());
  out.feats.reserve(indices.size() * channels);
  for (size_t i : indices) {
    out.coords.push_back(coords[i]);
    for (size_t c = 0; c < channels; ++c) out.feats.push_back(feats[i * channels + c]);
    if (!labels.empty()) out.labels.push_back(labels[i]);
    if (!source_voxels.empty()) out.source_voxels.push_back(source_voxels[i]);
  }
  return out;
}

float window_hu_value(float hu) {
  const float clamped = std::clamp(hu, kHuLow, kHuHigh);
  return (clamped - kHuLow) / (kHuHigh - kHuLow);
}

Volume window_hu(const Volume& volume) {
  if (volume.kind != VolumeKind::kIntensity)
    fail(ErrorCode::kInvalidArgument, "window_hu requires an intensity volume");
  Volume out = volume;
  for (float& v : out.values) v = window_hu_value(v);
  return out;
}

Vec3 voxel_to_physical(const VolumeGeometry& geometry, const Index3& v) {
  if (!geometry.contains(v)) fail(ErrorCode::kOutOfBounds, "voxel index outside dims");
  const Vec3 scaled{geometry.spacing[0] * static_cast<double>(v[0]),
                    geometry.spacing[1] * static_cast<double>(v[1]),
                    geometry.spacing[2] * static_cast<double>(v[2])};
  Vec3 p = geometry.origin;
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c) p[r] += geometry.direction[r * 3 + c] * scaled[c];
  return p;
}

PointCloud extract_liver_points(const Volume& intensity, const Volume& mask, const Volume* labels) {
  if (mask.kind != VolumeKind::kMask) fail(ErrorCode::kInvalidArgument, "mask volume must have kind mask");
  if (intensity.kind != VolumeKind::kIntensity)
    fail(ErrorCode::kInvalidArgument, "intensity volume must have kind intensity");
  if (!intensity.geometry.same_as(mask.geometry))
    fail(ErrorCode::kGeometry, "intensity and mask geometry differ");
  if (labels && !labels->geometry.same_as(mask.geometry))
    fail(ErrorCode::kGeometry, "label and mask geometry differ");
  intensity.validate();
  mask.validate();
  if (labels) labels->validate();

  const auto& geo = mask.geometry;
  PointCloud cloud;
  cloud.channels = 1;
  // Min-max normalization cancels the origin, so it is dropped up front to
  // keep translated volumes bit-identical after normalization.
  VolumeGeometry centered = geo;
  centered.origin = {0.0, 0.0, 0.0};
  std::vector<Vec3> physical;
  for (int64_t i = 0; i < geo.voxel_count(); ++i) {
    if (mask.values[static_cast<size_t>(i)] == 0.0f) continue;
    const Index3 v = geo.voxel_of(i);
    physical.push_back(voxel_to_physical(centered, v));
    cloud.source_voxels.push_back(v);
    cloud.feats.push_back(window_hu_value(intensity.values[static_cast<size_t>(i)]));
    if (labels) {
      const int seg = static_cast<int>(labels->values[static_cast<size_t>(i)]);
      if (seg < 1 || seg > 8) fail(ErrorCode::kLabel, "masked voxel without a segment label 1..8");
      cloud.labels.push_back(seg - 1);
    }
  }
  if (physical.empty()) fail(ErrorCode::kEmptyRegion, "mask selects no voxels");

  Vec3 lo, hi;
  lo.fill(std::numeric_limits<double>::infinity());
  hi.fill(-std::numeric_limits<double>::infinity());
  for (const auto& p : physical)
    for (int a = 0; a < 3; ++a) {
      lo[a] = std::min(lo[a], p[a]);
      hi[a] = std::max(hi[a], p[a]);
    }
  cloud.coords.resize(physical.size());
  for (size_t i = 0; i < physical.size(); ++i)
    for (int a = 0; a < 3; ++a) {
      const double extent = hi[a] - lo[a];
      cloud.coords[i][a] = extent > 0.0 ? std::clamp((physical[i][a] - lo[a]) / extent, 0.0, 1.0) : 0.0;
    }
  return cloud;
}

}  // namespace ptseg
