// Copyright 2026 The ptseg Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "ptseg/common.hpp"

namespace ptseg {

/// Physical metadata of a voxel grid. `direction` is row-major; its columns
/// are the world-space unit vectors of the i, j and k voxel axes.
struct VolumeGeometry {
  Vec3 spacing{1.0, 1.0, 1.0};
  std::array<double, 9> direction{1, 0, 0, 0, 1, 0, 0, 0, 1};
  Vec3 origin{0.0, 0.0, 0.0};
  Index3 dims{1, 1, 1};

  int64_t voxel_count() const { return dims[0] * dims[1] * dims[2]; }
  /// x-fastest linear index.
  int64_t linear_index(const Index3& v) const { return v[0] + dims[0] * (v[1] + dims[1] * v[2]); }
  Index3 voxel_of(int64_t linear) const;
  bool contains(const Index3& v) const;

  /// Throws kGeometry when spacing, direction or dims are invalid.
  void validate() const;
  bool same_as(const VolumeGeometry& other, double tol = 1e-6) const;
};

enum class VolumeKind { kIntensity, kLabel, kMask };

std::string to_string(VolumeKind kind);
VolumeKind volume_kind_from_string(const std::string& s);

struct Volume {
  VolumeGeometry geometry;
  std::vector<float> values;
  VolumeKind kind = VolumeKind::kIntensity;

  static Volume zeros(const VolumeGeometry& geometry, VolumeKind kind);

  float at(const Index3& v) const { return values[static_cast<size_t>(geometry.linear_index(v))]; }
  float& at(const Index3& v) { return values[static_cast<size_t>(geometry.linear_index(v))]; }

  /// Checks value count and the per-kind value domain.
  void validate() const;
};

/// Points sampled from a volume. Coordinates are normalized to [0,1]^3.
struct PointCloud {
  std::vector<Vec3> coords;
  std::vector<float> feats;  // N x channels, row-major
  size_t channels = 1;
  std::vector<int> labels;  // empty or N class ids in 0..7
  std::vector<Index3> source_voxels;  // empty or N voxel indices

  size_t size() const { return coords.size(); }
  bool has_labels() const { return !labels.empty(); }
  void validate() const;
  /// Subset in the given index order.
  PointCloud select(const std::vector<size_t>& indices) const;
};

inline constexpr float kHuLow = -100.0f;
inline constexpr float kHuHigh = 300.0f;

/// Clamp to [-100, 300] HU and map linearly onto [0, 1].
Volume window_hu(const Volume& volume);
float window_hu_value(float hu);

/// p = D (s * v) + o. Throws kOutOfBounds if `v` lies outside dims.
Vec3 voxel_to_physical(const VolumeGeometry& geometry, const Index3& v);

/// One point per mask voxel, in x-fastest scan order. Coordinates are
/// min-max normalized over the masked set; an axis with zero extent maps to 0.
PointCloud extract_liver_points(const Volume& intensity, const Volume& mask,
                                const Volume* labels = nullptr);

// I/O. Raw volumes are a little-endian payload plus a JSON sidecar.
void write_raw(const Volume& volume, const std::filesystem::path& payload,
               const std::filesystem::path& meta);
Volume read_raw(const std::filesystem::path& payload, const std::filesystem::path& meta);

/// Convenience pair: `<stem>.raw` + `<stem>.json`.
void write_volume(const Volume& volume, const std::filesystem::path& stem);
Volume read_volume(const std::filesystem::path& stem);

/// Point cloud files: `<stem>.json` (counts, geometry of the source volume)
/// and `<stem>.bin` (f64 coords, f32 features, i32 labels, i64 source voxels).
void write_points(const PointCloud& points, const VolumeGeometry& source, const std::filesystem::path& stem);
PointCloud read_points(const std::filesystem::path& stem, VolumeGeometry* source = nullptr);

/// Uncompressed single-file NIfTI-1 (int16, uint8, float32). The affine is
/// taken from the srow fields when sform_code > 0, else from pixdim.
Volume read_nifti_minimal(const std::filesystem::path& path, VolumeKind kind = VolumeKind::kIntensity);

}  // namespace ptseg
