// Copyright 2026 The ptseg Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <vector>

#include "ptseg/common.hpp"

namespace ptseg {

inline constexpr int kNumLevels = 4;

/// Compressed neighbor lists: the neighbors of query q are
/// ids[start[q] .. start[q+1]).
struct NeighborLists {
  std::vector<uint32_t> start{0};
  std::vector<uint32_t> ids;
  /// 1 when the query had no source inside the radius and received its
  /// single nearest source instead.
  std::vector<uint8_t> fallback;

  size_t query_count() const { return start.size() - 1; }
  std::span<const uint32_t> of(size_t q) const {
    return {ids.data() + start[q], ids.data() + start[q + 1]};
  }
};

/// Up to `max_neighbors` sources within Euclidean distance `radius` of each
/// query, nearest first, ties broken by ascending source index.
NeighborLists ball_query(std::span<const Vec3> queries, std::span<const Vec3> sources, double radius,
                         size_t max_neighbors);

/// Farthest-point sampling of ceil(N * ratio) indices, in selection order.
/// ratio == 1 returns the identity.
std::vector<uint32_t> downsample(std::span<const Vec3> coords, double ratio, uint64_t seed);

struct HierarchyConfig {
  int grid_size_level1 = 16;
  double radius_level1 = 1.0 / 32.0;
  double downsample_ratio = 0.25;
  size_t max_neighbors = 32;
  uint64_t seed = 0;

  int grid_size(int level) const { return grid_size_level1 >> level; }
  double radius(int level) const { return radius_level1 * static_cast<double>(1 << level); }
  void validate() const;
};

struct LevelData {
  /// Selected ids in the previous level (identity for level 0).
  std::vector<uint32_t> indices;
  /// Ids in the input cloud, composed through all previous levels.
  std::vector<uint32_t> input_indices;
  std::vector<Vec3> coords;
  /// Neighbors in the previous level (level 0: itself).
  NeighborLists neighbors;
  /// coord(neighbor) - coord(query), one entry per neighbor id.
  std::vector<Vec3> neighbor_offsets;
  double radius = 0.0;
  int grid_size = 0;

  size_t size() const { return coords.size(); }
};

/// Four point levels, 0-based here. Level 0 holds every input point.
struct Hierarchy {
  HierarchyConfig config;
  std::vector<LevelData> levels;

  size_t input_size() const { return levels.empty() ? 0 : levels[0].size(); }
};

Hierarchy build_hierarchy(std::span<const Vec3> coords, const HierarchyConfig& config);

/// Content hash of (coords, config); names the cache entry.
uint64_t hierarchy_cache_key(std::span<const Vec3> coords, const HierarchyConfig& config);

/// Cache layout: `<dir>/<key>.json` manifest + `<dir>/<key>.bin` arrays.
void save_hierarchy(const Hierarchy& h, std::span<const Vec3> coords, const std::filesystem::path& dir);
std::optional<Hierarchy> load_hierarchy(std::span<const Vec3> coords, const HierarchyConfig& config,
                                        const std::filesystem::path& dir);
Hierarchy load_or_build_hierarchy(std::span<const Vec3> coords, const HierarchyConfig& config,
                                  const std::filesystem::path& dir);

}  // namespace ptseg
