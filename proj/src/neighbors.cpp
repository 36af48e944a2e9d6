// Copyright 2026 The ptseg Authors
// SPDX-License-Identifier: Apache-2.0

#include "ptseg/neighbors.hpp"

#include <algorithm>
#include <cmath>
#include <json.hpp>
#include <limits>
#include <sstream>

#include "ptseg/fileio.hpp"

namespace ptseg {

namespace {

constexpr size_t kExhaustiveBelow = 512;

using CellKey = std::array<int64_t, 3>;

CellKey cell_of(const Vec3& p, double edge) {
  return {static_cast<int64_t>(std::floor(p[0] / edge)), static_cast<int64_t>(std::floor(p[1] / edge)),
          static_cast<int64_t>(std::floor(p[2] / edge))};
}

/// Sources sorted by cell; a cell's members are a contiguous range.
class CellIndex {
 public:
  CellIndex(std::span<const Vec3> sources, double edge) : edge_(edge) {
    entries_.reserve(sources.size());
    for (uint32_t i = 0; i < sources.size(); ++i) entries_.push_back({cell_of(sources[i], edge), i});
    std::sort(entries_.begin(), entries_.end());
  }

  template <class Fn>
  void for_each_near(const Vec3& q, Fn&& fn) const {
    const CellKey c = cell_of(q, edge_);
    for (int64_t dz = -1; dz <= 1; ++dz)
      for (int64_t dy = -1; dy <= 1; ++dy)
        for (int64_t dx = -1; dx <= 1; ++dx) {
          const CellKey key{c[0] + dx, c[1] + dy, c[2] + dz};
          auto lo = std::lower_bound(entries_.begin(), entries_.end(), Entry{key, 0});
          for (auto it = lo; it != entries_.end() && it->key == key; ++it) fn(it->id);
        }
  }

 private:
  struct Entry {
    CellKey key;
    uint32_t id;
    auto operator<=>(const Entry&) const = default;
  };
  double edge_;
  std::vector<Entry> entries_;
};

}  // namespace

NeighborLists ball_query(std::span<const Vec3> queries, std::span<const Vec3> sources, double radius,
                         size_t max_neighbors) {
  if (sources.empty()) fail(ErrorCode::kEmptyRegion, "ball_query: empty source set");
  if (!(radius > 0.0)) fail(ErrorCode::kInvalidArgument, "ball_query: radius must be positive");
  if (max_neighbors < 1) fail(ErrorCode::kInvalidArgument, "ball_query: K must be >= 1");

  const double r2 = radius * radius;
  const bool exhaustive = sources.size() < kExhaustiveBelow;
  std::optional<CellIndex> index;
  if (!exhaustive) index.emplace(sources, radius);

  NeighborLists out;
  out.start.reserve(queries.size() + 1);
  out.fallback.assign(queries.size(), 0);
  std::vector<std::pair<double, uint32_t>> found;
  for (size_t q = 0; q < queries.size(); ++q) {
    found.clear();
    auto consider = [&](uint32_t s) {
      const double d2 = squared_distance(queries[q], sources[s]);
      if (d2 <= r2) found.emplace_back(d2, s);
    };
    if (exhaustive) {
      for (uint32_t s = 0; s < sources.size(); ++s) consider(s);
    } else {
      index->for_each_near(queries[q], consider);
    }
    if (found.empty()) {
      std::pair<double, uint32_t> best{std::numeric_limits<double>::infinity(), 0};
      for (uint32_t s = 0; s < sources.size(); ++s) {
        const double d2 = squared_distance(queries[q], sources[s]);
        if (d2 < best.first) best = {d2, s};
      }
      found.push_back(best);
      out.fallback[q] = 1;
    }
    const size_t keep = std::min(max_neighbors, found.size());
    std::partial_sort(found.begin(), found.begin() + static_cast<std::ptrdiff_t>(keep), found.end());
    for (size_t i = 0; i < keep; ++i) out.ids.push_back(found[i].second);
    out.start.push_back(static_cast<uint32_t>(out.ids.size()));
  }
  return out;
}

std::vector<uint32_t> downsample(std::span<const Vec3> coords, double ratio, uint64_t seed) {
  if (coords.empty()) fail(ErrorCode::kEmptyRegion, "downsample: empty input");
  if (!(ratio > 0.0 && ratio <= 1.0)) fail(ErrorCode::kInvalidArgument, "downsample: ratio must be in (0, 1]");
  const size_t n = coords.size();
  std::vector<uint32_t> picked;
  if (ratio == 1.0) {
    picked.resize(n);
    for (uint32_t i = 0; i < n; ++i) picked[i] = i;
    return picked;
  }
  // The epsilon keeps exact products such as 64 * 0.25 from rounding up.
  const auto count = std::clamp<size_t>(
      static_cast<size_t>(std::ceil(static_cast<double>(n) * ratio - 1e-9)), 1, n);
  picked.reserve(count);
  std::vector<double> nearest(n, std::numeric_limits<double>::infinity());
  Rng rng(seed);
  auto current = static_cast<uint32_t>(rng.below(n));
  while (true) {
    picked.push_back(current);
    if (picked.size() == count) break;
    double far = -1.0;
    uint32_t next = 0;
    for (uint32_t i = 0; i < n; ++i) {
      nearest[i] = std::min(nearest[i], squared_distance(coords[i], coords[current]));
      if (nearest[i] > far) {
        far = nearest[i];
        next = i;
      }
    }
    current = next;
  }
  return picked;
}

void HierarchyConfig::validate() const {
  if (grid_size_level1 < 8 || grid_size_level1 % 8 != 0)
    fail(ErrorCode::kConfig, "grid_size_level1 must be a positive multiple of 8");
  if (!(radius_level1 > 0.0)) fail(ErrorCode::kConfig, "radius_level1 must be positive");
  if (!(downsample_ratio > 0.0 && downsample_ratio <= 1.0))
    fail(ErrorCode::kConfig, "downsample_ratio must be in (0, 1]");
  if (max_neighbors < 1 || max_neighbors > 100) fail(ErrorCode::kConfig, "max_neighbors must be in [1, 100]");
}

namespace {

void fill_offsets(LevelData& level, std::span<const Vec3> source_coords) {
  level.neighbor_offsets.resize(level.neighbors.ids.size());
  for (size_t q = 0; q < level.size(); ++q)
    for (uint32_t e = level.neighbors.start[q]; e < level.neighbors.start[q + 1]; ++e) {
      const Vec3& s = source_coords[level.neighbors.ids[e]];
      for (int a = 0; a < 3; ++a) level.neighbor_offsets[e][a] = s[a] - level.coords[q][a];
    }
}

}  // namespace

Hierarchy build_hierarchy(std::span<const Vec3> coords, const HierarchyConfig& config) {
  config.validate();
  if (coords.size() < 4) fail(ErrorCode::kInvalidArgument, "build_hierarchy needs at least 4 points");
  Hierarchy h;
  h.config = config;
  h.levels.resize(kNumLevels);

  LevelData& base = h.levels[0];
  base.coords.assign(coords.begin(), coords.end());
  base.indices.resize(coords.size());
  for (uint32_t i = 0; i < coords.size(); ++i) base.indices[i] = i;
  base.input_indices = base.indices;
  base.radius = config.radius(0);
  base.grid_size = config.grid_size(0);
  base.neighbors = ball_query(base.coords, base.coords, base.radius, config.max_neighbors);
  fill_offsets(base, base.coords);

  for (int l = 1; l < kNumLevels; ++l) {
    const LevelData& prev = h.levels[l - 1];
    LevelData& level = h.levels[l];
    level.indices = downsample(prev.coords, config.downsample_ratio,
                               derive_seed(config.seed, "hierarchy/level" + std::to_string(l)));
    level.coords.reserve(level.indices.size());
    level.input_indices.reserve(level.indices.size());
    for (uint32_t i : level.indices) {
      level.coords.push_back(prev.coords[i]);
      level.input_indices.push_back(prev.input_indices[i]);
    }
    level.radius = config.radius(l);
    level.grid_size = config.grid_size(l);
    level.neighbors = ball_query(level.coords, prev.coords, level.radius, config.max_neighbors);
    fill_offsets(level, prev.coords);
  }
  return h;
}

uint64_t hierarchy_cache_key(std::span<const Vec3> coords, const HierarchyConfig& config) {
  Fnv1a h;
  const uint64_t n = coords.size();
  h.update_value(n);
  if (!coords.empty()) h.update(coords.data(), coords.size_bytes());
  h.update_value(config.grid_size_level1);
  h.update_value(config.radius_level1);
  h.update_value(config.downsample_ratio);
  h.update_value(static_cast<uint64_t>(config.max_neighbors));
  h.update_value(config.seed);
  return h.digest();
}

namespace {

std::string key_name(uint64_t key) {
  std::ostringstream ss;
  ss << std::hex;
  ss.width(16);
  ss.fill('0');
  ss << key;
  return ss.str();
}

}  // namespace

void save_hierarchy(const Hierarchy& h, std::span<const Vec3> coords, const std::filesystem::path& dir) {
  const std::string name = key_name(hierarchy_cache_key(coords, h.config));
  nlohmann::json manifest;
  manifest["key"] = name;
  manifest["points"] = coords.size();
  manifest["config"] = {{"grid_size_level1", h.config.grid_size_level1},
                        {"radius_level1", h.config.radius_level1},
                        {"downsample_ratio", h.config.downsample_ratio},
                        {"max_neighbors", h.config.max_neighbors},
                        {"seed", h.config.seed}};
  std::string blob;
  nlohmann::json levels = nlohmann::json::array();
  auto add = [&](nlohmann::json& entry, const char* field, std::span<const uint32_t> values) {
    entry[field] = {{"offset", blob.size()}, {"count", values.size()}};
    append_le<uint32_t>(blob, values);
  };
  for (const auto& level : h.levels) {
    nlohmann::json entry;
    add(entry, "indices", level.indices);
    add(entry, "neighbor_start", level.neighbors.start);
    add(entry, "neighbor_ids", level.neighbors.ids);
    std::vector<uint32_t> fb(level.neighbors.fallback.begin(), level.neighbors.fallback.end());
    add(entry, "fallback", fb);
    levels.push_back(entry);
  }
  manifest["levels"] = levels;
  write_file_atomic(dir / (name + ".bin"), blob);
  write_file_atomic(dir / (name + ".json"), manifest.dump(2) + "\n");
}

std::optional<Hierarchy> load_hierarchy(std::span<const Vec3> coords, const HierarchyConfig& config,
                                        const std::filesystem::path& dir) {
  const std::string name = key_name(hierarchy_cache_key(coords, config));
  const auto manifest_path = dir / (name + ".json");
  const auto blob_path = dir / (name + ".bin");
  if (!std::filesystem::exists(manifest_path) || !std::filesystem::exists(blob_path)) return std::nullopt;
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(read_file(manifest_path));
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::kFormat, std::string("bad hierarchy manifest: ") + e.what());
  }
  const std::string blob = read_file(blob_path);
  auto take = [&](const nlohmann::json& field) {
    const auto offset = field.at("offset").get<size_t>();
    const auto count = field.at("count").get<size_t>();
    if (offset + count * 4 > blob.size()) fail(ErrorCode::kLength, "hierarchy blob truncated");
    return unpack_le<uint32_t>(std::string_view(blob).substr(offset, count * 4));
  };

  Hierarchy h;
  h.config = config;
  h.levels.resize(kNumLevels);
  if (manifest.at("levels").size() != kNumLevels) fail(ErrorCode::kFormat, "hierarchy must have 4 levels");
  for (int l = 0; l < kNumLevels; ++l) {
    const auto& entry = manifest.at("levels").at(l);
    LevelData& level = h.levels[l];
    level.indices = take(entry.at("indices"));
    level.neighbors.start = take(entry.at("neighbor_start"));
    level.neighbors.ids = take(entry.at("neighbor_ids"));
    const auto fb = take(entry.at("fallback"));
    level.neighbors.fallback.assign(fb.begin(), fb.end());
    level.radius = config.radius(l);
    level.grid_size = config.grid_size(l);
    const std::vector<Vec3>& prev = l == 0 ? std::vector<Vec3>(coords.begin(), coords.end()) : h.levels[l - 1].coords;
    for (uint32_t i : level.indices) {
      if (i >= prev.size()) fail(ErrorCode::kFormat, "hierarchy index out of range");
      level.coords.push_back(prev[i]);
      level.input_indices.push_back(l == 0 ? i : h.levels[l - 1].input_indices[i]);
    }
    for (uint32_t id : level.neighbors.ids)
      if (id >= prev.size()) fail(ErrorCode::kFormat, "hierarchy neighbor id out of range");
    fill_offsets(level, prev);
  }
  return h;
}

Hierarchy load_or_build_hierarchy(std::span<const Vec3> coords, const HierarchyConfig& config,
                                  const std::filesystem::path& dir) {
  if (auto cached = load_hierarchy(coords, config, dir)) return std::move(*cached);
  Hierarchy h = build_hierarchy(coords, config);
  save_hierarchy(h, coords, dir);
  return h;
}

}  // namespace ptseg
