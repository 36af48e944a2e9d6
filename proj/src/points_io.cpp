// Copyright 2026 The ptseg Authors
// SPDX-License-Identifier: Apache-2.0

#include <json.hpp>

#include "ptseg/fileio.hpp"
#include "ptseg/volume.hpp"

namespace ptseg {

using nlohmann::json;

void write_points(const PointCloud& points, const VolumeGeometry& source, const std::filesystem::path& stem) {
  points.validate();
  std::string blob;
  for (const auto& c : points.coords) append_le<double>(blob, c);
  append_le<float>(blob, points.feats);
  std::vector<int32_t> labels(points.labels.begin(), points.labels.end());
  append_le<int32_t>(blob, labels);
  for (const auto& v : points.source_voxels) append_le<int64_t>(blob, v);
  json j{{"format", "ptseg-points-1"},
         {"count", points.size()},
         {"channels", points.channels},
         {"has_labels", points.has_labels()},
         {"has_source_voxels", !points.source_voxels.empty()},
         {"geometry",
          {{"dims", source.dims}, {"spacing", source.spacing}, {"direction", source.direction}, {"origin", source.origin}}}};
  write_file_atomic(stem.string() + ".bin", blob);
  write_file_atomic(stem.string() + ".json", j.dump(2) + "\n");
}

PointCloud read_points(const std::filesystem::path& stem, VolumeGeometry* source) {
  PointCloud p;
  size_t n = 0;
  bool has_labels = false, has_voxels = false;
  try {
    const json j = json::parse(read_file(stem.string() + ".json"));
    if (j.at("format") != "ptseg-points-1") fail(ErrorCode::kFormat, "not a ptseg point file");
    n = j.at("count");
    p.channels = j.at("channels");
    has_labels = j.at("has_labels");
    has_voxels = j.at("has_source_voxels");
    if (source) {
      const auto& g = j.at("geometry");
      source->dims = g.at("dims").get<Index3>();
      source->spacing = g.at("spacing").get<Vec3>();
      source->direction = g.at("direction").get<std::array<double, 9>>();
      source->origin = g.at("origin").get<Vec3>();
      source->validate();
    }
  } catch (const json::exception& e) {
    fail(ErrorCode::kFormat, std::string("point file metadata: ") + e.what());
  }
  const std::string blob = read_file(stem.string() + ".bin");
  const size_t expect = n * 24 + n * p.channels * 4 + (has_labels ? n * 4 : 0) + (has_voxels ? n * 24 : 0);
  if (blob.size() != expect) fail(ErrorCode::kLength, "point file payload length mismatch");
  std::string_view rest(blob);
  auto take = [&](size_t bytes) {
    auto s = rest.substr(0, bytes);
    rest.remove_prefix(bytes);
    return s;
  };
  const auto coords = unpack_le<double>(take(n * 24));
  p.coords.resize(n);
  for (size_t i = 0; i < n; ++i) p.coords[i] = {coords[3 * i], coords[3 * i + 1], coords[3 * i + 2]};
  p.feats = unpack_le<float>(take(n * p.channels * 4));
  if (has_labels) {
    const auto labels = unpack_le<int32_t>(take(n * 4));
    p.labels.assign(labels.begin(), labels.end());
  }
  if (has_voxels) {
    const auto v = unpack_le<int64_t>(take(n * 24));
    p.source_voxels.resize(n);
    for (size_t i = 0; i < n; ++i) p.source_voxels[i] = {v[3 * i], v[3 * i + 1], v[3 * i + 2]};
  }
  p.validate();
  return p;
}

}  // namespace ptseg
