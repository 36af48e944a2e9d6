// Copyright 2026 The ptseg Authors
// SPDX-License-Identifier: Apache-2.0

#include <cmath>
#include <cstring>
#include <json.hpp>

#include "ptseg/fileio.hpp"
#include "ptseg/volume.hpp"

namespace ptseg {

namespace {

using nlohmann::json;

std::string dtype_for(VolumeKind kind) { return kind == VolumeKind::kIntensity ? "f32" : "u8"; }

template <class T>
T read_at(const std::string& bytes, size_t offset) {
  T v;
  std::memcpy(&v, bytes.data() + offset, sizeof(T));
  return v;
}

}  // namespace

void write_raw(const Volume& volume, const std::filesystem::path& payload,
               const std::filesystem::path& meta) {
  volume.validate();
  const auto& g = volume.geometry;
  const std::string dtype = dtype_for(volume.kind);
  json j;
  j["dims"] = {g.dims[0], g.dims[1], g.dims[2]};
  j["spacing"] = {g.spacing[0], g.spacing[1], g.spacing[2]};
  j["direction"] = g.direction;
  j["origin"] = {g.origin[0], g.origin[1], g.origin[2]};
  j["kind"] = to_string(volume.kind);
  j["dtype"] = dtype;

  std::string bytes;
  if (dtype == "f32") {
    append_le<float>(bytes, volume.values);
  } else {
    bytes.reserve(volume.values.size());
    for (float v : volume.values) bytes.push_back(static_cast<char>(static_cast<uint8_t>(v)));
  }
  write_file_atomic(payload, bytes);
  write_file_atomic(meta, j.dump(2) + "\n");
}

Volume read_raw(const std::filesystem::path& payload, const std::filesystem::path& meta) {
  json j;
  try {
    j = json::parse(read_file(meta));
  } catch (const json::exception& e) {
    fail(ErrorCode::kFormat, "bad volume metadata " + meta.string() + ": " + e.what());
  }
  Volume v;
  try {
    for (int a = 0; a < 3; ++a) {
      v.geometry.dims[a] = j.at("dims").at(a).get<int64_t>();
      v.geometry.spacing[a] = j.at("spacing").at(a).get<double>();
      v.geometry.origin[a] = j.at("origin").at(a).get<double>();
    }
    if (j.at("direction").size() != 9) fail(ErrorCode::kFormat, "direction must have 9 entries");
    for (int i = 0; i < 9; ++i) v.geometry.direction[i] = j.at("direction").at(i).get<double>();
    v.kind = volume_kind_from_string(j.at("kind").get<std::string>());
  } catch (const json::exception& e) {
    fail(ErrorCode::kFormat, "bad volume metadata " + meta.string() + ": " + e.what());
  }
  v.geometry.validate();
  const std::string dtype = j.value("dtype", dtype_for(v.kind));
  const std::string bytes = read_file(payload);
  const auto count = static_cast<size_t>(v.geometry.voxel_count());
  if (dtype == "f32") {
    if (bytes.size() != count * sizeof(float)) fail(ErrorCode::kLength, "payload length mismatch in " + payload.string());
    v.values = unpack_le<float>(bytes);
  } else if (dtype == "u8") {
    if (bytes.size() != count) fail(ErrorCode::kLength, "payload length mismatch in " + payload.string());
    v.values.resize(count);
    for (size_t i = 0; i < count; ++i) v.values[i] = static_cast<float>(static_cast<uint8_t>(bytes[i]));
  } else {
    fail(ErrorCode::kFormat, "unsupported dtype '" + dtype + "'");
  }
  v.validate();
  return v;
}

void write_volume(const Volume& volume, const std::filesystem::path& stem) {
  auto payload = stem, meta = stem;
  payload += ".raw";
  meta += ".json";
  write_raw(volume, payload, meta);
}

Volume read_volume(const std::filesystem::path& stem) {
  auto payload = stem, meta = stem;
  payload += ".raw";
  meta += ".json";
  return read_raw(payload, meta);
}

Volume read_nifti_minimal(const std::filesystem::path& path, VolumeKind kind) {
  const std::string bytes = read_file(path);
  if (bytes.size() < 348) fail(ErrorCode::kLength, "NIfTI file shorter than its header");
  if (read_at<int32_t>(bytes, 0) != 348) fail(ErrorCode::kFormat, "sizeof_hdr is not 348 (big-endian files unsupported)");
  if (std::memcmp(bytes.data() + 344, "n+1\0", 4) != 0) fail(ErrorCode::kFormat, "NIfTI magic is not n+1");

  const int16_t ndim = read_at<int16_t>(bytes, 40);
  if (ndim < 1 || ndim > 7) fail(ErrorCode::kFormat, "bad NIfTI dim[0]");
  Volume v;
  v.kind = kind;
  auto& g = v.geometry;
  for (int a = 0; a < 3; ++a) {
    const int16_t d = a < ndim ? read_at<int16_t>(bytes, 42 + 2 * a) : int16_t{1};
    g.dims[a] = d;
  }
  for (int a = 3; a < ndim; ++a)
    if (read_at<int16_t>(bytes, 42 + 2 * a) > 1) fail(ErrorCode::kFormat, "only 3D NIfTI volumes are supported");

  const int16_t datatype = read_at<int16_t>(bytes, 70);
  size_t elem = 0;
  switch (datatype) {
    case 2: elem = 1; break;   // uint8
    case 4: elem = 2; break;   // int16
    case 16: elem = 4; break;  // float32
    default: fail(ErrorCode::kFormat, "unsupported NIfTI datatype " + std::to_string(datatype));
  }
  const auto offset = static_cast<size_t>(read_at<float>(bytes, 108));
  if (offset < 348) fail(ErrorCode::kFormat, "vox_offset inside header");

  const int16_t sform = read_at<int16_t>(bytes, 254);
  if (sform > 0) {
    double m[3][4];
    for (int r = 0; r < 3; ++r)
      for (int c = 0; c < 4; ++c) m[r][c] = read_at<float>(bytes, 280 + 16 * r + 4 * c);
    for (int c = 0; c < 3; ++c) {
      const double n = std::sqrt(m[0][c] * m[0][c] + m[1][c] * m[1][c] + m[2][c] * m[2][c]);
      if (!(n > 0.0)) fail(ErrorCode::kGeometry, "degenerate NIfTI srow affine");
      g.spacing[c] = n;
      for (int r = 0; r < 3; ++r) g.direction[r * 3 + c] = m[r][c] / n;
    }
    for (int r = 0; r < 3; ++r) g.origin[r] = m[r][3];
  } else {
    for (int a = 0; a < 3; ++a) {
      const float p = read_at<float>(bytes, 80 + 4 * a);
      g.spacing[a] = p > 0.0f ? p : 1.0;
    }
  }
  g.validate();

  const auto count = static_cast<size_t>(g.voxel_count());
  if (bytes.size() < offset + count * elem) fail(ErrorCode::kLength, "truncated NIfTI payload");
  float slope = read_at<float>(bytes, 112);
  const float inter = read_at<float>(bytes, 116);
  const bool scaled = slope != 0.0f && std::isfinite(slope) && !(slope == 1.0f && inter == 0.0f);
  v.values.resize(count);
  for (size_t i = 0; i < count; ++i) {
    const size_t at = offset + i * elem;
    float x = 0.0f;
    if (datatype == 2) x = static_cast<float>(static_cast<uint8_t>(bytes[at]));
    else if (datatype == 4) x = static_cast<float>(read_at<int16_t>(bytes, at));
    else x = read_at<float>(bytes, at);
    v.values[i] = scaled ? x * slope + inter : x;
  }
  v.validate();
  return v;
}

}  // namespace ptseg
