// Copyright 2026 The ptseg Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace ptseg {

std::string read_file(const std::filesystem::path& path);

/// Writes to a sibling temp file then renames over `path`.
void write_file_atomic(const std::filesystem::path& path, std::string_view bytes);

/// Little-endian packing. The host is asserted little-endian at build time.
template <class T>
void append_le(std::string& out, std::span<const T> values) {
  const size_t old = out.size();
  out.resize(old + values.size_bytes());
  if (!values.empty()) std::memcpy(out.data() + old, values.data(), values.size_bytes());
}

template <class T>
std::vector<T> unpack_le(std::string_view bytes) {
  std::vector<T> out(bytes.size() / sizeof(T));
  if (!out.empty()) std::memcpy(out.data(), bytes.data(), out.size() * sizeof(T));
  return out;
}

}  // namespace ptseg
