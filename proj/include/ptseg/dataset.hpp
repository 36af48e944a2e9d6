// Copyright 2026 The ptseg Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "ptseg/train.hpp"

namespace ptseg {

struct ManifestEntry {
  std::string id;
  std::string split;
};

/// Cases listed in `<dir>/manifest.json`; `split` "all" keeps every case.
std::vector<ManifestEntry> read_manifest(const std::filesystem::path& dir, const std::string& split = "all");

struct CaseData {
  std::string id;
  Volume image;  // HU
  Volume mask;
  Volume labels;  // empty values when absent
  PointCloud points;  // windowed intensity, normalized coords, labels if present
};

/// Reads `<dir>/<id>/{image,mask[,label]}` and extracts the liver points.
CaseData load_case(const std::filesystem::path& dir, const std::string& id, bool with_labels = true);

std::vector<TrainCase> load_train_cases(const std::filesystem::path& dir, const std::string& split);

}  // namespace ptseg
