// Copyright 2026 The ptseg Authors
// SPDX-License-Identifier: Apache-2.0

#include "ptseg/dataset.hpp"

#include <json.hpp>

#include "ptseg/fileio.hpp"

namespace ptseg {

std::vector<ManifestEntry> read_manifest(const std::filesystem::path& dir, const std::string& split) {
  if (split != "all" && split != "train" && split != "val" && split != "test")
    fail(ErrorCode::kInvalidArgument, "split must be train, val, test or all");
  std::vector<ManifestEntry> out;
  try {
    const auto j = nlohmann::json::parse(read_file(dir / "manifest.json"));
    for (const auto& c : j.at("cases")) {
      ManifestEntry e{c.at("id").get<std::string>(), c.at("split").get<std::string>()};
      if (split == "all" || e.split == split) out.push_back(e);
    }
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::kFormat, "bad dataset manifest in " + dir.string() + ": " + e.what());
  }
  return out;
}

CaseData load_case(const std::filesystem::path& dir, const std::string& id, bool with_labels) {
  CaseData c;
  c.id = id;
  c.image = read_volume(dir / id / "image");
  c.mask = read_volume(dir / id / "mask");
  if (with_labels) c.labels = read_volume(dir / id / "label");
  c.points = extract_liver_points(window_hu(c.image), c.mask, with_labels ? &c.labels : nullptr);
  return c;
}

std::vector<TrainCase> load_train_cases(const std::filesystem::path& dir, const std::string& split) {
  std::vector<TrainCase> cases;
  for (const auto& e : read_manifest(dir, split)) cases.push_back({e.id, load_case(dir, e.id).points});
  if (cases.empty()) fail(ErrorCode::kEmptyRegion, "no cases in split '" + split + "' of " + dir.string());
  return cases;
}

}  // namespace ptseg
