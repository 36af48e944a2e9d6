// Copyright 2026 The ptseg Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "ptseg/volume.hpp"

namespace ptseg {

/// Voxels with mask = 1 and value `class_id`.
/// Dice = 2|P n G| / (|P| + |G|), 1.0 when both are empty.
double dice(const Volume& pred, const Volume& gt, const Volume& mask, int class_id);

struct SurfaceDistance {
  double symmetric = 0.0;   // (sum P->G + sum G->P) / (|S_P| + |S_G|)
  double pred_to_gt = 0.0;  // mean over S_P
  double gt_to_pred = 0.0;  // mean over S_G
};

/// Surface voxels have at least one 6-neighbor outside the class (the
/// volume border counts as outside). Distances run between voxel centers
/// in mm. Empty when the class is missing from either volume.
std::optional<SurfaceDistance> surface_distance(const Volume& pred, const Volume& gt, const Volume& mask,
                                                int class_id);
inline std::optional<double> asd(const Volume& pred, const Volume& gt, const Volume& mask, int class_id) {
  const auto s = surface_distance(pred, gt, mask, class_id);
  return s ? std::optional<double>(s->symmetric) : std::nullopt;
}

struct ClassMetrics {
  int label = 0;
  size_t pred_voxels = 0;
  size_t gt_voxels = 0;
  double dice = 1.0;
  std::optional<SurfaceDistance> asd;
  /// False when the class is absent from both volumes.
  bool in_average = false;
};

struct MetricsReport {
  std::string case_id;
  std::array<ClassMetrics, 8> classes;
  double mean_dice = 0.0;  // over classes present in pred or gt
  std::optional<double> mean_asd;  // over classes with a defined ASD
};

MetricsReport evaluate_case(const Volume& pred, const Volume& gt, const Volume& mask, const std::string& case_id = "");

nlohmann::json to_json(const MetricsReport& report);
MetricsReport report_from_json(const nlohmann::json& j);

/// Rows I..VIII and Avg; mean and sample std over cases of Dice and ASD.
std::string metrics_table_csv(const std::vector<MetricsReport>& reports);

std::string roman_segment(int label);

}  // namespace ptseg
