// Copyright 2026 The ptseg Authors
// SPDX-License-Identifier: Apache-2.0

// Analytic forward-pass FLOP counts. A multiply-add is 2 FLOPs and bias adds
// are included, so a linear layer costs 2 * in * out per row. Activations are
// free; a max reduction costs 1 per compared element; softmax costs 3 per
// logit (exp, sum, divide).

#pragma once

#include <string>
#include <vector>

#include "ptseg/model.hpp"

namespace ptseg {

struct FlopItem {
  std::string name;  // e.g. "level2.conv3d"
  double flops = 0.0;
};

struct FlopReport {
  std::vector<FlopItem> items;
  std::vector<size_t> level_points;  // N_l
  double total = 0.0;
  double conv3d = 0.0;     // residual 3x3x3 convolutions only
  double grid_path = 0.0;  // everything between voxelize and devoxelize inclusive

  double sum(const std::string& suffix) const;
};

double linear_flops(size_t in, size_t out, size_t rows);
double conv3d_flops(size_t in, size_t out, int grid_size);
double graph_reason_flops(size_t channels, int grid_size);

/// Level sizes follow the hierarchy (ceil(N * ratio) per level); every point
/// is assumed to have min(K, N_prev) neighbors.
FlopReport count_flops(const ModelConfig& config, size_t n_points);

}  // namespace ptseg
