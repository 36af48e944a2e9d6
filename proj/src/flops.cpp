// Copyright 2026 The ptseg Authors
// SPDX-License-Identifier: Apache-2.0

#include "ptseg/flops.hpp"

#include <algorithm>
#include <cmath>

namespace ptseg {

double FlopReport::sum(const std::string& suffix) const {
  double s = 0.0;
  for (const auto& i : items)
    if (i.name.size() >= suffix.size() && i.name.compare(i.name.size() - suffix.size(), suffix.size(), suffix) == 0)
      s += i.flops;
  return s;
}

double linear_flops(size_t in, size_t out, size_t rows) {
  return 2.0 * static_cast<double>(in) * static_cast<double>(out) * static_cast<double>(rows);
}

double conv3d_flops(size_t in, size_t out, int grid_size) {
  const double v = std::pow(static_cast<double>(grid_size), 3);
  return 2.0 * kTaps * static_cast<double>(in) * static_cast<double>(out) * v;
}

double graph_reason_flops(size_t channels, int grid_size) {
  const double c = static_cast<double>(channels), v = std::pow(static_cast<double>(grid_size), 3);
  const double qkv = 3.0 * 2.0 * c * c * v;
  const double offsets = 2.0 * c * 3.0 * kTaps * v;
  const double unfold = 2.0 * (kTaps * 8.0 * 2.0 * c * v);  // keys and values, 8 corners each
  const double logits = kTaps * (2.0 * c + 1.0) * v;        // dot product + positional term
  const double softmax = 3.0 * kTaps * v;
  const double weighted = kTaps * 2.0 * c * v;
  return qkv + offsets + unfold + logits + softmax + weighted;
}

FlopReport count_flops(const ModelConfig& config, size_t n_points) {
  config.validate();
  if (n_points < 4) fail(ErrorCode::kInvalidArgument, "count_flops needs at least 4 points");
  FlopReport r;
  auto add = [&](const std::string& name, double f, bool grid = false, bool conv = false) {
    r.items.push_back({name, f});
    r.total += f;
    if (grid) r.grid_path += f;
    if (conv) r.conv3d += f;
  };

  size_t prev_n = n_points, prev_c = config.input_channels + 3;
  for (int l = 0; l < kNumLevels; ++l) {
    const size_t n =
        l == 0 ? n_points
               : static_cast<size_t>(std::ceil(static_cast<double>(prev_n) * config.downsample_ratio - 1e-9));
    const size_t c = config.channels[static_cast<size_t>(l)];
    const size_t edges = n * std::min(config.max_neighbors, prev_n);
    const int m = config.grid_size_level1 >> l;
    const double v = std::pow(static_cast<double>(m), 3);
    const std::string name = "level" + std::to_string(l + 1);
    r.level_points.push_back(n);

    add(name + ".edge_mlp", linear_flops(prev_c + 3, c, edges));
    add(name + ".edge_max", static_cast<double>(c * edges));
    if (config.uses_grid()) {
      add(name + ".voxelize", static_cast<double>(n * c), true);
      if (config.enable_grid_embeddings)
        for (int b = 0; b < 2; ++b) {
          add(name + ".conv3d", 2.0 * conv3d_flops(c, c, m), true, true);
          add(name + ".residual_add", static_cast<double>(c) * v, true);
        }
      if (config.enable_graph_reasoning) add(name + ".graph_reason", graph_reason_flops(c, m), true);
      add(name + ".devoxelize", 16.0 * static_cast<double>(n * c), true);
      add(name + ".merge", static_cast<double>(n * c));
    }
    prev_n = n;
    prev_c = c;
  }
  const size_t top = config.channels.back();
  add("head.interpolate", 6.0 * static_cast<double>(n_points * top));
  size_t in = top + (config.head_skip ? config.channels.front() : 0);
  for (size_t k = 0; k < config.head.size(); ++k) {
    add("head.layer" + std::to_string(k + 1), linear_flops(in, config.head[k], n_points));
    in = config.head[k];
  }
  return r;
}

}  // namespace ptseg
