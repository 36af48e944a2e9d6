// Copyright 2026 The ptseg Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <functional>
#include <string>
#include <vector>

#include "ptseg/model.hpp"

namespace ptseg {

struct TrainConfig {
  size_t epochs = 30;
  double lr = 0.01;
  double momentum = 0.98;
  /// Fraction of a case's points drawn for each iteration.
  double sample_fraction = 0.1;
  /// Rescale the gradient to this global L2 norm when it is larger (0: off).
  double grad_clip = 0.0;
  /// Write a checkpoint every this many epochs (0: final only). Used by the CLI.
  size_t checkpoint_every = 0;

  void validate() const;
};

struct TrainCase {
  std::string id;
  PointCloud points;
};

struct TrainState {
  ModelParams<float> params;
  ModelParams<float> momentum;  // same layout as params; values hold v
  size_t epoch = 0;             // completed epochs
  uint64_t seed = 0;
  std::vector<double> loss_curve;  // mean loss per completed epoch
};

struct EpochLog {
  size_t epoch = 0;
  double mean_loss = 0.0;
  double first_loss = 0.0;
  double seconds = 0.0;
  size_t iterations = 0;
};

TrainState init_train_state(const ModelConfig& config, uint64_t seed);

/// Sorted indices of round-up(fraction * n) points (at least 4, at most n),
/// drawn without replacement.
std::vector<size_t> sample_points(size_t n, double fraction, uint64_t seed);

/// One pass over the cases in a seeded random order, one SGD step per case:
/// v <- momentum * v - lr * g, p <- p + v. Throws kNumeric on a non-finite loss.
EpochLog train_epoch(TrainState& state, const std::vector<TrainCase>& cases, const ModelConfig& config,
                     const TrainConfig& train);

/// Runs epochs until state.epoch == train.epochs.
void train(TrainState& state, const std::vector<TrainCase>& cases, const ModelConfig& config,
           const TrainConfig& train, const std::function<void(const TrainState&, const EpochLog&)>& on_epoch = {});

}  // namespace ptseg
