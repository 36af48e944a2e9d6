// Copyright 2026 The ptseg Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <filesystem>

#include <json.hpp>

#include "ptseg/train.hpp"

namespace ptseg {

nlohmann::json to_json(const ModelConfig& config);
nlohmann::json to_json(const TrainConfig& config);
/// Fields missing from `j` keep the values already in `config`; unknown keys
/// and wrong types are kConfig errors.
void merge_json(const nlohmann::json& j, ModelConfig& config);
void merge_json(const nlohmann::json& j, TrainConfig& config);

struct Checkpoint {
  ModelConfig config;
  TrainConfig train;
  TrainState state;
};

/// `<stem>.json` (config, epoch, seed, loss curve, tensor index) and
/// `<stem>.bin` (little-endian f32 tensors, momentum buffers after the
/// parameters). Both files are written atomically.
void save_checkpoint(const std::filesystem::path& stem, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& stem);

}  // namespace ptseg
