// Copyright 2026 The ptseg Authors
// SPDX-License-Identifier: Apache-2.0

#include "ptseg/checkpoint.hpp"

#include <set>

#include "ptseg/fileio.hpp"

namespace ptseg {

using nlohmann::json;

json to_json(const ModelConfig& c) {
  return json{{"grid_size_level1", c.grid_size_level1},
              {"radius_level1", c.radius_level1},
              {"channels", c.channels},
              {"enable_grid_embeddings", c.enable_grid_embeddings},
              {"enable_graph_reasoning", c.enable_graph_reasoning},
              {"downsample_ratio", c.downsample_ratio},
              {"max_neighbors", c.max_neighbors},
              {"head", c.head},
              {"classes", c.classes},
              {"head_skip", c.head_skip},
              {"input_channels", c.input_channels}};
}

json to_json(const TrainConfig& c) {
  return json{{"epochs", c.epochs},
              {"lr", c.lr},
              {"momentum", c.momentum},
              {"sample_fraction", c.sample_fraction},
              {"grad_clip", c.grad_clip},
              {"checkpoint_every", c.checkpoint_every}};
}

namespace {

template <class T>
void take(const json& j, const char* key, T& out) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const json::exception& e) {
    fail(ErrorCode::kConfig, std::string("config field '") + key + "': " + e.what());
  }
}

void check_keys(const json& j, const json& known, const char* what) {
  if (!j.is_object()) fail(ErrorCode::kConfig, std::string(what) + " config must be a JSON object");
  for (const auto& item : j.items())
    if (!known.contains(item.key())) fail(ErrorCode::kConfig, std::string("unknown ") + what + " field '" + item.key() + "'");
}

}  // namespace

void merge_json(const json& j, ModelConfig& c) {
  check_keys(j, to_json(c), "model");
  take(j, "grid_size_level1", c.grid_size_level1);
  take(j, "radius_level1", c.radius_level1);
  take(j, "channels", c.channels);
  take(j, "enable_grid_embeddings", c.enable_grid_embeddings);
  take(j, "enable_graph_reasoning", c.enable_graph_reasoning);
  take(j, "downsample_ratio", c.downsample_ratio);
  take(j, "max_neighbors", c.max_neighbors);
  take(j, "head", c.head);
  take(j, "classes", c.classes);
  take(j, "head_skip", c.head_skip);
  take(j, "input_channels", c.input_channels);
}

void merge_json(const json& j, TrainConfig& c) {
  check_keys(j, to_json(c), "train");
  take(j, "epochs", c.epochs);
  take(j, "lr", c.lr);
  take(j, "momentum", c.momentum);
  take(j, "sample_fraction", c.sample_fraction);
  take(j, "grad_clip", c.grad_clip);
  take(j, "checkpoint_every", c.checkpoint_every);
}

void save_checkpoint(const std::filesystem::path& stem, const Checkpoint& ckpt) {
  std::string blob;
  json index = json::array();
  auto add = [&](const std::string& name, const Param<float>& p) {
    index.push_back({{"name", name}, {"shape", p.shape}, {"offset", blob.size() / 4}, {"count", p.size()}});
    append_le<float>(blob, p.value);
  };
  ckpt.state.params.for_each([&](const Param<float>& p) { add(p.name, p); });
  ckpt.state.momentum.for_each([&](const Param<float>& p) { add("momentum/" + p.name, p); });

  json m{{"format", "ptseg-checkpoint-1"},
         {"config", to_json(ckpt.config)},
         {"train", to_json(ckpt.train)},
         {"epoch", ckpt.state.epoch},
         {"seed", ckpt.state.seed},
         {"loss_curve", ckpt.state.loss_curve},
         {"blob", stem.filename().string() + ".bin"},
         {"tensors", index}};
  write_file_atomic(stem.string() + ".bin", blob);
  write_file_atomic(stem.string() + ".json", m.dump(2) + "\n");
}

Checkpoint load_checkpoint(const std::filesystem::path& stem) {
  json m;
  try {
    m = json::parse(read_file(stem.string() + ".json"));
  } catch (const json::exception& e) {
    fail(ErrorCode::kFormat, std::string("checkpoint manifest: ") + e.what());
  }
  if (m.value("format", "") != "ptseg-checkpoint-1") fail(ErrorCode::kFormat, "not a ptseg checkpoint");
  Checkpoint ck;
  merge_json(m.at("config"), ck.config);
  merge_json(m.at("train"), ck.train);
  ck.config.validate();
  ck.state = init_train_state(ck.config, 0);
  try {
    ck.state.epoch = m.at("epoch").get<size_t>();
    ck.state.seed = m.at("seed").get<uint64_t>();
    ck.state.loss_curve = m.at("loss_curve").get<std::vector<double>>();
  } catch (const json::exception& e) {
    fail(ErrorCode::kFormat, std::string("checkpoint manifest: ") + e.what());
  }
  const std::string blob = read_file(stem.string() + ".bin");
  const std::vector<float> values = unpack_le<float>(blob);
  if (blob.size() % 4 != 0) fail(ErrorCode::kLength, "checkpoint blob is not a whole number of floats");

  std::set<std::string> seen;
  auto fill = [&](const std::string& name, Param<float>& p) {
    for (const auto& t : m.at("tensors")) {
      if (t.at("name") != name) continue;
      const size_t offset = t.at("offset"), count = t.at("count");
      if (t.at("shape").get<std::vector<size_t>>() != p.shape || count != p.size())
        fail(ErrorCode::kFormat, "checkpoint tensor '" + name + "' has the wrong shape");
      if (offset + count > values.size()) fail(ErrorCode::kLength, "checkpoint blob truncated at '" + name + "'");
      std::copy(values.begin() + static_cast<std::ptrdiff_t>(offset),
                values.begin() + static_cast<std::ptrdiff_t>(offset + count), p.value.begin());
      seen.insert(name);
      return true;
    }
    return false;
  };
  ck.state.params.for_each([&](Param<float>& p) {
    if (!fill(p.name, p)) fail(ErrorCode::kFormat, "checkpoint lacks tensor '" + p.name + "'");
  });
  ck.state.momentum.for_each([&](Param<float>& p) { fill("momentum/" + p.name, p); });
  if (seen.size() != m.at("tensors").size()) fail(ErrorCode::kFormat, "checkpoint has tensors the config does not use");
  return ck;
}

}  // namespace ptseg
