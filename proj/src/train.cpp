// Copyright 2026 The ptseg Authors
// SPDX-License-Identifier: Apache-2.0

#include "ptseg/train.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <sstream>

namespace ptseg {

void TrainConfig::validate() const {
  if (!(lr >= 0.0) || !std::isfinite(lr)) fail(ErrorCode::kConfig, "lr must be finite and >= 0");
  if (!(momentum >= 0.0 && momentum < 1.0)) fail(ErrorCode::kConfig, "momentum must be in [0, 1)");
  if (!(grad_clip >= 0.0)) fail(ErrorCode::kConfig, "grad_clip must be >= 0");
  if (!(sample_fraction > 0.0 && sample_fraction <= 1.0)) fail(ErrorCode::kConfig, "sample_fraction must be in (0, 1]");
}

TrainState init_train_state(const ModelConfig& config, uint64_t seed) {
  TrainState s;
  s.params = init_params<float>(config, seed);
  s.momentum = s.params;
  s.momentum.for_each([](Param<float>& p) {
    std::fill(p.value.begin(), p.value.end(), 0.0f);
    p.grad.clear();
  });
  s.seed = seed;
  return s;
}

std::vector<size_t> sample_points(size_t n, double fraction, uint64_t seed) {
  size_t k = static_cast<size_t>(std::ceil(static_cast<double>(n) * fraction - 1e-9));
  k = std::min(n, std::max<size_t>(k, 4));
  // Partial Fisher-Yates over an index array.
  std::vector<size_t> idx(n);
  for (size_t i = 0; i < n; ++i) idx[i] = i;
  Rng rng(seed);
  for (size_t i = 0; i < k; ++i) std::swap(idx[i], idx[i + rng.below(n - i)]);
  idx.resize(k);
  std::sort(idx.begin(), idx.end());
  return idx;
}

namespace {

std::string grad_report(const ModelParams<float>& params) {
  std::ostringstream os;
  double total = 0.0;
  os << "{";
  bool first = true;
  params.for_each([&](const Param<float>& p) {
    double s = 0.0;
    for (float g : p.grad) s += static_cast<double>(g) * g;
    total += s;
    os << (first ? "" : ", ") << '"' << p.name << "\": " << std::sqrt(s);
    first = false;
  });
  os << "}, \"total\": " << std::sqrt(total);
  return os.str();
}

}  // namespace

EpochLog train_epoch(TrainState& state, const std::vector<TrainCase>& cases, const ModelConfig& config,
                     const TrainConfig& train) {
  if (cases.empty()) fail(ErrorCode::kInvalidArgument, "no training cases");
  const auto t0 = std::chrono::steady_clock::now();
  const size_t e = state.epoch;
  const std::string tag = "epoch" + std::to_string(e);

  std::vector<size_t> order(cases.size());
  for (size_t i = 0; i < order.size(); ++i) order[i] = i;
  Rng rng(derive_seed(state.seed, "sampler/order/" + tag));
  for (size_t i = order.size() - 1; i > 0; --i) std::swap(order[i], order[rng.below(i + 1)]);

  EpochLog log;
  log.epoch = e + 1;
  double sum = 0.0;
  const float lr = static_cast<float>(train.lr), mu = static_cast<float>(train.momentum);
  for (size_t it = 0; it < order.size(); ++it) {
    const TrainCase& c = cases[order[it]];
    const std::string key = tag + "/" + c.id;
    const auto ids = sample_points(c.points.size(), train.sample_fraction, derive_seed(state.seed, "sampler/" + key));
    const PointCloud batch = c.points.select(ids);
    const Hierarchy h = build_hierarchy(batch.coords, config.hierarchy(derive_seed(state.seed, "hierarchy/" + key)));
    const float loss = loss_and_grad(batch, h, state.params, config);
    if (!std::isfinite(loss)) {
      std::ostringstream os;
      os << "non-finite loss: {\"epoch\": " << e + 1 << ", \"case\": \"" << c.id << "\", \"grad_norms\": "
         << grad_report(state.params) << "}";
      fail(ErrorCode::kNumeric, os.str());
    }
    if (it == 0) log.first_loss = loss;
    sum += loss;

    float scale = 1.0f;
    if (train.grad_clip > 0.0) {
      double sq = 0.0;
      state.params.for_each([&](const Param<float>& p) {
        for (float g : p.grad) sq += static_cast<double>(g) * g;
      });
      const double norm = std::sqrt(sq);
      if (norm > train.grad_clip) scale = static_cast<float>(train.grad_clip / norm);
    }

    std::vector<Param<float>*> vs;
    state.momentum.for_each([&](Param<float>& v) { vs.push_back(&v); });
    size_t k = 0;
    state.params.for_each([&](Param<float>& p) {
      Param<float>& v = *vs[k++];
      for (size_t i = 0; i < p.value.size(); ++i) {
        v.value[i] = mu * v.value[i] - lr * (scale * p.grad[i]);
        p.value[i] += v.value[i];
      }
    });
  }
  log.iterations = order.size();
  log.mean_loss = sum / static_cast<double>(order.size());
  log.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  state.loss_curve.push_back(log.mean_loss);
  state.epoch = e + 1;
  return log;
}

void train(TrainState& state, const std::vector<TrainCase>& cases, const ModelConfig& config,
           const TrainConfig& train, const std::function<void(const TrainState&, const EpochLog&)>& on_epoch) {
  config.validate();
  train.validate();
  for (const auto& c : cases)
    if (!c.points.has_labels()) fail(ErrorCode::kLabel, "training case " + c.id + " has no labels");
  while (state.epoch < train.epochs) {
    const EpochLog log = train_epoch(state, cases, config, train);
    if (on_epoch) on_epoch(state, log);
  }
}

}  // namespace ptseg
