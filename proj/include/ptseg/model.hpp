// Copyright 2026 The ptseg Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ptseg/diffops.hpp"
#include "ptseg/neighbors.hpp"
#include "ptseg/volume.hpp"

namespace ptseg {

inline constexpr int kNumClasses = 8;

struct ModelConfig {
  int grid_size_level1 = 16;
  double radius_level1 = 1.0 / 32.0;
  std::vector<size_t> channels{16, 32, 64, 128};
  bool enable_grid_embeddings = true;
  bool enable_graph_reasoning = true;
  double downsample_ratio = 0.25;
  size_t max_neighbors = 32;
  std::vector<size_t> head{64, 8};
  int classes = kNumClasses;
  /// Feed level-1 point features to the head alongside the interpolated
  /// level-4 features.
  bool head_skip = true;
  /// Per-point feature channels of the input cloud (windowed intensity).
  size_t input_channels = 1;

  void validate() const;
  HierarchyConfig hierarchy(uint64_t seed) const;
  bool uses_grid() const { return enable_grid_embeddings || enable_graph_reasoning; }
  /// Ablation letter: a (neither), b (embeddings only), c (reasoning only), d (both).
  char ablation() const;

  /// Small CPU-friendly settings: M1 = 16, r1 = 1/32, channels 16..128.
  static ModelConfig desk();
  /// First-scale grid 64^3, r1 = 1/(2*64), K = 100.
  static ModelConfig msd();
  /// First-scale grid 32^3, r1 = 1/(2*32), K = 100.
  static ModelConfig lits();
  static ModelConfig with_ablation(ModelConfig base, char ablation);
};

template <class T>
struct LevelParams {
  Linear<T> edge;
  std::optional<ResidualBlock<T>> embed1;
  std::optional<ResidualBlock<T>> embed2;
  std::optional<AttentionParams<T>> attention;
};

/// All learnable tensors. Components disabled by the config are absent.
template <class T>
struct ModelParams {
  std::vector<LevelParams<T>> levels;
  Mlp<T> head;

  /// Visits every Param in a fixed order.
  template <class Fn>
  void for_each(Fn&& fn);
  template <class Fn>
  void for_each(Fn&& fn) const;

  size_t parameter_count() const;
  void zero_grad();
};

template <class T>
ModelParams<T> init_params(const ModelConfig& config, uint64_t seed);

template <class To, class From>
ModelParams<To> cast_params(const ModelParams<From>& p);

template <class T>
struct AggregateCache {
  Matrix<T> edge_in;   // E x (C_prev + 3)
  Matrix<T> edge_out;  // E x C, after ReLU
  std::vector<uint32_t> argmax;  // N x C winning edge ids
};

/// feature[j] = max over neighbors n of relu(edge([prev[n], (coord(n) - coord(j)) / radius])).
/// Ties resolve to the first neighbor in list order.
template <class T>
Matrix<T> point_aggregate(const LevelData& level, const Matrix<T>& prev_features, const Linear<T>& edge,
                          AggregateCache<T>* cache = nullptr);
template <class T>
Matrix<T> point_aggregate_backward(const Matrix<T>& dout, const LevelData& level, size_t prev_rows,
                                   Linear<T>& edge, const AggregateCache<T>& cache);

template <class T>
struct LevelCache {
  AggregateCache<T> aggregate;
  Matrix<T> aggregated;
  VoxelAssignment assignment;
  InterpWeights interp;
  ResidualCache<T> embed1, embed2;
  GraphReasonCache<T> attention;
  size_t grid_channels = 0;
  Matrix<T> features;
};

/// Inverse-distance weights from the 3 nearest level-4 points.
struct HeadInterp {
  std::vector<std::array<uint32_t, 3>> ids;
  std::vector<std::array<double, 3>> weights;
};
HeadInterp head_interpolation(std::span<const Vec3> targets, std::span<const Vec3> sources);

template <class T>
struct ForwardCache {
  Matrix<T> input;
  std::vector<LevelCache<T>> levels;
  HeadInterp interp;
  Matrix<T> head_in;
  MlpCache<T> head;
};

/// Input features per point: the cloud's feature channels followed by its
/// normalized coordinates mapped to [-1, 1].
template <class T>
Matrix<T> input_features(const PointCloud& points);

/// Per-point logits (N x classes) for the level-1 points of `hierarchy`.
template <class T>
Matrix<T> forward(const PointCloud& points, const Hierarchy& hierarchy, const ModelParams<T>& params,
                  const ModelConfig& config, ForwardCache<T>* cache = nullptr);

/// Accumulates parameter gradients for upstream d(loss)/d(logits).
template <class T>
void backward(const Matrix<T>& dlogits, const Hierarchy& hierarchy, ModelParams<T>& params,
              const ModelConfig& config, const ForwardCache<T>& cache);

/// Zeroes gradients, runs forward + mean cross-entropy + backward.
template <class T>
T loss_and_grad(const PointCloud& points, const Hierarchy& hierarchy, ModelParams<T>& params,
                const ModelConfig& config);

/// Argmax per row; ties resolve to the lowest class index.
template <class T>
std::vector<int> argmax_labels(const Matrix<T>& logits);

std::vector<int> infer(const PointCloud& points, const Hierarchy& hierarchy, const ModelParams<float>& params,
                       const ModelConfig& config);

/// Labels every point of a case by splitting it into disjoint random
/// subsets of roughly `sample_fraction` of the points (the training
/// density), building a hierarchy for each and running `infer`.
std::vector<int> infer_case(const PointCloud& points, const ModelParams<float>& params, const ModelConfig& config,
                            double sample_fraction, uint64_t seed);

/// Writes label + 1 at each point's source voxel, 0 elsewhere.
Volume labels_to_volume(const PointCloud& points, std::span<const int> labels, const VolumeGeometry& geometry);

// ---------------------------------------------------------------------------

template <class T>
template <class Fn>
void ModelParams<T>::for_each(Fn&& fn) {
  auto linear = [&](Linear<T>& l) {
    fn(l.weight);
    fn(l.bias);
  };
  auto block = [&](ResidualBlock<T>& b) {
    fn(b.conv1.weight);
    fn(b.conv1.bias);
    fn(b.conv2.weight);
    fn(b.conv2.bias);
    if (b.has_proj) linear(b.proj);
  };
  for (auto& level : levels) {
    linear(level.edge);
    if (level.embed1) block(*level.embed1);
    if (level.embed2) block(*level.embed2);
    if (level.attention) {
      linear(level.attention->query);
      linear(level.attention->key);
      linear(level.attention->value);
      linear(level.attention->offset);
      fn(level.attention->pos);
    }
  }
  for (auto& l : head.layers) linear(l);
}

template <class T>
template <class Fn>
void ModelParams<T>::for_each(Fn&& fn) const {
  const_cast<ModelParams<T>*>(this)->for_each([&](Param<T>& p) { fn(static_cast<const Param<T>&>(p)); });
}

}  // namespace ptseg
