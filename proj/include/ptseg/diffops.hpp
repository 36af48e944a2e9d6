// Copyright 2026 The ptseg Authors
// SPDX-License-Identifier: Apache-2.0

// Differentiable kernels with hand-written backward passes. Every op is a
// template over the scalar type; float is used for training and double for
// finite-difference checks. Backward functions accumulate parameter
// gradients into Param::grad and return input gradients.

#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <vector>

#include "ptseg/common.hpp"
#include "ptseg/tensor.hpp"

namespace ptseg {

/// Forward-call counters, used to assert that ablated paths stay unused.
struct OpCounters {
  uint64_t voxelize = 0;
  uint64_t devoxelize = 0;
  uint64_t conv3d = 0;
  uint64_t deformable_unfold = 0;
  uint64_t graph_reason = 0;

  uint64_t grid_ops() const { return voxelize + devoxelize + conv3d + deformable_unfold + graph_reason; }
};
OpCounters& op_counters();

inline constexpr int kTaps = 27;
inline constexpr int kCenterTap = 13;
/// Tap t covers the neighbor (t % 3 - 1, t / 3 % 3 - 1, t / 9 - 1).
constexpr std::array<int, 3> tap_delta(int t) { return {t % 3 - 1, t / 3 % 3 - 1, t / 9 - 1}; }

// ---------------------------------------------------------------------------
// Dense layers

template <class T>
struct Linear {
  Param<T> weight;  // out x in
  Param<T> bias;    // out

  Linear() = default;
  Linear(const std::string& name, size_t in, size_t out)
      : weight(name + ".weight", {out, in}), bias(name + ".bias", {out}) {}
  size_t in() const { return weight.shape[1]; }
  size_t out() const { return weight.shape[0]; }
  void init(Rng& rng) { kaiming_uniform(weight, in(), rng); }
};

template <class T>
Matrix<T> linear_forward(const Matrix<T>& x, const Linear<T>& layer);
template <class T>
Matrix<T> linear_backward(const Matrix<T>& x, const Matrix<T>& dy, Linear<T>& layer);

template <class T>
void relu_inplace(Matrix<T>& x);
/// Masks `dy` where the post-activation output `y` is not positive.
template <class T>
void relu_backward_inplace(const Matrix<T>& y, Matrix<T>& dy);

/// Linear layers with ReLU between them and no activation after the last.
template <class T>
struct Mlp {
  std::vector<Linear<T>> layers;

  Mlp() = default;
  Mlp(const std::string& name, size_t in, const std::vector<size_t>& widths);
  void init(Rng& rng) {
    for (auto& l : layers) l.init(rng);
  }
  size_t out() const { return layers.back().out(); }
};

template <class T>
struct MlpCache {
  std::vector<Matrix<T>> inputs;  // input of each layer
};

template <class T>
Matrix<T> mlp_forward(const Matrix<T>& x, const Mlp<T>& mlp, MlpCache<T>* cache = nullptr);
template <class T>
Matrix<T> mlp_backward(const Matrix<T>& dy, Mlp<T>& mlp, const MlpCache<T>& cache);

/// Row-wise softmax with max subtraction.
template <class T>
Matrix<T> softmax_rows(const Matrix<T>& x);
template <class T>
Matrix<T> softmax_rows_backward(const Matrix<T>& y, const Matrix<T>& dy);

/// Mean cross-entropy over rows. Writes d(loss)/d(logits) when `dlogits`
/// is non-null. Throws kLabel for labels outside [0, cols).
template <class T>
T cross_entropy(const Matrix<T>& logits, std::span<const int> labels, Matrix<T>* dlogits = nullptr);

// ---------------------------------------------------------------------------
// Point <-> grid

/// Voxel membership of each point: index min(floor(coord * M), M - 1).
struct VoxelAssignment {
  int size = 0;
  std::vector<uint32_t> voxel;  // per point
  std::vector<uint32_t> count;  // per voxel
};
VoxelAssignment assign_voxels(std::span<const Vec3> coords, int grid_size);

/// Mean of member point features per voxel; empty voxels are zero.
template <class T>
GridTensor<T> voxelize(const Matrix<T>& feats, const VoxelAssignment& assignment);
template <class T>
Matrix<T> voxelize_backward(const GridTensor<T>& dgrid, const VoxelAssignment& assignment);

/// Trilinear weights of the 8 voxel centers around each point. Voxel i has
/// its center at (i + 0.5) / M; points outside the center hull clamp.
struct InterpWeights {
  int size = 0;
  std::vector<std::array<uint32_t, 8>> voxel;
  std::vector<std::array<double, 8>> weight;
};
InterpWeights devoxelize_weights(std::span<const Vec3> coords, int grid_size);

template <class T>
Matrix<T> devoxelize(const GridTensor<T>& grid, const InterpWeights& weights);
template <class T>
GridTensor<T> devoxelize_backward(const Matrix<T>& dfeats, const InterpWeights& weights, size_t channels);

// ---------------------------------------------------------------------------
// 3D convolution

/// 3x3x3 convolution, stride 1, zero padding 1. Weight layout tap x in x out.
template <class T>
struct Conv3d {
  Param<T> weight;
  Param<T> bias;

  Conv3d() = default;
  Conv3d(const std::string& name, size_t in, size_t out)
      : weight(name + ".weight", {static_cast<size_t>(kTaps), in, out}), bias(name + ".bias", {out}) {}
  size_t in() const { return weight.shape[1]; }
  size_t out() const { return weight.shape[2]; }
  void init(Rng& rng) { kaiming_uniform(weight, kTaps * in(), rng); }
};

template <class T>
GridTensor<T> conv3d_forward(const GridTensor<T>& x, const Conv3d<T>& conv);
template <class T>
GridTensor<T> conv3d_backward(const GridTensor<T>& x, const GridTensor<T>& dy, Conv3d<T>& conv);

/// out = relu(conv2(relu(conv1(x)))) + proj(x); proj is the identity when
/// the channel counts match, otherwise a learned 1x1x1 projection.
template <class T>
struct ResidualBlock {
  Conv3d<T> conv1;
  Conv3d<T> conv2;
  bool has_proj = false;
  Linear<T> proj;

  ResidualBlock() = default;
  ResidualBlock(const std::string& name, size_t in, size_t out);
  size_t in() const { return conv1.in(); }
  size_t out() const { return conv2.out(); }
  void init(Rng& rng);
};

template <class T>
struct ResidualCache {
  GridTensor<T> input;
  GridTensor<T> hidden;  // relu(conv1(x))
  GridTensor<T> branch;  // relu(conv2(hidden))
};

template <class T>
GridTensor<T> residual_conv3d(const GridTensor<T>& x, const ResidualBlock<T>& block,
                              ResidualCache<T>* cache = nullptr);
template <class T>
GridTensor<T> residual_conv3d_backward(const GridTensor<T>& dy, ResidualBlock<T>& block,
                                       const ResidualCache<T>& cache);

// ---------------------------------------------------------------------------
// Deformable sampling and graph reasoning

/// For each voxel u and tap t, samples the grid at u + tap_delta(t) + offset
/// (voxel units) with trilinear interpolation and zero padding outside the
/// grid. `offsets` is V x 81 laid out as [tap][axis]. Output rows are
/// u * 27 + t.
template <class T>
Matrix<T> deformable_unfold(const GridTensor<T>& grid, const Matrix<T>& offsets);
/// Gradients w.r.t. grid values and offsets. Either output may be null.
template <class T>
void deformable_unfold_backward(const GridTensor<T>& grid, const Matrix<T>& offsets, const Matrix<T>& dsamples,
                                GridTensor<T>* dgrid, Matrix<T>* doffsets);

template <class T>
struct AttentionParams {
  Linear<T> query;
  Linear<T> key;
  Linear<T> value;
  Linear<T> offset;  // C -> 3 * 27
  Param<T> pos;      // 27

  AttentionParams() = default;
  AttentionParams(const std::string& name, size_t channels);
  size_t channels() const { return query.in(); }
  /// Kaiming for q/k/v; zeros for the offset predictor and pos, so sampling
  /// starts as a plain 3x3x3 unfold.
  void init(Rng& rng);
};

template <class T>
struct GraphReasonCache {
  GridTensor<T> input;
  Matrix<T> q, k, v;
  Matrix<T> offsets;
  GridTensor<T> key_grid, value_grid;
  Matrix<T> key_samples, value_samples;  // (V * 27) x C
  Matrix<T> attention;                   // V x 27, rows sum to 1
};

/// logits[u][t] = <q[u], K[u][t]> / sqrt(C) + pos[t]; out[u] = sum_t
/// softmax(logits[u])[t] * V[u][t], with K and V deformably sampled from
/// the key and value grids at offsets predicted from the input.
template <class T>
GridTensor<T> graph_reason(const GridTensor<T>& input, const AttentionParams<T>& params,
                           GraphReasonCache<T>* cache = nullptr);
template <class T>
GridTensor<T> graph_reason_backward(const GridTensor<T>& dout, AttentionParams<T>& params,
                                    const GraphReasonCache<T>& cache);

}  // namespace ptseg
