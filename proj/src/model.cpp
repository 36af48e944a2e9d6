// Copyright 2026 The ptseg Authors
// SPDX-License-Identifier: Apache-2.0

#include "ptseg/model.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace ptseg {

void ModelConfig::validate() const {
  hierarchy(0).validate();
  if (channels.size() != kNumLevels) fail(ErrorCode::kConfig, "channels must list 4 level widths");
  for (size_t c : channels)
    if (c < 1) fail(ErrorCode::kConfig, "channel widths must be >= 1");
  if (classes != kNumClasses) fail(ErrorCode::kConfig, "classes must be 8");
  if (head.empty() || head.back() != static_cast<size_t>(classes))
    fail(ErrorCode::kConfig, "head must end in the class count");
  for (size_t w : head)
    if (w < 1) fail(ErrorCode::kConfig, "head widths must be >= 1");
  if (input_channels < 1) fail(ErrorCode::kConfig, "input_channels must be >= 1");
}

HierarchyConfig ModelConfig::hierarchy(uint64_t seed) const {
  HierarchyConfig h;
  h.grid_size_level1 = grid_size_level1;
  h.radius_level1 = radius_level1;
  h.downsample_ratio = downsample_ratio;
  h.max_neighbors = max_neighbors;
  h.seed = seed;
  return h;
}

char ModelConfig::ablation() const {
  if (enable_grid_embeddings) return enable_graph_reasoning ? 'd' : 'b';
  return enable_graph_reasoning ? 'c' : 'a';
}

ModelConfig ModelConfig::desk() { return ModelConfig{}; }

ModelConfig ModelConfig::msd() {
  ModelConfig c;
  c.grid_size_level1 = 64;
  c.radius_level1 = 1.0 / (2.0 * 64.0);
  c.channels = {32, 64, 128, 256};
  c.max_neighbors = 100;
  return c;
}

ModelConfig ModelConfig::lits() {
  ModelConfig c = msd();
  c.grid_size_level1 = 32;
  c.radius_level1 = 1.0 / (2.0 * 32.0);
  return c;
}

ModelConfig ModelConfig::with_ablation(ModelConfig base, char ablation) {
  switch (ablation) {
    case 'a': base.enable_grid_embeddings = false; base.enable_graph_reasoning = false; break;
    case 'b': base.enable_grid_embeddings = true; base.enable_graph_reasoning = false; break;
    case 'c': base.enable_grid_embeddings = false; base.enable_graph_reasoning = true; break;
    case 'd': base.enable_grid_embeddings = true; base.enable_graph_reasoning = true; break;
    default: fail(ErrorCode::kConfig, std::string("unknown ablation '") + ablation + "'");
  }
  return base;
}

// ---------------------------------------------------------------------------
// Parameters

template <class T>
size_t ModelParams<T>::parameter_count() const {
  size_t n = 0;
  for_each([&](const Param<T>& p) { n += p.size(); });
  return n;
}

template <class T>
void ModelParams<T>::zero_grad() {
  for_each([](Param<T>& p) { p.zero_grad(); });
}

template <class T>
ModelParams<T> init_params(const ModelConfig& config, uint64_t seed) {
  config.validate();
  Rng rng(derive_seed(seed, "init"));
  ModelParams<T> p;
  size_t prev = config.input_channels + 3;
  for (int l = 0; l < kNumLevels; ++l) {
    const size_t c = config.channels[l];
    const std::string name = "level" + std::to_string(l + 1);
    LevelParams<T> level;
    level.edge = Linear<T>(name + ".edge", prev + 3, c);
    level.edge.init(rng);
    if (config.enable_grid_embeddings) {
      // Second conv starts at zero so each block is the identity at init.
      level.embed1.emplace(name + ".embed1", c, c);
      level.embed1->init(rng);
      std::fill(level.embed1->conv2.weight.value.begin(), level.embed1->conv2.weight.value.end(), T(0));
      level.embed2.emplace(name + ".embed2", c, c);
      level.embed2->init(rng);
      std::fill(level.embed2->conv2.weight.value.begin(), level.embed2->conv2.weight.value.end(), T(0));
    }
    if (config.enable_graph_reasoning) {
      level.attention.emplace(name + ".graph", c);
      level.attention->init(rng);
    }
    p.levels.push_back(std::move(level));
    prev = c;
  }
  const size_t head_in = config.channels.back() + (config.head_skip ? config.channels.front() : 0);
  p.head = Mlp<T>("head", head_in, config.head);
  p.head.init(rng);
  return p;
}

template <class To, class From>
ModelParams<To> cast_params(const ModelParams<From>& p) {
  ModelParams<To> out;
  auto linear = [](const Linear<From>& l) {
    Linear<To> o;
    o.weight = cast_param<To>(l.weight);
    o.bias = cast_param<To>(l.bias);
    return o;
  };
  auto conv = [](const Conv3d<From>& c) {
    Conv3d<To> o;
    o.weight = cast_param<To>(c.weight);
    o.bias = cast_param<To>(c.bias);
    return o;
  };
  auto block = [&](const ResidualBlock<From>& b) {
    ResidualBlock<To> o;
    o.conv1 = conv(b.conv1);
    o.conv2 = conv(b.conv2);
    o.has_proj = b.has_proj;
    if (b.has_proj) o.proj = linear(b.proj);
    return o;
  };
  for (const auto& level : p.levels) {
    LevelParams<To> l;
    l.edge = linear(level.edge);
    if (level.embed1) l.embed1 = block(*level.embed1);
    if (level.embed2) l.embed2 = block(*level.embed2);
    if (level.attention) {
      AttentionParams<To> a;
      a.query = linear(level.attention->query);
      a.key = linear(level.attention->key);
      a.value = linear(level.attention->value);
      a.offset = linear(level.attention->offset);
      a.pos = cast_param<To>(level.attention->pos);
      l.attention = std::move(a);
    }
    out.levels.push_back(std::move(l));
  }
  for (const auto& layer : p.head.layers) out.head.layers.push_back(linear(layer));
  return out;
}

// ---------------------------------------------------------------------------
// Point aggregation

template <class T>
Matrix<T> point_aggregate(const LevelData& level, const Matrix<T>& prev, const Linear<T>& edge,
                          AggregateCache<T>* cache) {
  const auto& nb = level.neighbors;
  const size_t n = nb.query_count(), cp = prev.cols;
  if (edge.in() != cp + 3) fail(ErrorCode::kConfig, "point_aggregate: edge layer width mismatch");
  // Offsets are expressed in units of the ball radius.
  const double inv_radius = level.radius > 0.0 ? 1.0 / level.radius : 1.0;
  Matrix<T> edge_in(nb.ids.size(), cp + 3);
  for (size_t e = 0; e < nb.ids.size(); ++e) {
    if (nb.ids[e] >= prev.rows) fail(ErrorCode::kConfig, "point_aggregate: neighbor id out of range");
    T* row = edge_in.row(e);
    std::copy(prev.row(nb.ids[e]), prev.row(nb.ids[e]) + cp, row);
    for (int a = 0; a < 3; ++a) row[cp + a] = static_cast<T>(level.neighbor_offsets[e][a] * inv_radius);
  }
  Matrix<T> edge_out = linear_forward(edge_in, edge);
  relu_inplace(edge_out);

  const size_t c = edge.out();
  Matrix<T> out(n, c);
  std::vector<uint32_t> argmax(n * c);
  for (size_t j = 0; j < n; ++j) {
    const uint32_t first = nb.start[j], last = nb.start[j + 1];
    // The neighbors module guarantees at least one neighbor per point.
    if (first == last) fail(ErrorCode::kConfig, "point_aggregate: empty neighbor list");
    T* o = out.row(j);
    uint32_t* am = argmax.data() + j * c;
    std::copy(edge_out.row(first), edge_out.row(first) + c, o);
    std::fill(am, am + c, first);
    for (uint32_t e = first + 1; e < last; ++e) {
      const T* r = edge_out.row(e);
      for (size_t ch = 0; ch < c; ++ch)
        if (r[ch] > o[ch]) {
          o[ch] = r[ch];
          am[ch] = e;
        }
    }
  }
  if (cache) {
    cache->edge_in = std::move(edge_in);
    cache->edge_out = std::move(edge_out);
    cache->argmax = std::move(argmax);
  }
  return out;
}

template <class T>
Matrix<T> point_aggregate_backward(const Matrix<T>& dout, const LevelData& level, size_t prev_rows,
                                   Linear<T>& edge, const AggregateCache<T>& cache) {
  const auto& nb = level.neighbors;
  const size_t c = edge.out(), cp = edge.in() - 3;
  Matrix<T> dedge(nb.ids.size(), c);
  for (size_t j = 0; j < dout.rows; ++j)
    for (size_t ch = 0; ch < c; ++ch) dedge(cache.argmax[j * c + ch], ch) += dout(j, ch);
  relu_backward_inplace(cache.edge_out, dedge);
  const Matrix<T> din = linear_backward(cache.edge_in, dedge, edge);
  Matrix<T> dprev(prev_rows, cp);
  for (size_t e = 0; e < nb.ids.size(); ++e) {
    T* d = dprev.row(nb.ids[e]);
    const T* s = din.row(e);
    for (size_t ch = 0; ch < cp; ++ch) d[ch] += s[ch];
  }
  return dprev;
}

// ---------------------------------------------------------------------------
// Network

HeadInterp head_interpolation(std::span<const Vec3> targets, std::span<const Vec3> sources) {
  if (sources.empty()) fail(ErrorCode::kEmptyRegion, "head_interpolation: no source points");
  HeadInterp h;
  h.ids.resize(targets.size());
  h.weights.resize(targets.size());
  const size_t k = std::min<size_t>(3, sources.size());
  std::vector<std::pair<double, uint32_t>> d(sources.size());
  for (size_t t = 0; t < targets.size(); ++t) {
    for (uint32_t s = 0; s < sources.size(); ++s) d[s] = {squared_distance(targets[t], sources[s]), s};
    std::partial_sort(d.begin(), d.begin() + static_cast<std::ptrdiff_t>(k), d.end());
    double total = 0.0;
    for (size_t i = 0; i < 3; ++i) {
      if (i < k) {
        h.ids[t][i] = d[i].second;
        h.weights[t][i] = 1.0 / (std::sqrt(d[i].first) + 1e-8);
        total += h.weights[t][i];
      } else {
        h.ids[t][i] = 0;
        h.weights[t][i] = 0.0;
      }
    }
    for (auto& w : h.weights[t]) w /= total;
  }
  return h;
}

template <class T>
Matrix<T> input_features(const PointCloud& points) {
  const size_t c = points.channels;
  Matrix<T> x(points.size(), c + 3);
  for (size_t n = 0; n < points.size(); ++n) {
    T* r = x.row(n);
    for (size_t ch = 0; ch < c; ++ch) r[ch] = static_cast<T>(points.feats[n * c + ch]);
    for (int a = 0; a < 3; ++a) r[c + a] = static_cast<T>(2.0 * points.coords[n][a] - 1.0);
  }
  return x;
}

namespace {

void check_compatible(const PointCloud& points, const Hierarchy& h, const ModelConfig& config) {
  if (h.levels.size() != kNumLevels) fail(ErrorCode::kConfig, "hierarchy must have 4 levels");
  if (h.input_size() != points.size()) fail(ErrorCode::kConfig, "hierarchy was built for a different point set");
  if (points.channels != config.input_channels) fail(ErrorCode::kConfig, "point feature width differs from config");
  for (int l = 0; l < kNumLevels; ++l)
    if (h.levels[l].grid_size != (config.grid_size_level1 >> l))
      fail(ErrorCode::kConfig, "hierarchy grid sizes differ from config");
}

}  // namespace

template <class T>
Matrix<T> forward(const PointCloud& points, const Hierarchy& h, const ModelParams<T>& params,
                  const ModelConfig& config, ForwardCache<T>* cache) {
  check_compatible(points, h, config);
  ForwardCache<T> local;
  ForwardCache<T>& c = cache ? *cache : local;
  c.input = input_features<T>(points);
  c.levels.assign(kNumLevels, LevelCache<T>{});

  const Matrix<T>* prev = &c.input;
  for (int l = 0; l < kNumLevels; ++l) {
    const LevelData& level = h.levels[l];
    const LevelParams<T>& lp = params.levels[l];
    LevelCache<T>& lc = c.levels[l];
    lc.aggregated = point_aggregate(level, *prev, lp.edge, &lc.aggregate);
    lc.features = lc.aggregated;
    if (config.uses_grid()) {
      lc.assignment = assign_voxels(level.coords, level.grid_size);
      GridTensor<T> grid = voxelize(lc.aggregated, lc.assignment);
      if (lp.embed1) grid = residual_conv3d(grid, *lp.embed1, &lc.embed1);
      if (lp.embed2) grid = residual_conv3d(grid, *lp.embed2, &lc.embed2);
      if (lp.attention) grid = graph_reason(grid, *lp.attention, &lc.attention);
      lc.grid_channels = grid.channels();
      lc.interp = devoxelize_weights(level.coords, level.grid_size);
      const Matrix<T> back = devoxelize(grid, lc.interp);
      for (size_t i = 0; i < back.data.size(); ++i) lc.features.data[i] += back.data[i];
    }
    prev = &lc.features;
  }

  const Matrix<T>& top = c.levels.back().features;
  const Matrix<T>& base = c.levels.front().features;
  c.interp = head_interpolation(h.levels.front().coords, h.levels.back().coords);
  const size_t ct = top.cols, cb = config.head_skip ? base.cols : 0;
  c.head_in = Matrix<T>(points.size(), ct + cb);
  for (size_t n = 0; n < points.size(); ++n) {
    T* r = c.head_in.row(n);
    for (int i = 0; i < 3; ++i) {
      const T w = static_cast<T>(c.interp.weights[n][i]);
      if (w == T(0)) continue;
      const T* s = top.row(c.interp.ids[n][i]);
      for (size_t ch = 0; ch < ct; ++ch) r[ch] += w * s[ch];
    }
    if (cb) std::copy(base.row(n), base.row(n) + cb, r + ct);
  }
  return mlp_forward(c.head_in, params.head, &c.head);
}

template <class T>
void backward(const Matrix<T>& dlogits, const Hierarchy& h, ModelParams<T>& params, const ModelConfig& config,
              const ForwardCache<T>& c) {
  const Matrix<T> dhead = mlp_backward(dlogits, params.head, c.head);
  std::vector<Matrix<T>> dfeat(kNumLevels);
  for (int l = 0; l < kNumLevels; ++l) dfeat[l] = Matrix<T>(c.levels[l].features.rows, c.levels[l].features.cols);

  const size_t ct = c.levels.back().features.cols;
  for (size_t n = 0; n < dhead.rows; ++n) {
    const T* g = dhead.row(n);
    for (int i = 0; i < 3; ++i) {
      const T w = static_cast<T>(c.interp.weights[n][i]);
      if (w == T(0)) continue;
      T* d = dfeat.back().row(c.interp.ids[n][i]);
      for (size_t ch = 0; ch < ct; ++ch) d[ch] += w * g[ch];
    }
    if (config.head_skip) {
      T* d = dfeat.front().row(n);
      for (size_t ch = 0; ch < dfeat.front().cols; ++ch) d[ch] += g[ct + ch];
    }
  }

  for (int l = kNumLevels - 1; l >= 0; --l) {
    const LevelData& level = h.levels[l];
    LevelParams<T>& lp = params.levels[l];
    const LevelCache<T>& lc = c.levels[l];
    Matrix<T> dagg = dfeat[l];
    if (config.uses_grid()) {
      GridTensor<T> dgrid = devoxelize_backward(dfeat[l], lc.interp, lc.grid_channels);
      if (lp.attention) dgrid = graph_reason_backward(dgrid, *lp.attention, lc.attention);
      if (lp.embed2) dgrid = residual_conv3d_backward(dgrid, *lp.embed2, lc.embed2);
      if (lp.embed1) dgrid = residual_conv3d_backward(dgrid, *lp.embed1, lc.embed1);
      const Matrix<T> dvox = voxelize_backward(dgrid, lc.assignment);
      for (size_t i = 0; i < dvox.data.size(); ++i) dagg.data[i] += dvox.data[i];
    }
    const size_t prev_rows = l == 0 ? c.input.rows : c.levels[l - 1].features.rows;
    const Matrix<T> dprev = point_aggregate_backward(dagg, level, prev_rows, lp.edge, lc.aggregate);
    if (l > 0)
      for (size_t i = 0; i < dprev.data.size(); ++i) dfeat[l - 1].data[i] += dprev.data[i];
  }
}

template <class T>
T loss_and_grad(const PointCloud& points, const Hierarchy& h, ModelParams<T>& params, const ModelConfig& config) {
  if (!points.has_labels()) fail(ErrorCode::kLabel, "training points carry no labels");
  params.zero_grad();
  ForwardCache<T> cache;
  const Matrix<T> logits = forward(points, h, params, config, &cache);
  Matrix<T> dlogits;
  const T loss = cross_entropy(logits, std::span<const int>(points.labels), &dlogits);
  backward(dlogits, h, params, config, cache);
  return loss;
}

template <class T>
std::vector<int> argmax_labels(const Matrix<T>& logits) {
  std::vector<int> labels(logits.rows);
  for (size_t r = 0; r < logits.rows; ++r) {
    const T* row = logits.row(r);
    labels[r] = static_cast<int>(std::max_element(row, row + logits.cols) - row);
  }
  return labels;
}

std::vector<int> infer(const PointCloud& points, const Hierarchy& h, const ModelParams<float>& params,
                       const ModelConfig& config) {
  return argmax_labels(forward(points, h, params, config));
}

std::vector<int> infer_case(const PointCloud& points, const ModelParams<float>& params, const ModelConfig& config,
                            double sample_fraction, uint64_t seed) {
  const size_t n = points.size();
  if (n < 4) fail(ErrorCode::kInvalidArgument, "infer_case needs at least 4 points");
  if (!(sample_fraction > 0.0 && sample_fraction <= 1.0))
    fail(ErrorCode::kConfig, "sample_fraction must be in (0, 1]");
  size_t chunks = std::max<size_t>(1, static_cast<size_t>(std::lround(1.0 / sample_fraction)));
  chunks = std::clamp<size_t>(chunks, 1, n / 4);

  std::vector<size_t> order(n);
  for (size_t i = 0; i < n; ++i) order[i] = i;
  Rng rng(derive_seed(seed, "infer/partition"));
  for (size_t i = n - 1; i > 0; --i) std::swap(order[i], order[rng.below(i + 1)]);

  std::vector<int> labels(n, 0);
  for (size_t k = 0; k < chunks; ++k) {
    std::vector<size_t> chunk(order.begin() + static_cast<std::ptrdiff_t>(k * n / chunks),
                              order.begin() + static_cast<std::ptrdiff_t>((k + 1) * n / chunks));
    std::sort(chunk.begin(), chunk.end());
    const PointCloud sub = points.select(chunk);
    const Hierarchy h = build_hierarchy(sub.coords, config.hierarchy(derive_seed(seed, "infer/chunk" + std::to_string(k))));
    const auto sub_labels = infer(sub, h, params, config);
    for (size_t i = 0; i < chunk.size(); ++i) labels[chunk[i]] = sub_labels[i];
  }
  return labels;
}

Volume labels_to_volume(const PointCloud& points, std::span<const int> labels, const VolumeGeometry& geometry) {
  if (points.source_voxels.size() != points.size())
    fail(ErrorCode::kInvalidArgument, "labels_to_volume needs source voxels");
  if (labels.size() != points.size()) fail(ErrorCode::kLength, "label count differs from point count");
  Volume out = Volume::zeros(geometry, VolumeKind::kLabel);
  for (size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || labels[i] >= kNumClasses) fail(ErrorCode::kLabel, "label out of range");
    if (!geometry.contains(points.source_voxels[i])) fail(ErrorCode::kOutOfBounds, "source voxel outside volume");
    out.at(points.source_voxels[i]) = static_cast<float>(labels[i] + 1);
  }
  return out;
}

#define PTSEG_INSTANTIATE(T)                                                                                  \
  template struct ModelParams<T>;                                                                           \
  template ModelParams<T> init_params(const ModelConfig&, uint64_t);                                        \
  template Matrix<T> point_aggregate(const LevelData&, const Matrix<T>&, const Linear<T>&, AggregateCache<T>*); \
  template Matrix<T> point_aggregate_backward(const Matrix<T>&, const LevelData&, size_t, Linear<T>&,        \
                                              const AggregateCache<T>&);                                    \
  template Matrix<T> input_features(const PointCloud&);                                                     \
  template Matrix<T> forward(const PointCloud&, const Hierarchy&, const ModelParams<T>&, const ModelConfig&, \
                             ForwardCache<T>*);                                                             \
  template void backward(const Matrix<T>&, const Hierarchy&, ModelParams<T>&, const ModelConfig&,            \
                         const ForwardCache<T>&);                                                           \
  template T loss_and_grad(const PointCloud&, const Hierarchy&, ModelParams<T>&, const ModelConfig&);        \
  template std::vector<int> argmax_labels(const Matrix<T>&);

PTSEG_INSTANTIATE(float)
PTSEG_INSTANTIATE(double)
#undef PTSEG_INSTANTIATE

template ModelParams<double> cast_params<double, float>(const ModelParams<float>&);
template ModelParams<float> cast_params<float, double>(const ModelParams<double>&);

}  // namespace ptseg
