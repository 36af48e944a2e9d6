// Copyright 2026 The ptseg Authors
// SPDX-License-Identifier: Apache-2.0

#include "ptseg/diffops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace ptseg {

OpCounters& op_counters() {
  thread_local OpCounters counters;
  return counters;
}

// ---------------------------------------------------------------------------
// Dense layers

template <class T>
Matrix<T> linear_forward(const Matrix<T>& x, const Linear<T>& layer) {
  const size_t in = layer.in(), out = layer.out();
  if (x.cols != in) fail(ErrorCode::kConfig, "linear: input width mismatch for " + layer.weight.name);
  Matrix<T> y(x.rows, out);
  const T* w = layer.weight.value.data();
  const T* b = layer.bias.value.data();
#pragma omp parallel for schedule(static)
  for (size_t n = 0; n < x.rows; ++n) {
    const T* xr = x.row(n);
    T* yr = y.row(n);
    for (size_t o = 0; o < out; ++o) {
      const T* wr = w + o * in;
      T acc = b[o];
      for (size_t i = 0; i < in; ++i) acc += wr[i] * xr[i];
      yr[o] = acc;
    }
  }
  return y;
}

template <class T>
Matrix<T> linear_backward(const Matrix<T>& x, const Matrix<T>& dy, Linear<T>& layer) {
  const size_t in = layer.in(), out = layer.out();
  Matrix<T> dx(x.rows, in);
  const T* w = layer.weight.value.data();
#pragma omp parallel for schedule(static)
  for (size_t n = 0; n < x.rows; ++n) {
    const T* dyr = dy.row(n);
    T* dxr = dx.row(n);
    for (size_t o = 0; o < out; ++o) {
      const T g = dyr[o];
      if (g == T(0)) continue;
      const T* wr = w + o * in;
      for (size_t i = 0; i < in; ++i) dxr[i] += g * wr[i];
    }
  }
  // Each output row of the weight gradient is owned by one iteration.
  T* gw = layer.weight.grad.data();
  T* gb = layer.bias.grad.data();
#pragma omp parallel for schedule(static)
  for (size_t o = 0; o < out; ++o) {
    T* gwr = gw + o * in;
    T bsum = T(0);
    for (size_t n = 0; n < x.rows; ++n) {
      const T g = dy(n, o);
      if (g == T(0)) continue;
      bsum += g;
      const T* xr = x.row(n);
      for (size_t i = 0; i < in; ++i) gwr[i] += g * xr[i];
    }
    gb[o] += bsum;
  }
  return dx;
}

template <class T>
void relu_inplace(Matrix<T>& x) {
  for (auto& v : x.data) v = v > T(0) ? v : T(0);
}

template <class T>
void relu_backward_inplace(const Matrix<T>& y, Matrix<T>& dy) {
  for (size_t i = 0; i < dy.data.size(); ++i)
    if (!(y.data[i] > T(0))) dy.data[i] = T(0);
}

template <class T>
Mlp<T>::Mlp(const std::string& name, size_t in, const std::vector<size_t>& widths) {
  size_t prev = in;
  for (size_t i = 0; i < widths.size(); ++i) {
    layers.emplace_back(name + "." + std::to_string(i), prev, widths[i]);
    prev = widths[i];
  }
}

template <class T>
Matrix<T> mlp_forward(const Matrix<T>& x, const Mlp<T>& mlp, MlpCache<T>* cache) {
  if (cache) cache->inputs.clear();
  Matrix<T> h = x;
  for (size_t i = 0; i < mlp.layers.size(); ++i) {
    if (cache) cache->inputs.push_back(h);
    h = linear_forward(h, mlp.layers[i]);
    if (i + 1 < mlp.layers.size()) relu_inplace(h);
  }
  return h;
}

template <class T>
Matrix<T> mlp_backward(const Matrix<T>& dy, Mlp<T>& mlp, const MlpCache<T>& cache) {
  Matrix<T> g = dy;
  for (size_t i = mlp.layers.size(); i-- > 0;) {
    // The cached input of layer i + 1 is the activated output of layer i.
    if (i + 1 < mlp.layers.size()) relu_backward_inplace(cache.inputs[i + 1], g);
    g = linear_backward(cache.inputs[i], g, mlp.layers[i]);
  }
  return g;
}

template <class T>
Matrix<T> softmax_rows(const Matrix<T>& x) {
  Matrix<T> y(x.rows, x.cols);
  for (size_t r = 0; r < x.rows; ++r) {
    const T* xr = x.row(r);
    T* yr = y.row(r);
    T m = *std::max_element(xr, xr + x.cols);
    T sum = T(0);
    for (size_t c = 0; c < x.cols; ++c) sum += (yr[c] = std::exp(xr[c] - m));
    for (size_t c = 0; c < x.cols; ++c) yr[c] /= sum;
  }
  return y;
}

template <class T>
Matrix<T> softmax_rows_backward(const Matrix<T>& y, const Matrix<T>& dy) {
  Matrix<T> dx(y.rows, y.cols);
  for (size_t r = 0; r < y.rows; ++r) {
    T dot = T(0);
    for (size_t c = 0; c < y.cols; ++c) dot += y(r, c) * dy(r, c);
    for (size_t c = 0; c < y.cols; ++c) dx(r, c) = y(r, c) * (dy(r, c) - dot);
  }
  return dx;
}

template <class T>
T cross_entropy(const Matrix<T>& logits, std::span<const int> labels, Matrix<T>* dlogits) {
  if (labels.size() != logits.rows) fail(ErrorCode::kLength, "cross_entropy: label count mismatch");
  if (logits.rows == 0) fail(ErrorCode::kEmptyRegion, "cross_entropy: no rows");
  if (dlogits) *dlogits = Matrix<T>(logits.rows, logits.cols);
  double total = 0.0;
  const T inv_n = T(1) / static_cast<T>(logits.rows);
  for (size_t r = 0; r < logits.rows; ++r) {
    const int label = labels[r];
    if (label < 0 || static_cast<size_t>(label) >= logits.cols)
      fail(ErrorCode::kLabel, "cross_entropy: label " + std::to_string(label) + " out of range");
    const T* xr = logits.row(r);
    const T m = *std::max_element(xr, xr + logits.cols);
    T sum = T(0);
    for (size_t c = 0; c < logits.cols; ++c) sum += std::exp(xr[c] - m);
    const T lse = m + std::log(sum);
    total += static_cast<double>(lse - xr[label]);
    if (dlogits) {
      T* gr = dlogits->row(r);
      for (size_t c = 0; c < logits.cols; ++c) gr[c] = std::exp(xr[c] - lse) * inv_n;
      gr[label] -= inv_n;
    }
  }
  return static_cast<T>(total / static_cast<double>(logits.rows));
}

// ---------------------------------------------------------------------------
// Point <-> grid

VoxelAssignment assign_voxels(std::span<const Vec3> coords, int grid_size) {
  if (grid_size < 1) fail(ErrorCode::kInvalidArgument, "grid size must be >= 1");
  VoxelAssignment a;
  a.size = grid_size;
  const auto m = static_cast<size_t>(grid_size);
  a.count.assign(m * m * m, 0);
  a.voxel.reserve(coords.size());
  for (const auto& p : coords) {
    std::array<size_t, 3> idx{};
    for (int ax = 0; ax < 3; ++ax) {
      if (!(p[ax] >= 0.0 && p[ax] <= 1.0)) fail(ErrorCode::kDomain, "voxelize: coordinate outside [0,1]");
      idx[ax] = std::min(static_cast<size_t>(std::floor(p[ax] * grid_size)), m - 1);
    }
    const auto v = static_cast<uint32_t>(idx[0] + m * (idx[1] + m * idx[2]));
    a.voxel.push_back(v);
    ++a.count[v];
  }
  return a;
}

template <class T>
GridTensor<T> voxelize(const Matrix<T>& feats, const VoxelAssignment& a) {
  ++op_counters().voxelize;
  if (feats.rows != a.voxel.size()) fail(ErrorCode::kLength, "voxelize: point count mismatch");
  GridTensor<T> grid(a.size, feats.cols);
  for (size_t n = 0; n < feats.rows; ++n) {
    T* g = grid.values.row(a.voxel[n]);
    const T* f = feats.row(n);
    for (size_t c = 0; c < feats.cols; ++c) g[c] += f[c];
  }
  for (size_t v = 0; v < grid.voxels(); ++v) {
    if (a.count[v] <= 1) continue;
    const auto count = static_cast<T>(a.count[v]);
    T* g = grid.values.row(v);
    for (size_t c = 0; c < feats.cols; ++c) g[c] /= count;
  }
  return grid;
}

template <class T>
Matrix<T> voxelize_backward(const GridTensor<T>& dgrid, const VoxelAssignment& a) {
  Matrix<T> dfeats(a.voxel.size(), dgrid.channels());
  for (size_t n = 0; n < a.voxel.size(); ++n) {
    const uint32_t v = a.voxel[n];
    const T inv = T(1) / static_cast<T>(a.count[v]);
    const T* g = dgrid.values.row(v);
    T* d = dfeats.row(n);
    for (size_t c = 0; c < dgrid.channels(); ++c) d[c] = g[c] * inv;
  }
  return dfeats;
}

InterpWeights devoxelize_weights(std::span<const Vec3> coords, int grid_size) {
  if (grid_size < 1) fail(ErrorCode::kInvalidArgument, "grid size must be >= 1");
  InterpWeights w;
  w.size = grid_size;
  w.voxel.resize(coords.size());
  w.weight.resize(coords.size());
  const int m = grid_size;
  for (size_t n = 0; n < coords.size(); ++n) {
    int lo[3];
    double t[3];
    for (int ax = 0; ax < 3; ++ax) {
      const double c = coords[n][ax];
      if (!(c >= 0.0 && c <= 1.0)) fail(ErrorCode::kDomain, "devoxelize: coordinate outside [0,1]");
      // Continuous index whose integer values are voxel centers.
      const double g = std::clamp(c * m - 0.5, 0.0, static_cast<double>(m - 1));
      lo[ax] = std::min(static_cast<int>(std::floor(g)), std::max(m - 2, 0));
      t[ax] = g - lo[ax];
    }
    for (int corner = 0; corner < 8; ++corner) {
      int idx[3];
      double weight = 1.0;
      for (int ax = 0; ax < 3; ++ax) {
        const int bit = (corner >> ax) & 1;
        idx[ax] = std::min(lo[ax] + bit, m - 1);
        weight *= bit ? t[ax] : 1.0 - t[ax];
      }
      w.voxel[n][corner] = static_cast<uint32_t>(idx[0] + m * (idx[1] + m * idx[2]));
      w.weight[n][corner] = weight;
    }
  }
  return w;
}

template <class T>
Matrix<T> devoxelize(const GridTensor<T>& grid, const InterpWeights& w) {
  ++op_counters().devoxelize;
  if (grid.size != w.size) fail(ErrorCode::kConfig, "devoxelize: grid size mismatch");
  const size_t channels = grid.channels();
  Matrix<T> out(w.voxel.size(), channels);
#pragma omp parallel for schedule(static)
  for (size_t n = 0; n < w.voxel.size(); ++n) {
    T* o = out.row(n);
    for (int corner = 0; corner < 8; ++corner) {
      const T weight = static_cast<T>(w.weight[n][corner]);
      if (weight == T(0)) continue;
      const T* g = grid.values.row(w.voxel[n][corner]);
      for (size_t c = 0; c < channels; ++c) o[c] += weight * g[c];
    }
  }
  return out;
}

template <class T>
GridTensor<T> devoxelize_backward(const Matrix<T>& dfeats, const InterpWeights& w, size_t channels) {
  GridTensor<T> dgrid(w.size, channels);
  for (size_t n = 0; n < w.voxel.size(); ++n) {
    const T* d = dfeats.row(n);
    for (int corner = 0; corner < 8; ++corner) {
      const T weight = static_cast<T>(w.weight[n][corner]);
      if (weight == T(0)) continue;
      T* g = dgrid.values.row(w.voxel[n][corner]);
      for (size_t c = 0; c < channels; ++c) g[c] += weight * d[c];
    }
  }
  return dgrid;
}

// ---------------------------------------------------------------------------
// 3D convolution

namespace {

/// Neighbor voxel of `u` at tap t, or -1 outside the grid.
inline int64_t tap_neighbor(int m, int x, int y, int z, int t) {
  const auto d = tap_delta(t);
  const int nx = x + d[0], ny = y + d[1], nz = z + d[2];
  if (nx < 0 || ny < 0 || nz < 0 || nx >= m || ny >= m || nz >= m) return -1;
  return nx + static_cast<int64_t>(m) * (ny + static_cast<int64_t>(m) * nz);
}

}  // namespace

template <class T>
GridTensor<T> conv3d_forward(const GridTensor<T>& x, const Conv3d<T>& conv) {
  ++op_counters().conv3d;
  const size_t cin = conv.in(), cout = conv.out();
  if (x.channels() != cin) fail(ErrorCode::kConfig, "conv3d: channel mismatch for " + conv.weight.name);
  const int m = x.size;
  GridTensor<T> y(m, cout);
  const T* w = conv.weight.value.data();
  const T* b = conv.bias.value.data();
#pragma omp parallel for schedule(static)
  for (int z = 0; z < m; ++z)
    for (int yy = 0; yy < m; ++yy)
      for (int xx = 0; xx < m; ++xx) {
        T* out = y.values.row(y.voxel_index(xx, yy, z));
        std::copy(b, b + cout, out);
        for (int t = 0; t < kTaps; ++t) {
          const int64_t nb = tap_neighbor(m, xx, yy, z, t);
          if (nb < 0) continue;
          const T* xr = x.values.row(static_cast<size_t>(nb));
          const T* wt = w + static_cast<size_t>(t) * cin * cout;
          for (size_t ci = 0; ci < cin; ++ci) {
            const T a = xr[ci];
            if (a == T(0)) continue;
            const T* wr = wt + ci * cout;
            for (size_t co = 0; co < cout; ++co) out[co] += a * wr[co];
          }
        }
      }
  return y;
}

template <class T>
GridTensor<T> conv3d_backward(const GridTensor<T>& x, const GridTensor<T>& dy, Conv3d<T>& conv) {
  const size_t cin = conv.in(), cout = conv.out();
  const int m = x.size;
  GridTensor<T> dx(m, cin);
  const T* w = conv.weight.value.data();
  // x[v] feeds out[v - delta(t)] through tap t.
#pragma omp parallel for schedule(static)
  for (int z = 0; z < m; ++z)
    for (int yy = 0; yy < m; ++yy)
      for (int xx = 0; xx < m; ++xx) {
        T* d = dx.values.row(dx.voxel_index(xx, yy, z));
        for (int t = 0; t < kTaps; ++t) {
          const int64_t u = tap_neighbor(m, xx, yy, z, kTaps - 1 - t);
          if (u < 0) continue;
          const T* g = dy.values.row(static_cast<size_t>(u));
          const T* wt = w + static_cast<size_t>(t) * cin * cout;
          for (size_t ci = 0; ci < cin; ++ci) {
            const T* wr = wt + ci * cout;
            T acc = T(0);
            for (size_t co = 0; co < cout; ++co) acc += wr[co] * g[co];
            d[ci] += acc;
          }
        }
      }
  // Weight gradient: one tap slice per iteration.
  T* gw = conv.weight.grad.data();
#pragma omp parallel for schedule(static)
  for (int t = 0; t < kTaps; ++t) {
    T* gt = gw + static_cast<size_t>(t) * cin * cout;
    for (int z = 0; z < m; ++z)
      for (int yy = 0; yy < m; ++yy)
        for (int xx = 0; xx < m; ++xx) {
          const int64_t nb = tap_neighbor(m, xx, yy, z, t);
          if (nb < 0) continue;
          const T* xr = x.values.row(static_cast<size_t>(nb));
          const T* g = dy.values.row(dy.voxel_index(xx, yy, z));
          for (size_t ci = 0; ci < cin; ++ci) {
            const T a = xr[ci];
            if (a == T(0)) continue;
            T* gr = gt + ci * cout;
            for (size_t co = 0; co < cout; ++co) gr[co] += a * g[co];
          }
        }
  }
  T* gb = conv.bias.grad.data();
  for (size_t v = 0; v < dy.voxels(); ++v) {
    const T* g = dy.values.row(v);
    for (size_t co = 0; co < cout; ++co) gb[co] += g[co];
  }
  return dx;
}

template <class T>
ResidualBlock<T>::ResidualBlock(const std::string& name, size_t in, size_t out)
    : conv1(name + ".conv1", in, out), conv2(name + ".conv2", out, out), has_proj(in != out) {
  if (has_proj) proj = Linear<T>(name + ".proj", in, out);
}

template <class T>
void ResidualBlock<T>::init(Rng& rng) {
  conv1.init(rng);
  conv2.init(rng);
  if (has_proj) proj.init(rng);
}

template <class T>
GridTensor<T> residual_conv3d(const GridTensor<T>& x, const ResidualBlock<T>& block, ResidualCache<T>* cache) {
  if (x.channels() != block.in()) fail(ErrorCode::kConfig, "residual_conv3d: channel mismatch");
  if (!block.has_proj && block.in() != block.out())
    fail(ErrorCode::kConfig, "residual_conv3d: channel change requires a projection");
  GridTensor<T> hidden = conv3d_forward(x, block.conv1);
  relu_inplace(hidden.values);
  GridTensor<T> branch = conv3d_forward(hidden, block.conv2);
  relu_inplace(branch.values);
  GridTensor<T> out = branch;
  if (block.has_proj) {
    const Matrix<T> skip = linear_forward(x.values, block.proj);
    for (size_t i = 0; i < out.values.data.size(); ++i) out.values.data[i] += skip.data[i];
  } else {
    for (size_t i = 0; i < out.values.data.size(); ++i) out.values.data[i] += x.values.data[i];
  }
  if (cache) {
    cache->input = x;
    cache->hidden = std::move(hidden);
    cache->branch = std::move(branch);
  }
  return out;
}

template <class T>
GridTensor<T> residual_conv3d_backward(const GridTensor<T>& dy, ResidualBlock<T>& block,
                                       const ResidualCache<T>& cache) {
  GridTensor<T> dbranch = dy;
  relu_backward_inplace(cache.branch.values, dbranch.values);
  GridTensor<T> dhidden = conv3d_backward(cache.hidden, dbranch, block.conv2);
  relu_backward_inplace(cache.hidden.values, dhidden.values);
  GridTensor<T> dx = conv3d_backward(cache.input, dhidden, block.conv1);
  if (block.has_proj) {
    const Matrix<T> dskip = linear_backward(cache.input.values, dy.values, block.proj);
    for (size_t i = 0; i < dx.values.data.size(); ++i) dx.values.data[i] += dskip.data[i];
  } else {
    for (size_t i = 0; i < dx.values.data.size(); ++i) dx.values.data[i] += dy.values.data[i];
  }
  return dx;
}

// ---------------------------------------------------------------------------
// Deformable sampling

namespace {

struct SampleStencil {
  int64_t voxel[8];  // -1 when outside the grid
  double weight[8];
  double dweight[8][3];  // d weight / d position
};

inline SampleStencil stencil_at(int m, double px, double py, double pz) {
  SampleStencil s;
  const double p[3] = {px, py, pz};
  int lo[3];
  double f[3];
  for (int ax = 0; ax < 3; ++ax) {
    const double fl = std::floor(p[ax]);
    lo[ax] = static_cast<int>(fl);
    f[ax] = p[ax] - fl;
  }
  for (int corner = 0; corner < 8; ++corner) {
    int idx[3];
    double fac[3], dfac[3];
    bool inside = true;
    for (int ax = 0; ax < 3; ++ax) {
      const int bit = (corner >> ax) & 1;
      idx[ax] = lo[ax] + bit;
      fac[ax] = bit ? f[ax] : 1.0 - f[ax];
      dfac[ax] = bit ? 1.0 : -1.0;
      if (idx[ax] < 0 || idx[ax] >= m) inside = false;
    }
    s.voxel[corner] = inside ? idx[0] + static_cast<int64_t>(m) * (idx[1] + static_cast<int64_t>(m) * idx[2]) : -1;
    s.weight[corner] = fac[0] * fac[1] * fac[2];
    s.dweight[corner][0] = dfac[0] * fac[1] * fac[2];
    s.dweight[corner][1] = fac[0] * dfac[1] * fac[2];
    s.dweight[corner][2] = fac[0] * fac[1] * dfac[2];
  }
  return s;
}

template <class T>
inline SampleStencil stencil_for(const GridTensor<T>& grid, const Matrix<T>& offsets, size_t u, int t) {
  const int m = grid.size;
  const auto mm = static_cast<size_t>(m);
  const int x = static_cast<int>(u % mm), y = static_cast<int>(u / mm % mm), z = static_cast<int>(u / (mm * mm));
  const auto d = tap_delta(t);
  const T* o = offsets.row(u) + 3 * t;
  return stencil_at(m, x + d[0] + static_cast<double>(o[0]), y + d[1] + static_cast<double>(o[1]),
                    z + d[2] + static_cast<double>(o[2]));
}

}  // namespace

template <class T>
Matrix<T> deformable_unfold(const GridTensor<T>& grid, const Matrix<T>& offsets) {
  ++op_counters().deformable_unfold;
  const size_t voxels = grid.voxels(), channels = grid.channels();
  if (offsets.rows != voxels || offsets.cols != 3 * kTaps)
    fail(ErrorCode::kConfig, "deformable_unfold: offsets must be V x 81");
  Matrix<T> samples(voxels * kTaps, channels);
#pragma omp parallel for schedule(static)
  for (size_t u = 0; u < voxels; ++u)
    for (int t = 0; t < kTaps; ++t) {
      const SampleStencil s = stencil_for(grid, offsets, u, t);
      T* out = samples.row(u * kTaps + t);
      for (int corner = 0; corner < 8; ++corner) {
        if (s.voxel[corner] < 0 || s.weight[corner] == 0.0) continue;
        const T w = static_cast<T>(s.weight[corner]);
        const T* g = grid.values.row(static_cast<size_t>(s.voxel[corner]));
        for (size_t c = 0; c < channels; ++c) out[c] += w * g[c];
      }
    }
  return samples;
}

template <class T>
void deformable_unfold_backward(const GridTensor<T>& grid, const Matrix<T>& offsets, const Matrix<T>& dsamples,
                                GridTensor<T>* dgrid, Matrix<T>* doffsets) {
  const size_t voxels = grid.voxels(), channels = grid.channels();
  if (doffsets) {
    *doffsets = Matrix<T>(voxels, 3 * kTaps);
#pragma omp parallel for schedule(static)
    for (size_t u = 0; u < voxels; ++u)
      for (int t = 0; t < kTaps; ++t) {
        const SampleStencil s = stencil_for(grid, offsets, u, t);
        const T* ds = dsamples.row(u * kTaps + t);
        T* dof = doffsets->row(u) + 3 * t;
        for (int corner = 0; corner < 8; ++corner) {
          if (s.voxel[corner] < 0) continue;
          const T* g = grid.values.row(static_cast<size_t>(s.voxel[corner]));
          T dot = T(0);
          for (size_t c = 0; c < channels; ++c) dot += ds[c] * g[c];
          for (int ax = 0; ax < 3; ++ax) dof[ax] += static_cast<T>(s.dweight[corner][ax]) * dot;
        }
      }
  }
  if (dgrid) {
    // Scatter runs serially so the accumulation order is fixed.
    *dgrid = GridTensor<T>(grid.size, channels);
    for (size_t u = 0; u < voxels; ++u)
      for (int t = 0; t < kTaps; ++t) {
        const SampleStencil s = stencil_for(grid, offsets, u, t);
        const T* ds = dsamples.row(u * kTaps + t);
        for (int corner = 0; corner < 8; ++corner) {
          if (s.voxel[corner] < 0 || s.weight[corner] == 0.0) continue;
          const T w = static_cast<T>(s.weight[corner]);
          T* g = dgrid->values.row(static_cast<size_t>(s.voxel[corner]));
          for (size_t c = 0; c < channels; ++c) g[c] += w * ds[c];
        }
      }
  }
}

// ---------------------------------------------------------------------------
// Graph reasoning

template <class T>
AttentionParams<T>::AttentionParams(const std::string& name, size_t channels)
    : query(name + ".query", channels, channels),
      key(name + ".key", channels, channels),
      value(name + ".value", channels, channels),
      offset(name + ".offset", channels, 3 * kTaps),
      pos(name + ".pos", {static_cast<size_t>(kTaps)}) {}

template <class T>
void AttentionParams<T>::init(Rng& rng) {
  query.init(rng);
  key.init(rng);
  value.init(rng);
}

template <class T>
GridTensor<T> graph_reason(const GridTensor<T>& input, const AttentionParams<T>& params, GraphReasonCache<T>* cache) {
  ++op_counters().graph_reason;
  const size_t channels = params.channels();
  if (input.channels() != channels) fail(ErrorCode::kConfig, "graph_reason: channel mismatch");
  const size_t voxels = input.voxels();
  const int m = input.size;

  GraphReasonCache<T> local;
  GraphReasonCache<T>& c = cache ? *cache : local;
  c.input = input;
  c.q = linear_forward(input.values, params.query);
  c.k = linear_forward(input.values, params.key);
  c.v = linear_forward(input.values, params.value);
  c.offsets = linear_forward(input.values, params.offset);
  c.key_grid = GridTensor<T>();
  c.key_grid.size = m;
  c.key_grid.values = c.k;
  c.value_grid = GridTensor<T>();
  c.value_grid.size = m;
  c.value_grid.values = c.v;
  c.key_samples = deformable_unfold(c.key_grid, c.offsets);
  c.value_samples = deformable_unfold(c.value_grid, c.offsets);

  const T scale = T(1) / std::sqrt(static_cast<T>(channels));
  c.attention = Matrix<T>(voxels, kTaps);
  GridTensor<T> out(m, channels);
#pragma omp parallel for schedule(static)
  for (size_t u = 0; u < voxels; ++u) {
    const T* q = c.q.row(u);
    T* a = c.attention.row(u);
    T mx = -std::numeric_limits<T>::infinity();
    for (int t = 0; t < kTaps; ++t) {
      const T* ks = c.key_samples.row(u * kTaps + t);
      T dot = T(0);
      for (size_t ch = 0; ch < channels; ++ch) dot += q[ch] * ks[ch];
      a[t] = dot * scale + params.pos.value[t];
      mx = std::max(mx, a[t]);
    }
    T sum = T(0);
    for (int t = 0; t < kTaps; ++t) sum += (a[t] = std::exp(a[t] - mx));
    for (int t = 0; t < kTaps; ++t) a[t] /= sum;
    T* o = out.values.row(u);
    for (int t = 0; t < kTaps; ++t) {
      const T* vs = c.value_samples.row(u * kTaps + t);
      for (size_t ch = 0; ch < channels; ++ch) o[ch] += a[t] * vs[ch];
    }
  }
  return out;
}

template <class T>
GridTensor<T> graph_reason_backward(const GridTensor<T>& dout, AttentionParams<T>& params,
                                    const GraphReasonCache<T>& c) {
  const size_t channels = params.channels();
  const size_t voxels = c.input.voxels();
  const T scale = T(1) / std::sqrt(static_cast<T>(channels));

  Matrix<T> dq(voxels, channels);
  Matrix<T> dkeys(voxels * kTaps, channels);
  Matrix<T> dvals(voxels * kTaps, channels);
  Matrix<T> dlogits(voxels, kTaps);
#pragma omp parallel for schedule(static)
  for (size_t u = 0; u < voxels; ++u) {
    const T* g = dout.values.row(u);
    const T* a = c.attention.row(u);
    T da[kTaps];
    T weighted = T(0);
    for (int t = 0; t < kTaps; ++t) {
      const T* vs = c.value_samples.row(u * kTaps + t);
      T* dv = dvals.row(u * kTaps + t);
      T dot = T(0);
      for (size_t ch = 0; ch < channels; ++ch) {
        dot += g[ch] * vs[ch];
        dv[ch] = a[t] * g[ch];
      }
      da[t] = dot;
      weighted += a[t] * dot;
    }
    const T* q = c.q.row(u);
    T* dqr = dq.row(u);
    for (int t = 0; t < kTaps; ++t) {
      const T dl = a[t] * (da[t] - weighted);
      dlogits(u, t) = dl;
      const T* ks = c.key_samples.row(u * kTaps + t);
      T* dk = dkeys.row(u * kTaps + t);
      for (size_t ch = 0; ch < channels; ++ch) {
        dqr[ch] += dl * scale * ks[ch];
        dk[ch] = dl * scale * q[ch];
      }
    }
  }
  for (size_t u = 0; u < voxels; ++u)
    for (int t = 0; t < kTaps; ++t) params.pos.grad[t] += dlogits(u, t);

  GridTensor<T> dkey_grid, dvalue_grid;
  Matrix<T> doff_k, doff_v;
  deformable_unfold_backward(c.key_grid, c.offsets, dkeys, &dkey_grid, &doff_k);
  deformable_unfold_backward(c.value_grid, c.offsets, dvals, &dvalue_grid, &doff_v);
  for (size_t i = 0; i < doff_k.data.size(); ++i) doff_k.data[i] += doff_v.data[i];

  GridTensor<T> din(c.input.size, channels);
  auto add = [&](const Matrix<T>& d) {
    for (size_t i = 0; i < din.values.data.size(); ++i) din.values.data[i] += d.data[i];
  };
  add(linear_backward(c.input.values, dq, params.query));
  add(linear_backward(c.input.values, dkey_grid.values, params.key));
  add(linear_backward(c.input.values, dvalue_grid.values, params.value));
  add(linear_backward(c.input.values, doff_k, params.offset));
  return din;
}

// ---------------------------------------------------------------------------

#define PTSEG_INSTANTIATE(T)                                                                                    \
  template Matrix<T> linear_forward(const Matrix<T>&, const Linear<T>&);                                     \
  template Matrix<T> linear_backward(const Matrix<T>&, const Matrix<T>&, Linear<T>&);                        \
  template void relu_inplace(Matrix<T>&);                                                                     \
  template void relu_backward_inplace(const Matrix<T>&, Matrix<T>&);                                         \
  template struct Mlp<T>;                                                                                     \
  template Matrix<T> mlp_forward(const Matrix<T>&, const Mlp<T>&, MlpCache<T>*);                             \
  template Matrix<T> mlp_backward(const Matrix<T>&, Mlp<T>&, const MlpCache<T>&);                            \
  template Matrix<T> softmax_rows(const Matrix<T>&);                                                          \
  template Matrix<T> softmax_rows_backward(const Matrix<T>&, const Matrix<T>&);                              \
  template T cross_entropy(const Matrix<T>&, std::span<const int>, Matrix<T>*);                              \
  template GridTensor<T> voxelize(const Matrix<T>&, const VoxelAssignment&);                                 \
  template Matrix<T> voxelize_backward(const GridTensor<T>&, const VoxelAssignment&);                        \
  template Matrix<T> devoxelize(const GridTensor<T>&, const InterpWeights&);                                 \
  template GridTensor<T> devoxelize_backward(const Matrix<T>&, const InterpWeights&, size_t);                \
  template GridTensor<T> conv3d_forward(const GridTensor<T>&, const Conv3d<T>&);                             \
  template GridTensor<T> conv3d_backward(const GridTensor<T>&, const GridTensor<T>&, Conv3d<T>&);            \
  template struct ResidualBlock<T>;                                                                           \
  template GridTensor<T> residual_conv3d(const GridTensor<T>&, const ResidualBlock<T>&, ResidualCache<T>*);  \
  template GridTensor<T> residual_conv3d_backward(const GridTensor<T>&, ResidualBlock<T>&,                   \
                                                  const ResidualCache<T>&);                                  \
  template Matrix<T> deformable_unfold(const GridTensor<T>&, const Matrix<T>&);                              \
  template void deformable_unfold_backward(const GridTensor<T>&, const Matrix<T>&, const Matrix<T>&,        \
                                           GridTensor<T>*, Matrix<T>*);                                      \
  template struct AttentionParams<T>;                                                                         \
  template GridTensor<T> graph_reason(const GridTensor<T>&, const AttentionParams<T>&, GraphReasonCache<T>*); \
  template GridTensor<T> graph_reason_backward(const GridTensor<T>&, AttentionParams<T>&,                    \
                                               const GraphReasonCache<T>&);

PTSEG_INSTANTIATE(float)
PTSEG_INSTANTIATE(double)

#undef PTSEG_INSTANTIATE

}  // namespace ptseg
