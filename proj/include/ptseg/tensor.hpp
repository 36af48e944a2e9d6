// Copyright 2026 The ptseg Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <string>
#include <vector>

#include "ptseg/common.hpp"

namespace ptseg {

/// Dense row-major matrix.
template <class T>
struct Matrix {
  size_t rows = 0;
  size_t cols = 0;
  std::vector<T> data;

  Matrix() = default;
  Matrix(size_t r, size_t c, T fill = T(0)) : rows(r), cols(c), data(r * c, fill) {}

  T* row(size_t r) { return data.data() + r * cols; }
  const T* row(size_t r) const { return data.data() + r * cols; }
  T& operator()(size_t r, size_t c) { return data[r * cols + c]; }
  const T& operator()(size_t r, size_t c) const { return data[r * cols + c]; }
};

/// Dense feature grid of M^3 voxels with C channels, stored voxel-major
/// (rows are voxels in x-fastest order, columns are channels).
template <class T>
struct GridTensor {
  int size = 0;
  Matrix<T> values;

  GridTensor() = default;
  GridTensor(int m, size_t channels)
      : size(m), values(static_cast<size_t>(m) * static_cast<size_t>(m) * static_cast<size_t>(m), channels) {}

  size_t channels() const { return values.cols; }
  size_t voxels() const { return values.rows; }
  size_t voxel_index(int x, int y, int z) const {
    return static_cast<size_t>(x) + static_cast<size_t>(size) * (static_cast<size_t>(y) + static_cast<size_t>(size) * static_cast<size_t>(z));
  }
};

/// Learnable tensor with its gradient slot.
template <class T>
struct Param {
  std::string name;
  std::vector<size_t> shape;
  std::vector<T> value;
  std::vector<T> grad;

  Param() = default;
  Param(std::string n, std::vector<size_t> s) : name(std::move(n)), shape(std::move(s)) {
    const size_t count = std::accumulate(shape.begin(), shape.end(), size_t{1}, std::multiplies<>());
    value.assign(count, T(0));
    grad.assign(count, T(0));
  }

  size_t size() const { return value.size(); }
  void zero_grad() { std::fill(grad.begin(), grad.end(), T(0)); }
};

/// Kaiming-uniform fill, bound sqrt(6 / fan_in).
template <class T>
void kaiming_uniform(Param<T>& p, size_t fan_in, Rng& rng) {
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
  for (auto& v : p.value) v = static_cast<T>(rng.uniform(-bound, bound));
}

/// Converts a parameter between precisions (used to run f32 models at f64).
template <class To, class From>
Param<To> cast_param(const Param<From>& p) {
  Param<To> out;
  out.name = p.name;
  out.shape = p.shape;
  out.value.assign(p.value.begin(), p.value.end());
  out.grad.assign(p.grad.begin(), p.grad.end());
  return out;
}

}  // namespace ptseg
