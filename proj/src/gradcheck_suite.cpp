// Copyright 2026 The ptseg Authors
// SPDX-License-Identifier: Apache-2.0

// Randomized finite-difference checks for every differentiable kernel, all
// at double precision. Each check reduces the op output to a scalar through
// a random linear functional, so the analytic input of backward is that
// functional's weights.

#include <algorithm>
#include <cmath>
#include <deque>
#include <map>

#include "ptseg/diffops.hpp"
#include "ptseg/gradcheck.hpp"

namespace ptseg {

namespace {

using D = double;

// Piecewise-linear ops (ReLU, max, trilinear floor) get a smaller step so a
// perturbation is unlikely to straddle a kink.
constexpr double kSmoothStep = 1e-4;
constexpr double kKinkStep = 1e-6;
// Trilinear sampling at predicted offsets; paired with a lattice margin.
constexpr double kLatticeStep = 1e-7;

void fill(std::vector<D>& v, Rng& rng, double lo = -1.0, double hi = 1.0) {
  for (auto& x : v) x = rng.uniform(lo, hi);
}

D dot(const std::vector<D>& a, const std::vector<D>& b) {
  D s = 0;
  for (size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

class SlotSet {
 public:
  explicit SlotSet(double scale) : scale_(scale) {}

  void add(const std::string& name, std::vector<D>& value, const std::vector<D>& grad) {
    auto& g = grads_.emplace_back(grad);
    for (auto& x : g) x *= scale_;
    slots_.push_back({name, value, g});
  }
  void add(Param<D>& p) { add(p.name, p.value, p.grad); }
  void add(Linear<D>& l) {
    add(l.weight);
    add(l.bias);
  }
  std::span<const GradSlot> slots() const { return slots_; }

 private:
  double scale_;
  std::deque<std::vector<D>> grads_;
  std::vector<GradSlot> slots_;
};

void fill_linear(Linear<D>& l, Rng& rng, double scale = 1.0) {
  fill(l.weight.value, rng, -scale, scale);
  fill(l.bias.value, rng, -scale, scale);
}

std::vector<Vec3> random_coords(size_t n, Rng& rng) {
  std::vector<Vec3> c(n);
  for (auto& p : c) p = {rng.uniform(), rng.uniform(), rng.uniform()};
  return c;
}

GradCheckReport check_linear(uint64_t seed, const GradSuiteOptions& o) {
  Rng rng(seed);
  const size_t n = 2 + rng.below(6), in = 1 + rng.below(6), out = 1 + rng.below(6);
  Linear<D> layer("linear", in, out);
  fill_linear(layer, rng);
  Matrix<D> x(n, in), r(n, out);
  fill(x.data, rng);
  fill(r.data, rng);
  const Matrix<D> dx = linear_backward(x, r, layer);
  SlotSet s(o.corrupt_scale);
  s.add("x", x.data, dx.data);
  s.add(layer);
  return grad_check("linear", s.slots(), [&] { return dot(linear_forward(x, layer).data, r.data); },
                    {kSmoothStep, o.tol});
}

GradCheckReport check_mlp(uint64_t seed, const GradSuiteOptions& o) {
  Rng rng(seed);
  const size_t n = 3 + rng.below(6), in = 2 + rng.below(4);
  Mlp<D> mlp("mlp", in, {4 + rng.below(4), 3 + rng.below(4), 2 + rng.below(3)});
  for (auto& l : mlp.layers) fill_linear(l, rng);
  Matrix<D> x(n, in), r(n, mlp.out());
  fill(x.data, rng);
  fill(r.data, rng);
  MlpCache<D> cache;
  mlp_forward(x, mlp, &cache);
  const Matrix<D> dx = mlp_backward(r, mlp, cache);
  SlotSet s(o.corrupt_scale);
  s.add("x", x.data, dx.data);
  for (auto& l : mlp.layers) s.add(l);
  return grad_check("mlp", s.slots(), [&] { return dot(mlp_forward(x, mlp).data, r.data); }, {kKinkStep, o.tol});
}

GradCheckReport check_softmax(uint64_t seed, const GradSuiteOptions& o) {
  Rng rng(seed);
  Matrix<D> x(2 + rng.below(5), 2 + rng.below(8)), r(x.rows, x.cols);
  fill(x.data, rng, -3, 3);
  fill(r.data, rng);
  const Matrix<D> dx = softmax_rows_backward(softmax_rows(x), r);
  SlotSet s(o.corrupt_scale);
  s.add("x", x.data, dx.data);
  return grad_check("softmax", s.slots(), [&] { return dot(softmax_rows(x).data, r.data); }, {kSmoothStep, o.tol});
}

GradCheckReport check_cross_entropy(uint64_t seed, const GradSuiteOptions& o) {
  Rng rng(seed);
  Matrix<D> logits(2 + rng.below(10), 8);
  fill(logits.data, rng, -4, 4);
  std::vector<int> labels(logits.rows);
  for (auto& l : labels) l = static_cast<int>(rng.below(8));
  Matrix<D> dl;
  cross_entropy(logits, std::span<const int>(labels), &dl);
  SlotSet s(o.corrupt_scale);
  s.add("logits", logits.data, dl.data);
  return grad_check("cross_entropy", s.slots(),
                    [&] { return cross_entropy(logits, std::span<const int>(labels)); }, {kSmoothStep, o.tol});
}

GradCheckReport check_voxelize(uint64_t seed, const GradSuiteOptions& o) {
  Rng rng(seed);
  const int m = 2 + static_cast<int>(rng.below(4));
  const auto coords = random_coords(10 + rng.below(40), rng);
  const auto assignment = assign_voxels(coords, m);
  Matrix<D> feats(coords.size(), 1 + rng.below(4));
  fill(feats.data, rng);
  GridTensor<D> r(m, feats.cols);
  fill(r.values.data, rng);
  const Matrix<D> df = voxelize_backward(r, assignment);
  SlotSet s(o.corrupt_scale);
  s.add("feats", feats.data, df.data);
  return grad_check("voxelize", s.slots(),
                    [&] { return dot(voxelize(feats, assignment).values.data, r.values.data); },
                    {kSmoothStep, o.tol});
}

GradCheckReport check_devoxelize(uint64_t seed, const GradSuiteOptions& o) {
  Rng rng(seed);
  const int m = 2 + static_cast<int>(rng.below(4));
  const auto coords = random_coords(5 + rng.below(30), rng);
  const auto weights = devoxelize_weights(coords, m);
  GridTensor<D> grid(m, 1 + rng.below(4));
  fill(grid.values.data, rng);
  Matrix<D> r(coords.size(), grid.channels());
  fill(r.data, rng);
  const GridTensor<D> dg = devoxelize_backward(r, weights, grid.channels());
  SlotSet s(o.corrupt_scale);
  s.add("grid", grid.values.data, dg.values.data);
  return grad_check("devoxelize", s.slots(), [&] { return dot(devoxelize(grid, weights).data, r.data); },
                    {kSmoothStep, o.tol});
}

GradCheckReport check_residual_conv3d(uint64_t seed, const GradSuiteOptions& o) {
  Rng rng(seed);
  const int m = 3 + static_cast<int>(rng.below(3));
  const size_t cout = 2 + rng.below(2);
  const size_t cin = seed % 2 == 0 ? cout : 1 + rng.below(3);
  ResidualBlock<D> block("res", cin, cout);
  fill(block.conv1.weight.value, rng, -0.5, 0.5);
  fill(block.conv1.bias.value, rng, -0.5, 0.5);
  fill(block.conv2.weight.value, rng, -0.5, 0.5);
  fill(block.conv2.bias.value, rng, -0.5, 0.5);
  if (block.has_proj) fill_linear(block.proj, rng);
  GridTensor<D> x(m, cin), r(m, cout);
  fill(x.values.data, rng);
  fill(r.values.data, rng);
  ResidualCache<D> cache;
  residual_conv3d(x, block, &cache);
  const GridTensor<D> dx = residual_conv3d_backward(r, block, cache);
  SlotSet s(o.corrupt_scale);
  s.add("x", x.values.data, dx.values.data);
  s.add(block.conv1.weight);
  s.add(block.conv1.bias);
  s.add(block.conv2.weight);
  s.add(block.conv2.bias);
  if (block.has_proj) s.add(block.proj);
  return grad_check("residual_conv3d", s.slots(),
                    [&] { return dot(residual_conv3d(x, block).values.data, r.values.data); }, {kKinkStep, o.tol});
}

GradCheckReport check_deformable_unfold(uint64_t seed, const GradSuiteOptions& o) {
  Rng rng(seed);
  const int m = 3 + static_cast<int>(rng.below(3));
  GridTensor<D> grid(m, 1 + rng.below(3));
  fill(grid.values.data, rng);
  Matrix<D> offsets(grid.voxels(), 3 * kTaps);
  // Fractional parts stay away from the integer lattice where the
  // trilinear weights are not differentiable.
  for (auto& v : offsets.data) {
    const double mag = static_cast<double>(rng.below(2)) + rng.uniform(0.05, 0.95);
    v = rng.uniform() < 0.5 ? -mag : mag;
  }
  Matrix<D> r(grid.voxels() * kTaps, grid.channels());
  fill(r.data, rng);
  GridTensor<D> dgrid;
  Matrix<D> doff;
  deformable_unfold_backward(grid, offsets, r, &dgrid, &doff);
  SlotSet s(o.corrupt_scale);
  s.add("grid", grid.values.data, dgrid.values.data);
  s.add("offsets", offsets.data, doff.data);
  return grad_check("deformable_unfold", s.slots(),
                    [&] { return dot(deformable_unfold(grid, offsets).data, r.data); }, {kSmoothStep, o.tol});
}

GradCheckReport check_graph_reason(uint64_t seed, const GradSuiteOptions& o) {
  Rng rng(seed);
  const int m = 3 + static_cast<int>(rng.below(3));
  const size_t c = 2 + rng.below(3);
  AttentionParams<D> p("gr", c);
  GridTensor<D> x(m, c), r(m, c);
  GraphReasonCache<D> cache;
  // Offsets are predicted, so instead of constraining them directly, redraw
  // any instance with a sample position within kLatticeMargin of the
  // integer lattice (where trilinear sampling has a kink).
  constexpr double kLatticeMargin = 1e-5;
  for (;;) {
    fill_linear(p.query, rng);
    fill_linear(p.key, rng);
    fill_linear(p.value, rng);
    fill_linear(p.offset, rng, 0.6);
    fill(p.pos.value, rng);
    fill(x.values.data, rng);
    fill(r.values.data, rng);
    graph_reason(x, p, &cache);
    double nearest = 1.0;
    for (D v : cache.offsets.data) nearest = std::min(nearest, std::abs(v - std::round(v)));
    if (nearest >= kLatticeMargin) break;
  }
  const GridTensor<D> dx = graph_reason_backward(r, p, cache);
  SlotSet s(o.corrupt_scale);
  s.add("x", x.values.data, dx.values.data);
  s.add(p.query);
  s.add(p.key);
  s.add(p.value);
  s.add(p.offset);
  s.add(p.pos);
  return grad_check("graph_reason", s.slots(), [&] { return dot(graph_reason(x, p).values.data, r.values.data); },
                    {kLatticeStep, o.tol});
}

using CheckFn = GradCheckReport (*)(uint64_t, const GradSuiteOptions&);

const std::map<std::string, CheckFn>& registry() {
  static const std::map<std::string, CheckFn> r{
      {"voxelize", check_voxelize},
      {"devoxelize", check_devoxelize},
      {"residual_conv3d", check_residual_conv3d},
      {"deformable_unfold", check_deformable_unfold},
      {"graph_reason", check_graph_reason},
      {"linear", check_linear},
      {"mlp", check_mlp},
      {"softmax", check_softmax},
      {"cross_entropy", check_cross_entropy},
  };
  return r;
}

}  // namespace

std::vector<std::string> gradient_suite_ops() {
  return {"voxelize", "devoxelize", "residual_conv3d", "deformable_unfold", "graph_reason",
          "linear",   "mlp",        "softmax",         "cross_entropy"};
}

std::vector<GradCheckReport> run_gradient_suite(const GradSuiteOptions& options) {
  const auto ops = options.ops.empty() ? gradient_suite_ops() : options.ops;
  std::vector<GradCheckReport> reports;
  for (const auto& name : ops) {
    auto it = registry().find(name);
    if (it == registry().end()) fail(ErrorCode::kInvalidArgument, "unknown gradient-check op '" + name + "'");
    GradCheckReport merged;
    merged.op = name;
    merged.tol = options.tol;
    for (int s = 0; s < options.seeds; ++s) {
      const GradCheckReport r = it->second(derive_seed(options.base_seed + static_cast<uint64_t>(s), name), options);
      merged.checked += r.checked;
      if (!(r.max_rel_err <= merged.max_rel_err)) {
        merged.max_rel_err = r.max_rel_err;
        merged.worst = "seed " + std::to_string(s) + " " + r.worst;
      }
    }
    reports.push_back(merged);
  }
  return reports;
}

}  // namespace ptseg
