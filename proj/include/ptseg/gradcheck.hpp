// Copyright 2026 The ptseg Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

namespace ptseg {

/// One block of scalar inputs and the analytic gradient computed for it.
struct GradSlot {
  std::string name;
  std::span<double> value;
  std::span<const double> analytic;
};

struct GradCheckOptions {
  double step = 1e-4;
  double tol = 1e-4;
  /// Check only this many randomly chosen scalars (0 = all).
  size_t sample = 0;
  uint64_t seed = 0;
};

struct GradCheckReport {
  std::string op;
  size_t checked = 0;
  double max_rel_err = 0.0;
  std::string worst;  // "slot[index]"
  double tol = 0.0;
  bool passed() const { return max_rel_err <= tol; }
};

/// Central differences (f(x+h) - f(x-h)) / 2h on every scalar of every slot.
/// Error metric |a - b| / max(1, |a|, |b|). `loss` must read the current slot
/// values; each perturbed value is restored before the next one.
GradCheckReport grad_check(const std::string& op, std::span<const GradSlot> slots,
                           const std::function<double()>& loss, const GradCheckOptions& options = {});

/// Randomized checks of every differentiable kernel. `ops` empty = all.
/// `corrupt_scale` multiplies analytic gradients (negative control).
struct GradSuiteOptions {
  std::vector<std::string> ops;
  int seeds = 10;
  uint64_t base_seed = 1234;
  double tol = 1e-4;
  double corrupt_scale = 1.0;
};

std::vector<std::string> gradient_suite_ops();
/// One merged report per op (worst over seeds).
std::vector<GradCheckReport> run_gradient_suite(const GradSuiteOptions& options);

}  // namespace ptseg
