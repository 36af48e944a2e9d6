// Copyright 2026 The ptseg Authors
// SPDX-License-Identifier: Apache-2.0

#include "ptseg/gradcheck.hpp"

#include <algorithm>
#include <cmath>

#include "ptseg/common.hpp"

namespace ptseg {

GradCheckReport grad_check(const std::string& op, std::span<const GradSlot> slots,
                           const std::function<double()>& loss, const GradCheckOptions& options) {
  GradCheckReport report;
  report.op = op;
  report.tol = options.tol;

  std::vector<std::pair<size_t, size_t>> targets;
  for (size_t s = 0; s < slots.size(); ++s) {
    if (slots[s].value.size() != slots[s].analytic.size())
      fail(ErrorCode::kLength, "grad_check: slot '" + slots[s].name + "' has mismatched gradient size");
    for (size_t i = 0; i < slots[s].value.size(); ++i) targets.emplace_back(s, i);
  }
  if (options.sample > 0 && options.sample < targets.size()) {
    Rng rng(options.seed);
    for (size_t i = 0; i < options.sample; ++i) {
      const size_t j = i + rng.below(targets.size() - i);
      std::swap(targets[i], targets[j]);
    }
    targets.resize(options.sample);
  }

  const double h = options.step;
  for (const auto& [s, i] : targets) {
    double& x = slots[s].value[i];
    const double saved = x;
    x = saved + h;
    const double up = loss();
    x = saved - h;
    const double down = loss();
    x = saved;
    const double numeric = (up - down) / (2.0 * h);
    const double analytic = slots[s].analytic[i];
    const double err =
        std::abs(numeric - analytic) / std::max({1.0, std::abs(numeric), std::abs(analytic)});
    if (!(err <= report.max_rel_err) ) {
      report.max_rel_err = std::isnan(err) ? INFINITY : err;
      report.worst = slots[s].name + "[" + std::to_string(i) + "]";
    }
    ++report.checked;
  }
  return report;
}

}  // namespace ptseg
