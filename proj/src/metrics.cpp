// Copyright 2026 The ptseg Authors
// SPDX-License-Identifier: Apache-2.0

#include "ptseg/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <sstream>

namespace ptseg {

using nlohmann::json;

namespace {

void check_inputs(const Volume& pred, const Volume& gt, const Volume& mask) {
  if (pred.kind != VolumeKind::kLabel || gt.kind != VolumeKind::kLabel)
    fail(ErrorCode::kInvalidArgument, "metrics expect label volumes");
  if (mask.kind != VolumeKind::kMask) fail(ErrorCode::kInvalidArgument, "metrics expect a mask volume");
  if (!pred.geometry.same_as(gt.geometry) || !mask.geometry.same_as(gt.geometry))
    fail(ErrorCode::kGeometry, "prediction, ground truth and mask geometries differ");
  if (pred.values.size() != gt.values.size() || mask.values.size() != gt.values.size())
    fail(ErrorCode::kLength, "volume sizes differ");
}

std::vector<uint8_t> class_set(const Volume& v, const Volume& mask, int class_id) {
  std::vector<uint8_t> s(v.values.size());
  const float c = static_cast<float>(class_id);
  for (size_t i = 0; i < s.size(); ++i) s[i] = mask.values[i] != 0.0f && v.values[i] == c;
  return s;
}

// Surface voxel centers in mm (spacing applied along the voxel axes).
std::vector<Vec3> surface_points(const std::vector<uint8_t>& in, const VolumeGeometry& g) {
  std::vector<Vec3> out;
  const auto& d = g.dims;
  for (int64_t z = 0; z < d[2]; ++z)
    for (int64_t y = 0; y < d[1]; ++y)
      for (int64_t x = 0; x < d[0]; ++x) {
        const Index3 v{x, y, z};
        if (!in[static_cast<size_t>(g.linear_index(v))]) continue;
        bool surface = false;
        for (int a = 0; a < 3 && !surface; ++a)
          for (int s = -1; s <= 1 && !surface; s += 2) {
            Index3 n = v;
            n[a] += s;
            surface = !g.contains(n) || !in[static_cast<size_t>(g.linear_index(n))];
          }
        if (surface)
          out.push_back({g.spacing[0] * static_cast<double>(x), g.spacing[1] * static_cast<double>(y),
                         g.spacing[2] * static_cast<double>(z)});
      }
  return out;
}

// Nearest-neighbor distances from each query to `points`, bucketed on a
// coarse voxel grid and searched in growing Chebyshev shells.
class Buckets {
 public:
  Buckets(const std::vector<Vec3>& points, const VolumeGeometry& g) : points_(points), spacing_(g.spacing) {
    for (int a = 0; a < 3; ++a) n_[a] = std::max<int64_t>(1, (g.dims[a] + kCell - 1) / kCell);
    min_spacing_ = std::min({spacing_[0], spacing_[1], spacing_[2]});
    std::vector<uint32_t> count(static_cast<size_t>(n_[0] * n_[1] * n_[2]) + 1, 0);
    for (const auto& p : points_) ++count[cell_of(p) + 1];
    for (size_t i = 1; i < count.size(); ++i) count[i] += count[i - 1];
    start_ = count;
    ids_.resize(points_.size());
    for (uint32_t i = 0; i < points_.size(); ++i) ids_[count[cell_of(points_[i])]++] = i;
  }

  double nearest(const Vec3& q) const {
    int64_t c[3];
    for (int a = 0; a < 3; ++a) c[a] = index(q, a) / kCell;
    double best = std::numeric_limits<double>::infinity();
    const int64_t max_ring = std::max({n_[0], n_[1], n_[2]});
    for (int64_t r = 0; r <= max_ring; ++r) {
      for (int64_t z = c[2] - r; z <= c[2] + r; ++z)
        for (int64_t y = c[1] - r; y <= c[1] + r; ++y)
          for (int64_t x = c[0] - r; x <= c[0] + r; ++x) {
            if (std::max({std::abs(x - c[0]), std::abs(y - c[1]), std::abs(z - c[2])}) != r) continue;
            if (x < 0 || y < 0 || z < 0 || x >= n_[0] || y >= n_[1] || z >= n_[2]) continue;
            const size_t cell = static_cast<size_t>(x + n_[0] * (y + n_[1] * z));
            for (uint32_t k = start_[cell]; k < start_[cell + 1]; ++k) {
              const Vec3& p = points_[ids_[k]];
              const double dx = q[0] - p[0], dy = q[1] - p[1], dz = q[2] - p[2];
              best = std::min(best, dx * dx + dy * dy + dz * dz);
            }
          }
      // Any point outside shell r is at least r*kCell + 1 voxels away on some axis.
      const double bound = static_cast<double>(r * kCell + 1) * min_spacing_;
      if (best <= bound * bound) break;
    }
    return std::sqrt(best);
  }

 private:
  static constexpr int64_t kCell = 4;
  int64_t index(const Vec3& p, int a) const { return std::llround(p[a] / spacing_[a]); }
  size_t cell_of(const Vec3& p) const {
    return static_cast<size_t>(index(p, 0) / kCell + n_[0] * (index(p, 1) / kCell + n_[1] * (index(p, 2) / kCell)));
  }

  const std::vector<Vec3>& points_;
  Vec3 spacing_;
  double min_spacing_ = 1.0;
  int64_t n_[3]{1, 1, 1};
  std::vector<uint32_t> start_, ids_;
};

}  // namespace

double dice(const Volume& pred, const Volume& gt, const Volume& mask, int class_id) {
  check_inputs(pred, gt, mask);
  const auto p = class_set(pred, mask, class_id), g = class_set(gt, mask, class_id);
  size_t np = 0, ng = 0, both = 0;
  for (size_t i = 0; i < p.size(); ++i) {
    np += p[i];
    ng += g[i];
    both += p[i] & g[i];
  }
  if (np + ng == 0) return 1.0;
  return 2.0 * static_cast<double>(both) / static_cast<double>(np + ng);
}

std::optional<SurfaceDistance> surface_distance(const Volume& pred, const Volume& gt, const Volume& mask,
                                                int class_id) {
  check_inputs(pred, gt, mask);
  const auto& g = gt.geometry;
  const auto sp = surface_points(class_set(pred, mask, class_id), g);
  const auto sg = surface_points(class_set(gt, mask, class_id), g);
  if (sp.empty() || sg.empty()) return std::nullopt;
  const Buckets bp(sp, g), bg(sg, g);
  double to_gt = 0.0, to_pred = 0.0;
  for (const auto& p : sp) to_gt += bg.nearest(p);
  for (const auto& q : sg) to_pred += bp.nearest(q);
  SurfaceDistance s;
  s.symmetric = (to_gt + to_pred) / static_cast<double>(sp.size() + sg.size());
  s.pred_to_gt = to_gt / static_cast<double>(sp.size());
  s.gt_to_pred = to_pred / static_cast<double>(sg.size());
  return s;
}

MetricsReport evaluate_case(const Volume& pred, const Volume& gt, const Volume& mask, const std::string& case_id) {
  check_inputs(pred, gt, mask);
  MetricsReport r;
  r.case_id = case_id;
  double dsum = 0.0, asum = 0.0;
  size_t dn = 0, an = 0;
  for (int k = 1; k <= 8; ++k) {
    ClassMetrics& c = r.classes[static_cast<size_t>(k - 1)];
    c.label = k;
    const auto p = class_set(pred, mask, k), g = class_set(gt, mask, k);
    for (size_t i = 0; i < p.size(); ++i) {
      c.pred_voxels += p[i];
      c.gt_voxels += g[i];
    }
    c.dice = dice(pred, gt, mask, k);
    c.asd = surface_distance(pred, gt, mask, k);
    c.in_average = c.pred_voxels + c.gt_voxels > 0;
    if (c.in_average) {
      dsum += c.dice;
      ++dn;
    }
    if (c.asd) {
      asum += c.asd->symmetric;
      ++an;
    }
  }
  r.mean_dice = dn ? dsum / static_cast<double>(dn) : 1.0;
  if (an) r.mean_asd = asum / static_cast<double>(an);
  return r;
}

std::string roman_segment(int label) {
  static const char* names[] = {"I", "II", "III", "IV", "V", "VI", "VII", "VIII"};
  if (label < 1 || label > 8) fail(ErrorCode::kLabel, "segment label out of range");
  return names[label - 1];
}

json to_json(const MetricsReport& r) {
  json classes = json::array();
  for (const auto& c : r.classes) {
    json j{{"label", c.label},
           {"segment", roman_segment(c.label)},
           {"pred_voxels", c.pred_voxels},
           {"gt_voxels", c.gt_voxels},
           {"dice", c.dice},
           {"in_average", c.in_average}};
    if (c.asd) {
      j["asd"] = c.asd->symmetric;
      j["asd_pred_to_gt"] = c.asd->pred_to_gt;
      j["asd_gt_to_pred"] = c.asd->gt_to_pred;
    } else {
      j["asd"] = nullptr;
      j["asd_pred_to_gt"] = nullptr;
      j["asd_gt_to_pred"] = nullptr;
    }
    classes.push_back(j);
  }
  return json{{"case", r.case_id},
              {"classes", classes},
              {"mean_dice", r.mean_dice},
              {"mean_asd", r.mean_asd ? json(*r.mean_asd) : json(nullptr)},
              {"conventions",
               {{"dice_both_empty", 1.0},
                {"asd_undefined_when_class_missing", true},
                {"asd", "symmetric, 6-connected surfaces, voxel centers, mm"},
                {"averages", "unweighted over classes with in_average (dice) or non-null asd"}}}};
}

MetricsReport report_from_json(const json& j) {
  MetricsReport r;
  try {
    r.case_id = j.at("case").get<std::string>();
    const auto& classes = j.at("classes");
    if (classes.size() != 8) fail(ErrorCode::kFormat, "metrics report must list 8 classes");
    for (size_t k = 0; k < 8; ++k) {
      const auto& c = classes[k];
      ClassMetrics& m = r.classes[k];
      m.label = c.at("label");
      m.pred_voxels = c.at("pred_voxels");
      m.gt_voxels = c.at("gt_voxels");
      m.dice = c.at("dice");
      m.in_average = c.at("in_average");
      if (!c.at("asd").is_null())
        m.asd = SurfaceDistance{c.at("asd"), c.at("asd_pred_to_gt"), c.at("asd_gt_to_pred")};
    }
    r.mean_dice = j.at("mean_dice");
    if (!j.at("mean_asd").is_null()) r.mean_asd = j.at("mean_asd").get<double>();
  } catch (const json::exception& e) {
    fail(ErrorCode::kFormat, std::string("metrics report: ") + e.what());
  }
  return r;
}

namespace {

struct Stat {
  double sum = 0.0, sq = 0.0;
  size_t n = 0;
  void add(double v) {
    sum += v;
    sq += v * v;
    ++n;
  }
  std::string mean() const { return n ? fmt(sum / static_cast<double>(n)) : ""; }
  std::string std() const {
    if (n < 2) return n ? fmt(0.0) : "";
    const double m = sum / static_cast<double>(n);
    return fmt(std::sqrt(std::max(0.0, (sq - static_cast<double>(n) * m * m) / static_cast<double>(n - 1))));
  }
  static std::string fmt(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.6f", v);
    return buf;
  }
};

}  // namespace

std::string metrics_table_csv(const std::vector<MetricsReport>& reports) {
  std::ostringstream os;
  os << "segment,dice_mean,dice_std,dice_cases,asd_mean,asd_std,asd_cases\n";
  auto row = [&](const std::string& name, const Stat& d, const Stat& a) {
    os << name << ',' << d.mean() << ',' << d.std() << ',' << d.n << ',' << a.mean() << ',' << a.std() << ',' << a.n
       << '\n';
  };
  for (size_t k = 0; k < 8; ++k) {
    Stat d, a;
    for (const auto& r : reports) {
      const auto& c = r.classes[k];
      if (c.in_average) d.add(c.dice);
      if (c.asd) a.add(c.asd->symmetric);
    }
    row(roman_segment(static_cast<int>(k) + 1), d, a);
  }
  Stat d, a;
  for (const auto& r : reports) {
    d.add(r.mean_dice);
    if (r.mean_asd) a.add(*r.mean_asd);
  }
  row("Avg", d, a);
  return os.str();
}

}  // namespace ptseg
