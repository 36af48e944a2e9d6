// Copyright 2026 The ptseg Authors
// SPDX-License-Identifier: Apache-2.0

// Ellipsoidal liver phantom. Three vertical half-planes through the
// ellipsoid axis (the hepatic veins) and the azimuth-0 half-plane split it
// into four sectors; a horizontal plane (the portal vein) splits each sector
// into a superior and an inferior segment.
//
// Segment table (label = segment number 1..8):
//
//   sector        0    1    2    3
//   superior      7    8    4    2
//   inferior      6    5    1    3
//
// Sector s covers azimuths [a_s, a_{s+1}) with a_0 = 0 and a_4 = 2 pi,
// measured from +x towards +y around the ellipsoid center. A voxel whose
// normalized height is >= the portal height is superior.

#pragma once

#include <array>
#include <filesystem>
#include <string>
#include <vector>

#include "ptseg/volume.hpp"

namespace ptseg {

inline constexpr std::array<int, 4> kSuperiorSegments{7, 8, 4, 2};
inline constexpr std::array<int, 4> kInferiorSegments{6, 5, 1, 3};
inline constexpr float kParenchymaHu = 100.0f;
inline constexpr float kVesselHu = 250.0f;

struct PhantomSpec {
  Index3 dims{48, 48, 32};
  Vec3 spacing{1.0, 1.0, 1.5};
  Vec3 semi_axes{21.0, 18.0, 20.0};  // mm
  std::array<double, 3> azimuths{1.5, 3.0, 4.5};  // right, middle, left hepatic vein (rad)
  double portal_height = 0.5;  // of the ellipsoid's z extent, from its bottom
  double tube_radius = 1.5;    // mm; half-width of the bright vessel band
  double noise_sigma = 10.0;   // HU
  uint64_t seed = 0;

  void validate() const;
  VolumeGeometry geometry() const;
};

struct Phantom {
  Volume intensity;  // HU
  Volume mask;
  Volume labels;
};

Phantom generate(const PhantomSpec& spec);

/// Uniform per-case perturbations: azimuths +-azimuth rad, portal height
/// +-height, each semi-axis scaled by 1 +- axes.
struct PhantomJitter {
  double azimuth = 0.15;
  double height = 0.05;
  double axes = 0.10;
  /// Give every case its own noise seed.
  bool reseed_noise = true;

  static PhantomJitter none() { return {0.0, 0.0, 0.0, false}; }
};

PhantomSpec jitter_spec(const PhantomSpec& base, const PhantomJitter& jitter, uint64_t seed);

struct SplitSizes {
  size_t train = 0, val = 0, test = 0;
};
/// 10/3/7 proportions; validation and test are rounded, train takes the rest.
SplitSizes split_sizes(size_t n);

struct DatasetCase {
  std::string id;
  std::string split;  // train, val or test
  PhantomSpec spec;
};

/// Writes `<out>/<id>/{image,mask,label}.{raw,json}` per case and
/// `<out>/manifest.json`. Returns the cases in id order.
std::vector<DatasetCase> make_dataset(size_t n_cases, const PhantomSpec& base, const PhantomJitter& jitter,
                                      uint64_t seed, const std::filesystem::path& out);

}  // namespace ptseg
