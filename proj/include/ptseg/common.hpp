// Copyright 2026 The ptseg Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>

namespace ptseg {

/// Error categories. The CLI maps each category to a distinct exit code.
enum class ErrorCode {
  kInvalidArgument = 2,
  kOutOfBounds = 3,
  kGeometry = 4,
  kEmptyRegion = 5,
  kFormat = 6,
  kLength = 7,
  kConfig = 8,
  kLabel = 9,
  kDomain = 10,
  kIo = 11,
  kNumeric = 12,
  kExists = 13,
};

std::string_view error_code_name(ErrorCode code);

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what) : std::runtime_error(what), code_(code) {}
  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& what) { throw Error(code, what); }

using Vec3 = std::array<double, 3>;
using Index3 = std::array<int64_t, 3>;

inline double squared_distance(const Vec3& a, const Vec3& b) {
  const double dx = a[0] - b[0], dy = a[1] - b[1], dz = a[2] - b[2];
  return dx * dx + dy * dy + dz * dz;
}

/// splitmix64 step; used to derive independent seeds for named sub-streams.
uint64_t splitmix64(uint64_t x);

/// Seed for the named random stream `name` under the global seed.
uint64_t derive_seed(uint64_t seed, std::string_view name);

/// 64-bit FNV-1a over raw bytes. Stable across platforms and runs.
class Fnv1a {
 public:
  void update(const void* data, size_t n);
  template <class T>
  void update_value(const T& v) { update(&v, sizeof(T)); }
  uint64_t digest() const { return state_; }

 private:
  uint64_t state_ = 0xcbf29ce484222325ULL;
};

/// Portable PRNG: xoshiro256** seeded through splitmix64. The distribution
/// helpers are written out so results do not depend on the standard library.
class Rng {
 public:
  explicit Rng(uint64_t seed);
  uint64_t next_u64();
  /// Uniform in [0, 1).
  double uniform();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  /// Uniform integer in [0, n).
  uint64_t below(uint64_t n);
  double normal();

 private:
  std::array<uint64_t, 4> s_{};
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace ptseg
