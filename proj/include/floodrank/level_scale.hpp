#pragma once

// Discrete water-level scale anchored on average human height (170 cm), and
// conversions between level space and centimeters.

#include <algorithm>
#include <array>
#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "floodrank/errors.hpp"

namespace floodrank {

inline constexpr int kMaxLevel = 10;
inline constexpr double kMaxDepthCm = 170.0;

// Nearest-integer cm value for level0..level10.
inline constexpr std::array<double, 11> kLevelAnchorsCm = {
    0.0, 1.0, 10.0, 21.0, 43.0, 64.0, 85.0, 106.0, 128.0, 149.0, 170.0};

// Fractional water level in [0, 10].
class WaterLevel {
 public:
  // Throws DomainError outside [0, 10] unless clamp is set.
  explicit WaterLevel(double level, bool clamp = false) {
    if (!std::isfinite(level)) throw DomainError("water level must be finite");
    if (clamp) {
      level = std::clamp(level, 0.0, static_cast<double>(kMaxLevel));
    } else if (level < 0.0 || level > kMaxLevel) {
      throw DomainError("water level " + std::to_string(level) + " outside [0, 10]");
    }
    value_ = level;
  }
  double value() const { return value_; }
  friend bool operator==(const WaterLevel&, const WaterLevel&) = default;

 private:
  double value_ = 0.0;
};

// Water depth in centimeters, in [0, 170].
class DepthCm {
 public:
  explicit DepthCm(double cm, bool clamp = false) {
    if (!std::isfinite(cm)) throw DomainError("depth must be finite");
    if (clamp) {
      cm = std::clamp(cm, 0.0, kMaxDepthCm);
    } else if (cm < 0.0 || cm > kMaxDepthCm) {
      throw DomainError("depth " + std::to_string(cm) + " cm outside [0, 170]");
    }
    value_ = cm;
  }
  double value() const { return value_; }
  friend bool operator==(const DepthCm&, const DepthCm&) = default;

 private:
  double value_ = 0.0;
};

// Integer levels inside [0, 10], one per annotated object. Non-empty.
class ObjectLevelSet {
 public:
  explicit ObjectLevelSet(std::vector<int> levels) : levels_(std::move(levels)) {
    if (levels_.empty()) throw DomainError("object level set is empty");
    for (int l : levels_) {
      if (l < 0 || l > kMaxLevel)
        throw DomainError("object level " + std::to_string(l) + " outside [0, 10]");
    }
  }
  std::span<const int> levels() const { return levels_; }

 private:
  std::vector<int> levels_;
};

// Piecewise-linear interpolation between the integer-level anchors.
inline DepthCm level_to_cm(WaterLevel level) {
  const double x = level.value();
  const int lo = std::min(static_cast<int>(std::floor(x)), kMaxLevel - 1);
  const double t = x - lo;
  const double cm = kLevelAnchorsCm[lo] + t * (kLevelAnchorsCm[lo + 1] - kLevelAnchorsCm[lo]);
  return DepthCm(std::clamp(cm, 0.0, kMaxDepthCm));
}

inline double level_to_cm(double level) { return level_to_cm(WaterLevel(level)).value(); }

// Inverse of level_to_cm. Anchors are strictly increasing, so the inverse is unique.
inline WaterLevel cm_to_level(DepthCm depth) {
  const double d = depth.value();
  const auto it = std::upper_bound(kLevelAnchorsCm.begin(), kLevelAnchorsCm.end(), d);
  int hi = static_cast<int>(it - kLevelAnchorsCm.begin());
  if (hi > kMaxLevel) return WaterLevel(kMaxLevel);
  const int lo = hi - 1;
  const double t = (d - kLevelAnchorsCm[lo]) / (kLevelAnchorsCm[hi] - kLevelAnchorsCm[lo]);
  return WaterLevel(std::clamp(lo + t, 0.0, static_cast<double>(kMaxLevel)));
}

inline double cm_to_level(double cm) { return cm_to_level(DepthCm(cm)).value(); }

// Clamps an arbitrary model output into the reportable depth range.
inline DepthCm clamp_depth(double cm) {
  if (!std::isfinite(cm)) throw NumericError("non-finite depth prediction");
  return DepthCm(cm, /*clamp=*/true);
}

// Object-level -> image-level rule: all-zero sets map to 0 cm, otherwise zeros are
// discarded and the remaining levels are averaged in level space, then converted.
inline DepthCm aggregate_object_levels(const ObjectLevelSet& objects) {
  double sum = 0.0;
  int count = 0;
  for (int l : objects.levels()) {
    if (l == 0) continue;
    sum += l;
    ++count;
  }
  if (count == 0) return DepthCm(0.0);
  return level_to_cm(WaterLevel(sum / count));
}

// Nearest integer level for a depth (used by the rounded level metric and by
// per-level grouping of predictions).
inline int nearest_level(double cm) {
  return static_cast<int>(std::lround(cm_to_level(clamp_depth(cm)).value()));
}

}  // namespace floodrank
