#pragma once

// Surface regularizers on sampled field values. Both reduce by mean.

#include "dual3d/common.hpp"

namespace dual3d {

/// Mean of (|g| - 1)^2.
inline double eikonal_loss(std::span<const Vec3> gradients) {
  if (gradients.empty()) throw std::invalid_argument("eikonal loss needs at least one gradient");
  double acc = 0.0;
  for (const Vec3& g : gradients) {
    if (!g.allFinite()) throw std::invalid_argument("non-finite gradient");
    const double d = g.norm() - 1.0;
    acc += d * d;
  }
  return acc / static_cast<double>(gradients.size());
}

inline constexpr double kMinimalSurfaceSharpness = 64.0;

/// Mean of exp(-64 |f|).
inline double minimal_surface_loss(std::span<const double> sdf_values) {
  if (sdf_values.empty()) throw std::invalid_argument("minimal surface loss needs at least one value");
  double acc = 0.0;
  for (double f : sdf_values) {
    if (std::isnan(f)) throw std::invalid_argument("non-finite sdf value");
    acc += std::exp(-kMinimalSurfaceSharpness * std::abs(f));
  }
  return acc / static_cast<double>(sdf_values.size());
}

}  // namespace dual3d
