#pragma once

#include <cmath>
#include <numbers>
#include <string>

#include "sfs/errors.hpp"
#include "sfs/point_cloud.hpp"
#include "sfs/rng.hpp"

namespace sfs {

enum class ShapeFamily { sphere, box, cylinder };

inline const char* to_string(ShapeFamily f) {
  switch (f) {
    case ShapeFamily::sphere: return "sphere";
    case ShapeFamily::box: return "box";
    case ShapeFamily::cylinder: return "cylinder";
  }
  return "sphere";
}

inline ShapeFamily shape_family_from_string(const std::string& s) {
  if (s == "sphere") return ShapeFamily::sphere;
  if (s == "box") return ShapeFamily::box;
  if (s == "cylinder") return ShapeFamily::cylinder;
  throw ConfigError("unknown shape family '" + s +
                    "' (expected sphere|box|cylinder)");
}

// Radius of the smallest origin-centered ball containing the unit-scale
// primitive; used for overlap-free placement.
inline double bounding_radius(ShapeFamily f) {
  switch (f) {
    case ShapeFamily::sphere: return 1.0;
    case ShapeFamily::box: return std::sqrt(3.0);
    case ShapeFamily::cylinder: return std::sqrt(2.0);
  }
  return 1.0;
}

// All generated coordinates snap to this grid. Grid values are exactly
// representable in float32, so the on-disk format round-trips losslessly and
// frame2 == frame1 + flow holds exactly in double arithmetic.
inline constexpr double kCoordGrid = 1.0 / (1 << 20);

inline double quantize_coord(double x) {
  return static_cast<double>(std::llround(x * (1 << 20))) * kCoordGrid;
}

namespace detail {

inline Eigen::RowVector3d sample_sphere_surface(Rng& rng) {
  const double z = 1.0 - 2.0 * rng.uniform();
  const double phi = 2.0 * std::numbers::pi * rng.uniform();
  const double r = std::sqrt(std::max(0.0, 1.0 - z * z));
  return {r * std::cos(phi), r * std::sin(phi), z};
}

// Surface of the axis-aligned cube with half-extent 1 (side 2), faces chosen
// uniformly by area.
inline Eigen::RowVector3d sample_box_surface(Rng& rng) {
  const int face = static_cast<int>(rng.below(6));
  const double u = rng.uniform(-1.0, 1.0);
  const double v = rng.uniform(-1.0, 1.0);
  const double s = (face % 2 == 0) ? 1.0 : -1.0;
  switch (face / 2) {
    case 0: return {s, u, v};
    case 1: return {u, s, v};
    default: return {u, v, s};
  }
}

// Cylinder of radius 1, height 2 (z in [-1, 1]), lateral surface plus caps,
// chosen by area (lateral 4*pi vs caps 2*pi).
inline Eigen::RowVector3d sample_cylinder_surface(Rng& rng) {
  const double pick = rng.uniform() * 6.0;
  if (pick < 4.0) {
    const double phi = 2.0 * std::numbers::pi * rng.uniform();
    return {std::cos(phi), std::sin(phi), rng.uniform(-1.0, 1.0)};
  }
  const double z = pick < 5.0 ? 1.0 : -1.0;
  const double r = std::sqrt(rng.uniform());
  const double phi = 2.0 * std::numbers::pi * rng.uniform();
  return {r * std::cos(phi), r * std::sin(phi), z};
}

}  // namespace detail

// Uniform surface sampling of a unit-scale primitive centered at the origin.
// Deterministic given (family, n_points, seed); coordinates are grid-snapped.
inline PointCloud sample_shape(ShapeFamily family, int n_points,
                               std::uint64_t seed) {
  if (n_points < 1)
    throw ContractViolation("sample_shape: need at least one point");
  Rng rng(seed);
  PointCloud cloud{PointMatrix(n_points, 3)};
  for (int i = 0; i < n_points; ++i) {
    Eigen::RowVector3d p;
    switch (family) {
      case ShapeFamily::sphere: p = detail::sample_sphere_surface(rng); break;
      case ShapeFamily::box: p = detail::sample_box_surface(rng); break;
      case ShapeFamily::cylinder:
        p = detail::sample_cylinder_surface(rng);
        break;
    }
    for (int c = 0; c < 3; ++c)
      cloud.points(i, c) = quantize_coord(p[c]);
  }
  return cloud;
}

}  // namespace sfs
