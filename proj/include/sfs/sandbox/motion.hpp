#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <numbers>

#include "sfs/errors.hpp"
#include "sfs/rng.hpp"

namespace sfs {

struct MotionBounds {
  double max_rotation = 30.0 * std::numbers::pi / 180.0;  // radians
  double max_translation = 0.5;                           // meters

  void validate() const {
    if (!(max_rotation >= 0.0) || !(max_translation >= 0.0))
      throw ConfigError("motion bounds must be nonnegative");
  }
};

// Proper rigid transform p -> R p + t.
struct RigidMotion {
  Eigen::Matrix3d rotation = Eigen::Matrix3d::Identity();
  Eigen::Vector3d translation = Eigen::Vector3d::Zero();

  Eigen::Vector3d apply(const Eigen::Vector3d& p) const {
    return rotation * p + translation;
  }

  void validate() const {
    const double residual =
        (rotation.transpose() * rotation - Eigen::Matrix3d::Identity())
            .cwiseAbs()
            .maxCoeff();
    if (residual > 1e-6)
      throw ContractViolation("RigidMotion: rotation not orthonormal");
    if (std::abs(rotation.determinant() - 1.0) > 1e-6)
      throw ContractViolation("RigidMotion: determinant not +1");
    if (!translation.allFinite())
      throw ContractViolation("RigidMotion: non-finite translation");
  }
};

namespace detail {

inline Eigen::Matrix3d rodrigues(const Eigen::Vector3d& axis, double angle) {
  Eigen::Matrix3d k;
  k << 0, -axis.z(), axis.y(),
       axis.z(), 0, -axis.x(),
      -axis.y(), axis.x(), 0;
  return Eigen::Matrix3d::Identity() + std::sin(angle) * k +
         (1.0 - std::cos(angle)) * (k * k);
}

}  // namespace detail

// Rotation of angle uniform in [0, max] about a uniformly random axis, plus a
// translation uniform in the ball of the max radius. Deterministic per seed.
inline RigidMotion sample_motion(const MotionBounds& bounds,
                                 std::uint64_t seed) {
  bounds.validate();
  Rng rng(seed);
  RigidMotion motion;

  const double z = 1.0 - 2.0 * rng.uniform();
  const double phi = 2.0 * std::numbers::pi * rng.uniform();
  const double r = std::sqrt(std::max(0.0, 1.0 - z * z));
  const Eigen::Vector3d axis(r * std::cos(phi), r * std::sin(phi), z);
  const double angle = bounds.max_rotation * rng.uniform();
  motion.rotation = detail::rodrigues(axis, angle);

  const double tz = 1.0 - 2.0 * rng.uniform();
  const double tphi = 2.0 * std::numbers::pi * rng.uniform();
  const double tr = std::sqrt(std::max(0.0, 1.0 - tz * tz));
  const double radius = bounds.max_translation * std::cbrt(rng.uniform());
  motion.translation =
      radius * Eigen::Vector3d(tr * std::cos(tphi), tr * std::sin(tphi), tz);
  return motion;
}

}  // namespace sfs
