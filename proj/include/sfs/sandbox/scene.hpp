#pragma once

#include <string>
#include <vector>

#include "sfs/errors.hpp"
#include "sfs/point_cloud.hpp"
#include "sfs/rng.hpp"
#include "sfs/sandbox/motion.hpp"
#include "sfs/sandbox/shapes.hpp"

namespace sfs {

struct SceneSpec {
  int n_objects = 1;
  int points_per_cloud = 256;
  Mechanism mechanism = Mechanism::correspondence;
  ShapeFamily shape_family = ShapeFamily::sphere;
  MotionBounds motion{};
  double workspace = 4.0;  // bounding cube side, meters
  std::uint64_t seed = 0;

  void validate() const {
    if (n_objects < 1) throw ConfigError("scene: n_objects must be >= 1");
    if (points_per_cloud < n_objects)
      throw ConfigError("scene: points_per_cloud must be >= n_objects");
    if (!(workspace > 0.0)) throw ConfigError("scene: workspace must be > 0");
    motion.validate();
  }
};

namespace detail {

// Points per object: even split, remainder to the first object.
inline std::vector<int> object_point_counts(int total, int objects) {
  std::vector<int> counts(static_cast<std::size_t>(objects),
                          total / objects);
  counts[0] += total % objects;
  return counts;
}

// Overlap-free object centers whose bounding balls stay inside the workspace
// cube. Bounded rejection sampling; failure reports the seed.
inline std::vector<Eigen::Vector3d> place_object_centers(
    const SceneSpec& spec) {
  const double rb = bounding_radius(spec.shape_family);
  const double half = spec.workspace / 2.0 - rb;
  if (half < 0.0)
    throw GenerationError(
        "placement failed: workspace " + std::to_string(spec.workspace) +
        " too small for shape (seed " + std::to_string(spec.seed) + ")");
  Rng rng(derive_seed(spec.seed, {rng_tag::placement}));
  const int max_restarts = 200;
  const int proposals_per_object = 50;
  for (int attempt = 0; attempt < max_restarts; ++attempt) {
    std::vector<Eigen::Vector3d> centers;
    bool placed_all = true;
    for (int obj = 0; obj < spec.n_objects && placed_all; ++obj) {
      placed_all = false;
      for (int p = 0; p < proposals_per_object; ++p) {
        Eigen::Vector3d c(rng.uniform(-half, half), rng.uniform(-half, half),
                          rng.uniform(-half, half));
        for (int k = 0; k < 3; ++k) c[k] = quantize_coord(c[k]);
        bool clear = true;
        for (const auto& other : centers)
          if ((c - other).norm() < 2.0 * rb) {
            clear = false;
            break;
          }
        if (clear) {
          centers.push_back(c);
          placed_all = true;
          break;
        }
      }
    }
    if (placed_all) return centers;
  }
  throw GenerationError("placement failed after " +
                        std::to_string(max_restarts) + " attempts (seed " +
                        std::to_string(spec.seed) + ")");
}

}  // namespace detail

// Generates one two-frame scene. Every object receives its own rigid motion
// applied about its center; gt_flow_i = T(p_i) - p_i for the owning object.
// Correspondence keeps frame-2 rows aligned with frame 1 (frame2 == frame1 +
// gt_flow exactly); re-sampling draws a fresh surface sampling of the moved
// objects with no index relation to frame 1.
inline ScenePair generate_pair(const SceneSpec& spec) {
  spec.validate();
  const auto centers = detail::place_object_centers(spec);
  const auto counts =
      detail::object_point_counts(spec.points_per_cloud, spec.n_objects);

  const int n = spec.points_per_cloud;
  ScenePair pair;
  pair.frame1.points.resize(n, 3);
  pair.frame2.points.resize(n, 3);
  pair.gt_flow.vectors.resize(n, 3);
  pair.meta = GenMeta{spec.mechanism, spec.n_objects, spec.seed, ""};

  int row = 0;
  for (int obj = 0; obj < spec.n_objects; ++obj) {
    const auto tag = static_cast<std::uint64_t>(obj);
    const PointCloud shape1 =
        sample_shape(spec.shape_family, counts[static_cast<std::size_t>(obj)],
                     derive_seed(spec.seed, {rng_tag::shape_frame1, tag}));
    const RigidMotion local = sample_motion(
        spec.motion, derive_seed(spec.seed, {rng_tag::motion, tag}));
    const Eigen::Vector3d& c = centers[static_cast<std::size_t>(obj)];

    // World transform of the object: rotate about its center, then translate.
    RigidMotion world;
    world.rotation = local.rotation;
    world.translation = c - local.rotation * c + local.translation;

    for (int i = 0; i < shape1.size(); ++i) {
      const Eigen::Vector3d p =
          shape1.points.row(i).transpose() + c;  // grid + grid stays on grid
      Eigen::Vector3d q = world.apply(p);
      for (int k = 0; k < 3; ++k) q[k] = quantize_coord(q[k]);
      pair.frame1.points.row(row) = p.transpose();
      pair.gt_flow.vectors.row(row) = (q - p).transpose();
      if (spec.mechanism == Mechanism::correspondence)
        pair.frame2.points.row(row) = q.transpose();
      ++row;
    }

    if (spec.mechanism == Mechanism::resampling) {
      const PointCloud shape2 = sample_shape(
          spec.shape_family, counts[static_cast<std::size_t>(obj)],
          derive_seed(spec.seed, {rng_tag::shape_frame2, tag}));
      const int base = row - shape2.size();
      for (int i = 0; i < shape2.size(); ++i) {
        Eigen::Vector3d q =
            world.apply(shape2.points.row(i).transpose() + c);
        for (int k = 0; k < 3; ++k) q[k] = quantize_coord(q[k]);
        pair.frame2.points.row(base + i) = q.transpose();
      }
    }
  }
  return pair;
}

// A dataset is a pure function of (spec, count): sample i derives its own
// seed from spec.seed, so samples are independent and reproducible.
inline std::vector<ScenePair> generate_dataset(const SceneSpec& spec,
                                               int count) {
  if (count < 0) throw ConfigError("generate_dataset: count must be >= 0");
  std::vector<ScenePair> pairs;
  pairs.reserve(static_cast<std::size_t>(count));
  for (int i = 0; i < count; ++i) {
    SceneSpec sample_spec = spec;
    sample_spec.seed =
        derive_seed(spec.seed, {rng_tag::sample, static_cast<std::uint64_t>(i)});
    pairs.push_back(generate_pair(sample_spec));
  }
  return pairs;
}

}  // namespace sfs
