#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <string>

#include "sfs/errors.hpp"

namespace sfs {

using PointMatrix = Eigen::Matrix<double, Eigen::Dynamic, 3>;

// An unordered set of N 3D points, in meters. Consumers must be permutation
// invariant or explicitly equivariant; nothing may depend on row order.
struct PointCloud {
  PointMatrix points;

  int size() const { return static_cast<int>(points.rows()); }

  void validate() const {
    if (points.rows() < 1)
      throw ContractViolation("PointCloud: need at least one point");
    if (!points.allFinite())
      throw ContractViolation("PointCloud: non-finite coordinate");
  }
};

// Per-point displacement vectors bound to a specific frame-1 cloud (same N).
struct FlowField {
  PointMatrix vectors;

  int size() const { return static_cast<int>(vectors.rows()); }

  void validate() const {
    if (vectors.rows() < 1)
      throw ContractViolation("FlowField: need at least one vector");
    if (!vectors.allFinite())
      throw ContractViolation("FlowField: non-finite entry");
  }
};

enum class Mechanism { correspondence, resampling };

inline const char* to_string(Mechanism m) {
  return m == Mechanism::correspondence ? "correspondence" : "resampling";
}

inline Mechanism mechanism_from_string(const std::string& s) {
  if (s == "correspondence") return Mechanism::correspondence;
  if (s == "resampling") return Mechanism::resampling;
  throw ConfigError("unknown mechanism '" + s +
                    "' (expected correspondence|resampling)");
}

struct GenMeta {
  Mechanism mechanism = Mechanism::correspondence;
  int n_objects = 1;
  std::uint64_t seed = 0;
  std::string id;
};

// Two consecutive clouds plus ground-truth flow for frame 1. Under the
// correspondence mechanism frame2 == frame1 + gt_flow row for row; under
// re-sampling no index relation between the frames exists.
struct ScenePair {
  PointCloud frame1;
  PointCloud frame2;
  FlowField gt_flow;
  GenMeta meta;

  void validate() const {
    frame1.validate();
    frame2.validate();
    gt_flow.validate();
    if (gt_flow.size() != frame1.size())
      throw ContractViolation("ScenePair: gt_flow size " +
                              std::to_string(gt_flow.size()) +
                              " != frame1 size " +
                              std::to_string(frame1.size()));
  }
};

// Pointwise sum frame1 + flow.
inline PointCloud transform_cloud(const PointCloud& frame1,
                                  const FlowField& flow) {
  if (flow.size() != frame1.size())
    throw ContractViolation("transform_cloud: flow size " +
                            std::to_string(flow.size()) +
                            " not bound to cloud of size " +
                            std::to_string(frame1.size()));
  return PointCloud{frame1.points + flow.vectors};
}

}  // namespace sfs
