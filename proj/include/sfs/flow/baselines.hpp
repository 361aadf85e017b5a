#pragma once

#include <limits>

#include "sfs/flow/extractor.hpp"
#include "sfs/point_cloud.hpp"

namespace sfs {

// Each frame-1 point maps to its nearest frame-2 point; flow is the offset.
// Ties break by smaller frame-2 index.
inline FlowField nn_baseline_flow(const PointCloud& frame1,
                                  const PointCloud& frame2) {
  frame1.validate();
  frame2.validate();
  const int n = frame1.size();
  const int m = frame2.size();
  FlowField flow{PointMatrix(n, 3)};
  for (int i = 0; i < n; ++i) {
    int best = 0;
    double best_d = std::numeric_limits<double>::infinity();
    for (int j = 0; j < m; ++j) {
      const double d =
          (frame2.points.row(j) - frame1.points.row(i)).squaredNorm();
      if (d < best_d) {
        best_d = d;
        best = j;
      }
    }
    flow.vectors.row(i) = frame2.points.row(best) - frame1.points.row(i);
  }
  return flow;
}

class NearestNeighborModel : public FlowModel {
 public:
  FlowField predict(const PointCloud& frame1,
                    const PointCloud& frame2) const override {
    return nn_baseline_flow(frame1, frame2);
  }
  std::string describe() const override { return "nearest_neighbor"; }
};

class ZeroFlowModel : public FlowModel {
 public:
  FlowField predict(const PointCloud& frame1,
                    const PointCloud& frame2) const override {
    frame1.validate();
    frame2.validate();
    return FlowField{PointMatrix::Zero(frame1.size(), 3)};
  }
  std::string describe() const override { return "zero_flow"; }
};

}  // namespace sfs
