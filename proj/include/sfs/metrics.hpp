#pragma once

#include <limits>

#include "sfs/point_cloud.hpp"

namespace sfs {

struct MetricReport {
  double epe = 0.0;
  double acc01 = 0.0;
  double acc005 = 0.0;
  long n_points = 0;
};

inline constexpr double kAcc01Abs = 0.1;
inline constexpr double kAcc01Rel = 0.1;
inline constexpr double kAcc005Abs = 0.05;
inline constexpr double kAcc005Rel = 0.05;

namespace detail {
inline void check_flow_pair(const FlowField& pred, const FlowField& target) {
  pred.validate();
  target.validate();
  if (pred.size() != target.size())
    throw ContractViolation("flow metric: size mismatch (" +
                            std::to_string(pred.size()) + " vs " +
                            std::to_string(target.size()) + ")");
}
}  // namespace detail

// Mean Euclidean distance between predicted and target flow vectors.
inline double epe(const FlowField& pred, const FlowField& target) {
  detail::check_flow_pair(pred, target);
  return (pred.vectors - target.vectors).rowwise().norm().mean();
}

// Fraction of points whose error norm is strictly below the absolute
// threshold OR strictly below rel_thresh * ||target||. Either criterion
// suffices; for a zero-norm target the relative test is vacuously false.
inline double accuracy(const FlowField& pred, const FlowField& target,
                       double abs_thresh, double rel_thresh) {
  detail::check_flow_pair(pred, target);
  if (!(abs_thresh >= 0.0) || !(rel_thresh >= 0.0))
    throw ContractViolation("accuracy: thresholds must be nonnegative");
  const int n = pred.size();
  long hits = 0;
  for (int i = 0; i < n; ++i) {
    const double err = (pred.vectors.row(i) - target.vectors.row(i)).norm();
    const double tnorm = target.vectors.row(i).norm();
    if (err < abs_thresh || err < rel_thresh * tnorm) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(n);
}

inline MetricReport flow_metrics(const FlowField& pred,
                                 const FlowField& target) {
  MetricReport report;
  report.epe = epe(pred, target);
  report.acc01 = accuracy(pred, target, kAcc01Abs, kAcc01Rel);
  report.acc005 = accuracy(pred, target, kAcc005Abs, kAcc005Rel);
  report.n_points = pred.size();
  return report;
}

// Metrics of the all-zeros prediction; its EPE equals the mean ground-truth
// flow magnitude and serves as the reference lower bar for learned models.
inline MetricReport zero_flow_baseline(const ScenePair& pair) {
  pair.validate();
  FlowField zeros{PointMatrix::Zero(pair.gt_flow.size(), 3)};
  return flow_metrics(zeros, pair.gt_flow);
}

}  // namespace sfs
