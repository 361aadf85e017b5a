#pragma once

#include <Eigen/Core>
#include <algorithm>
#include <limits>
#include <span>
#include <vector>

#include "sfs/errors.hpp"
#include "sfs/point_cloud.hpp"

namespace sfs::geom {

// Lexicographic comparison of coordinates; used as a permutation-independent
// tie-break so subsampling and grouping depend only on the point set.
inline bool lex_less(const Eigen::RowVector3d& a, const Eigen::RowVector3d& b) {
  if (a.x() != b.x()) return a.x() < b.x();
  if (a.y() != b.y()) return a.y() < b.y();
  return a.z() < b.z();
}

// Mean of the points accumulated in lexicographic order, so the result is
// bitwise identical under any permutation of the rows.
inline Eigen::RowVector3d canonical_centroid(const PointMatrix& pts) {
  std::vector<int> order(static_cast<std::size_t>(pts.rows()));
  for (int i = 0; i < pts.rows(); ++i) order[static_cast<std::size_t>(i)] = i;
  std::sort(order.begin(), order.end(), [&pts](int a, int b) {
    return lex_less(pts.row(a), pts.row(b));
  });
  Eigen::RowVector3d sum = Eigen::RowVector3d::Zero();
  for (int i : order) sum += pts.row(i);
  return sum / static_cast<double>(pts.rows());
}

// Farthest-point subsampling. Starts from the point closest to the cloud
// centroid and iterates the usual max-min rule; all comparisons fall back to
// coordinate order, never to row index.
inline std::vector<int> farthest_point_indices(const PointMatrix& pts,
                                               int count) {
  const int n = static_cast<int>(pts.rows());
  if (count < 1 || count > n)
    throw ContractViolation("farthest_point_indices: count " +
                            std::to_string(count) + " outside [1, " +
                            std::to_string(n) + "]");
  const Eigen::RowVector3d centroid = canonical_centroid(pts);

  int start = 0;
  double best = std::numeric_limits<double>::infinity();
  for (int i = 0; i < n; ++i) {
    const double d = (pts.row(i) - centroid).squaredNorm();
    if (d < best || (d == best && lex_less(pts.row(i), pts.row(start)))) {
      best = d;
      start = i;
    }
  }

  std::vector<int> selected;
  selected.reserve(static_cast<std::size_t>(count));
  std::vector<double> min_dist(static_cast<std::size_t>(n),
                               std::numeric_limits<double>::infinity());
  int current = start;
  for (int s = 0; s < count; ++s) {
    selected.push_back(current);
    int next = -1;
    double far = -1.0;
    for (int i = 0; i < n; ++i) {
      const double d = (pts.row(i) - pts.row(current)).squaredNorm();
      auto& md = min_dist[static_cast<std::size_t>(i)];
      md = std::min(md, d);
      if (md > far || (md == far && next >= 0 &&
                       lex_less(pts.row(i), pts.row(next)))) {
        far = md;
        next = i;
      }
    }
    current = next;
  }
  return selected;
}

struct Groups {
  std::vector<int> flat;     // concatenated member indices
  std::vector<int> offsets;  // size = groups + 1

  int group_count() const { return static_cast<int>(offsets.size()) - 1; }
};

// Ball neighborhoods: all points within `radius` of each center (the center,
// being a cloud point, is always a member). Members are ordered by distance
// with coordinate-order tie-break.
inline Groups radius_groups(const PointMatrix& pts,
                            std::span<const int> centers, double radius) {
  if (!(radius > 0.0))
    throw ContractViolation("radius_groups: radius must be > 0");
  Groups g;
  g.offsets.push_back(0);
  const double r2 = radius * radius;
  std::vector<std::pair<double, int>> members;
  for (int c : centers) {
    members.clear();
    for (int i = 0; i < pts.rows(); ++i) {
      const double d = (pts.row(i) - pts.row(c)).squaredNorm();
      if (d <= r2) members.emplace_back(d, i);
    }
    std::sort(members.begin(), members.end(),
              [&pts](const auto& a, const auto& b) {
                if (a.first != b.first) return a.first < b.first;
                return lex_less(pts.row(a.second), pts.row(b.second));
              });
    for (const auto& [d, i] : members) g.flat.push_back(i);
    g.offsets.push_back(static_cast<int>(g.flat.size()));
  }
  return g;
}

// k nearest rows of `targets` for each row of `queries`, flattened to
// queries.rows() * k indices. Ties break by smaller target index.
inline std::vector<int> knn_indices(const PointMatrix& queries,
                                    const PointMatrix& targets, int k) {
  const int m = static_cast<int>(targets.rows());
  if (k < 1 || k > m)
    throw ContractViolation("knn_indices: k " + std::to_string(k) +
                            " outside [1, " + std::to_string(m) + "]");
  std::vector<int> out;
  out.reserve(static_cast<std::size_t>(queries.rows()) *
              static_cast<std::size_t>(k));
  std::vector<std::pair<double, int>> dist(static_cast<std::size_t>(m));
  for (int q = 0; q < queries.rows(); ++q) {
    for (int j = 0; j < m; ++j)
      dist[static_cast<std::size_t>(j)] = {
          (targets.row(j) - queries.row(q)).squaredNorm(), j};
    std::partial_sort(dist.begin(), dist.begin() + k, dist.end());
    for (int j = 0; j < k; ++j)
      out.push_back(dist[static_cast<std::size_t>(j)].second);
  }
  return out;
}

inline std::vector<int> uniform_offsets(int groups, int k) {
  std::vector<int> offsets(static_cast<std::size_t>(groups) + 1);
  for (int i = 0; i <= groups; ++i)
    offsets[static_cast<std::size_t>(i)] = i * k;
  return offsets;
}

}  // namespace sfs::geom
