#pragma once

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "sfs/errors.hpp"
#include "sfs/point_cloud.hpp"
#include "sfs/pyramid.hpp"
#include "sfs/rng.hpp"

namespace sfs {

// Depth weighting of the multi-scale triplet sum. "none" uses only the
// deepest level.
enum class MultiscaleFactor { none, inv_sqrt, inv_linear, inv_square };

inline const char* to_string(MultiscaleFactor f) {
  switch (f) {
    case MultiscaleFactor::none: return "none";
    case MultiscaleFactor::inv_sqrt: return "inv_sqrt";
    case MultiscaleFactor::inv_linear: return "inv_linear";
    case MultiscaleFactor::inv_square: return "inv_square";
  }
  return "none";
}

inline MultiscaleFactor multiscale_factor_from_string(const std::string& s) {
  if (s == "none") return MultiscaleFactor::none;
  if (s == "inv_sqrt") return MultiscaleFactor::inv_sqrt;
  if (s == "inv_linear") return MultiscaleFactor::inv_linear;
  if (s == "inv_square") return MultiscaleFactor::inv_square;
  throw ConfigError("unknown multiscale factor '" + s +
                    "' (expected none|inv_sqrt|inv_linear|inv_square)");
}

struct CycleTerms {
  bool cosine = true;
  bool mse = false;
  bool l2 = true;

  bool any() const { return cosine || mse || l2; }

  std::string describe() const {
    std::string out;
    auto append = [&out](const char* name) {
      if (!out.empty()) out += "+";
      out += name;
    };
    if (cosine) append("cosine");
    if (mse) append("mse");
    if (l2) append("l2");
    return out.empty() ? "none" : out;
  }
};

inline CycleTerms cycle_terms_from_string(const std::string& s) {
  CycleTerms terms{false, false, false};
  if (s == "none" || s.empty()) return terms;
  std::size_t start = 0;
  while (start <= s.size()) {
    std::size_t end = s.find_first_of("+,", start);
    if (end == std::string::npos) end = s.size();
    const std::string tok = s.substr(start, end - start);
    if (tok == "cosine") terms.cosine = true;
    else if (tok == "mse") terms.mse = true;
    else if (tok == "l2") terms.l2 = true;
    else throw ConfigError("unknown cycle term '" + tok +
                           "' (expected cosine|mse|l2|none)");
    start = end + 1;
  }
  return terms;
}

enum class CycleReduce { mean, sum };

struct LossConfig {
  double margin = 1.0;
  MultiscaleFactor factor = MultiscaleFactor::inv_sqrt;
  CycleTerms cycle_terms{};
  double lambda_cc = 1.0;
  double epsilon = 1e-8;
  // Mean decouples lambda_cc from cloud size; sum is the literal objective.
  CycleReduce cycle_reduce = CycleReduce::mean;
  bool cycle_stop_gradient = false;

  void validate() const {
    if (!(margin >= 0.0)) throw ConfigError("loss: margin must be >= 0");
    if (!(lambda_cc >= 0.0)) throw ConfigError("loss: lambda_cc must be >= 0");
    if (!(epsilon > 0.0)) throw ConfigError("loss: epsilon must be > 0");
  }
};

inline double gamma(int level, MultiscaleFactor factor) {
  if (level < 0) throw ContractViolation("gamma: level must be >= 0");
  const double l1 = static_cast<double>(level) + 1.0;
  switch (factor) {
    case MultiscaleFactor::none: return level == 0 ? 1.0 : 0.0;
    case MultiscaleFactor::inv_sqrt: return 1.0 / std::sqrt(l1);
    case MultiscaleFactor::inv_linear: return 1.0 / l1;
    case MultiscaleFactor::inv_square: return 1.0 / (l1 * l1);
  }
  return 0.0;
}

// max(||z_a - z_p|| - ||z_a - z_n|| + m, 0)
inline double triplet_margin(const Eigen::VectorXd& z_a,
                             const Eigen::VectorXd& z_p,
                             const Eigen::VectorXd& z_n, double margin) {
  if (z_a.size() != z_p.size() || z_a.size() != z_n.size())
    throw ContractViolation("triplet_margin: dimension mismatch");
  return std::max((z_a - z_p).norm() - (z_a - z_n).norm() + margin, 0.0);
}

// Depth-weighted sum of the per-level triplet losses.
inline double multiscale_triplet(const EmbeddingPyramid& anchor,
                                 const EmbeddingPyramid& positive,
                                 const EmbeddingPyramid& negative,
                                 const LossConfig& cfg) {
  const int levels = anchor.level_count();
  if (positive.level_count() != levels || negative.level_count() != levels)
    throw ContractViolation("multiscale_triplet: level count mismatch");
  double total = 0.0;
  for (int l = 0; l < levels; ++l) {
    total += gamma(l, cfg.factor) *
             triplet_margin(anchor.level(l), positive.level(l),
                            negative.level(l), cfg.margin);
  }
  return total;
}

// Cycle-consistency penalty between forward and backward flow. Per point the
// selected terms are added:
//   l2     ||f_i + b_i||
//   cosine (f_i . b_i) / (max(||f_i||, eps) * max(||b_i||, eps))
//   mse    ||f_i + b_i||^2 / 3
// The epsilon guard makes the cosine term 0 (not undefined) for zero flow.
inline double cycle_consistency(const FlowField& forward,
                                const FlowField& backward,
                                const LossConfig& cfg) {
  if (forward.size() != backward.size())
    throw ContractViolation("cycle_consistency: size mismatch");
  const int n = forward.size();
  double total = 0.0;
  for (int i = 0; i < n; ++i) {
    const Eigen::RowVector3d f = forward.vectors.row(i);
    const Eigen::RowVector3d b = backward.vectors.row(i);
    if (cfg.cycle_terms.l2) total += (f + b).norm();
    if (cfg.cycle_terms.cosine) {
      const double denom =
          std::max(f.norm(), cfg.epsilon) * std::max(b.norm(), cfg.epsilon);
      total += f.dot(b) / denom;
    }
    if (cfg.cycle_terms.mse) total += (f + b).squaredNorm() / 3.0;
  }
  if (cfg.cycle_reduce == CycleReduce::mean)
    total /= static_cast<double>(n);
  return total;
}

// Flow-extractor objective: sum_l gamma(l) * r_n(l) + lambda * cycle.
inline double loss_flow_extractor(std::span<const double> r_n,
                                  double cycle_value, const LossConfig& cfg) {
  double total = 0.0;
  for (std::size_t l = 0; l < r_n.size(); ++l) {
    if (!(r_n[l] >= 0.0))
      throw ContractViolation("loss_flow_extractor: r_n must be >= 0");
    total += gamma(static_cast<int>(l), cfg.factor) * r_n[l];
  }
  return total + cfg.lambda_cc * cycle_value;
}

// Embedder objective: sum_l gamma(l) * max(r_p(l) - r_n(l) + m, 0).
inline double loss_embedder(std::span<const double> r_p,
                            std::span<const double> r_n,
                            const LossConfig& cfg) {
  if (r_p.size() != r_n.size())
    throw ContractViolation("loss_embedder: level count mismatch");
  double total = 0.0;
  for (std::size_t l = 0; l < r_p.size(); ++l) {
    if (!(r_p[l] >= 0.0) || !(r_n[l] >= 0.0))
      throw ContractViolation("loss_embedder: distances must be >= 0");
    total += gamma(static_cast<int>(l), cfg.factor) *
             std::max(r_p[l] - r_n[l] + cfg.margin, 0.0);
  }
  return total;
}

// Symmetric chamfer distance: mean nearest-neighbor distance in both
// directions, unsquared.
inline double chamfer(const PointCloud& a, const PointCloud& b) {
  a.validate();
  b.validate();
  const int n = a.size();
  const int m = b.size();
  double sum_ab = 0.0;
  for (int i = 0; i < n; ++i) {
    double best = std::numeric_limits<double>::infinity();
    for (int j = 0; j < m; ++j)
      best = std::min(best, (a.points.row(i) - b.points.row(j)).norm());
    sum_ab += best;
  }
  double sum_ba = 0.0;
  for (int j = 0; j < m; ++j) {
    double best = std::numeric_limits<double>::infinity();
    for (int i = 0; i < n; ++i)
      best = std::min(best, (b.points.row(j) - a.points.row(i)).norm());
    sum_ba += best;
  }
  return sum_ab / static_cast<double>(n) + sum_ba / static_cast<double>(m);
}

// Random disjoint split into ceil(N/2) anchor and floor(N/2) positive points;
// deterministic given the seed.
inline std::pair<PointCloud, PointCloud> partition_anchor_positive(
    const PointCloud& cloud, std::uint64_t seed) {
  cloud.validate();
  const int n = cloud.size();
  if (n < 2)
    throw ContractViolation("partition_anchor_positive: need at least 2 points");
  std::vector<int> idx(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) idx[static_cast<std::size_t>(i)] = i;
  Rng rng(derive_seed(seed, {rng_tag::partition}));
  rng.shuffle(idx);
  const int n_anchor = (n + 1) / 2;
  PointCloud anchor{PointMatrix(n_anchor, 3)};
  PointCloud positive{PointMatrix(n - n_anchor, 3)};
  for (int i = 0; i < n_anchor; ++i)
    anchor.points.row(i) = cloud.points.row(idx[static_cast<std::size_t>(i)]);
  for (int i = n_anchor; i < n; ++i)
    positive.points.row(i - n_anchor) =
        cloud.points.row(idx[static_cast<std::size_t>(i)]);
  return {std::move(anchor), std::move(positive)};
}

}  // namespace sfs
