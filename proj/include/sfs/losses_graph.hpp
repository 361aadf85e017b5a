#pragma once

#include <vector>

#include "sfs/ad/tape.hpp"
#include "sfs/geom.hpp"
#include "sfs/losses.hpp"

namespace sfs {

// Tape builders mirroring the loss functions in losses.hpp; the scalar
// implementations there stay the reference for values, these provide the
// gradients used in training.

// max(||z_a - z_p|| - ||z_a - z_n|| + m, 0) for 1 x C level vectors.
inline ad::Var triplet_graph(ad::Tape& t, ad::Var z_a, ad::Var z_p,
                             ad::Var z_n, double margin) {
  ad::Var r_p = t.row_norm(t.sub(z_a, z_p));
  ad::Var r_n = t.row_norm(t.sub(z_a, z_n));
  return t.sum(t.relu(t.add_scalar(t.sub(r_p, r_n), margin)));
}

inline ad::Var multiscale_triplet_graph(ad::Tape& t,
                                        const std::vector<ad::Var>& anchor,
                                        const std::vector<ad::Var>& positive,
                                        const std::vector<ad::Var>& negative,
                                        const LossConfig& cfg) {
  if (anchor.size() != positive.size() || anchor.size() != negative.size())
    throw ContractViolation("multiscale_triplet: level count mismatch");
  ad::Var total;
  for (std::size_t l = 0; l < anchor.size(); ++l) {
    const double g = gamma(static_cast<int>(l), cfg.factor);
    if (g == 0.0) continue;
    ad::Var term = t.scale(
        triplet_graph(t, anchor[l], positive[l], negative[l], cfg.margin), g);
    total = total.valid() ? t.add(total, term) : term;
  }
  return total.valid() ? total : t.constant(ad::Mat::Zero(1, 1));
}

// Per-level anchor distances r(l) = ||z_a(l) - z_b(l)|| as 1 x 1 vars.
inline std::vector<ad::Var> level_distances(ad::Tape& t,
                                            const std::vector<ad::Var>& a,
                                            const std::vector<ad::Var>& b) {
  if (a.size() != b.size())
    throw ContractViolation("level_distances: level count mismatch");
  std::vector<ad::Var> out;
  out.reserve(a.size());
  for (std::size_t l = 0; l < a.size(); ++l)
    out.push_back(t.row_norm(t.sub(a[l], b[l])));
  return out;
}

// Cycle-consistency graph over N x 3 forward/backward flows.
inline ad::Var cycle_graph(ad::Tape& t, ad::Var forward, ad::Var backward,
                           const LossConfig& cfg) {
  const auto n = t.val(forward).rows();
  if (t.val(backward).rows() != n)
    throw ContractViolation("cycle_consistency: size mismatch");
  ad::Var total;
  auto accumulate = [&t, &total](ad::Var term) {
    total = total.valid() ? t.add(total, term) : term;
  };
  ad::Var s;
  if (cfg.cycle_terms.l2 || cfg.cycle_terms.mse) s = t.add(forward, backward);
  if (cfg.cycle_terms.l2) accumulate(t.sum(t.row_norm(s)));
  if (cfg.cycle_terms.cosine) {
    ad::Var denom = t.mul(t.clamp_min(t.row_norm(forward), cfg.epsilon),
                          t.clamp_min(t.row_norm(backward), cfg.epsilon));
    accumulate(t.sum(t.div(t.row_dot(forward, backward), denom)));
  }
  if (cfg.cycle_terms.mse)
    accumulate(t.scale(t.sum(t.row_dot(s, s)), 1.0 / 3.0));
  if (!total.valid()) total = t.constant(ad::Mat::Zero(1, 1));
  if (cfg.cycle_reduce == CycleReduce::mean)
    total = t.scale(total, 1.0 / static_cast<double>(n));
  return total;
}

// Symmetric unsquared chamfer distance. Nearest-neighbor assignments come
// from the current values and act as constants in the backward pass.
inline ad::Var chamfer_graph(ad::Tape& t, ad::Var a, ad::Var b) {
  const ad::Mat& av = t.val(a);
  const ad::Mat& bv = t.val(b);
  if (av.rows() < 1 || bv.rows() < 1)
    throw ContractViolation("chamfer: clouds must be nonempty");
  const std::vector<int> a_to_b = geom::knn_indices(av, bv, 1);
  const std::vector<int> b_to_a = geom::knn_indices(bv, av, 1);
  ad::Var d_ab = t.row_norm(t.sub(a, t.gather_rows(b, a_to_b)));
  ad::Var d_ba = t.row_norm(t.sub(b, t.gather_rows(a, b_to_a)));
  return t.add(t.scale(t.sum(d_ab), 1.0 / static_cast<double>(av.rows())),
               t.scale(t.sum(d_ba), 1.0 / static_cast<double>(bv.rows())));
}

// sum_l gamma(l) * r_n(l) + lambda * cycle.
inline ad::Var loss_flow_extractor_graph(ad::Tape& t,
                                         const std::vector<ad::Var>& r_n,
                                         ad::Var cycle,
                                         const LossConfig& cfg) {
  ad::Var total;
  for (std::size_t l = 0; l < r_n.size(); ++l) {
    const double g = gamma(static_cast<int>(l), cfg.factor);
    if (g == 0.0) continue;
    ad::Var term = t.scale(r_n[l], g);
    total = total.valid() ? t.add(total, term) : term;
  }
  if (cycle.valid() && cfg.lambda_cc != 0.0) {
    ad::Var cc = t.scale(cycle, cfg.lambda_cc);
    total = total.valid() ? t.add(total, cc) : cc;
  }
  return total.valid() ? total : t.constant(ad::Mat::Zero(1, 1));
}

// sum_l gamma(l) * max(r_p(l) - r_n(l) + m, 0).
inline ad::Var loss_embedder_graph(ad::Tape& t,
                                   const std::vector<ad::Var>& r_p,
                                   const std::vector<ad::Var>& r_n,
                                   const LossConfig& cfg) {
  if (r_p.size() != r_n.size())
    throw ContractViolation("loss_embedder: level count mismatch");
  ad::Var total;
  for (std::size_t l = 0; l < r_p.size(); ++l) {
    const double g = gamma(static_cast<int>(l), cfg.factor);
    if (g == 0.0) continue;
    ad::Var term = t.scale(
        t.relu(t.add_scalar(t.sub(r_p[l], r_n[l]), cfg.margin)), g);
    total = total.valid() ? t.add(total, term) : term;
  }
  return total.valid() ? total : t.constant(ad::Mat::Zero(1, 1));
}

}  // namespace sfs
