// Acceptance suite: one test per criterion, each printing a PASS/FAIL line.
// The learning checks (C07, C08) train real models and take minutes; the
// rest complete in seconds.

#include <gtest/gtest.h>

#include <chrono>
#include <cmath>
#include <filesystem>
#include <sstream>
#include <thread>

#include "grad_check.hpp"
#include "sfs/eval/evaluate.hpp"
#include "sfs/eval/experiments.hpp"
#include "sfs/losses.hpp"
#include "sfs/losses_graph.hpp"
#include "sfs/metrics.hpp"
#include "sfs/sandbox/dataset_io.hpp"
#include "sfs/sandbox/scene.hpp"
#include "sfs/train/trainer.hpp"

using namespace sfs;
namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

namespace {

struct CriterionReporter {
  std::string name;
  bool ok = true;

  explicit CriterionReporter(std::string n) : name(std::move(n)) {}
  ~CriterionReporter() {
    std::printf("ACCEPTANCE %s: %s\n", name.c_str(), ok ? "PASS" : "FAIL");
    std::fflush(stdout);
  }
  void check(bool condition, const char* what) {
    if (!condition) {
      ok = false;
      ADD_FAILURE() << name << ": " << what;
    }
  }
};

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

FlowField random_flow(int n, Rng& rng, double scale = 1.0) {
  FlowField f{PointMatrix(n, 3)};
  for (int i = 0; i < n; ++i)
    for (int c = 0; c < 3; ++c) f.vectors(i, c) = scale * rng.normal();
  return f;
}

PointCloud random_cloud(int n, Rng& rng, double scale = 1.0) {
  PointCloud c{PointMatrix(n, 3)};
  for (int i = 0; i < n; ++i)
    for (int k = 0; k < 3; ++k) c.points(i, k) = scale * rng.normal();
  return c;
}

EmbeddingPyramid random_pyramid(const std::vector<int>& dims, Rng& rng) {
  EmbeddingPyramid p;
  for (int d : dims) {
    Eigen::VectorXd v(d);
    for (int i = 0; i < d; ++i) v[i] = rng.normal();
    p.levels.push_back(v);
  }
  return p;
}

void randomize_params(nn::ParamStore& store, Rng& rng, double scale = 0.3) {
  for (int i = 0; i < store.count(); ++i) {
    auto& value = store.entry(i).value;
    for (Eigen::Index k = 0; k < value.size(); ++k)
      value.data()[k] = scale * rng.normal();
  }
}

// ---- independent scalar-loop oracles (duplicated here on purpose) ----

double oracle_gamma(int l, MultiscaleFactor f) {
  switch (f) {
    case MultiscaleFactor::none: return l == 0 ? 1.0 : 0.0;
    case MultiscaleFactor::inv_sqrt: return 1.0 / std::sqrt(l + 1.0);
    case MultiscaleFactor::inv_linear: return 1.0 / (l + 1.0);
    case MultiscaleFactor::inv_square: return 1.0 / ((l + 1.0) * (l + 1.0));
  }
  return 0.0;
}

double oracle_norm_diff(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
  double sq = 0.0;
  for (Eigen::Index i = 0; i < a.size(); ++i)
    sq += (a[i] - b[i]) * (a[i] - b[i]);
  return std::sqrt(sq);
}

double oracle_multiscale(const EmbeddingPyramid& a, const EmbeddingPyramid& p,
                         const EmbeddingPyramid& n, const LossConfig& cfg) {
  double total = 0.0;
  for (int l = 0; l < a.level_count(); ++l) {
    const double rp = oracle_norm_diff(a.levels[l], p.levels[l]);
    const double rn = oracle_norm_diff(a.levels[l], n.levels[l]);
    total += oracle_gamma(l, cfg.factor) * std::max(rp - rn + cfg.margin, 0.0);
  }
  return total;
}

double oracle_cycle(const FlowField& f, const FlowField& b,
                    const LossConfig& cfg) {
  double total = 0.0;
  for (int i = 0; i < f.size(); ++i) {
    double fn = 0, bn = 0, dot = 0, sn = 0;
    for (int c = 0; c < 3; ++c) {
      const double fv = f.vectors(i, c), bv = b.vectors(i, c);
      fn += fv * fv;
      bn += bv * bv;
      dot += fv * bv;
      sn += (fv + bv) * (fv + bv);
    }
    if (cfg.cycle_terms.l2) total += std::sqrt(sn);
    if (cfg.cycle_terms.cosine)
      total += dot / (std::max(std::sqrt(fn), cfg.epsilon) *
                      std::max(std::sqrt(bn), cfg.epsilon));
    if (cfg.cycle_terms.mse) total += sn / 3.0;
  }
  if (cfg.cycle_reduce == CycleReduce::mean)
    total /= static_cast<double>(f.size());
  return total;
}

double oracle_chamfer(const PointCloud& a, const PointCloud& b) {
  double sa = 0;
  for (int i = 0; i < a.size(); ++i) {
    double best = 1e300;
    for (int j = 0; j < b.size(); ++j) {
      double sq = 0;
      for (int c = 0; c < 3; ++c) {
        const double d = a.points(i, c) - b.points(j, c);
        sq += d * d;
      }
      best = std::min(best, sq);
    }
    sa += std::sqrt(best);
  }
  double sb = 0;
  for (int j = 0; j < b.size(); ++j) {
    double best = 1e300;
    for (int i = 0; i < a.size(); ++i) {
      double sq = 0;
      for (int c = 0; c < 3; ++c) {
        const double d = a.points(i, c) - b.points(j, c);
        sq += d * d;
      }
      best = std::min(best, sq);
    }
    sb += std::sqrt(best);
  }
  return sa / a.size() + sb / b.size();
}

double oracle_epe(const FlowField& pred, const FlowField& target) {
  double total = 0;
  for (int i = 0; i < pred.size(); ++i) {
    double sq = 0;
    for (int c = 0; c < 3; ++c) {
      const double d = pred.vectors(i, c) - target.vectors(i, c);
      sq += d * d;
    }
    total += std::sqrt(sq);
  }
  return total / pred.size();
}

double oracle_accuracy(const FlowField& pred, const FlowField& target,
                       double abs_t, double rel_t) {
  long hits = 0;
  for (int i = 0; i < pred.size(); ++i) {
    double esq = 0, tsq = 0;
    for (int c = 0; c < 3; ++c) {
      const double d = pred.vectors(i, c) - target.vectors(i, c);
      esq += d * d;
      tsq += target.vectors(i, c) * target.vectors(i, c);
    }
    const double err = std::sqrt(esq);
    if (err < abs_t || err < rel_t * std::sqrt(tsq)) ++hits;
  }
  return static_cast<double>(hits) / pred.size();
}

}  // namespace

// Criterion 1: the loss and metric implementations agree with independent
// scalar-loop oracles within 1e-6 on randomized small instances.
TEST(Acceptance, C01_LossOracleEquivalence) {
  CriterionReporter report("C01 loss-oracle equivalence");
  const auto t0 = Clock::now();
  Rng rng(20260808);
  const CycleTerms cycle_variants[] = {
      {true, false, false}, {false, true, false}, {false, false, true},
      {true, true, false},  {true, false, true},  {true, true, true},
  };
  int instances = 0;
  for (int trial = 0; trial < 120; ++trial) {
    LossConfig cfg;
    cfg.factor = static_cast<MultiscaleFactor>(trial % 4);
    cfg.margin = 0.25 + rng.uniform();
    cfg.cycle_terms = cycle_variants[trial % 6];
    cfg.cycle_reduce = trial % 2 ? CycleReduce::sum : CycleReduce::mean;
    cfg.lambda_cc = rng.uniform(0.0, 2.0);

    std::vector<int> dims;
    const int levels = 1 + static_cast<int>(rng.below(4));
    for (int l = 0; l < levels; ++l)
      dims.push_back(1 + static_cast<int>(rng.below(32)));
    const auto pa = random_pyramid(dims, rng);
    const auto pp = random_pyramid(dims, rng);
    const auto pn = random_pyramid(dims, rng);
    report.check(std::abs(multiscale_triplet(pa, pp, pn, cfg) -
                          oracle_multiscale(pa, pp, pn, cfg)) < 1e-6,
                 "multiscale_triplet vs oracle");

    const int n = 1 + static_cast<int>(rng.below(64));
    const auto f = random_flow(n, rng);
    const auto b = random_flow(n, rng);
    report.check(std::abs(cycle_consistency(f, b, cfg) -
                          oracle_cycle(f, b, cfg)) < 1e-6,
                 "cycle_consistency vs oracle");

    std::vector<double> r_p(static_cast<std::size_t>(levels));
    std::vector<double> r_n(static_cast<std::size_t>(levels));
    for (int l = 0; l < levels; ++l) {
      r_p[static_cast<std::size_t>(l)] =
          oracle_norm_diff(pa.levels[l], pp.levels[l]);
      r_n[static_cast<std::size_t>(l)] =
          oracle_norm_diff(pa.levels[l], pn.levels[l]);
    }
    const double cc = oracle_cycle(f, b, cfg);
    double lh_oracle = 0.0;
    for (int l = 0; l < levels; ++l)
      lh_oracle += oracle_gamma(l, cfg.factor) * r_n[static_cast<std::size_t>(l)];
    lh_oracle += cfg.lambda_cc * cc;
    report.check(std::abs(loss_flow_extractor(r_n, cc, cfg) - lh_oracle) <
                     1e-6,
                 "loss_flow_extractor vs oracle");
    double lg_oracle = 0.0;
    for (int l = 0; l < levels; ++l)
      lg_oracle += oracle_gamma(l, cfg.factor) *
                   std::max(r_p[static_cast<std::size_t>(l)] -
                                r_n[static_cast<std::size_t>(l)] + cfg.margin,
                            0.0);
    report.check(std::abs(loss_embedder(r_p, r_n, cfg) - lg_oracle) < 1e-6,
                 "loss_embedder vs oracle");

    const auto cloud_a = random_cloud(1 + static_cast<int>(rng.below(64)), rng);
    const auto cloud_b = random_cloud(1 + static_cast<int>(rng.below(64)), rng);
    report.check(std::abs(chamfer(cloud_a, cloud_b) -
                          oracle_chamfer(cloud_a, cloud_b)) < 1e-6,
                 "chamfer vs oracle");

    const auto pred = random_flow(n, rng, 0.3);
    const auto target = random_flow(n, rng, 0.3);
    report.check(std::abs(epe(pred, target) - oracle_epe(pred, target)) < 1e-6,
                 "epe vs oracle");
    report.check(std::abs(accuracy(pred, target, kAcc01Abs, kAcc01Rel) -
                          oracle_accuracy(pred, target, kAcc01Abs,
                                          kAcc01Rel)) < 1e-6,
                 "acc01 vs oracle");
    report.check(std::abs(accuracy(pred, target, kAcc005Abs, kAcc005Rel) -
                          oracle_accuracy(pred, target, kAcc005Abs,
                                          kAcc005Rel)) < 1e-6,
                 "acc005 vs oracle");
    ++instances;
  }
  report.check(instances >= 100, "at least 100 randomized instances");
  report.check(seconds_since(t0) < 60.0, "runtime under one minute");
}

// Criterion 2: analytic gradients of L_g and L_h through the embedder and
// flow extractor match central finite differences on tiny networks.
TEST(Acceptance, C02_GradientChecks) {
  CriterionReporter report("C02 gradient checks");
  const auto t0 = Clock::now();

  SceneSpec spec;
  spec.points_per_cloud = 32;
  spec.mechanism = Mechanism::resampling;
  spec.motion = MotionBounds{0.2, 0.4};
  spec.seed = 7;
  const ScenePair pair = generate_pair(spec);
  const auto [anchor, positive] = partition_anchor_positive(pair.frame2, 3);

  CloudEmbedder embedder(EmbedderConfig::tiny(), 11);
  ReferenceFlowExtractor extractor(FlowExtractorConfig::tiny(), 13);
  Rng prng(17);
  randomize_params(embedder.params(), prng, 0.4);
  randomize_params(extractor.params(), prng, 0.4);
  const long total_params = embedder.params().scalar_count() +
                            extractor.params().scalar_count();
  report.check(total_params <= 5000, "networks stay under 5k parameters");

  LossConfig loss_cfg;

  // L_g with respect to the embedder parameters; the negative comes from the
  // frozen extractor's transformed cloud.
  const FlowField frozen_flow = extractor.predict(pair.frame1, pair.frame2);
  const PointCloud ptilde = transform_cloud(pair.frame1, frozen_flow);
  std::vector<ad::Mat> embedder_leaves;
  for (int i = 0; i < embedder.params().count(); ++i)
    embedder_leaves.push_back(embedder.params().entry(i).value);
  const auto lg_result = test::check_gradients(
      [&](ad::Tape& t, const std::vector<ad::Var>& params) {
        const auto z_a = embedder.build(t, t.constant(anchor.points), params);
        const auto z_p = embedder.build(t, t.constant(positive.points),
                                        params);
        const auto z_n = embedder.build(t, t.constant(ptilde.points), params);
        return loss_embedder_graph(t, level_distances(t, z_a, z_p),
                                   level_distances(t, z_a, z_n), loss_cfg);
      },
      embedder_leaves, 1e-5, 1e-3, 1e-8, 60, 101);
  report.check(lg_result.pass_fraction() >= 0.95,
               "L_g gradient pass fraction >= 95%");

  // L_h with respect to the extractor parameters, through both extractor
  // evaluations (forward and backward flow) and the frozen embedder.
  std::vector<ad::Mat> extractor_leaves;
  for (int i = 0; i < extractor.params().count(); ++i)
    extractor_leaves.push_back(extractor.params().entry(i).value);
  const auto lh_result = test::check_gradients(
      [&](ad::Tape& t, const std::vector<ad::Var>& params) {
        const ad::Var f1 = t.constant(pair.frame1.points);
        const ad::Var f2 = t.constant(pair.frame2.points);
        const ad::Var flow = extractor.build(t, f1, f2, params);
        const ad::Var moved = t.add(f1, flow);
        const ad::Var bflow = extractor.build(t, moved, f1, params);
        const ad::Var cc = cycle_graph(t, flow, bflow, loss_cfg);
        const auto evars = embedder.bind(t, false);
        const auto z_a = embedder.build(t, t.constant(anchor.points), evars);
        const auto z_n = embedder.build(t, moved, evars);
        return loss_flow_extractor_graph(t, level_distances(t, z_a, z_n), cc,
                                         loss_cfg);
      },
      extractor_leaves, 1e-5, 1e-3, 1e-8, 60, 103);
  report.check(lh_result.pass_fraction() >= 0.95,
               "L_h gradient pass fraction >= 95%");

  report.check(seconds_since(t0) < 300.0, "runtime under five minutes");
}

// Criterion 3: the depth weights for l = 0..3 under inv_sqrt equal
// [1, 1/sqrt(2), 1/sqrt(3), 1/2] exactly in double precision.
TEST(Acceptance, C03_GammaTable) {
  CriterionReporter report("C03 gamma table");
  report.check(gamma(0, MultiscaleFactor::inv_sqrt) == 1.0, "gamma(0) == 1");
  report.check(gamma(1, MultiscaleFactor::inv_sqrt) == 1.0 / std::sqrt(2.0),
               "gamma(1) == 1/sqrt(2)");
  report.check(gamma(2, MultiscaleFactor::inv_sqrt) == 1.0 / std::sqrt(3.0),
               "gamma(2) == 1/sqrt(3)");
  report.check(gamma(3, MultiscaleFactor::inv_sqrt) == 0.5, "gamma(3) == 1/2");
}

// Criterion 4: embedder permutation invariance and extractor frame-1
// equivariance / frame-2 invariance within 1e-5 relative over 50 random
// permutations.
TEST(Acceptance, C04_SymmetrySuite) {
  CriterionReporter report("C04 symmetry suite");
  Rng rng(404);

  SceneSpec spec;
  spec.points_per_cloud = 96;
  spec.mechanism = Mechanism::resampling;
  spec.seed = 12;
  const ScenePair pair = generate_pair(spec);

  CloudEmbedder embedder(EmbedderConfig{}, 5);
  randomize_params(embedder.params(), rng);
  const EmbeddingPyramid base = embedder.embed(pair.frame1);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<int> perm(static_cast<std::size_t>(pair.frame1.size()));
    for (int i = 0; i < pair.frame1.size(); ++i)
      perm[static_cast<std::size_t>(i)] = i;
    rng.shuffle(perm);
    PointCloud permuted{PointMatrix(pair.frame1.size(), 3)};
    for (int i = 0; i < pair.frame1.size(); ++i)
      permuted.points.row(i) =
          pair.frame1.points.row(perm[static_cast<std::size_t>(i)]);
    const EmbeddingPyramid got = embedder.embed(permuted);
    for (int l = 0; l < base.level_count(); ++l) {
      const double rel = (base.levels[l] - got.levels[l]).norm() /
                         std::max(base.levels[l].norm(), 1e-12);
      report.check(rel < 1e-5, "embedder permutation invariance");
    }
  }

  ReferenceFlowExtractor extractor(FlowExtractorConfig{}, 6);
  randomize_params(extractor.params(), rng);
  const FlowField base_flow = extractor.predict(pair.frame1, pair.frame2);
  for (int trial = 0; trial < 50; ++trial) {
    // Frame-1 equivariance.
    std::vector<int> perm1(static_cast<std::size_t>(pair.frame1.size()));
    for (int i = 0; i < pair.frame1.size(); ++i)
      perm1[static_cast<std::size_t>(i)] = i;
    rng.shuffle(perm1);
    PointCloud f1p{PointMatrix(pair.frame1.size(), 3)};
    for (int i = 0; i < pair.frame1.size(); ++i)
      f1p.points.row(i) =
          pair.frame1.points.row(perm1[static_cast<std::size_t>(i)]);
    const FlowField flow1 = extractor.predict(f1p, pair.frame2);
    for (int i = 0; i < pair.frame1.size(); ++i) {
      const auto expected =
          base_flow.vectors.row(perm1[static_cast<std::size_t>(i)]);
      const double rel = (flow1.vectors.row(i) - expected).norm() /
                         std::max(expected.norm(), 1e-9);
      report.check(rel < 1e-5, "extractor frame-1 equivariance");
    }
    // Frame-2 invariance.
    std::vector<int> perm2(static_cast<std::size_t>(pair.frame2.size()));
    for (int i = 0; i < pair.frame2.size(); ++i)
      perm2[static_cast<std::size_t>(i)] = i;
    rng.shuffle(perm2);
    PointCloud f2p{PointMatrix(pair.frame2.size(), 3)};
    for (int i = 0; i < pair.frame2.size(); ++i)
      f2p.points.row(i) =
          pair.frame2.points.row(perm2[static_cast<std::size_t>(i)]);
    const FlowField flow2 = extractor.predict(pair.frame1, f2p);
    for (int i = 0; i < pair.frame1.size(); ++i) {
      const double rel =
          (flow2.vectors.row(i) - base_flow.vectors.row(i)).norm() /
          std::max(base_flow.vectors.row(i).norm(), 1e-9);
      report.check(rel < 1e-5, "extractor frame-2 invariance");
    }
  }
}

// Criterion 5: over 100 adversarial rounds exactly one network changes per
// phase and both phases consume the identical batch.
TEST(Acceptance, C05_FreezeDiscipline) {
  CriterionReporter report("C05 freeze discipline");
  TrainConfig cfg;
  cfg.embedder = EmbedderConfig::tiny();
  cfg.extractor = FlowExtractorConfig::tiny();
  cfg.batch_size = 2;
  cfg.cloud_size = 32;
  cfg.seed = 505;

  SceneSpec spec;
  spec.points_per_cloud = 32;
  spec.mechanism = Mechanism::resampling;
  spec.motion = MotionBounds{0.2, 0.4};
  spec.seed = 41;
  const auto pairs = generate_dataset(spec, 8);

  Trainer trainer(cfg);
  Rng batch_rng(99);
  std::uint64_t embedder_prev = trainer.embedder().params().content_hash();
  std::uint64_t extractor_prev = trainer.extractor().params().content_hash();
  for (int round = 0; round < 100; ++round) {
    std::vector<const ScenePair*> batch;
    const auto picks = batch_rng.sample_indices(static_cast<int>(pairs.size()),
                                                cfg.batch_size);
    for (int p : picks) batch.push_back(&pairs[static_cast<std::size_t>(p)]);
    const RoundLog log = trainer.run_round(batch);
    report.check(log.embedder_hash_after_g != embedder_prev,
                 "embedder updated in phase 1");
    report.check(log.extractor_hash_after_g == extractor_prev,
                 "extractor frozen in phase 1");
    report.check(log.embedder_hash_after_h == log.embedder_hash_after_g,
                 "embedder frozen in phase 2");
    report.check(log.extractor_hash_after_h != log.extractor_hash_after_g,
                 "extractor updated in phase 2");
    report.check(log.batch_hash_phase_g == log.batch_hash_phase_h,
                 "both phases consume the identical batch");
    embedder_prev = log.embedder_hash_after_h;
    extractor_prev = log.extractor_hash_after_h;
  }
}

// Criterion 6: a synthetic non-improving run triggers multiplication of both
// learning rates by exactly 0.75 after exactly 20 epochs of no improvement.
TEST(Acceptance, C06_PlateauScheduler) {
  CriterionReporter report("C06 plateau scheduler");
  TrainConfig cfg;
  cfg.embedder = EmbedderConfig::tiny();
  cfg.extractor = FlowExtractorConfig::tiny();
  cfg.objective = Objective::chamfer_cycle;  // exact fixed point at zero flow
  cfg.batch_size = 4;
  cfg.cloud_size = 32;
  cfg.epochs = 25;
  cfg.seed = 606;

  SceneSpec spec;
  spec.points_per_cloud = 32;
  spec.mechanism = Mechanism::correspondence;
  spec.motion = MotionBounds{0.0, 0.0};
  spec.seed = 51;
  const auto train_set = generate_dataset(spec, 4);
  SceneSpec vspec = spec;
  vspec.seed = 52;
  const auto val_set = generate_dataset(vspec, 2);

  Trainer trainer(cfg);
  const TrainHistory history = trainer.train(train_set, val_set);
  int first_trigger = -1;
  for (const auto& e : history.epochs)
    if (e.plateau_triggered) {
      first_trigger = e.epoch;
      break;
    }
  report.check(first_trigger == 21,
               "trigger after exactly 20 non-improving epochs");
  const auto& at = history.epochs[20];
  report.check(at.lr_flow == 5e-4 * 0.75, "flow rate multiplied by 0.75");
  report.check(at.lr_embedder == 5e-5 * 0.75,
               "embedder rate multiplied by 0.75");
  for (std::size_t i = 1; i < history.epochs.size(); ++i)
    report.check(history.epochs[i].lr_flow <= history.epochs[i - 1].lr_flow,
                 "learning rate non-increasing");
}

// Criterion 9: dataset and checkpoint round trips are bit-exact; resumed
// training matches uninterrupted training within 1e-6 per-round loss.
TEST(Acceptance, C09_Serialization) {
  CriterionReporter report("C09 serialization");
  const fs::path dir = fs::temp_directory_path() / "sfs_acceptance_c09";
  fs::remove_all(dir);

  SceneSpec spec;
  spec.points_per_cloud = 48;
  spec.mechanism = Mechanism::resampling;
  spec.seed = 90;
  const auto pairs = generate_dataset(spec, 6);
  write_dataset(pairs, dir);
  const auto loaded = read_dataset(dir);
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    report.check(loaded[i].frame1.points == pairs[i].frame1.points,
                 "frame1 bit-exact");
    report.check(loaded[i].frame2.points == pairs[i].frame2.points,
                 "frame2 bit-exact");
    report.check(loaded[i].gt_flow.vectors == pairs[i].gt_flow.vectors,
                 "flow bit-exact");
  }
  fs::remove_all(dir);

  TrainConfig cfg;
  cfg.embedder = EmbedderConfig::tiny();
  cfg.extractor = FlowExtractorConfig::tiny();
  cfg.batch_size = 2;
  cfg.cloud_size = 32;
  cfg.epochs = 4;
  cfg.seed = 91;
  SceneSpec tspec;
  tspec.points_per_cloud = 32;
  tspec.mechanism = Mechanism::resampling;
  tspec.motion = MotionBounds{0.2, 0.4};
  tspec.seed = 92;
  const auto train_set = generate_dataset(tspec, 6);
  SceneSpec vspec = tspec;
  vspec.seed = 93;
  const auto val_set = generate_dataset(vspec, 2);

  Trainer straight(cfg);
  const auto full = straight.train(train_set, val_set);

  TrainConfig half_cfg = cfg;
  half_cfg.epochs = 2;
  Trainer first_half(half_cfg);
  first_half.train(train_set, val_set);
  std::ostringstream blob;
  first_half.save_checkpoint(blob);
  std::istringstream in1(blob.str());
  Trainer reloaded = Trainer::load_checkpoint(in1, half_cfg);
  std::ostringstream blob2;
  reloaded.save_checkpoint(blob2);
  report.check(blob.str() == blob2.str(), "checkpoint bit-exact round trip");

  std::istringstream in2(blob.str());
  Trainer resumed = Trainer::load_checkpoint(in2, cfg);
  const auto tail = resumed.train(train_set, val_set);
  const std::size_t offset = full.rounds.size() - tail.rounds.size();
  report.check(tail.rounds.size() > 0, "resumed run performs rounds");
  for (std::size_t i = 0; i < tail.rounds.size(); ++i) {
    report.check(std::abs(tail.rounds[i].loss_g -
                          full.rounds[offset + i].loss_g) <= 1e-6,
                 "resumed L_g matches straight-through");
    report.check(std::abs(tail.rounds[i].loss_h -
                          full.rounds[offset + i].loss_h) <= 1e-6,
                 "resumed L_h matches straight-through");
  }
}

// Criterion 10: on 1000 generated pairs, per-object distance preservation
// holds within 1e-5 and correspondence pairs satisfy frame2 = frame1 +
// gt_flow exactly.
TEST(Acceptance, C10_SandboxRigidity) {
  CriterionReporter report("C10 sandbox rigidity");
  Rng rng(1010);
  const ShapeFamily families[] = {ShapeFamily::sphere, ShapeFamily::box,
                                  ShapeFamily::cylinder};
  int generated = 0;
  for (int i = 0; i < 1000; ++i) {
    SceneSpec spec;
    spec.n_objects = 1 + static_cast<int>(rng.below(2));
    spec.points_per_cloud = 64;
    spec.mechanism =
        i % 2 == 0 ? Mechanism::correspondence : Mechanism::resampling;
    spec.shape_family = families[i % 3];
    spec.workspace = spec.n_objects > 1 ? 10.0 : 4.0;
    spec.motion = MotionBounds{0.4, 0.5};
    spec.seed = derive_seed(2026, {static_cast<std::uint64_t>(i)});
    const ScenePair pair = generate_pair(spec);
    ++generated;

    const PointMatrix moved = pair.frame1.points + pair.gt_flow.vectors;
    // Even split, remainder to the first object.
    const int base_count = spec.points_per_cloud / spec.n_objects;
    int row = 0;
    for (int obj = 0; obj < spec.n_objects; ++obj) {
      const int count =
          base_count + (obj == 0 ? spec.points_per_cloud % spec.n_objects : 0);
      for (int trial = 0; trial < 12; ++trial) {
        const int a = row + static_cast<int>(rng.below(
                                static_cast<std::uint64_t>(count)));
        const int b = row + static_cast<int>(rng.below(
                                static_cast<std::uint64_t>(count)));
        const double before =
            (pair.frame1.points.row(a) - pair.frame1.points.row(b)).norm();
        const double after = (moved.row(a) - moved.row(b)).norm();
        report.check(std::abs(after - before) <= 1e-5,
                     "per-object rigidity within 1e-5");
      }
      row += count;
    }
    if (spec.mechanism == Mechanism::correspondence)
      report.check(moved == pair.frame2.points,
                   "correspondence additivity exact");
  }
  report.check(generated == 1000, "generated 1000 pairs");
}
