#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <vector>

#include "grad_check.hpp"
#include "sfs/losses.hpp"
#include "sfs/losses_graph.hpp"
#include "sfs/rng.hpp"

using namespace sfs;

namespace {

Eigen::VectorXd vec(std::initializer_list<double> values) {
  Eigen::VectorXd v(static_cast<Eigen::Index>(values.size()));
  Eigen::Index i = 0;
  for (double x : values) v[i++] = x;
  return v;
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

FlowField random_flow(int n, Rng& rng, double scale = 1.0) {
  FlowField f{PointMatrix(n, 3)};
  for (int i = 0; i < n; ++i)
    for (int c = 0; c < 3; ++c) f.vectors(i, c) = scale * rng.normal();
  return f;
}

// Independent scalar-loop implementations used as oracles.

double oracle_triplet(const Eigen::VectorXd& a, const Eigen::VectorXd& p,
                      const Eigen::VectorXd& n, double m) {
  double dp = 0.0, dn = 0.0;
  for (Eigen::Index i = 0; i < a.size(); ++i) {
    dp += (a[i] - p[i]) * (a[i] - p[i]);
    dn += (a[i] - n[i]) * (a[i] - n[i]);
  }
  const double v = std::sqrt(dp) - std::sqrt(dn) + m;
  return v > 0.0 ? v : 0.0;
}

double oracle_multiscale(const EmbeddingPyramid& a, const EmbeddingPyramid& p,
                         const EmbeddingPyramid& n, const LossConfig& cfg) {
  double total = 0.0;
  for (int l = 0; l < a.level_count(); ++l) {
    double w = 0.0;
    switch (cfg.factor) {
      case MultiscaleFactor::none: w = (l == 0) ? 1.0 : 0.0; break;
      case MultiscaleFactor::inv_sqrt: w = 1.0 / std::sqrt(l + 1.0); break;
      case MultiscaleFactor::inv_linear: w = 1.0 / (l + 1.0); break;
      case MultiscaleFactor::inv_square: w = 1.0 / ((l + 1.0) * (l + 1.0));
        break;
    }
    total += w * oracle_triplet(a.levels[l], p.levels[l], n.levels[l],
                                cfg.margin);
  }
  return total;
}

double oracle_cycle(const FlowField& f, const FlowField& b,
                    const LossConfig& cfg) {
  double total = 0.0;
  for (int i = 0; i < f.size(); ++i) {
    double fn = 0.0, bn = 0.0, dot = 0.0, sn = 0.0;
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
  if (cfg.cycle_reduce == CycleReduce::mean) total /= f.size();
  return total;
}

double oracle_chamfer(const PointCloud& a, const PointCloud& b) {
  double sum_a = 0.0;
  for (int i = 0; i < a.size(); ++i) {
    double best = 1e300;
    for (int j = 0; j < b.size(); ++j) {
      double sq = 0.0;
      for (int c = 0; c < 3; ++c) {
        const double d = a.points(i, c) - b.points(j, c);
        sq += d * d;
      }
      best = std::min(best, sq);
    }
    sum_a += std::sqrt(best);
  }
  double sum_b = 0.0;
  for (int j = 0; j < b.size(); ++j) {
    double best = 1e300;
    for (int i = 0; i < a.size(); ++i) {
      double sq = 0.0;
      for (int c = 0; c < 3; ++c) {
        const double d = a.points(i, c) - b.points(j, c);
        sq += d * d;
      }
      best = std::min(best, sq);
    }
    sum_b += std::sqrt(best);
  }
  return sum_a / a.size() + sum_b / b.size();
}

constexpr double kGammaSum4 = 2.7844570503761732;  // 1 + 1/sqrt(2) + 1/sqrt(3) + 1/2

}  // namespace

// ---- gamma ----

TEST(Gamma, InvSqrtTable) {
  EXPECT_DOUBLE_EQ(gamma(0, MultiscaleFactor::inv_sqrt), 1.0);
  EXPECT_DOUBLE_EQ(gamma(3, MultiscaleFactor::inv_sqrt), 0.5);
  const double expected[4] = {1.0, 0.70711, 0.57735, 0.5};
  for (int l = 0; l < 4; ++l)
    EXPECT_NEAR(gamma(l, MultiscaleFactor::inv_sqrt), expected[l], 1e-5);
}

TEST(Gamma, OtherFactors) {
  EXPECT_DOUBLE_EQ(gamma(0, MultiscaleFactor::none), 1.0);
  EXPECT_DOUBLE_EQ(gamma(1, MultiscaleFactor::none), 0.0);
  EXPECT_DOUBLE_EQ(gamma(3, MultiscaleFactor::inv_linear), 0.25);
  EXPECT_DOUBLE_EQ(gamma(3, MultiscaleFactor::inv_square), 0.0625);
  EXPECT_THROW(gamma(-1, MultiscaleFactor::inv_sqrt), ContractViolation);
}

// ---- triplet margin ----

TEST(TripletMargin, NegativeFarEnough) {
  const auto a = vec({0, 0}), p = vec({0, 0}), n = vec({2, 0});
  EXPECT_DOUBLE_EQ(triplet_margin(a, p, n, 1.0), 0.0);
}

TEST(TripletMargin, AllEqualGivesMargin) {
  const auto z = vec({0.3, -0.7, 2.0});
  EXPECT_DOUBLE_EQ(triplet_margin(z, z, z, 1.0), 1.0);
}

TEST(TripletMargin, HandArithmetic) {
  EXPECT_DOUBLE_EQ(triplet_margin(vec({0, 0}), vec({3, 4}), vec({1, 0}), 1.0),
                   5.0);
}

TEST(TripletMargin, NonnegativeAndMatchesOracle) {
  Rng rng(31);
  for (int trial = 0; trial < 200; ++trial) {
    Eigen::VectorXd a(8), p(8), n(8);
    for (int i = 0; i < 8; ++i) {
      a[i] = rng.normal();
      p[i] = rng.normal();
      n[i] = rng.normal();
    }
    const double got = triplet_margin(a, p, n, 1.0);
    EXPECT_GE(got, 0.0);
    EXPECT_NEAR(got, oracle_triplet(a, p, n, 1.0), 1e-12);
  }
}

TEST(TripletMargin, DimMismatchThrows) {
  EXPECT_THROW(triplet_margin(vec({1, 2}), vec({1, 2, 3}), vec({1, 2}), 1.0),
               ContractViolation);
}

// ---- multiscale triplet ----

TEST(MultiscaleTriplet, FarNegativeGivesZero) {
  Rng rng(37);
  LossConfig cfg;
  EmbeddingPyramid a = random_pyramid({4, 4, 4, 4}, rng);
  EmbeddingPyramid p = a;
  EmbeddingPyramid n = a;
  for (auto& level : n.levels) level.array() += 100.0;
  EXPECT_DOUBLE_EQ(multiscale_triplet(a, p, n, cfg), 0.0);
}

TEST(MultiscaleTriplet, IdenticalPyramidsGiveGammaSum) {
  Rng rng(41);
  LossConfig cfg;
  const EmbeddingPyramid a = random_pyramid({8, 4, 4, 2}, rng);
  EXPECT_NEAR(multiscale_triplet(a, a, a, cfg), kGammaSum4, 1e-4);
}

TEST(MultiscaleTriplet, MatchesOracleOnRandomPyramids) {
  Rng rng(43);
  for (int trial = 0; trial < 100; ++trial) {
    LossConfig cfg;
    cfg.factor = static_cast<MultiscaleFactor>(trial % 4);
    const EmbeddingPyramid a = random_pyramid({16, 8, 8, 4}, rng);
    const EmbeddingPyramid p = random_pyramid({16, 8, 8, 4}, rng);
    const EmbeddingPyramid n = random_pyramid({16, 8, 8, 4}, rng);
    const double got = multiscale_triplet(a, p, n, cfg);
    EXPECT_GE(got, 0.0);
    EXPECT_NEAR(got, oracle_multiscale(a, p, n, cfg), 1e-6);
  }
}

TEST(MultiscaleTriplet, LevelMismatchThrows) {
  Rng rng(47);
  const EmbeddingPyramid a = random_pyramid({4, 4}, rng);
  const EmbeddingPyramid b = random_pyramid({4, 4, 4}, rng);
  EXPECT_THROW(multiscale_triplet(a, a, b, LossConfig{}), ContractViolation);
}

// ---- cycle consistency ----

TEST(CycleConsistency, PerfectReversalAttainsMinusN) {
  Rng rng(53);
  LossConfig cfg;
  cfg.cycle_reduce = CycleReduce::sum;
  const int n = 7;
  FlowField f = random_flow(n, rng);
  for (int i = 0; i < n; ++i)
    if (f.vectors.row(i).norm() < 0.1) f.vectors(i, 0) += 1.0;
  FlowField b{(-f.vectors).eval()};
  EXPECT_NEAR(cycle_consistency(f, b, cfg), -static_cast<double>(n), 1e-9);
}

TEST(CycleConsistency, EqualUnitFlowsSumToThree) {
  LossConfig cfg;
  cfg.cycle_reduce = CycleReduce::sum;
  FlowField f{PointMatrix(1, 3)};
  f.vectors << 1, 0, 0;
  // l2 term ||f+b|| = 2, cosine = +1.
  EXPECT_NEAR(cycle_consistency(f, f, cfg), 3.0, 1e-12);
}

TEST(CycleConsistency, ZeroFlowsAreGuardedToZero) {
  LossConfig cfg;
  cfg.cycle_reduce = CycleReduce::sum;
  FlowField f{PointMatrix::Zero(5, 3)};
  EXPECT_DOUBLE_EQ(cycle_consistency(f, f, cfg), 0.0);
}

TEST(CycleConsistency, MseVariant) {
  LossConfig cfg;
  cfg.cycle_terms = CycleTerms{false, true, false};
  cfg.cycle_reduce = CycleReduce::sum;
  FlowField f{PointMatrix(1, 3)};
  f.vectors << 1, 0, 0;
  // mean squared component of f + b = (2^2 + 0 + 0) / 3.
  EXPECT_NEAR(cycle_consistency(f, f, cfg), 4.0 / 3.0, 1e-12);
}

TEST(CycleConsistency, BoundedBelowByMinusN) {
  Rng rng(59);
  LossConfig cfg;
  cfg.cycle_reduce = CycleReduce::sum;
  for (int trial = 0; trial < 100; ++trial) {
    const int n = 1 + static_cast<int>(rng.below(20));
    const FlowField f = random_flow(n, rng);
    const FlowField b = random_flow(n, rng);
    EXPECT_GE(cycle_consistency(f, b, cfg), -static_cast<double>(n) - 1e-9);
  }
}

TEST(CycleConsistency, MatchesOracleOnAllVariants) {
  Rng rng(61);
  const CycleTerms variants[] = {
      {true, false, false}, {false, true, false}, {false, false, true},
      {true, true, false},  {true, false, true},  {true, true, true},
  };
  for (int trial = 0; trial < 120; ++trial) {
    LossConfig cfg;
    cfg.cycle_terms = variants[trial % 6];
    cfg.cycle_reduce = trial % 2 == 0 ? CycleReduce::sum : CycleReduce::mean;
    const int n = 1 + static_cast<int>(rng.below(16));
    const FlowField f = random_flow(n, rng);
    const FlowField b = random_flow(n, rng);
    EXPECT_NEAR(cycle_consistency(f, b, cfg), oracle_cycle(f, b, cfg), 1e-9);
  }
}

// ---- adversarial objectives ----

TEST(LossFlowExtractor, ZeroInputsGiveZero) {
  const std::vector<double> r_n = {0, 0, 0, 0};
  EXPECT_DOUBLE_EQ(loss_flow_extractor(r_n, 0.0, LossConfig{}), 0.0);
}

TEST(LossFlowExtractor, UnitDistancesGiveGammaSum) {
  const std::vector<double> r_n = {1, 1, 1, 1};
  EXPECT_NEAR(loss_flow_extractor(r_n, 0.0, LossConfig{}), kGammaSum4, 1e-4);
}

TEST(LossFlowExtractor, LambdaWeightsCycle) {
  LossConfig cfg;
  cfg.lambda_cc = 2.0;
  const std::vector<double> r_n = {1, 0, 0, 0};
  EXPECT_DOUBLE_EQ(loss_flow_extractor(r_n, -1.0, cfg), -1.0);
}

TEST(LossEmbedder, SeparatedLevelsGiveZero) {
  const std::vector<double> r_p = {0, 0, 0, 0};
  const std::vector<double> r_n = {1, 1.5, 2, 7};
  EXPECT_DOUBLE_EQ(loss_embedder(r_p, r_n, LossConfig{}), 0.0);
}

TEST(LossEmbedder, EqualDistancesGiveGammaSum) {
  const std::vector<double> r = {0.3, 0.4, 0.5, 0.6};
  EXPECT_NEAR(loss_embedder(r, r, LossConfig{}), kGammaSum4, 1e-4);
}

TEST(LossEmbedder, HandArithmetic) {
  const std::vector<double> r_p = {2, 0, 0, 0};
  const std::vector<double> r_n = {0, 0, 0, 0};
  EXPECT_NEAR(loss_embedder(r_p, r_n, LossConfig{}), 3.0 + (kGammaSum4 - 1.0),
              1e-4);
}

TEST(AdversarialAntagonism, MonotoneInPerLevelDistance) {
  Rng rng(67);
  LossConfig cfg;
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<double> r_p(4), r_n(4);
    for (int l = 0; l < 4; ++l) {
      r_p[l] = std::abs(rng.normal());
      r_n[l] = std::abs(rng.normal());
    }
    const double lh0 = loss_flow_extractor(r_n, 0.0, cfg);
    const double lg0 = loss_embedder(r_p, r_n, cfg);
    const int l = static_cast<int>(rng.below(4));
    std::vector<double> bumped = r_n;
    bumped[l] += 0.1 + rng.uniform();
    EXPECT_GE(loss_flow_extractor(bumped, 0.0, cfg), lh0);
    EXPECT_LE(loss_embedder(r_p, bumped, cfg), lg0);
  }
}

// ---- chamfer ----

TEST(Chamfer, IdenticalCloudsGiveZero) {
  PointCloud a{PointMatrix::Random(15, 3)};
  EXPECT_DOUBLE_EQ(chamfer(a, a), 0.0);
}

TEST(Chamfer, SinglePointPair) {
  PointCloud a{PointMatrix::Zero(1, 3)};
  PointCloud b{PointMatrix::Zero(1, 3)};
  b.points(0, 0) = 1.0;
  EXPECT_DOUBLE_EQ(chamfer(a, b), 2.0);
}

TEST(Chamfer, MatchesBruteForceOracleAndIsSymmetric) {
  Rng rng(71);
  for (int trial = 0; trial < 50; ++trial) {
    PointCloud a{PointMatrix(3 + static_cast<int>(rng.below(12)), 3)};
    PointCloud b{PointMatrix(3 + static_cast<int>(rng.below(12)), 3)};
    for (int i = 0; i < a.size(); ++i)
      for (int c = 0; c < 3; ++c) a.points(i, c) = rng.normal();
    for (int i = 0; i < b.size(); ++i)
      for (int c = 0; c < 3; ++c) b.points(i, c) = rng.normal();
    const double got = chamfer(a, b);
    EXPECT_NEAR(got, oracle_chamfer(a, b), 1e-9);
    EXPECT_DOUBLE_EQ(got, chamfer(b, a));
  }
}

// ---- anchor/positive partition ----

TEST(Partition, EvenSplit) {
  PointCloud cloud{PointMatrix::Random(512, 3)};
  const auto [anchor, positive] = partition_anchor_positive(cloud, 5);
  EXPECT_EQ(anchor.size(), 256);
  EXPECT_EQ(positive.size(), 256);
}

TEST(Partition, OddSplitRule) {
  PointCloud cloud{PointMatrix::Random(3, 3)};
  const auto [anchor, positive] = partition_anchor_positive(cloud, 5);
  EXPECT_EQ(anchor.size(), 2);
  EXPECT_EQ(positive.size(), 1);
}

TEST(Partition, UnionEqualsInputAndDisjoint) {
  PointCloud cloud{PointMatrix::Random(101, 3)};
  const auto [anchor, positive] = partition_anchor_positive(cloud, 9);
  std::vector<Eigen::RowVector3d> merged;
  for (int i = 0; i < anchor.size(); ++i) merged.push_back(anchor.points.row(i));
  for (int i = 0; i < positive.size(); ++i)
    merged.push_back(positive.points.row(i));
  std::vector<Eigen::RowVector3d> original;
  for (int i = 0; i < cloud.size(); ++i) original.push_back(cloud.points.row(i));
  auto lex = [](const Eigen::RowVector3d& a, const Eigen::RowVector3d& b) {
    if (a.x() != b.x()) return a.x() < b.x();
    if (a.y() != b.y()) return a.y() < b.y();
    return a.z() < b.z();
  };
  std::sort(merged.begin(), merged.end(), lex);
  std::sort(original.begin(), original.end(), lex);
  ASSERT_EQ(merged.size(), original.size());
  for (std::size_t i = 0; i < merged.size(); ++i)
    EXPECT_EQ(merged[i], original[i]);
}

TEST(Partition, DeterministicPerSeed) {
  PointCloud cloud{PointMatrix::Random(64, 3)};
  const auto [a1, p1] = partition_anchor_positive(cloud, 77);
  const auto [a2, p2] = partition_anchor_positive(cloud, 77);
  EXPECT_EQ(a1.points, a2.points);
  EXPECT_EQ(p1.points, p2.points);
  const auto [a3, p3] = partition_anchor_positive(cloud, 78);
  EXPECT_NE(a1.points, a3.points);
}

TEST(Partition, RejectsTinyClouds) {
  PointCloud cloud{PointMatrix::Random(1, 3)};
  EXPECT_THROW(partition_anchor_positive(cloud, 0), ContractViolation);
}

// ---- graph builders agree with the scalar losses and differentiate ----

TEST(LossGraphs, CycleGraphMatchesScalarImplementation) {
  Rng rng(73);
  for (int trial = 0; trial < 40; ++trial) {
    LossConfig cfg;
    cfg.cycle_terms = CycleTerms{trial % 2 == 0, trial % 3 == 0, true};
    cfg.cycle_reduce = trial % 2 == 0 ? CycleReduce::mean : CycleReduce::sum;
    const int n = 2 + static_cast<int>(rng.below(10));
    const FlowField f = random_flow(n, rng);
    const FlowField b = random_flow(n, rng);
    ad::Tape t;
    const ad::Var value = cycle_graph(t, t.constant(f.vectors),
                                      t.constant(b.vectors), cfg);
    EXPECT_NEAR(t.val(value)(0, 0), cycle_consistency(f, b, cfg), 1e-10);
  }
}

TEST(LossGraphs, ChamferGraphMatchesScalarImplementation) {
  Rng rng(79);
  for (int trial = 0; trial < 20; ++trial) {
    PointCloud a{PointMatrix::Random(5 + static_cast<int>(rng.below(8)), 3)};
    PointCloud b{PointMatrix::Random(5 + static_cast<int>(rng.below(8)), 3)};
    ad::Tape t;
    const ad::Var value =
        chamfer_graph(t, t.constant(a.points), t.constant(b.points));
    EXPECT_NEAR(t.val(value)(0, 0), chamfer(a, b), 1e-10);
  }
}

TEST(LossGraphs, MultiscaleGraphMatchesScalarImplementation) {
  Rng rng(83);
  LossConfig cfg;
  const std::vector<int> dims = {6, 4, 4, 2};
  const EmbeddingPyramid a = random_pyramid(dims, rng);
  const EmbeddingPyramid p = random_pyramid(dims, rng);
  const EmbeddingPyramid n = random_pyramid(dims, rng);
  ad::Tape t;
  auto to_vars = [&t](const EmbeddingPyramid& pyr) {
    std::vector<ad::Var> vars;
    for (const auto& level : pyr.levels)
      vars.push_back(t.constant(level.transpose()));
    return vars;
  };
  const ad::Var value = multiscale_triplet_graph(t, to_vars(a), to_vars(p),
                                                 to_vars(n), cfg);
  EXPECT_NEAR(t.val(value)(0, 0), multiscale_triplet(a, p, n, cfg), 1e-10);
}

TEST(LossGraphs, CycleGradientPassesFiniteDifferences) {
  Rng rng(89);
  LossConfig cfg;
  // Random flows keep norms away from the epsilon guard with probability 1.
  ad::Mat f(6, 3), b(6, 3);
  for (int i = 0; i < f.size(); ++i) {
    f.data()[i] = rng.normal();
    b.data()[i] = rng.normal();
  }
  const auto result = sfs::test::check_gradients(
      [&cfg](ad::Tape& t, const std::vector<ad::Var>& v) {
        return cycle_graph(t, v[0], v[1], cfg);
      },
      {f, b});
  EXPECT_EQ(result.passed, result.checked)
      << "worst relative error " << result.worst_rel;
}

TEST(LossGraphs, ChamferGradientPassesFiniteDifferences) {
  Rng rng(97);
  ad::Mat a(7, 3), b(9, 3);
  for (int i = 0; i < a.size(); ++i) a.data()[i] = rng.normal();
  for (int i = 0; i < b.size(); ++i) b.data()[i] = rng.normal();
  const auto result = sfs::test::check_gradients(
      [](ad::Tape& t, const std::vector<ad::Var>& v) {
        return chamfer_graph(t, v[0], v[1]);
      },
      {a, b}, 1e-6, 2e-3);
  // Nearest-neighbor reassignment at the probe scale can flip a few pairs.
  EXPECT_GE(result.pass_fraction(), 0.95)
      << "worst relative error " << result.worst_rel;
}
