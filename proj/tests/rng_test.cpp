#include <gtest/gtest.h>

#include <set>

#include "sfs/rng.hpp"

using namespace sfs;

TEST(Rng, DeterministicPerSeed) {
  Rng a(42), b(42);
  for (int i = 0; i < 100; ++i) EXPECT_EQ(a.next_u64(), b.next_u64());
}

TEST(Rng, DifferentSeedsDiffer) {
  Rng a(1), b(2);
  int same = 0;
  for (int i = 0; i < 64; ++i)
    if (a.next_u64() == b.next_u64()) ++same;
  EXPECT_EQ(same, 0);
}

TEST(Rng, UniformInHalfOpenInterval) {
  Rng rng(3);
  double sum = 0.0;
  for (int i = 0; i < 10000; ++i) {
    const double u = rng.uniform();
    ASSERT_GE(u, 0.0);
    ASSERT_LT(u, 1.0);
    sum += u;
  }
  EXPECT_NEAR(sum / 10000.0, 0.5, 0.02);
}

TEST(Rng, NormalHasUnitScale) {
  Rng rng(5);
  double sum = 0.0, sq = 0.0;
  const int n = 20000;
  for (int i = 0; i < n; ++i) {
    const double z = rng.normal();
    sum += z;
    sq += z * z;
  }
  EXPECT_NEAR(sum / n, 0.0, 0.03);
  EXPECT_NEAR(sq / n, 1.0, 0.05);
}

TEST(Rng, BelowIsInRange) {
  Rng rng(7);
  for (int i = 0; i < 1000; ++i) EXPECT_LT(rng.below(17), 17u);
}

TEST(Rng, SampleIndicesDistinct) {
  Rng rng(9);
  const auto idx = rng.sample_indices(50, 20);
  EXPECT_EQ(idx.size(), 20u);
  std::set<int> unique(idx.begin(), idx.end());
  EXPECT_EQ(unique.size(), 20u);
  for (int i : idx) {
    EXPECT_GE(i, 0);
    EXPECT_LT(i, 50);
  }
}

TEST(DeriveSeed, TagsChangeStream) {
  const std::uint64_t base = derive_seed(123, {rng_tag::motion, 0});
  EXPECT_NE(base, derive_seed(123, {rng_tag::motion, 1}));
  EXPECT_NE(base, derive_seed(123, {rng_tag::placement, 0}));
  EXPECT_NE(base, derive_seed(124, {rng_tag::motion, 0}));
  EXPECT_EQ(base, derive_seed(123, {rng_tag::motion, 0}));
}
