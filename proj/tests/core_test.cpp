#include <gtest/gtest.h>

#include <cmath>

#include "ipr/core.hpp"
#include "ipr/linalg.hpp"

using namespace ipr;

TEST(Tensor, ShapeAndIndexing) {
  Tensor t({2, 3, 4});
  EXPECT_EQ(t.rank(), 3u);
  EXPECT_EQ(t.size(), 24u);
  t(1, 2, 3) = 7.0;
  EXPECT_EQ(t[1 * 12 + 2 * 4 + 3], 7.0);
  EXPECT_TRUE(t.all_finite());
  t[0] = HUGE_VAL;
  EXPECT_FALSE(t.all_finite());
}

TEST(Tensor, FromDataValidatesLength) {
  EXPECT_THROW(Tensor::from_data({2, 2}, {1.0, 2.0, 3.0}), std::invalid_argument);
  Tensor t = Tensor::from_data({2, 2}, {1, 2, 3, 4});
  EXPECT_EQ(t(1, 1), 4.0);
}

TEST(Rng, DeterministicAcrossInstances) {
  Rng a(42), b(42);
  for (int i = 0; i < 1000; ++i) EXPECT_EQ(a.next_u64(), b.next_u64());
}

TEST(Rng, StreamsAreIndependent) {
  Rng a(42, 0), b(42, 1);
  bool any_diff = false;
  for (int i = 0; i < 64; ++i) any_diff |= a.next_u64() != b.next_u64();
  EXPECT_TRUE(any_diff);
}

TEST(Rng, UniformRange) {
  Rng r(7);
  for (int i = 0; i < 10000; ++i) {
    const double u = r.uniform();
    EXPECT_GE(u, 0.0);
    EXPECT_LT(u, 1.0);
  }
}

TEST(Rng, UniformIndexCoversRange) {
  Rng r(7);
  std::vector<int> seen(5, 0);
  for (int i = 0; i < 5000; ++i) ++seen[r.uniform_index(5)];
  for (int c : seen) EXPECT_GT(c, 800);
  EXPECT_THROW(r.uniform_index(0), std::invalid_argument);
}

TEST(Rng, NormalMoments) {
  Rng r(3);
  const std::size_t n = 200000;
  double mean = 0.0, m2 = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double v = r.normal();
    mean += v;
    m2 += v * v;
  }
  mean /= n;
  m2 /= n;
  EXPECT_NEAR(mean, 0.0, 0.01);
  EXPECT_NEAR(m2, 1.0, 0.02);
}

TEST(Rng, StateRoundTripIsBitExact) {
  Rng r(99);
  r.normal();  // leaves a cached Box-Muller value
  const Rng::State s = r.state();
  Rng q = Rng::from_state(s);
  for (int i = 0; i < 100; ++i) {
    const double a = r.normal();
    const double b = q.normal();
    EXPECT_EQ(a, b);
  }
}

TEST(NormalSample, RejectsNegativeStd) {
  Rng r(1);
  EXPECT_THROW(normal_sample(r, 0.0, -1.0, {2}), std::invalid_argument);
}

TEST(TopK, TiesLowerIndexFirst) {
  const std::vector<double> v{1.0, 3.0, 3.0, 2.0};
  const auto idx = top_k_indices(v, 2);
  ASSERT_EQ(idx.size(), 2u);
  EXPECT_EQ(idx[0], 1u);
  EXPECT_EQ(idx[1], 2u);
}

TEST(TopK, RejectsOversizedK) {
  EXPECT_THROW(top_k_indices({1.0}, 2), std::invalid_argument);
}

TEST(Linalg, InverseRoundTrip) {
  Rng r(5);
  Tensor a({4, 4});
  for (std::size_t i = 0; i < a.size(); ++i) a[i] = r.normal();
  const Tensor inv = mat_inverse(a);
  const Tensor id = mat_mul(a, inv);
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t j = 0; j < 4; ++j)
      EXPECT_NEAR(id(i, j), i == j ? 1.0 : 0.0, 1e-10);
}

TEST(Linalg, SolveSpd) {
  Tensor a = Tensor::from_data({2, 2}, {4, 1, 1, 3});
  const auto x = solve_spd(a, {1.0, 2.0}, 0.0);
  EXPECT_NEAR(4 * x[0] + 1 * x[1], 1.0, 1e-12);
  EXPECT_NEAR(1 * x[0] + 3 * x[1], 2.0, 1e-12);
}

TEST(Linalg, ConditionNumberOfIdentity) {
  Tensor id({3, 3});
  for (std::size_t i = 0; i < 3; ++i) id(i, i) = 1.0;
  EXPECT_NEAR(condition_number(id), 1.0, 1e-9);
}

TEST(Linalg, SymEigenvaluesDiagonal) {
  Tensor a = Tensor::from_data({2, 2}, {3, 0, 0, 5});
  auto ev = sym_eigenvalues(a);
  std::sort(ev.begin(), ev.end());
  EXPECT_NEAR(ev[0], 3.0, 1e-12);
  EXPECT_NEAR(ev[1], 5.0, 1e-12);
}
