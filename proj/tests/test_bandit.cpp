#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

#include "support.hpp"

using namespace falcon;

TEST(Probabilities, UniformAtStart) {
  const BanditState b(10, 0.3);
  for (double p : b.probabilities()) EXPECT_DOUBLE_EQ(p, 0.1);
}

TEST(Probabilities, GammaOneIsUniform) {
  BanditState b(4, 1.0);
  b.set_weights({1.0, 50.0, 3.0, 1e6});
  for (double p : b.probabilities()) EXPECT_DOUBLE_EQ(p, 0.25);
}

TEST(Probabilities, MixtureArithmetic) {
  BanditState b(3, 0.1);
  b.set_weights({1.0, 2.0, 1.0});
  const auto p = b.probabilities();
  // 0.9 * w / 4 + 0.1 / 3
  EXPECT_NEAR(p[0], 0.9 / 4 + 0.1 / 3, 1e-15);
  EXPECT_NEAR(p[1], 0.9 / 2 + 0.1 / 3, 1e-15);
  EXPECT_NEAR(p[0], 0.258333333333333, 1e-12);
  EXPECT_NEAR(p[1], 0.483333333333333, 1e-12);
}

TEST(Probabilities, ScaleInvariant) {
  BanditState a(3, 0.2), b(3, 0.2);
  a.set_weights({1.0, 2.0, 3.0});
  b.set_weights({1e100, 2e100, 3e100});
  const auto pa = a.probabilities(), pb = b.probabilities();
  for (std::size_t i = 0; i < 3; ++i) EXPECT_NEAR(pa[i], pb[i], 1e-15);
}

TEST(Update, SingleStepArithmetic) {
  BanditState b(2, 0.2);
  const std::vector<double> r{1.0, 0.0};
  b.update(0, r);
  // p0 = 0.5, estimate = 2, w0 = exp(0.2 * 2 / 2)
  EXPECT_NEAR(b.weights()[0], std::exp(0.2), 1e-15);
  EXPECT_DOUBLE_EQ(b.weights()[1], 1.0);
}

TEST(Update, ZeroRewardLeavesWeights) {
  BanditState b(5, 0.3);
  b.set_weights({1, 2, 3, 4, 5});
  b.update(2, std::vector<double>(5, 0.0));
  EXPECT_EQ(std::vector<double>(b.weights().begin(), b.weights().end()), (std::vector<double>{1, 2, 3, 4, 5}));
}

TEST(Update, RejectsInvalidInput) {
  BanditState b(2, 0.2);
  EXPECT_THROW(b.update(0, std::vector<double>{1.5, 0.0}), std::domain_error);
  EXPECT_THROW(b.update(0, std::vector<double>{-0.1, 0.0}), std::domain_error);
  EXPECT_THROW(b.update(2, std::vector<double>{0.0, 0.0}), std::out_of_range);
  EXPECT_THROW(b.update(0, std::vector<double>{0.0}), std::invalid_argument);
  EXPECT_THROW(BanditState(1, 0.2), ConfigError);
  EXPECT_THROW(BanditState(3, 0.0), ConfigError);
}

TEST(Update, StaysFiniteOverLongRuns) {
  BanditState b(3, 0.01);
  for (int t = 0; t < 10000; ++t) b.update(0, std::vector<double>{1.0, 0.0, 0.0});
  for (double w : b.weights()) EXPECT_TRUE(std::isfinite(w));
  const auto p = b.probabilities();
  EXPECT_NEAR(std::accumulate(p.begin(), p.end(), 0.0), 1.0, 1e-12);
  EXPECT_GT(p[0], 0.99);
}

TEST(Update, ImplicitExplorationDampsEstimate) {
  BanditState plain(2, 0.2), ix(2, 0.2, BanditVariant::exp3_ix);
  const std::vector<double> r{1.0, 0.0};
  plain.update(0, r);
  ix.update(0, r);
  // IX divides by p + gamma / 2 = 0.6.
  EXPECT_NEAR(ix.weights()[0], std::exp(0.2 * (1.0 / 0.6) / 2), 1e-15);
  EXPECT_LT(ix.weights()[0], plain.weights()[0]);
}

TEST(Update, NeighborWeightingModes) {
  BanditState own(3, 0.5), drawn(3, 0.5, BanditVariant::exp3, {0, 1});
  own.set_weights({1, 1, 4});
  drawn.set_weights({1, 1, 4});
  const auto p = own.probabilities();
  const std::vector<double> r{0.0, 1.0, 0.5};
  own.update(1, r, NeighborWeighting::own_probability);
  drawn.update(1, r, NeighborWeighting::drawn_probability);
  EXPECT_NEAR(own.weights()[2], 4 * std::exp(0.5 * (0.5 / p[2]) / 3), 1e-12);
  EXPECT_NEAR(drawn.weights()[2], 4 * std::exp(0.5 * (0.5 / p[1]) / 3), 1e-12);
  EXPECT_NEAR(own.weights()[1], drawn.weights()[1], 1e-15);
}

TEST(Draw, GammaOneFrequenciesAreUniform) {
  const BanditState b(4, 1.0);
  Rng rng(21);
  std::vector<int> hits(4, 0);
  const int n = 40000;
  for (int t = 0; t < n; ++t) ++hits[b.draw(rng)];
  // Binomial standard deviation is about 87; allow five of them.
  for (int h : hits) EXPECT_NEAR(h, n / 4, 5 * 87);
}

TEST(Draw, DeterministicPerSeed) {
  BanditState b(5, 0.3);
  b.set_weights({1, 2, 3, 4, 5});
  Rng r1(8), r2(8);
  for (int t = 0; t < 100; ++t) EXPECT_EQ(b.draw(r1), b.draw(r2));
}

TEST(Propagate, FullHalfZeroPattern) {
  const PolicySet set(2, kDefaultPolicyGrid);
  const auto out = propagate(set, 2, 0.8);
  const std::vector<double> expect{0, 0.4, 0.8, 0.4, 0, 0, 0, 0, 0, 0};
  EXPECT_EQ(out, expect);
}

TEST(Propagate, EdgeArmHasOneNeighbor) {
  const PolicySet set(2, kDefaultPolicyGrid);
  const auto out = propagate(set, 5, 1.0);
  const std::vector<double> expect{0, 0, 0, 0, 0, 1.0, 0.5, 0, 0, 0};
  EXPECT_EQ(out, expect);
  EXPECT_EQ(propagate(set, 4, 1.0)[5], 0.0);
}

TEST(Propagate, ZeroRewardIsAllZero) {
  const PolicySet set(1, kDefaultPolicyGrid);
  EXPECT_EQ(propagate(set, 2, 0.0), std::vector<double>(5, 0.0));
}

TEST(Normalize, CalibrationThenScale) {
  RewardCalibration c(5);
  for (double raw : {0.001, -0.004, 0.002, 0.003, 0.004}) EXPECT_DOUBLE_EQ(c.normalize(raw), std::max(raw, 0.0));
  ASSERT_TRUE(c.scale());
  EXPECT_DOUBLE_EQ(*c.scale(), 0.004);
  EXPECT_DOUBLE_EQ(c.normalize(0.002), 0.5);
  EXPECT_DOUBLE_EQ(c.normalize(0.009), 1.0);
  EXPECT_DOUBLE_EQ(c.normalize(-0.003), 0.0);
}

TEST(Normalize, AllZeroCalibrationUsesFloor) {
  RewardCalibration c(3);
  for (int i = 0; i < 3; ++i) c.normalize(0.0);
  EXPECT_DOUBLE_EQ(*c.scale(), RewardCalibration::kScaleFloor);
  EXPECT_NEAR(c.normalize(1e-7), 0.1, 1e-12);
}

// Stationary three-arm problem: the best arm's cumulative reward must reach
// most of the oracle's, averaged over seeds.
TEST(Regression, StationaryBernoulliArms) {
  const std::vector<double> means{0.9, 0.1, 0.1};
  double total = 0;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    BanditState b(3, 0.3);
    Rng rng(seed);
    for (int t = 0; t < 2000; ++t) {
      const std::size_t a = b.draw(rng);
      const double r = rng.bernoulli(means[a]) ? 1.0 : 0.0;
      std::vector<double> rewards(3, 0.0);
      rewards[a] = r;
      b.update(a, rewards);
      total += r;
    }
  }
  EXPECT_GE(total / 5, 0.8 * 0.9 * 2000);
}
