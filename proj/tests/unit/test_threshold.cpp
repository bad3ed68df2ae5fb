#include <gtest/gtest.h>

#include <cmath>

#include "metarefine/refine/threshold.hpp"
#include "metarefine/rng.hpp"
#include "oracles.hpp"

using namespace metarefine;
using namespace metarefine::refine;

namespace {
const std::vector<double> kOneToEight{1, 2, 3, 4, 5, 6, 7, 8};
}

TEST(Quantiles, OneToEight) {
  auto q = compute_quantiles(kOneToEight);
  EXPECT_DOUBLE_EQ(q.q1, 2.75);
  EXPECT_DOUBLE_EQ(q.q3, 6.25);
  EXPECT_DOUBLE_EQ(q.iqr, 3.5);
}

TEST(Quantiles, ConstantAndSingleton) {
  auto c = compute_quantiles(std::vector<double>{5, 5, 5, 5});
  EXPECT_EQ(c.q1, 5.0);
  EXPECT_EQ(c.q3, 5.0);
  EXPECT_EQ(c.iqr, 0.0);
  auto s = compute_quantiles(std::vector<double>{7});
  EXPECT_EQ(s.q1, 7.0);
  EXPECT_EQ(s.q3, 7.0);
  EXPECT_EQ(s.iqr, 0.0);
}

TEST(Quantiles, Errors) {
  EXPECT_THROW(compute_quantiles(std::vector<double>{}), UsageError);
  try {
    compute_quantiles(std::vector<double>{1, 2, NAN});
    FAIL();
  } catch (const NumericError& e) {
    EXPECT_NE(std::string(e.what()).find("position 2"), std::string::npos);
  }
}

TEST(Quantiles, OrderInvariant) {
  std::vector<double> shuffled{8, 3, 1, 6, 2, 7, 5, 4};
  auto a = compute_quantiles(shuffled), b = compute_quantiles(kOneToEight);
  EXPECT_EQ(a.q1, b.q1);
  EXPECT_EQ(a.q3, b.q3);
}

TEST(Threshold, OneToEight) {
  EXPECT_DOUBLE_EQ(dynamic_threshold(kOneToEight, 1.5).threshold, 11.5);
  EXPECT_DOUBLE_EQ(dynamic_threshold(kOneToEight, 0.0).threshold, 6.25);
}

TEST(Threshold, ConstantScoresRejectNothing) {
  std::vector<double> c{3, 3, 3, 3, 3};
  for (double k : {0.0, 1.5, 10.0}) {
    auto st = dynamic_threshold(c, k);
    EXPECT_EQ(st.threshold, 3.0);
    std::vector<std::pair<int, double>> scored;
    for (int i = 0; i < 5; ++i) scored.emplace_back(i, 3.0);
    EXPECT_TRUE(classify_batch(scored, st).rejected.empty());
  }
}

TEST(Threshold, NegativeKRejected) { EXPECT_THROW(dynamic_threshold(kOneToEight, -0.5), UsageError); }

TEST(Threshold, MatchesOracleOnRandomLists) {
  Rng rng(31);
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t n = 1 + rng.index(200);
    std::vector<double> x(n);
    for (double& v : x) v = rng.index(4) == 0 ? std::round(rng.normal(0, 3)) : rng.normal(0, 3);
    const double k = rng.uniform(0.0, 3.0);
    auto q = compute_quantiles(x);
    ASSERT_EQ(q.q1, oracle::quantile(x, 0.25)) << trial;
    ASSERT_EQ(q.q3, oracle::quantile(x, 0.75)) << trial;
    ASSERT_EQ(dynamic_threshold(x, k).threshold, oracle::threshold(x, k)) << trial;
  }
}

TEST(Classify, StrictInequality) {
  ThresholdStats st{0, 0, 0, 1.5, 11.5};
  auto c = classify_batch<std::string>({{"a", 1}, {"b", 2}, {"c", 12}}, st);
  EXPECT_EQ(c.rejected, (std::vector<std::string>{"c"}));
  EXPECT_EQ(c.retained, (std::vector<std::string>{"a", "b"}));
  auto edge = classify_batch<std::string>({{"t", 11.5}}, st);
  EXPECT_EQ(edge.retained, (std::vector<std::string>{"t"}));
  EXPECT_TRUE(edge.rejected.empty());
}

TEST(Classify, NonFiniteThreshold) {
  ThresholdStats st{0, 0, 0, 0, NAN};
  EXPECT_THROW(classify_batch<int>({{1, 0.0}}, st), NumericError);
}
