#include <gtest/gtest.h>

#include <cmath>
#include <set>

#include "metarefine/maml/maml.hpp"
#include "metarefine/maml/optimizer.hpp"
#include "metarefine/maml/task_family.hpp"
#include "oracles.hpp"

using namespace metarefine;
using namespace metarefine::maml;
using diff::Matrix;
using diff::ParamVector;

namespace {

const Matrix kZero = Matrix::scalar(0.0);  // L(theta) = theta^2 with QuadraticObjective

Task<Matrix> quad_task() { return {kZero, kZero, {}}; }

MetaConfig quad_cfg(double alpha, double beta) {
  MetaConfig c;
  c.alpha = alpha;
  c.beta = beta;
  c.clip_norm = 0.0;
  return c;
}

GaussianTaskFamily::Config wide_family() {
  GaussianTaskFamily::Config c;
  c.sd = 2.0;
  c.support_size = c.query_size = 32;
  return c;
}

}  // namespace

TEST(InnerAdapt, OneStepOnQuadratic) {
  auto t = inner_adapt(oracle::QuadraticObjective{}, ParamVector::flat({1.0}), kZero, 0.1, 1);
  EXPECT_NEAR(t[0], 0.8, 1e-15);
}

TEST(InnerAdapt, TwoStepsOnQuadratic) {
  auto t = inner_adapt(oracle::QuadraticObjective{}, ParamVector::flat({1.0}), kZero, 0.1, 2);
  EXPECT_NEAR(t[0], 0.64, 1e-15);
}

TEST(InnerAdapt, StationaryPointIsFixed) {
  auto t = inner_adapt(oracle::QuadraticObjective{}, ParamVector::flat({0.0}), kZero, 0.1, 3);
  EXPECT_EQ(t[0], 0.0);
}

TEST(InnerAdapt, TwoStepsAreATrajectoryNotADoubleStep) {
  oracle::QuadraticObjective q;
  const double a = 0.1;
  auto two = inner_adapt(q, ParamVector::flat({1.0}), kZero, a, 2);
  auto big = inner_adapt(q, ParamVector::flat({1.0}), kZero, 2 * a, 1);
  EXPECT_NEAR(two[0], (1 - 2 * a) * (1 - 2 * a), 1e-15);
  EXPECT_NEAR(big[0], 1 - 4 * a, 1e-15);
  EXPECT_GT(std::abs(two[0] - big[0]), 1e-3);
}

TEST(InnerAdapt, DoesNotMutateInput) {
  const auto theta = ParamVector::flat({1.0, -2.0});
  const auto copy = theta;
  inner_adapt(oracle::QuadraticObjective{}, theta, Matrix::row({0.0, 0.0}), 0.1, 3);
  EXPECT_EQ(theta, copy);
}

TEST(InnerAdapt, NonFiniteGradientNamesStep) {
  struct Bad {
    using batch_type = Matrix;
    diff::GradResult value_and_grad(const ParamVector& p, const Matrix&) const {
      diff::GradResult g;
      g.gradient.assign(p.size(), p[0] < 0.5 ? NAN : 1.0);
      return g;
    }
    double loss(const ParamVector&, const Matrix&) const { return 0.0; }
  };
  try {
    inner_adapt(Bad{}, ParamVector::flat({1.0}), kZero, 0.3, 5);
    FAIL();
  } catch (const NumericError& e) {
    EXPECT_NE(std::string(e.what()).find("inner step 2"), std::string::npos) << e.what();
  }
}

TEST(QueryLoss, NoAdaptationEqualsNll) {
  auto m = flow::init_flow(2, 2, 8, 4);
  flow::FlowObjective obj(m.arch);
  Matrix s = Matrix::from_rows({{0.5, 1.0}, {-1.0, 2.0}, {0.0, 0.3}});
  auto same = inner_adapt(obj, m.params, s, 0.01, 0);
  EXPECT_EQ(query_loss(obj, same, s), flow::nll_loss(m, s));
  EXPECT_NEAR(query_loss(obj, m.params, Matrix::from_rows({{0, 0}, {0, 0}})), std::log(2 * M_PI), 1e-12);
}

TEST(QueryLoss, OneInnerStepHelpsOnGaussianTasks) {
  auto m = flow::init_flow(1, 4, 16, 5);
  flow::FlowObjective obj(m.arch);
  GaussianTaskFamily fam(wide_family(), 77);
  int better = 0;
  for (int trial = 0; trial < 100; ++trial) {
    auto t = fam.sample();
    auto adapted = inner_adapt(obj, m.params, t.support, 0.05, 1);
    better += query_loss(obj, adapted, t.query) < query_loss(obj, m.params, t.query);
  }
  EXPECT_GE(better, 90);
  EXPECT_LT(oracle::sign_test_p(static_cast<std::size_t>(better), 100), 0.01);
}

TEST(MetaStep, ZeroBetaIsIdentity) {
  auto m = flow::init_flow(1, 2, 4, 6);
  flow::FlowObjective obj(m.arch);
  GaussianTaskFamily fam(wide_family(), 1);
  MetaConfig c;
  c.beta = 0.0;
  EXPECT_EQ(meta_step(obj, m.params, fam.sample_batch(2), c), m.params);
}

TEST(MetaStep, FirstOrderChainOnQuadratic) {
  auto t = meta_step(oracle::QuadraticObjective{}, ParamVector::flat({1.0}), {quad_task()}, quad_cfg(0.1, 0.1));
  EXPECT_NEAR(t[0], 0.84, 1e-15);
}

TEST(MetaStep, IdenticalTasksAverageToOne) {
  oracle::QuadraticObjective q;
  auto one = meta_step(q, ParamVector::flat({1.0}), {quad_task()}, quad_cfg(0.1, 0.1));
  auto two = meta_step(q, ParamVector::flat({1.0}), {quad_task(), quad_task()}, quad_cfg(0.1, 0.1));
  EXPECT_EQ(one, two);
}

TEST(MetaStep, NonFiniteNamesTask) {
  oracle::QuadraticObjective q;
  std::vector<Task<Matrix>> tasks{quad_task(), {kZero, Matrix::scalar(1e308), {}}};
  try {
    meta_step(q, ParamVector::flat({-1e307}), tasks, quad_cfg(1e-300, 0.1));
    FAIL();
  } catch (const NumericError& e) {
    EXPECT_NE(std::string(e.what()).find("task 1"), std::string::npos) << e.what();
  }
}

TEST(MetaStep, EmptyTaskListIsUsageError) {
  EXPECT_THROW(meta_step(oracle::QuadraticObjective{}, ParamVector::flat({1.0}), {}, quad_cfg(0.1, 0.1)), UsageError);
}

TEST(MetaTrain, ZeroOuterStepsReturnsInit) {
  auto m = flow::init_flow(1, 2, 4, 7);
  GaussianTaskFamily fam(wide_family(), 2);
  MetaConfig c;
  c.outer_steps = 0;
  auto r = meta_train(m, fam, c);
  EXPECT_EQ(r.model, m);
  EXPECT_TRUE(r.log.empty());
}

TEST(MetaTrain, DeterministicGivenSeeds) {
  auto m = flow::init_flow(2, 2, 8, 8);
  MetaConfig c;
  c.outer_steps = 20;
  c.beta = 0.01;
  Rng rng(3);
  Matrix pool(200, 2);
  for (auto& v : pool.data()) v = rng.normal();
  TaskSampler s1(pool, 16, 16, 9), s2(pool, 16, 16, 9);
  auto a = meta_train(m, s1, c), b = meta_train(m, s2, c);
  EXPECT_EQ(a.model, b.model);
  EXPECT_NE(a.model, m);
  ASSERT_EQ(a.log.size(), 20u);
}

TEST(MetaTrain, DivergenceIsReported) {
  auto m = flow::init_flow(1, 1, 2, 1);
  GaussianTaskFamily::Config fc = wide_family();
  fc.mean_lo = 1e5;
  fc.mean_hi = 1e5;
  GaussianTaskFamily fam(fc, 3);
  MetaConfig c;
  c.outer_steps = 3;
  EXPECT_THROW(meta_train(m, fam, c), DivergenceError);
}

TEST(MetaConfig, Validation) {
  MetaConfig c;
  c.first_order = false;
  EXPECT_THROW(c.validate(), ConfigError);
  c = MetaConfig{};
  c.alpha = 0.0;
  EXPECT_THROW(c.validate(), ConfigError);
}

TEST(TaskSampler, DisjointSupportAndQuery) {
  Matrix pool(50, 1);
  for (std::size_t i = 0; i < 50; ++i) pool(i, 0) = static_cast<double>(i);
  TaskSampler s(pool, 10, 15, 4);
  for (int k = 0; k < 20; ++k) {
    auto t = s.sample();
    std::set<double> seen;
    for (double v : t.support.data()) seen.insert(v);
    for (double v : t.query.data()) seen.insert(v);
    EXPECT_EQ(seen.size(), 25u);
  }
  EXPECT_THROW(TaskSampler(pool, 30, 30, 1), DataError);
}

TEST(Optimizer, SgdAndAdamFirstStep) {
  auto p = ParamVector::flat({1.0, 1.0});
  Optimizer sgd(OptimizerKind::sgd, 0.1);
  sgd.step(p, std::vector<double>{2.0, -1.0});
  EXPECT_NEAR(p[0], 0.8, 1e-15);
  EXPECT_NEAR(p[1], 1.1, 1e-15);
  auto q = ParamVector::flat({1.0, 1.0});
  Optimizer adam(OptimizerKind::adam, 0.1);
  adam.step(q, std::vector<double>{2.0, -1.0});
  EXPECT_NEAR(q[0], 0.9, 1e-8);  // first Adam step moves by lr * sign(g)
  EXPECT_NEAR(q[1], 1.1, 1e-8);
}
