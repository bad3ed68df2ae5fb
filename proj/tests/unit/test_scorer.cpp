#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "metarefine/rng.hpp"
#include "metarefine/score/scorer.hpp"

using namespace metarefine;
using namespace metarefine::score;
using diff::Matrix;

namespace {

flow::FlowModel bumpy_flow(std::size_t d) {
  auto m = flow::init_flow(d, 4, 8, 3);
  Rng rng(8);
  for (double& v : m.params.values()) v += rng.uniform(-0.3, 0.3);
  return m;
}

Matrix random_rows(Rng& rng, std::size_t n, std::size_t d) {
  Matrix m(n, d);
  for (auto& v : m.data()) v = rng.normal(0.0, 1.5);
  return m;
}

}  // namespace

TEST(Extract, Identity) {
  auto e = FeatureExtractor::identity(3);
  EXPECT_EQ(extract(e, std::vector<double>{1, 2, 3}), (std::vector<double>{1, 2, 3}));
}

TEST(Extract, IdentityProjection) {
  Matrix eye(3, 3);
  for (int i = 0; i < 3; ++i) eye(i, i) = 1.0;
  auto e = FeatureExtractor::projection(eye);
  EXPECT_EQ(extract(e, std::vector<double>{1.5, -2, 3}), (std::vector<double>{1.5, -2, 3}));
}

TEST(Extract, SeededProjectionIsMatrixVectorProduct) {
  auto e = FeatureExtractor::random_projection(4, 8, 17);
  const auto& p = e.projection_matrix();
  std::vector<double> x{1, -1, 2, 0.5, -3, 0.25, 4, -2};
  auto y = extract(e, x);
  ASSERT_EQ(y.size(), 4u);
  for (std::size_t r = 0; r < 4; ++r) {
    double s = 0.0;
    for (std::size_t c = 0; c < 8; ++c) s += p(r, c) * x[c];
    EXPECT_NEAR(y[r], s, 1e-14);
  }
  EXPECT_EQ(FeatureExtractor::random_projection(4, 8, 17).projection_matrix(), p);
}

TEST(Extract, Errors) {
  EXPECT_THROW(extract(FeatureExtractor::identity(3), std::vector<double>{1, 2}), ShapeError);
  EXPECT_THROW(FeatureExtractor::projection(Matrix(2, 3)), ConfigError);  // rank 0
  EXPECT_THROW(FeatureExtractor::random_projection(5, 3, 1), ConfigError);
}

TEST(ScoreSample, IdentityFlowAtOrigin) {
  auto m = flow::init_flow(2, 4, 8, 1);
  EXPECT_NEAR(score_sample(m, FeatureExtractor::identity(2), TransformEnsemble::identity(), std::vector<double>{0, 0}),
              1.837877, 1e-6);
}

TEST(ScoreSample, IncreasesWithDistanceUnderIdentityFlow) {
  auto m = flow::init_flow(2, 4, 8, 1);
  auto e = FeatureExtractor::identity(2);
  auto ens = TransformEnsemble::identity();
  EXPECT_GT(score_sample(m, e, ens, std::vector<double>{3, 0}), score_sample(m, e, ens, std::vector<double>{1, 0}));
  Rng rng(2);
  std::vector<std::pair<double, double>> norm_score;
  for (int i = 0; i < 200; ++i) {
    std::vector<double> x{rng.normal(), rng.normal()};
    norm_score.emplace_back(std::hypot(x[0], x[1]), score_sample(m, e, ens, x));
  }
  std::sort(norm_score.begin(), norm_score.end());
  for (std::size_t i = 1; i < norm_score.size(); ++i) EXPECT_LT(norm_score[i - 1].second, norm_score[i].second);
}

TEST(ScoreSample, EnsembleIsMeanOfSingletons) {
  auto m = bumpy_flow(3);
  auto e = FeatureExtractor::identity(3);
  TransformEnsemble a{{IdentityTransform{}}}, b{{RotationTransform{0.7, 0, 2}}}, c{{JitterTransform{0.1, 5}}};
  TransformEnsemble two{{IdentityTransform{}, RotationTransform{0.7, 0, 2}}};
  TransformEnsemble three{{IdentityTransform{}, RotationTransform{0.7, 0, 2}, JitterTransform{0.1, 5}}};
  Rng rng(3);
  for (int i = 0; i < 50; ++i) {
    std::vector<double> x{rng.normal(), rng.normal(), rng.normal()};
    const double sa = score_sample(m, e, a, x), sb = score_sample(m, e, b, x), sc = score_sample(m, e, c, x);
    EXPECT_NEAR(score_sample(m, e, two, x), (sa + sb) / 2.0, 1e-12);
    EXPECT_NEAR(score_sample(m, e, three, x), (sa + sb + sc) / 3.0, 1e-12);
  }
}

TEST(ScoreSample, DeterministicAndRejectsNonFinite) {
  auto m = bumpy_flow(2);
  auto e = FeatureExtractor::identity(2);
  TransformEnsemble ens{{IdentityTransform{}, JitterTransform{0.2, 9}}};
  std::vector<double> x{0.3, -0.4};
  EXPECT_EQ(score_sample(m, e, ens, x), score_sample(m, e, ens, x));
  EXPECT_THROW(score_sample(m, e, ens, std::vector<double>{NAN, 0.0}), NumericError);
}

TEST(ScoreBatch, PointwiseMap) {
  auto m = bumpy_flow(3);
  auto e = FeatureExtractor::identity(3);
  auto ens = TransformEnsemble::identity();
  Rng rng(4);
  Matrix x = random_rows(rng, 100, 3);
  auto s = score_batch(m, e, ens, x);
  for (std::size_t r = 0; r < 100; ++r) EXPECT_EQ(s[r], score_sample(m, e, ens, x.row_span(r)));

  std::vector<std::size_t> perm(100);
  std::iota(perm.begin(), perm.end(), 0);
  rng.shuffle(perm);
  Matrix xp(100, 3);
  for (std::size_t r = 0; r < 100; ++r) std::copy_n(x.row_span(perm[r]).begin(), 3, xp.row_span(r).begin());
  auto sp = score_batch(m, e, ens, xp);
  for (std::size_t r = 0; r < 100; ++r) EXPECT_EQ(sp[r], s[perm[r]]);
}

TEST(ScoreBatch, SingletonAndEmpty) {
  auto m = bumpy_flow(2);
  auto p = Pipeline::identity(2);
  Matrix one = Matrix::row({0.5, 0.5});
  EXPECT_EQ(score_batch(m, p, one), (std::vector<double>{score_sample(m, p.extractor, p.ensemble, one.row_span(0))}));
  EXPECT_THROW(score_batch(m, p, Matrix(0, 2)), UsageError);
  EXPECT_THROW(score_batch(m, FeatureExtractor::identity(2), TransformEnsemble{{}}, one), ConfigError);
}

TEST(ScoreBatch, ProjectionFeedsFlow) {
  auto e = FeatureExtractor::random_projection(2, 5, 3);
  auto m = bumpy_flow(2);
  std::vector<double> x{1, 2, 3, 4, 5};
  EXPECT_EQ(score_sample(m, e, TransformEnsemble::identity(), x), -flow::log_prob(m, extract(e, x)));
}
