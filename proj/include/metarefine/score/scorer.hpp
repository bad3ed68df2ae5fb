#pragma once

#include <cmath>
#include <string>
#include <variant>
#include <vector>

#include "metarefine/diff/matrix.hpp"
#include "metarefine/error.hpp"
#include "metarefine/flow/flow.hpp"
#include "metarefine/rng.hpp"

namespace metarefine::score {

using diff::Matrix;

/// Frozen map from raw vectors to flow features.
class FeatureExtractor {
 public:
  enum class Kind { identity, fixed_projection };

  static FeatureExtractor identity(std::size_t dim) {
    FeatureExtractor e;
    e.kind_ = Kind::identity;
    e.in_dim_ = e.out_dim_ = dim;
    return e;
  }

  /// Projection must have full row rank.
  static FeatureExtractor projection(Matrix p) {
    if (p.rows() == 0 || p.cols() == 0) throw ConfigError("empty projection matrix");
    if (p.rows() > p.cols() || rank(p) < p.rows()) throw ConfigError("projection matrix is not of full row rank");
    FeatureExtractor e;
    e.kind_ = Kind::fixed_projection;
    e.in_dim_ = p.cols();
    e.out_dim_ = p.rows();
    e.proj_ = std::move(p);
    return e;
  }

  /// Seeded Gaussian projection scaled by 1/sqrt(in_dim); redrawn until it
  /// has full row rank.
  static FeatureExtractor random_projection(std::size_t rows, std::size_t in_dim, std::uint64_t seed) {
    if (rows == 0 || rows > in_dim) throw ConfigError("projection needs 0 < rows <= input dimension");
    Rng rng(seed);
    for (;;) {
      Matrix p(rows, in_dim);
      for (auto& v : p.data()) v = rng.normal() / std::sqrt(static_cast<double>(in_dim));
      if (rank(p) == rows) return projection(std::move(p));
    }
  }

  Kind kind() const noexcept { return kind_; }
  std::size_t input_dim() const noexcept { return in_dim_; }
  std::size_t output_dim() const noexcept { return out_dim_; }
  const Matrix& projection_matrix() const noexcept { return proj_; }

  std::vector<double> operator()(std::span<const double> raw) const {
    if (raw.size() != in_dim_)
      throw ShapeError("extractor expects " + std::to_string(in_dim_) + " inputs, got " + std::to_string(raw.size()));
    if (kind_ == Kind::identity) return {raw.begin(), raw.end()};
    std::vector<double> out(out_dim_, 0.0);
    for (std::size_t r = 0; r < out_dim_; ++r)
      for (std::size_t c = 0; c < in_dim_; ++c) out[r] += proj_(r, c) * raw[c];
    return out;
  }

  /// Numerical rank via Gaussian elimination with partial pivoting.
  static std::size_t rank(Matrix a, double tol = 1e-10) {
    std::size_t rank = 0;
    for (std::size_t c = 0; c < a.cols() && rank < a.rows(); ++c) {
      std::size_t piv = rank;
      for (std::size_t r = rank + 1; r < a.rows(); ++r)
        if (std::abs(a(r, c)) > std::abs(a(piv, c))) piv = r;
      if (std::abs(a(piv, c)) <= tol) continue;
      for (std::size_t k = 0; k < a.cols(); ++k) std::swap(a(piv, k), a(rank, k));
      for (std::size_t r = rank + 1; r < a.rows(); ++r) {
        const double f = a(r, c) / a(rank, c);
        for (std::size_t k = c; k < a.cols(); ++k) a(r, k) -= f * a(rank, k);
      }
      ++rank;
    }
    return rank;
  }

 private:
  Kind kind_ = Kind::identity;
  std::size_t in_dim_ = 0, out_dim_ = 0;
  Matrix proj_;
};

inline std::vector<double> extract(const FeatureExtractor& e, std::span<const double> raw) { return e(raw); }

struct IdentityTransform {};

/// x + eps * u, with u a fixed standard-normal vector drawn from `seed`.
struct JitterTransform {
  double eps = 0.0;
  std::uint64_t seed = 0;
};

/// Rotation by `angle` radians in the (i, j) coordinate plane.
struct RotationTransform {
  double angle = 0.0;
  std::size_t i = 0, j = 1;
};

using Transform = std::variant<IdentityTransform, JitterTransform, RotationTransform>;

inline std::vector<double> apply(const Transform& t, std::span<const double> x) {
  std::vector<double> out(x.begin(), x.end());
  std::visit(
      [&](const auto& tr) {
        using T = std::decay_t<decltype(tr)>;
        if constexpr (std::is_same_v<T, JitterTransform>) {
          Rng rng(tr.seed);
          for (double& v : out) v += tr.eps * rng.normal();
        } else if constexpr (std::is_same_v<T, RotationTransform>) {
          if (tr.i >= out.size() || tr.j >= out.size() || tr.i == tr.j)
            throw ShapeError("rotation plane out of range for dimension " + std::to_string(out.size()));
          const double c = std::cos(tr.angle), s = std::sin(tr.angle);
          const double a = x[tr.i], b = x[tr.j];
          out[tr.i] = c * a - s * b;
          out[tr.j] = s * a + c * b;
        }
      },
      t);
  return out;
}

struct TransformEnsemble {
  std::vector<Transform> transforms{IdentityTransform{}};

  static TransformEnsemble identity() { return {}; }
  void validate() const {
    if (transforms.empty()) throw ConfigError("transform ensemble must be non-empty");
  }
};

/// Extractor plus ensemble: everything between a raw sample and the flow.
struct Pipeline {
  FeatureExtractor extractor;
  TransformEnsemble ensemble;

  static Pipeline identity(std::size_t dim) { return {FeatureExtractor::identity(dim), TransformEnsemble::identity()}; }

  /// Features used for training: the extractor applied to the untransformed rows.
  Matrix features(const Matrix& raw) const {
    Matrix out(raw.rows(), extractor.output_dim());
    for (std::size_t r = 0; r < raw.rows(); ++r) {
      auto f = extractor(raw.row_span(r));
      std::copy(f.begin(), f.end(), out.row_span(r).begin());
    }
    return out;
  }
};

/// Mean over the ensemble of -log p(extract(S_i(x))). Higher is more anomalous.
inline std::vector<double> score_batch(const flow::FlowModel& model, const FeatureExtractor& extractor,
                                       const TransformEnsemble& ensemble, const Matrix& samples) {
  if (samples.rows() == 0) throw UsageError("score_batch of an empty sample list");
  ensemble.validate();
  std::vector<double> total(samples.rows(), 0.0);
  for (const auto& t : ensemble.transforms) {
    Matrix feats(samples.rows(), extractor.output_dim());
    for (std::size_t r = 0; r < samples.rows(); ++r) {
      auto f = extractor(apply(t, samples.row_span(r)));
      std::copy(f.begin(), f.end(), feats.row_span(r).begin());
    }
    auto lp = flow::log_prob_batch(model, feats);
    for (std::size_t r = 0; r < lp.size(); ++r) total[r] -= lp[r];
  }
  const double m = static_cast<double>(ensemble.transforms.size());
  for (double& v : total) v /= m;
  return total;
}

inline std::vector<double> score_batch(const flow::FlowModel& model, const Pipeline& p, const Matrix& samples) {
  return score_batch(model, p.extractor, p.ensemble, samples);
}

inline double score_sample(const flow::FlowModel& model, const FeatureExtractor& extractor,
                           const TransformEnsemble& ensemble, std::span<const double> x) {
  for (double v : x)
    if (!std::isfinite(v)) throw NumericError("non-finite sample");
  return score_batch(model, extractor, ensemble, Matrix::row(x))[0];
}

}  // namespace metarefine::score
