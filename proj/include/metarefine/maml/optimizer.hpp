#pragma once

#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "metarefine/diff/params.hpp"
#include "metarefine/error.hpp"

namespace metarefine::maml {

enum class OptimizerKind { sgd, adam };

inline OptimizerKind parse_optimizer(const std::string& s) {
  if (s == "sgd") return OptimizerKind::sgd;
  if (s == "adam") return OptimizerKind::adam;
  throw ConfigError("unknown optimizer '" + s + "' (expected sgd or adam)");
}

inline const char* to_string(OptimizerKind k) { return k == OptimizerKind::sgd ? "sgd" : "adam"; }

/// Applies outer (per-batch) parameter updates. Adam keeps per-coordinate
/// moment estimates; SGD is theta -= lr * g.
class Optimizer {
 public:
  Optimizer(OptimizerKind kind, double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
      : kind_(kind), lr_(lr), b1_(beta1), b2_(beta2), eps_(eps) {
    if (!(lr >= 0.0)) throw ConfigError("learning rate must be non-negative");
  }

  void step(diff::ParamVector& theta, std::span<const double> grad) {
    if (grad.size() != theta.size()) throw ShapeError("optimizer gradient length mismatch");
    ++t_;
    if (kind_ == OptimizerKind::sgd) {
      theta.add_scaled(grad, -lr_);
      return;
    }
    if (m_.empty()) {
      m_.assign(theta.size(), 0.0);
      v_.assign(theta.size(), 0.0);
    }
    const double c1 = 1.0 - std::pow(b1_, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(b2_, static_cast<double>(t_));
    for (std::size_t i = 0; i < grad.size(); ++i) {
      m_[i] = b1_ * m_[i] + (1.0 - b1_) * grad[i];
      v_[i] = b2_ * v_[i] + (1.0 - b2_) * grad[i] * grad[i];
      theta[i] -= lr_ * (m_[i] / c1) / (std::sqrt(v_[i] / c2) + eps_);
    }
  }

  std::size_t steps() const noexcept { return t_; }
  OptimizerKind kind() const noexcept { return kind_; }

 private:
  OptimizerKind kind_;
  double lr_, b1_, b2_, eps_;
  std::size_t t_ = 0;
  std::vector<double> m_, v_;
};

}  // namespace metarefine::maml
