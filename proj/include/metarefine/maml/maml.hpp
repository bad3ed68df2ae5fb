#pragma once

#include <cmath>
#include <concepts>
#include <cstdint>
#include <ostream>
#include <string>
#include <vector>

#include "metarefine/diff/params.hpp"
#include "metarefine/diff/tape.hpp"
#include "metarefine/error.hpp"
#include "metarefine/flow/flow.hpp"
#include "metarefine/rng.hpp"

namespace metarefine::maml {

using diff::GradResult;
using diff::ParamVector;

/// Anything MAML can adapt: a loss over batches with a parameter gradient.
template <class O>
concept Objective = requires(const O& o, const ParamVector& p, const typename O::batch_type& b) {
  typename O::batch_type;
  { o.value_and_grad(p, b) } -> std::same_as<GradResult>;
  { o.loss(p, b) } -> std::convertible_to<double>;
};

struct TaskMeta {
  std::uint64_t seed = 0;
  std::size_t index = 0;
  std::string note;
};

/// Support set (adaptation) and query set (evaluation) of one task.
template <class Batch>
struct Task {
  Batch support;
  Batch query;
  TaskMeta meta;
};

struct MetaConfig {
  double alpha = 0.01;
  double beta = 0.001;
  std::size_t inner_steps = 1;
  std::size_t meta_batch = 4;
  std::size_t outer_steps = 50;
  bool first_order = true;
  double clip_norm = 10.0;  // global-norm gradient clip; <= 0 disables

  void validate() const {
    if (!(alpha > 0.0)) throw ConfigError("alpha must be positive");
    if (!(beta >= 0.0)) throw ConfigError("beta must be non-negative");
    if (inner_steps < 1) throw ConfigError("inner_steps must be at least 1");
    if (meta_batch < 1) throw ConfigError("meta_batch must be at least 1");
    if (!first_order) throw ConfigError("only first-order meta-gradients are supported");
  }
};

/// theta' = theta - alpha * grad L(support, theta), `steps` times. Pure.
template <Objective O>
ParamVector inner_adapt(const O& objective, const ParamVector& theta, const typename O::batch_type& support,
                        double alpha, std::size_t steps, double clip_norm = 10.0) {
  if (!(alpha > 0.0)) throw UsageError("inner learning rate must be positive");
  ParamVector adapted = theta;
  for (std::size_t s = 0; s < steps; ++s) {
    GradResult g;
    try {
      g = objective.value_and_grad(adapted, support);
    } catch (const NumericError& e) {
      throw NumericError("inner step " + std::to_string(s) + ": " + e.what());
    }
    for (double v : g.gradient)
      if (!std::isfinite(v)) throw NumericError("non-finite gradient at inner step " + std::to_string(s));
    diff::clip_global_norm(g.gradient, clip_norm);
    adapted.add_scaled(g.gradient, -alpha);
  }
  return adapted;
}

template <Objective O>
double query_loss(const O& objective, const ParamVector& theta_prime, const typename O::batch_type& query) {
  return objective.loss(theta_prime, query);
}

struct MetaStepResult {
  ParamVector theta;
  double mean_query_loss = 0.0;  // L(Q, theta') averaged over tasks, before the outer update
};

/// First-order meta step: query gradients are taken at each task's adapted
/// parameters, averaged in task order, and applied at rate beta.
template <Objective O>
MetaStepResult meta_step_detailed(const O& objective, const ParamVector& theta,
                                  const std::vector<Task<typename O::batch_type>>& tasks, const MetaConfig& cfg) {
  if (tasks.empty()) throw UsageError("meta_step needs at least one task");
  std::vector<double> mean_grad(theta.size(), 0.0);
  double mean_loss = 0.0;
  for (std::size_t k = 0; k < tasks.size(); ++k) {
    GradResult g;
    try {
      ParamVector adapted = inner_adapt(objective, theta, tasks[k].support, cfg.alpha, cfg.inner_steps, cfg.clip_norm);
      g = objective.value_and_grad(adapted, tasks[k].query);
    } catch (const NumericError& e) {
      throw NumericError("task " + std::to_string(k) + ": " + e.what());
    }
    for (double v : g.gradient)
      if (!std::isfinite(v)) throw NumericError("non-finite meta-gradient from task " + std::to_string(k));
    for (std::size_t i = 0; i < mean_grad.size(); ++i) mean_grad[i] += g.gradient[i];
    mean_loss += g.loss;
  }
  const double inv = 1.0 / static_cast<double>(tasks.size());
  for (double& v : mean_grad) v *= inv;
  diff::clip_global_norm(mean_grad, cfg.clip_norm);
  MetaStepResult r{theta, mean_loss * inv};
  if (cfg.beta != 0.0) r.theta.add_scaled(mean_grad, -cfg.beta);
  return r;
}

template <Objective O>
ParamVector meta_step(const O& objective, const ParamVector& theta,
                      const std::vector<Task<typename O::batch_type>>& tasks, const MetaConfig& cfg) {
  return meta_step_detailed(objective, theta, tasks, cfg).theta;
}

/// Draws support/query splits (without replacement) from one training pool.
class TaskSampler {
 public:
  TaskSampler(diff::Matrix pool, std::size_t support_size, std::size_t query_size, std::uint64_t seed)
      : pool_(std::move(pool)), support_(support_size), query_(query_size), seed_(seed), rng_(seed) {
    if (support_ == 0 || query_ == 0) throw ConfigError("support and query sizes must be positive");
    if (support_ + query_ > pool_.rows())
      throw DataError("task needs " + std::to_string(support_ + query_) + " samples, pool has " +
                      std::to_string(pool_.rows()));
  }

  Task<diff::Matrix> sample() {
    std::vector<std::size_t> idx(pool_.rows());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    // partial Fisher-Yates: the first support+query entries are a uniform draw
    const std::size_t need = support_ + query_;
    for (std::size_t i = 0; i < need; ++i) std::swap(idx[i], idx[i + rng_.index(idx.size() - i)]);
    Task<diff::Matrix> t;
    t.support = gather(idx, 0, support_);
    t.query = gather(idx, support_, query_);
    t.meta = {seed_, count_++, "pool-resample"};
    last_support_.assign(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(support_));
    last_query_.assign(idx.begin() + static_cast<std::ptrdiff_t>(support_),
                       idx.begin() + static_cast<std::ptrdiff_t>(need));
    return t;
  }

  std::vector<Task<diff::Matrix>> sample_batch(std::size_t n) {
    std::vector<Task<diff::Matrix>> out;
    out.reserve(n);
    for (std::size_t i = 0; i < n; ++i) out.push_back(sample());
    return out;
  }

  /// Pool row indices used by the most recent task.
  const std::vector<std::size_t>& last_support_rows() const noexcept { return last_support_; }
  const std::vector<std::size_t>& last_query_rows() const noexcept { return last_query_; }
  std::size_t pool_size() const noexcept { return pool_.rows(); }

 private:
  diff::Matrix gather(const std::vector<std::size_t>& idx, std::size_t from, std::size_t n) const {
    diff::Matrix m(n, pool_.cols());
    for (std::size_t i = 0; i < n; ++i) {
      auto src = pool_.row_span(idx[from + i]);
      std::copy(src.begin(), src.end(), m.row_span(i).begin());
    }
    return m;
  }

  diff::Matrix pool_;
  std::size_t support_, query_;
  std::uint64_t seed_;
  Rng rng_;
  std::size_t count_ = 0;
  std::vector<std::size_t> last_support_, last_query_;
};

struct MetaLogEntry {
  std::size_t step = 0;
  double mean_query_loss = 0.0;
};

struct MetaTrainResult {
  flow::FlowModel model;
  std::vector<MetaLogEntry> log;
};

inline constexpr double kDivergenceLoss = 1e6;

/// Anything that yields batches of flow tasks.
template <class S>
concept TaskSource = requires(S& s, std::size_t n) {
  { s.sample_batch(n) } -> std::same_as<std::vector<Task<diff::Matrix>>>;
};

/// Meta-initialisation of a flow from tasks drawn by `sampler`.
template <TaskSource Sampler>
MetaTrainResult meta_train(const flow::FlowModel& init, Sampler& sampler, const MetaConfig& cfg) {
  cfg.validate();
  flow::FlowObjective objective(init.arch);
  MetaTrainResult r{init, {}};
  for (std::size_t step = 0; step < cfg.outer_steps; ++step) {
    auto tasks = sampler.sample_batch(cfg.meta_batch);
    auto res = meta_step_detailed(objective, r.model.params, tasks, cfg);
    if (!std::isfinite(res.mean_query_loss) || res.mean_query_loss > kDivergenceLoss)
      throw DivergenceError("mean query loss " + std::to_string(res.mean_query_loss) + " at outer step " +
                            std::to_string(step));
    r.model.params = std::move(res.theta);
    r.log.push_back({step, res.mean_query_loss});
  }
  return r;
}

inline void write_meta_log(std::ostream& os, const std::vector<MetaLogEntry>& log) {
  os << "step,mean_query_loss\n";
  char buf[64];
  for (const auto& e : log) {
    std::snprintf(buf, sizeof buf, "%zu,%.6f\n", e.step, e.mean_query_loss);
    os << buf;
  }
}

}  // namespace metarefine::maml
