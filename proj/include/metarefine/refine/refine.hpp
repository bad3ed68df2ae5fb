#pragma once

#include <cmath>
#include <cstdio>
#include <functional>
#include <limits>
#include <ostream>
#include <set>
#include <string>
#include <unordered_map>
#include <vector>

#include "metarefine/data/dataset.hpp"
#include "metarefine/diff/matrix.hpp"
#include "metarefine/error.hpp"
#include "metarefine/flow/flow.hpp"
#include "metarefine/maml/maml.hpp"
#include "metarefine/maml/optimizer.hpp"
#include "metarefine/metrics/auroc.hpp"
#include "metarefine/refine/threshold.hpp"
#include "metarefine/rng.hpp"
#include "metarefine/score/scorer.hpp"

namespace metarefine::refine {

using diff::Matrix;

enum class ThresholdScope { per_batch, per_epoch };
enum class RejectionMode { permanent, per_epoch };
enum class ValidationMetric { nll, auroc };

struct RefinementConfig {
  double k = 1.5;
  std::size_t batch_size = 32;
  double lr = 2e-4;
  std::size_t max_epochs = 40;
  std::size_t patience = 10;
  double min_delta = 0.0;
  ThresholdScope threshold_scope = ThresholdScope::per_batch;
  RejectionMode rejection_mode = RejectionMode::permanent;
  ValidationMetric val_metric = ValidationMetric::nll;
  maml::OptimizerKind optimizer = maml::OptimizerKind::adam;
  std::uint64_t seed = 0;

  void validate() const {
    if (!(k >= 0.0)) throw ConfigError("k must be non-negative");
    if (batch_size < 1) throw ConfigError("batch_size must be positive");
    if (threshold_scope == ThresholdScope::per_batch && batch_size < 8)
      throw ConfigError("per-batch thresholds need batch_size >= 8");
    if (patience < 1) throw ConfigError("patience must be at least 1");
    if (!(min_delta >= 0.0)) throw ConfigError("min_delta must be non-negative");
    if (!(lr >= 0.0)) throw ConfigError("lr must be non-negative");
  }
};

struct Rejection {
  std::string id;
  std::size_t epoch = 0;
  double score = 0.0;
  data::Label label = data::Label::nominal;
};

struct EpochLog {
  std::size_t epoch = 0;
  std::size_t active = 0;
  std::size_t rejected_this_epoch = 0;
  std::size_t deleted_good = 0;
  std::size_t deleted_bad = 0;
  double val_metric = 0.0;
};

/// One classification decision, kept so threshold dominance can be audited.
struct BatchTrace {
  std::size_t epoch = 0;
  double threshold = 0.0;
  double max_retained_score = -std::numeric_limits<double>::infinity();
  std::size_t retained = 0;
  std::size_t rejected = 0;
};

struct RefinementState {
  std::size_t epoch = 0;
  std::set<std::string> active_ids;
  std::vector<Rejection> rejected;
  std::vector<double> val_history;
  std::size_t deleted_good = 0;
  std::size_t deleted_bad = 0;
  bool exhausted = false;
  bool converged = false;
  std::size_t updates = 0;  // outer parameter updates applied
  std::vector<EpochLog> log;
  std::vector<BatchTrace> trace;
};

/// Divergence during refinement; carries the state reached so far.
class RefinementDiverged : public DivergenceError {
 public:
  RefinementDiverged(const std::string& what, RefinementState state)
      : DivergenceError(what), state_(std::move(state)) {}
  const RefinementState& state() const noexcept { return state_; }

 private:
  RefinementState state_;
};

struct RefineResult {
  flow::FlowModel model;
  RefinementState state;
};

namespace detail {

inline Matrix gather_rows(const Matrix& m, const std::vector<std::size_t>& rows) {
  Matrix out(rows.size(), m.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    auto src = m.row_span(rows[i]);
    std::copy(src.begin(), src.end(), out.row_span(i).begin());
  }
  return out;
}

/// Split `order` into floor(n / size) batches whose sizes differ by at most one.
inline std::vector<std::vector<std::size_t>> make_batches(const std::vector<std::size_t>& order, std::size_t size) {
  const std::size_t nb = order.size() / size;
  std::vector<std::vector<std::size_t>> out(nb);
  if (nb == 0) return out;
  const std::size_t base = order.size() / nb, extra = order.size() % nb;
  std::size_t pos = 0;
  for (std::size_t b = 0; b < nb; ++b) {
    const std::size_t len = base + (b < extra ? 1 : 0);
    out[b].assign(order.begin() + static_cast<std::ptrdiff_t>(pos), order.begin() + static_cast<std::ptrdiff_t>(pos + len));
    pos += len;
  }
  return out;
}

inline double validation_metric(const flow::FlowModel& model, const score::Pipeline& pipe, const data::Dataset& val,
                                ValidationMetric metric) {
  const Matrix x = val.matrix();
  if (metric == ValidationMetric::nll) return flow::nll_loss(model, pipe.features(x));
  auto s = score::score_batch(model, pipe, x);
  return metrics::auroc(s, val.labels());
}

}  // namespace detail

/// Single-task first-order MAML update: adapt on `support`, take the query
/// gradient at the adapted parameters and hand it to the optimizer.
/// Returns the query loss at the adapted parameters.
inline double maml_update(flow::FlowModel& model, maml::Optimizer& opt, const Matrix& support, const Matrix& query,
                          const maml::MetaConfig& meta) {
  flow::FlowObjective obj(model.arch);
  auto adapted = maml::inner_adapt(obj, model.params, support, meta.alpha, meta.inner_steps, meta.clip_norm);
  auto g = obj.value_and_grad(adapted, query);
  diff::clip_global_norm(g.gradient, meta.clip_norm);
  opt.step(model.params, g.gradient);
  return g.loss;
}

/// Iterative refinement: score, threshold, reject, update, validate.
inline RefineResult refine(const data::Dataset& train, const data::Dataset& val, const flow::FlowModel& init,
                           const RefinementConfig& cfg, const maml::MetaConfig& meta,
                           const score::Pipeline& pipe) {
  cfg.validate();
  meta.validate();
  if (train.empty()) throw UsageError("refine needs a non-empty training set");
  if (val.empty()) throw UsageError("refine needs a non-empty validation set");
  if (pipe.extractor.output_dim() != init.dim()) throw ShapeError("extractor output does not match flow dimension");

  RefineResult r{init, {}};
  RefinementState& st = r.state;
  const Matrix raw = train.matrix();
  const Matrix feats = pipe.features(raw);
  std::vector<std::size_t> all(train.size());
  for (std::size_t i = 0; i < all.size(); ++i) {
    all[i] = i;
    st.active_ids.insert(train.samples[i].id);
  }
  std::vector<bool> active(train.size(), true);

  maml::Optimizer opt(cfg.optimizer, cfg.lr);
  Rng rng(Rng::mix(cfg.seed ^ 0x4ef1ae11ULL));
  double best = std::numeric_limits<double>::infinity();
  std::size_t stale = 0;

  auto reject = [&](std::size_t row, double score, std::size_t epoch) {
    const auto& s = train.samples[row];
    active[row] = false;
    st.active_ids.erase(s.id);
    st.rejected.push_back({s.id, epoch, score, s.label});
    (s.label == data::Label::nominal ? st.deleted_good : st.deleted_bad) += 1;
  };

  for (std::size_t epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    if (cfg.rejection_mode == RejectionMode::per_epoch) {
      std::fill(active.begin(), active.end(), true);
      for (const auto& s : train.samples) st.active_ids.insert(s.id);
      st.rejected.clear();
      st.deleted_good = st.deleted_bad = 0;
    }
    std::vector<std::size_t> order;
    for (std::size_t i : all)
      if (active[i]) order.push_back(i);
    if (order.size() < cfg.batch_size) {
      st.exhausted = true;
      break;
    }
    rng.shuffle(order);
    const auto batches = detail::make_batches(order, cfg.batch_size);

    ThresholdStats epoch_stats;
    if (cfg.threshold_scope == ThresholdScope::per_epoch)
      epoch_stats = dynamic_threshold(score::score_batch(r.model, pipe, detail::gather_rows(raw, order)), cfg.k);

    const std::size_t rejected_before = st.rejected.size();
    std::vector<Matrix> retained(batches.size());
    auto update = [&](const Matrix& support, const Matrix& query) {
      if (support.rows() == 0 || query.rows() == 0) return;
      double loss;
      try {
        loss = maml_update(r.model, opt, support, query, meta);
      } catch (const NumericError& e) {
        throw RefinementDiverged(std::string("epoch ") + std::to_string(epoch) + ": " + e.what(), st);
      }
      if (!std::isfinite(loss) || loss > maml::kDivergenceLoss)
        throw RefinementDiverged("query loss " + std::to_string(loss) + " in epoch " + std::to_string(epoch), st);
      ++st.updates;
    };

    for (std::size_t b = 0; b < batches.size(); ++b) {
      const auto& rows = batches[b];
      auto scores = score::score_batch(r.model, pipe, detail::gather_rows(raw, rows));
      const ThresholdStats stats =
          cfg.threshold_scope == ThresholdScope::per_batch ? dynamic_threshold(scores, cfg.k) : epoch_stats;
      std::vector<std::pair<std::size_t, double>> scored(rows.size());
      for (std::size_t i = 0; i < rows.size(); ++i) scored[i] = {i, scores[i]};
      const auto cls = classify_batch(scored, stats);

      BatchTrace tr{epoch, stats.threshold};
      std::vector<std::size_t> keep;
      for (std::size_t i : cls.retained) {
        keep.push_back(rows[i]);
        tr.max_retained_score = std::max(tr.max_retained_score, scores[i]);
      }
      for (std::size_t i : cls.rejected) reject(rows[i], scores[i], epoch);
      tr.retained = cls.retained.size();
      tr.rejected = cls.rejected.size();
      st.trace.push_back(tr);

      retained[b] = detail::gather_rows(feats, keep);
      if (b > 0) update(retained[b - 1], retained[b]);
    }
    // last retained batch adapts, first one queries
    update(retained.back(), retained.front());

    st.epoch = epoch;
    const double metric = detail::validation_metric(r.model, pipe, val, cfg.val_metric);
    st.val_history.push_back(metric);
    st.log.push_back({epoch, st.active_ids.size(), st.rejected.size() - rejected_before, st.deleted_good,
                      st.deleted_bad, metric});

    const double loss_like = cfg.val_metric == ValidationMetric::nll ? metric : -metric;
    if (loss_like < best - cfg.min_delta) {
      best = loss_like;
      stale = 0;
    } else if (++stale >= cfg.patience) {
      st.converged = true;
      break;
    }
  }
  return r;
}

inline RefineResult refine(const data::Dataset& train, const data::Dataset& val, const flow::FlowModel& init,
                           const RefinementConfig& cfg, const maml::MetaConfig& meta) {
  return refine(train, val, init, cfg, meta, score::Pipeline::identity(init.dim()));
}

struct EpochDeletions {
  std::size_t epoch = 0;
  std::size_t good = 0;
  std::size_t bad = 0;
};

struct RejectionReport {
  std::size_t deleted_good = 0;
  std::size_t deleted_bad = 0;
  std::vector<EpochDeletions> per_epoch;
};

/// Deleted-sample accounting against ground truth.
inline RejectionReport rejection_report(const RefinementState& state,
                                        const std::unordered_map<std::string, data::Label>& truth) {
  RejectionReport rep;
  for (const auto& r : state.rejected) {
    auto it = truth.find(r.id);
    if (it == truth.end()) throw DataError("no ground-truth label for rejected sample '" + r.id + "'");
    if (rep.per_epoch.empty() || rep.per_epoch.back().epoch != r.epoch) rep.per_epoch.push_back({r.epoch, 0, 0});
    if (it->second == data::Label::nominal) {
      ++rep.deleted_good;
      ++rep.per_epoch.back().good;
    } else {
      ++rep.deleted_bad;
      ++rep.per_epoch.back().bad;
    }
  }
  return rep;
}

inline void write_refine_log(std::ostream& os, const std::vector<EpochLog>& log) {
  os << "epoch,active,rejected,deleted_good,deleted_bad,val_metric\n";
  char buf[160];
  for (const auto& e : log) {
    std::snprintf(buf, sizeof buf, "%zu,%zu,%zu,%zu,%zu,%.6f\n", e.epoch, e.active, e.rejected_this_epoch,
                  e.deleted_good, e.deleted_bad, e.val_metric);
    os << buf;
  }
}

inline void write_rejection_report(std::ostream& os, const RejectionReport& rep) {
  os << "epoch,deleted_good,deleted_bad\n";
  for (const auto& e : rep.per_epoch) os << e.epoch << ',' << e.good << ',' << e.bad << '\n';
  os << "total," << rep.deleted_good << ',' << rep.deleted_bad << '\n';
}

struct PlainTrainConfig {
  std::size_t batch_size = 32;
  double lr = 2e-4;
  maml::OptimizerKind optimizer = maml::OptimizerKind::adam;
  double clip_norm = 10.0;
  std::uint64_t seed = 0;
};

struct PlainTrainResult {
  flow::FlowModel model;
  std::vector<double> epoch_loss;  // mean batch NLL per pass over the data
  std::size_t updates = 0;
};

using PassCallback = std::function<void(const PlainTrainResult&)>;

class PlainTrainDiverged : public DivergenceError {
 public:
  PlainTrainDiverged(const std::string& what, PlainTrainResult partial)
      : DivergenceError(what), partial_(std::move(partial)) {}
  const PlainTrainResult& partial() const noexcept { return partial_; }

 private:
  PlainTrainResult partial_;
};

/// Plain minibatch NLL descent for exactly `updates` parameter updates,
/// reshuffling at every pass. The unrefined baseline.
inline PlainTrainResult train_plain(const flow::FlowModel& init, const Matrix& features, std::size_t updates,
                                    const PlainTrainConfig& cfg, const PassCallback& on_pass = {}) {
  if (features.rows() == 0) throw UsageError("training set is empty");
  if (cfg.batch_size == 0) throw ConfigError("batch_size must be positive");
  PlainTrainResult r{init, {}, 0};
  maml::Optimizer opt(cfg.optimizer, cfg.lr);
  Rng rng(Rng::mix(cfg.seed ^ 0xba5e11e5ULL));
  std::vector<std::size_t> order(features.rows());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  const std::size_t bs = std::min(cfg.batch_size, features.rows());
  while (r.updates < updates) {
    rng.shuffle(order);
    const auto batches = detail::make_batches(order, bs);
    double sum = 0.0;
    std::size_t n = 0;
    for (const auto& rows : batches) {
      if (r.updates >= updates) break;
      auto g = flow::nll_value_and_grad(init.arch, r.model.params, detail::gather_rows(features, rows));
      if (!std::isfinite(g.loss) || g.loss > maml::kDivergenceLoss)
        throw PlainTrainDiverged("training loss " + std::to_string(g.loss) + " at update " + std::to_string(r.updates),
                                 r);
      diff::clip_global_norm(g.gradient, cfg.clip_norm);
      opt.step(r.model.params, g.gradient);
      sum += g.loss;
      ++n;
      ++r.updates;
    }
    if (n > 0) r.epoch_loss.push_back(sum / static_cast<double>(n));
    if (on_pass) on_pass(r);
  }
  return r;
}

/// Epoch-count variant of train_plain.
inline PlainTrainResult train_epochs(const flow::FlowModel& init, const Matrix& features, std::size_t epochs,
                                     const PlainTrainConfig& cfg, const PassCallback& on_pass = {}) {
  if (features.rows() == 0) throw UsageError("training set is empty");
  const std::size_t per_epoch = std::max<std::size_t>(1, features.rows() / std::min(cfg.batch_size, features.rows()));
  return train_plain(init, features, epochs * per_epoch, cfg, on_pass);
}

}  // namespace metarefine::refine
