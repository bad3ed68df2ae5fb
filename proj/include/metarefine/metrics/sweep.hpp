#pragma once

#include <atomic>
#include <cmath>
#include <cstdint>
#include <exception>
#include <map>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "metarefine/data/generate.hpp"
#include "metarefine/error.hpp"
#include "metarefine/flow/flow.hpp"
#include "metarefine/maml/maml.hpp"
#include "metarefine/metrics/auroc.hpp"
#include "metarefine/refine/refine.hpp"
#include "metarefine/score/scorer.hpp"

namespace metarefine::metrics {

enum class Variant { refined, unrefined };
inline const char* to_string(Variant v) { return v == Variant::refined ? "refined" : "unrefined"; }

struct EvalResult {
  double auroc = 0.0;
  std::size_t n_nominal = 0;
  std::size_t n_anomalous = 0;
  std::uint64_t seed = 0;
  double rho = 0.0;
  Variant variant = Variant::refined;
};

/// Score the test rows of `test` and compute AUROC.
inline EvalResult evaluate(const flow::FlowModel& model, const score::Pipeline& pipe, const data::Dataset& test,
                           std::uint64_t seed, double rho, Variant variant) {
  if (test.empty()) throw UsageError("evaluation set is empty");
  auto scores = score::score_batch(model, pipe, test.matrix());
  EvalResult r;
  r.auroc = auroc(scores, test.labels());
  r.n_nominal = test.count(data::Label::nominal);
  r.n_anomalous = test.count(data::Label::anomalous);
  r.seed = seed;
  r.rho = rho;
  r.variant = variant;
  return r;
}

/// Everything one sweep cell needs besides (rho, seed).
struct SweepConfig {
  data::SyntheticSpec data;  // seed is replaced per cell
  std::size_t n_blocks = 4;
  std::size_t hidden = 64;
  double clamp = 2.0;
  maml::MetaConfig meta;
  std::size_t support_size = 16;
  std::size_t query_size = 16;
  refine::RefinementConfig refine;  // seed is replaced per cell
};

struct CellResult {
  double rho = 0.0;
  std::uint64_t seed = 0;
  bool ok = false;
  std::string error;
  double auroc_refined = 0.0;
  double auroc_unrefined = 0.0;
  std::size_t injected = 0;
  std::size_t deleted_good = 0;
  std::size_t deleted_bad = 0;
  std::size_t budget = 0;  // parameter updates given to each variant
  std::size_t epochs = 0;
};

/// Refined and equal-budget unrefined runs on one (rho, seed) benchmark draw.
inline CellResult run_cell(double rho, std::uint64_t seed, const SweepConfig& cfg) {
  CellResult c;
  c.rho = rho;
  c.seed = seed;
  try {
    data::SyntheticSpec spec = cfg.data;
    spec.seed = seed;
    const data::Dataset ds = data::build_benchmark(spec, {rho, seed});
    const data::Dataset train = ds.where(data::Split::train);
    const data::Dataset val = ds.where(data::Split::val);
    const data::Dataset test = ds.where(data::Split::test);
    const auto pipe = score::Pipeline::identity(spec.dim);
    for (const auto& s : train.samples) c.injected += s.injected;

    const auto init = flow::init_flow(spec.dim, cfg.n_blocks, cfg.hidden, seed, cfg.clamp);
    maml::TaskSampler sampler(pipe.features(train.matrix()), cfg.support_size, cfg.query_size, seed);
    const auto meta = maml::meta_train(init, sampler, cfg.meta);

    refine::RefinementConfig rc = cfg.refine;
    rc.seed = seed;
    const auto refined = refine::refine(train, val, meta.model, rc, cfg.meta, pipe);

    c.budget = cfg.meta.outer_steps + refined.state.updates;
    refine::PlainTrainConfig pc{rc.batch_size, rc.lr, rc.optimizer, cfg.meta.clip_norm, seed};
    const auto plain = refine::train_plain(init, pipe.features(train.matrix()), c.budget, pc);

    c.auroc_refined = evaluate(refined.model, pipe, test, seed, rho, Variant::refined).auroc;
    c.auroc_unrefined = evaluate(plain.model, pipe, test, seed, rho, Variant::unrefined).auroc;
    c.deleted_good = refined.state.deleted_good;
    c.deleted_bad = refined.state.deleted_bad;
    c.epochs = refined.state.epoch;
    c.ok = true;
  } catch (const std::exception& e) {
    c.error = e.what();
  }
  return c;
}

struct SweepRow {
  Variant variant = Variant::refined;
  double rho = 0.0;
  std::vector<std::uint64_t> seeds;
  std::vector<double> aurocs;  // per seed, aligned with `seeds`
  double mean = 0.0;
  double std = 0.0;  // sample standard deviation across seeds (0 for one seed)
  double mean_deleted_good = 0.0;
  double mean_deleted_bad = 0.0;
  double mean_injected = 0.0;
};

struct SweepTable {
  std::vector<double> levels;
  std::vector<std::uint64_t> seeds;
  std::vector<SweepRow> rows;     // variant-major, then level order
  std::vector<CellResult> cells;  // level-major, then seed order
  std::size_t failures = 0;

  const SweepRow& row(Variant v, double rho) const {
    for (const auto& r : rows)
      if (r.variant == v && r.rho == rho) return r;
    throw UsageError("no sweep row for the requested variant and noise level");
  }
};

inline std::pair<double, double> mean_std(const std::vector<double>& v) {
  if (v.empty()) return {0.0, 0.0};
  double m = 0.0;
  for (double x : v) m += x;
  m /= static_cast<double>(v.size());
  if (v.size() < 2) return {m, 0.0};
  double ss = 0.0;
  for (double x : v) ss += (x - m) * (x - m);
  return {m, std::sqrt(ss / static_cast<double>(v.size() - 1))};
}

/// Fixed-order aggregation of cells into per-(variant, level) rows.
inline SweepTable aggregate(const std::vector<double>& levels, const std::vector<std::uint64_t>& seeds,
                            std::vector<CellResult> cells) {
  SweepTable t;
  t.levels = levels;
  t.seeds = seeds;
  for (Variant v : {Variant::refined, Variant::unrefined}) {
    for (double rho : levels) {
      SweepRow row;
      row.variant = v;
      row.rho = rho;
      std::vector<double> good, bad, inj;
      for (const auto& c : cells) {
        if (c.rho != rho || !c.ok) continue;
        row.seeds.push_back(c.seed);
        row.aurocs.push_back(v == Variant::refined ? c.auroc_refined : c.auroc_unrefined);
        good.push_back(v == Variant::refined ? static_cast<double>(c.deleted_good) : 0.0);
        bad.push_back(v == Variant::refined ? static_cast<double>(c.deleted_bad) : 0.0);
        inj.push_back(static_cast<double>(c.injected));
      }
      std::tie(row.mean, row.std) = mean_std(row.aurocs);
      row.mean_deleted_good = mean_std(good).first;
      row.mean_deleted_bad = mean_std(bad).first;
      row.mean_injected = mean_std(inj).first;
      t.rows.push_back(std::move(row));
    }
  }
  for (const auto& c : cells) t.failures += !c.ok;
  t.cells = std::move(cells);
  return t;
}

/// Every (level, seed) cell, optionally on `jobs` threads. Failed cells are
/// recorded and the sweep continues; results never depend on scheduling.
inline SweepTable run_sweep(const std::vector<double>& levels, const std::vector<std::uint64_t>& seeds,
                            const SweepConfig& cfg, std::size_t jobs = 1) {
  if (levels.empty() || seeds.empty()) throw UsageError("sweep needs at least one noise level and one seed");
  for (double rho : levels) data::ContaminationSpec{rho, 0}.validate();
  std::vector<std::pair<double, std::uint64_t>> work;
  for (double rho : levels)
    for (auto s : seeds) work.emplace_back(rho, s);
  std::vector<CellResult> cells(work.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < work.size(); i = next++) cells[i] = run_cell(work[i].first, work[i].second, cfg);
  };
  const std::size_t n_threads = std::max<std::size_t>(1, std::min(jobs, work.size()));
  if (n_threads == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t i = 0; i < n_threads; ++i) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
  }
  return aggregate(levels, seeds, std::move(cells));
}

}  // namespace metarefine::metrics
