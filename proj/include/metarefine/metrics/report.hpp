#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "metarefine/error.hpp"
#include "metarefine/metrics/sweep.hpp"

namespace metarefine::metrics {

#ifndef METAREFINE_VERSION
#define METAREFINE_VERSION "0.0.0"
#endif

inline std::string fmt4(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4f", v);
  return buf;
}

inline const char* to_string(refine::ThresholdScope s) {
  return s == refine::ThresholdScope::per_batch ? "per-batch" : "per-epoch";
}
inline const char* to_string(refine::RejectionMode m) {
  return m == refine::RejectionMode::permanent ? "permanent" : "per-epoch";
}
inline const char* to_string(refine::ValidationMetric m) { return m == refine::ValidationMetric::nll ? "nll" : "auroc"; }

inline nlohmann::ordered_json to_json(const maml::MetaConfig& m) {
  return {{"alpha", m.alpha},           {"beta", m.beta},         {"inner_steps", m.inner_steps},
          {"meta_batch", m.meta_batch}, {"outer_steps", m.outer_steps}, {"first_order", m.first_order},
          {"clip_norm", m.clip_norm}};
}

inline nlohmann::ordered_json to_json(const refine::RefinementConfig& r) {
  return {{"k", r.k},
          {"batch_size", r.batch_size},
          {"lr", r.lr},
          {"max_epochs", r.max_epochs},
          {"patience", r.patience},
          {"min_delta", r.min_delta},
          {"threshold_scope", to_string(r.threshold_scope)},
          {"rejection_mode", to_string(r.rejection_mode)},
          {"val_metric", to_string(r.val_metric)},
          {"optimizer", maml::to_string(r.optimizer)}};
}

inline nlohmann::ordered_json to_json(const data::SyntheticSpec& s) {
  return {{"dim", s.dim},
          {"means", s.resolved_means()},
          {"weights", s.resolved_weights()},
          {"nominal_var", s.nominal_var},
          {"shift", s.shift},
          {"anomaly_cov_scale", s.anomaly_cov_scale},
          {"n_train", s.n_train},
          {"n_val", s.n_val},
          {"n_test_nominal", s.n_test_nominal},
          {"n_test_anomalous", s.n_test_anomalous}};
}

inline nlohmann::ordered_json to_json(const SweepConfig& c) {
  return {{"data", to_json(c.data)},
          {"flow", {{"n_blocks", c.n_blocks}, {"hidden", c.hidden}, {"clamp", c.clamp}}},
          {"meta", to_json(c.meta)},
          {"tasks", {{"support_size", c.support_size}, {"query_size", c.query_size}}},
          {"refine", to_json(c.refine)}};
}

namespace detail {

inline void write_file(const std::filesystem::path& p, const std::string& content) {
  std::ofstream f(p, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot open '" + p.string() + "' for writing");
  f << content;
  if (!f) throw IoError("failed writing '" + p.string() + "'");
}

}  // namespace detail

struct ReportFiles {
  std::filesystem::path auroc_table, deletion_table, per_seed, manifest, series_refined, series_unrefined;
};

/// Refined minus unrefined mean AUROC at a noise level.
inline double improvement(const SweepTable& t, double rho) {
  return t.row(Variant::refined, rho).mean - t.row(Variant::unrefined, rho).mean;
}

/// Write the AUROC table, deletion table, per-seed values, manifest and
/// plot series. Output bytes depend only on the table and config.
inline ReportFiles emit_report(const SweepTable& table, const SweepConfig& cfg, const std::filesystem::path& out_dir,
                               const nlohmann::ordered_json& extra = nlohmann::ordered_json::object()) {
  if (table.rows.empty() || table.levels.empty() || table.seeds.empty())
    throw UsageError("refusing to emit a report for an empty sweep table");
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec || !std::filesystem::is_directory(out_dir))
    throw IoError("cannot create output directory '" + out_dir.string() + "'");

  ReportFiles f{out_dir / "auroc_table.csv",  out_dir / "deletions.csv",        out_dir / "per_seed.csv",
                out_dir / "manifest.json",    out_dir / "series_refined.csv", out_dir / "series_unrefined.csv"};

  {
    std::ostringstream os;
    os << "# cells: mean \xC2\xB1 sample std of test AUROC across " << table.seeds.size() << " seeds\n";
    os << "variant";
    for (double rho : table.levels) os << ',' << fmt4(rho);
    os << '\n';
    for (Variant v : {Variant::refined, Variant::unrefined}) {
      os << to_string(v);
      for (double rho : table.levels) {
        const auto& r = table.row(v, rho);
        os << ',' << fmt4(r.mean) << " \xC2\xB1 " << fmt4(r.std);
      }
      os << '\n';
    }
    detail::write_file(f.auroc_table, os.str());
  }
  {
    std::ostringstream os;
    os << "rho,mean_deleted_good,mean_deleted_bad,mean_injected\n";
    for (double rho : table.levels) {
      const auto& r = table.row(Variant::refined, rho);
      os << fmt4(rho) << ',' << fmt4(r.mean_deleted_good) << ',' << fmt4(r.mean_deleted_bad) << ','
         << fmt4(r.mean_injected) << '\n';
    }
    detail::write_file(f.deletion_table, os.str());
  }
  {
    std::ostringstream os;
    os << "rho,seed,status,auroc_refined,auroc_unrefined,injected,deleted_good,deleted_bad,budget,epochs\n";
    for (const auto& c : table.cells) {
      os << fmt4(c.rho) << ',' << c.seed << ',' << (c.ok ? "ok" : "failed") << ',' << fmt4(c.auroc_refined) << ','
         << fmt4(c.auroc_unrefined) << ',' << c.injected << ',' << c.deleted_good << ',' << c.deleted_bad << ','
         << c.budget << ',' << c.epochs << '\n';
    }
    detail::write_file(f.per_seed, os.str());
  }
  for (Variant v : {Variant::refined, Variant::unrefined}) {
    std::ostringstream os;
    os << "rho,mean_auroc\n";
    for (double rho : table.levels) os << fmt4(rho) << ',' << fmt4(table.row(v, rho).mean) << '\n';
    detail::write_file(v == Variant::refined ? f.series_refined : f.series_unrefined, os.str());
  }
  {
    nlohmann::ordered_json m;
    m["tool"] = "metarefine";
    m["version"] = METAREFINE_VERSION;
    m["command"] = "sweep";
    m["levels"] = table.levels;
    m["seeds"] = table.seeds;
    m["config"] = to_json(cfg);
    m["meta_gradient"] = "first-order";
    m["std_definition"] = "sample standard deviation across seeds";
    nlohmann::ordered_json obs = nlohmann::ordered_json::array();
    for (double rho : table.levels) {
      const double d = improvement(table, rho);
      obs.push_back({{"rho", fmt4(rho)}, {"refined_minus_unrefined", fmt4(d)}, {"improved", d > 0.0}});
    }
    m["observations"] = obs;
    nlohmann::ordered_json fails = nlohmann::ordered_json::array();
    for (const auto& c : table.cells)
      if (!c.ok) fails.push_back({{"rho", fmt4(c.rho)}, {"seed", c.seed}, {"error", c.error}});
    m["failures"] = fails;
    for (const auto& [k, v] : extra.items()) m[k] = v;
    detail::write_file(f.manifest, m.dump(2) + "\n");
  }
  return f;
}

}  // namespace metarefine::metrics
