#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "metarefine/data/generate.hpp"
#include "metarefine/error.hpp"
#include "metarefine/maml/maml.hpp"
#include "metarefine/maml/optimizer.hpp"
#include "metarefine/metrics/report.hpp"
#include "metarefine/metrics/sweep.hpp"
#include "metarefine/refine/refine.hpp"

namespace metarefine::cli {

using json = nlohmann::ordered_json;

enum class Profile { desk, paper };

inline Profile parse_profile(const std::string& s) {
  if (s == "desk") return Profile::desk;
  if (s == "paper") return Profile::paper;
  throw ConfigError("unknown profile '" + s + "' (expected desk or paper)");
}
inline const char* to_string(Profile p) { return p == Profile::desk ? "desk" : "paper"; }

inline refine::ThresholdScope parse_scope(const std::string& s) {
  if (s == "per-batch") return refine::ThresholdScope::per_batch;
  if (s == "per-epoch") return refine::ThresholdScope::per_epoch;
  throw ConfigError("unknown threshold scope '" + s + "' (expected per-batch or per-epoch)");
}
inline refine::RejectionMode parse_rejection(const std::string& s) {
  if (s == "permanent") return refine::RejectionMode::permanent;
  if (s == "per-epoch") return refine::RejectionMode::per_epoch;
  throw ConfigError("unknown rejection mode '" + s + "' (expected permanent or per-epoch)");
}
inline refine::ValidationMetric parse_metric(const std::string& s) {
  if (s == "nll") return refine::ValidationMetric::nll;
  if (s == "auroc") return refine::ValidationMetric::auroc;
  throw ConfigError("unknown validation metric '" + s + "' (expected nll or auroc)");
}
inline maml::OptimizerKind parse_optimizer_cfg(const std::string& s) {
  try {
    return maml::parse_optimizer(s);
  } catch (const Error& e) {
    throw ConfigError(e.what());
  }
}

/// Resolved parameters for every command. One schema serves config files,
/// flag overrides and the manifest.
struct RunConfig {
  Profile profile = Profile::desk;
  std::optional<std::uint64_t> seed;

  data::SyntheticSpec data;
  double rho = 0.0;

  std::size_t n_blocks = 4;
  std::size_t hidden = 64;
  double clamp = 2.0;

  maml::MetaConfig meta;
  std::size_t support_size = 16;
  std::size_t query_size = 16;

  refine::RefinementConfig refine;

  std::size_t epochs = 40;
  std::size_t batch_size = 32;
  double lr = 2e-4;
  maml::OptimizerKind optimizer = maml::OptimizerKind::adam;

  std::vector<double> levels{0.0, 0.1, 0.2, 0.3, 0.4, 0.5};
  std::vector<std::uint64_t> seeds;  // empty: five consecutive seeds from `seed`

  std::string data_path;
  std::string model_path;
  std::string split = "test";
  std::string variant;  // empty: inferred from the model's manifest

  std::size_t jobs = 1;

  void apply_profile(Profile p) {
    profile = p;
    const bool paper = p == Profile::paper;
    epochs = refine.max_epochs = paper ? 240 : 40;
    batch_size = refine.batch_size = paper ? 96 : 32;
    n_blocks = paper ? 8 : 4;
    hidden = paper ? 2048 : 64;
    lr = refine.lr = 2e-4;
  }

  std::vector<std::uint64_t> resolved_seeds() const {
    if (!seeds.empty()) return seeds;
    if (!seed) throw UsageError("an explicit --seed (or --seeds for sweep) is required");
    std::vector<std::uint64_t> s;
    for (std::uint64_t i = 0; i < 5; ++i) s.push_back(*seed + i);
    return s;
  }

  metrics::SweepConfig sweep_config() const {
    metrics::SweepConfig c;
    c.data = data;
    c.n_blocks = n_blocks;
    c.hidden = hidden;
    c.clamp = clamp;
    c.meta = meta;
    c.support_size = support_size;
    c.query_size = query_size;
    c.refine = refine;
    return c;
  }

  void validate() const {
    data.validate();
    data::ContaminationSpec{rho, 0}.validate();
    if (n_blocks < 1) throw ConfigError("flow needs at least one coupling block");
    if (hidden < 1) throw ConfigError("hidden width must be positive");
    if (!(clamp > 0.0)) throw ConfigError("clamp must be positive");
    meta.validate();
    if (support_size < 1 || query_size < 1) throw ConfigError("support and query sizes must be positive");
    refine.validate();
    if (batch_size < 1) throw ConfigError("batch_size must be positive");
    if (!(lr >= 0.0)) throw ConfigError("lr must be non-negative");
    if (levels.empty()) throw ConfigError("sweep needs at least one noise level");
    for (double r : levels) data::ContaminationSpec{r, 0}.validate();
    if (jobs < 1) throw ConfigError("jobs must be at least 1");
    if (split != "train" && split != "val" && split != "test") throw ConfigError("split must be train, val or test");
    if (!variant.empty() && variant != "refined" && variant != "unrefined")
      throw ConfigError("variant must be refined or unrefined");
  }
};

inline json to_json(const RunConfig& c) {
  json j;
  j["profile"] = to_string(c.profile);
  j["data"] = metrics::to_json(c.data);
  j["rho"] = c.rho;
  j["flow"] = {{"n_blocks", c.n_blocks}, {"hidden", c.hidden}, {"clamp", c.clamp}};
  json meta = metrics::to_json(c.meta);
  meta["support_size"] = c.support_size;
  meta["query_size"] = c.query_size;
  j["meta"] = meta;
  j["refine"] = metrics::to_json(c.refine);
  j["train"] = {{"epochs", c.epochs},
                {"batch_size", c.batch_size},
                {"lr", c.lr},
                {"optimizer", maml::to_string(c.optimizer)}};
  j["sweep"] = {{"levels", c.levels}, {"seeds", c.seeds}, {"jobs", c.jobs}};
  j["paths"] = {{"data", c.data_path}, {"model", c.model_path}};
  j["eval"] = {{"split", c.split}, {"variant", c.variant}};
  return j;
}

namespace detail {

using Setter = std::function<void(const json&)>;

inline void apply_section(const json& j, const std::string& where, const std::map<std::string, Setter>& setters) {
  if (!j.is_object()) throw ConfigError("config entry '" + where + "' must be an object");
  for (const auto& [k, v] : j.items()) {
    auto it = setters.find(k);
    if (it == setters.end()) throw ConfigError("unknown config key '" + where + (where.empty() ? "" : ".") + k + "'");
    try {
      it->second(v);
    } catch (const json::exception& e) {
      throw ConfigError("bad value for '" + where + (where.empty() ? "" : ".") + k + "': " + e.what());
    }
  }
}

template <class T>
Setter set(T& field) {
  return [&field](const json& v) { field = v.get<T>(); };
}

template <class T, class Parse>
Setter set_parsed(T& field, Parse parse) {
  return [&field, parse](const json& v) { field = parse(v.get<std::string>()); };
}

}  // namespace detail

/// Apply a config document (or a previous run's manifest) on top of `c`.
inline void apply_json(RunConfig& c, const json& doc) {
  using detail::set;
  using detail::set_parsed;
  const json& j = doc.contains("run_config") ? doc.at("run_config") : doc;
  if (doc.contains("run_config") && doc.contains("seed") && !doc.at("seed").is_null() && !c.seed)
    c.seed = doc.at("seed").get<std::uint64_t>();
  if (!j.is_object()) throw ConfigError("config must be a JSON object");

  if (j.contains("profile")) c.apply_profile(parse_profile(j.at("profile").get<std::string>()));

  auto& d = c.data;
  auto& m = c.meta;
  auto& r = c.refine;
  const std::map<std::string, detail::Setter> top{
      {"profile", [](const json&) {}},
      {"seed", [&](const json& v) { c.seed = v.get<std::uint64_t>(); }},
      {"rho", set(c.rho)},
      {"data",
       [&](const json& v) {
         detail::apply_section(v, "data",
                               {{"dim", set(d.dim)},
                                {"means", set(d.means)},
                                {"weights", set(d.weights)},
                                {"nominal_var", set(d.nominal_var)},
                                {"shift", set(d.shift)},
                                {"anomaly_cov_scale", set(d.anomaly_cov_scale)},
                                {"n_train", set(d.n_train)},
                                {"n_val", set(d.n_val)},
                                {"n_test_nominal", set(d.n_test_nominal)},
                                {"n_test_anomalous", set(d.n_test_anomalous)}});
       }},
      {"flow",
       [&](const json& v) {
         detail::apply_section(v, "flow", {{"n_blocks", set(c.n_blocks)}, {"hidden", set(c.hidden)}, {"clamp", set(c.clamp)}});
       }},
      {"meta",
       [&](const json& v) {
         detail::apply_section(v, "meta",
                               {{"alpha", set(m.alpha)},
                                {"beta", set(m.beta)},
                                {"inner_steps", set(m.inner_steps)},
                                {"meta_batch", set(m.meta_batch)},
                                {"outer_steps", set(m.outer_steps)},
                                {"first_order", set(m.first_order)},
                                {"clip_norm", set(m.clip_norm)},
                                {"support_size", set(c.support_size)},
                                {"query_size", set(c.query_size)}});
       }},
      {"refine",
       [&](const json& v) {
         detail::apply_section(v, "refine",
                               {{"k", set(r.k)},
                                {"batch_size", set(r.batch_size)},
                                {"lr", set(r.lr)},
                                {"max_epochs", set(r.max_epochs)},
                                {"patience", set(r.patience)},
                                {"min_delta", set(r.min_delta)},
                                {"threshold_scope", set_parsed(r.threshold_scope, parse_scope)},
                                {"rejection_mode", set_parsed(r.rejection_mode, parse_rejection)},
                                {"val_metric", set_parsed(r.val_metric, parse_metric)},
                                {"optimizer", set_parsed(r.optimizer, parse_optimizer_cfg)}});
       }},
      {"train",
       [&](const json& v) {
         detail::apply_section(v, "train",
                               {{"epochs", set(c.epochs)},
                                {"batch_size", set(c.batch_size)},
                                {"lr", set(c.lr)},
                                {"optimizer", set_parsed(c.optimizer, parse_optimizer_cfg)}});
       }},
      {"sweep",
       [&](const json& v) {
         detail::apply_section(v, "sweep", {{"levels", set(c.levels)}, {"seeds", set(c.seeds)}, {"jobs", set(c.jobs)}});
       }},
      {"paths",
       [&](const json& v) {
         detail::apply_section(v, "paths", {{"data", set(c.data_path)}, {"model", set(c.model_path)}});
       }},
      {"eval",
       [&](const json& v) { detail::apply_section(v, "eval", {{"split", set(c.split)}, {"variant", set(c.variant)}}); }},
  };
  detail::apply_section(j, "", top);
}

inline json read_json_file(const std::filesystem::path& p) {
  std::ifstream f(p);
  if (!f) throw IoError("cannot open config '" + p.string() + "'");
  try {
    return json::parse(f);
  } catch (const json::parse_error& e) {
    throw ConfigError("config '" + p.string() + "' is not valid JSON: " + e.what());
  }
}

}  // namespace metarefine::cli
