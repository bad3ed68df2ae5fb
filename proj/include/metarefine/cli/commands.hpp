#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "metarefine/cli/config.hpp"
#include "metarefine/data/generate.hpp"
#include "metarefine/data/io.hpp"
#include "metarefine/error.hpp"
#include "metarefine/flow/flow.hpp"
#include "metarefine/flow/serialize.hpp"
#include "metarefine/maml/maml.hpp"
#include "metarefine/metrics/report.hpp"
#include "metarefine/metrics/sweep.hpp"
#include "metarefine/refine/refine.hpp"
#include "metarefine/score/scorer.hpp"

namespace metarefine::cli {

namespace fs = std::filesystem;

enum ExitCode : int {
  kOk = 0,
  kInternal = 1,
  kUsage = 2,
  kData = 3,
  kNumeric = 4,
  kIo = 5,
  kCellFailures = 6,
};

inline int exit_code(ErrorKind k) {
  switch (k) {
    case ErrorKind::usage:
    case ErrorKind::config:
      return kUsage;
    case ErrorKind::data:
    case ErrorKind::parse:
      return kData;
    case ErrorKind::numeric:
    case ErrorKind::shape:
    case ErrorKind::divergence:
      return kNumeric;
    case ErrorKind::io:
      return kIo;
  }
  return kInternal;
}

/// Flag values; unset flags leave the profile/config value alone.
struct Overrides {
  std::optional<std::string> config, profile, out;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> jobs;

  std::optional<std::size_t> dim, n_train, n_val, n_test_nominal, n_test_anomalous;
  std::optional<double> rho, shift, nominal_var, anomaly_cov_scale;

  std::optional<std::size_t> blocks, hidden;
  std::optional<double> clamp;

  std::optional<double> alpha, beta;
  std::optional<std::size_t> inner_steps, meta_batch, outer_steps, support, query;

  std::optional<double> k, min_delta;
  std::optional<std::size_t> max_epochs, patience;
  std::optional<std::string> scope, rejection, val_metric;

  std::optional<std::size_t> epochs, batch_size;
  std::optional<double> lr;
  std::optional<std::string> optimizer;

  std::optional<std::vector<double>> levels;
  std::optional<std::vector<std::uint64_t>> seeds;

  std::optional<std::string> data, model, split, variant;
};

namespace detail {

template <class T>
void put(T& dst, const std::optional<T>& v) {
  if (v) dst = *v;
}

inline std::string fmt6(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

inline void write_text(const fs::path& p, const std::string& s) { metrics::detail::write_file(p, s); }

inline fs::path dataset_file(const std::string& p) {
  if (p.empty()) throw UsageError("--data is required");
  fs::path path(p);
  return fs::is_directory(path) ? path / "dataset.csv" : path;
}

inline fs::path model_file(const std::string& p) {
  if (p.empty()) throw UsageError("--model is required");
  fs::path path(p);
  return fs::is_directory(path) ? path / "model.bin" : path;
}

inline void ensure_dir(const fs::path& d) {
  std::error_code ec;
  fs::create_directories(d, ec);
  if (ec || !fs::is_directory(d)) throw IoError("cannot create output directory '" + d.string() + "'");
}

inline json manifest(const std::string& command, const RunConfig& c) {
  json m;
  m["tool"] = "metarefine";
  m["version"] = METAREFINE_VERSION;
  m["command"] = command;
  m["seed"] = c.seed ? json(*c.seed) : json(nullptr);
  m["run_config"] = to_json(c);
  return m;
}

inline void write_manifest(const fs::path& out, const json& m) { write_text(out / "manifest.json", m.dump(2) + "\n"); }

inline std::uint64_t require_seed(const RunConfig& c) {
  if (!c.seed) throw UsageError("an explicit --seed is required");
  return *c.seed;
}

inline refine::PlainTrainConfig plain_config(const RunConfig& c) {
  return {c.batch_size, c.lr, c.optimizer, c.meta.clip_norm, require_seed(c)};
}

}  // namespace detail

/// Profile, then config file, then flags.
inline RunConfig resolve(const Overrides& o) {
  RunConfig c;
  std::optional<json> doc;
  if (o.config) doc = read_json_file(*o.config);
  Profile p = Profile::desk;
  if (doc) {
    const json& j = doc->contains("run_config") ? doc->at("run_config") : *doc;
    if (j.is_object() && j.contains("profile")) p = parse_profile(j.at("profile").get<std::string>());
  }
  if (o.profile) p = parse_profile(*o.profile);
  c.apply_profile(p);
  if (doc) apply_json(c, *doc);
  if (o.profile) c.profile = p;

  using detail::put;
  if (o.seed) c.seed = *o.seed;
  put(c.jobs, o.jobs);
  put(c.data.dim, o.dim);
  put(c.data.n_train, o.n_train);
  put(c.data.n_val, o.n_val);
  put(c.data.n_test_nominal, o.n_test_nominal);
  put(c.data.n_test_anomalous, o.n_test_anomalous);
  put(c.rho, o.rho);
  put(c.data.shift, o.shift);
  put(c.data.nominal_var, o.nominal_var);
  put(c.data.anomaly_cov_scale, o.anomaly_cov_scale);
  if (o.dim && !c.data.means.empty() && c.data.means.front().size() != *o.dim) {
    c.data.means.clear();
    c.data.weights.clear();
  }
  put(c.n_blocks, o.blocks);
  put(c.hidden, o.hidden);
  put(c.clamp, o.clamp);
  put(c.meta.alpha, o.alpha);
  put(c.meta.beta, o.beta);
  put(c.meta.inner_steps, o.inner_steps);
  put(c.meta.meta_batch, o.meta_batch);
  put(c.meta.outer_steps, o.outer_steps);
  put(c.support_size, o.support);
  put(c.query_size, o.query);
  put(c.refine.k, o.k);
  put(c.refine.min_delta, o.min_delta);
  put(c.refine.max_epochs, o.max_epochs);
  put(c.refine.patience, o.patience);
  if (o.scope) c.refine.threshold_scope = parse_scope(*o.scope);
  if (o.rejection) c.refine.rejection_mode = parse_rejection(*o.rejection);
  if (o.val_metric) c.refine.val_metric = parse_metric(*o.val_metric);
  // --epochs / --batch-size / --lr / --optimizer drive both training loops
  if (o.epochs) c.epochs = c.refine.max_epochs = *o.epochs;
  if (o.max_epochs) c.refine.max_epochs = *o.max_epochs;
  if (o.batch_size) c.batch_size = c.refine.batch_size = *o.batch_size;
  if (o.lr) c.lr = c.refine.lr = *o.lr;
  if (o.optimizer) c.optimizer = c.refine.optimizer = parse_optimizer_cfg(*o.optimizer);
  put(c.levels, o.levels);
  put(c.seeds, o.seeds);
  put(c.data_path, o.data);
  put(c.model_path, o.model);
  put(c.split, o.split);
  put(c.variant, o.variant);
  c.validate();
  return c;
}

inline int cmd_generate(const RunConfig& c, const fs::path& out, std::ostream& log) {
  const auto seed = detail::require_seed(c);
  data::SyntheticSpec spec = c.data;
  spec.seed = seed;
  const auto ds = data::build_benchmark(spec, {c.rho, seed});
  detail::ensure_dir(out);
  data::save_features(ds, out / "dataset.csv");
  std::size_t injected = 0;
  for (const auto& s : ds.samples) injected += s.injected;
  auto m = detail::manifest("generate", c);
  m["outputs"] = json::array({"dataset.csv"});
  m["counts"] = {{"train", ds.where(data::Split::train).size()},
                 {"val", ds.where(data::Split::val).size()},
                 {"test", ds.where(data::Split::test).size()},
                 {"injected", injected}};
  detail::write_manifest(out, m);
  log << "wrote " << ds.size() << " samples (" << injected << " injected anomalies) to " << (out / "dataset.csv").string()
      << '\n';
  return kOk;
}

inline int cmd_train(const RunConfig& c, const fs::path& out, std::ostream& log) {
  const auto seed = detail::require_seed(c);
  const auto ds = data::load_features(detail::dataset_file(c.data_path));
  const auto train = ds.where(data::Split::train);
  if (train.empty()) throw DataError("dataset has no training split");
  const auto x = train.matrix();
  detail::ensure_dir(out);

  const auto init = flow::init_flow(ds.dim(), c.n_blocks, c.hidden, seed, c.clamp);
  std::ostringstream tl;
  tl << "epoch,train_nll\n";
  tl << 0 << ',' << detail::fmt6(flow::nll_loss(init, x)) << '\n';
  std::size_t epoch = 0;
  auto on_pass = [&](const refine::PlainTrainResult& r) {
    tl << ++epoch << ',' << detail::fmt6(flow::nll_loss(r.model, x)) << '\n';
  };

  auto m = detail::manifest("train", c);
  refine::PlainTrainResult res;
  try {
    res = refine::train_epochs(init, x, c.epochs, detail::plain_config(c), on_pass);
  } catch (const refine::PlainTrainDiverged& e) {
    detail::write_text(out / "train_log.csv", tl.str());
    m["status"] = "diverged";
    m["error"] = e.what();
    m["outputs"] = json::array({"train_log.csv"});
    detail::write_manifest(out, m);
    throw;
  }
  flow::save_model(res.model, out / "model.bin");
  detail::write_text(out / "train_log.csv", tl.str());
  m["status"] = "ok";
  m["updates"] = res.updates;
  m["outputs"] = json::array({"model.bin", "train_log.csv"});
  detail::write_manifest(out, m);
  log << "trained " << res.updates << " updates over " << c.epochs << " epochs; model at "
      << (out / "model.bin").string() << '\n';
  return kOk;
}

inline void write_refine_outputs(const fs::path& out, const refine::RefinementState& st, const data::Dataset& train) {
  std::ostringstream rl, rr;
  refine::write_refine_log(rl, st.log);
  detail::write_text(out / "refine_log.csv", rl.str());
  refine::write_rejection_report(rr, refine::rejection_report(st, train.truth()));
  detail::write_text(out / "rejection_report.csv", rr.str());
}

inline int cmd_refine(const RunConfig& c, const fs::path& out, std::ostream& log) {
  const auto seed = detail::require_seed(c);
  const auto ds = data::load_features(detail::dataset_file(c.data_path));
  const auto train = ds.where(data::Split::train);
  const auto val = ds.where(data::Split::val);
  if (train.empty()) throw DataError("dataset has no training split");
  if (val.empty()) throw DataError("dataset has no validation split");
  detail::ensure_dir(out);
  const auto pipe = score::Pipeline::identity(ds.dim());

  const auto init = flow::init_flow(ds.dim(), c.n_blocks, c.hidden, seed, c.clamp);
  maml::TaskSampler sampler(pipe.features(train.matrix()), c.support_size, c.query_size, seed);
  const auto meta = maml::meta_train(init, sampler, c.meta);
  {
    std::ostringstream ml;
    maml::write_meta_log(ml, meta.log);
    detail::write_text(out / "meta_log.csv", ml.str());
  }

  refine::RefinementConfig rc = c.refine;
  rc.seed = seed;
  auto m = detail::manifest("refine", c);
  refine::RefineResult res;
  try {
    res = refine::refine(train, val, meta.model, rc, c.meta, pipe);
  } catch (const refine::RefinementDiverged& e) {
    write_refine_outputs(out, e.state(), train);
    m["status"] = "diverged";
    m["error"] = e.what();
    m["outputs"] = json::array({"meta_log.csv", "refine_log.csv", "rejection_report.csv"});
    detail::write_manifest(out, m);
    throw;
  }
  flow::save_model(res.model, out / "model.bin");
  write_refine_outputs(out, res.state, train);

  std::size_t injected = 0;
  for (const auto& s : train.samples) injected += s.injected;
  m["status"] = "ok";
  m["epochs"] = res.state.epoch;
  m["updates"] = res.state.updates;
  m["converged"] = res.state.converged;
  m["exhausted"] = res.state.exhausted;
  m["injected"] = injected;
  m["deleted_good"] = res.state.deleted_good;
  m["deleted_bad"] = res.state.deleted_bad;
  m["outputs"] = json::array({"model.bin", "meta_log.csv", "refine_log.csv", "rejection_report.csv"});
  detail::write_manifest(out, m);
  log << "refined for " << res.state.epoch << " epochs; rejected " << res.state.rejected.size() << " ("
      << res.state.deleted_bad << " of " << injected << " injected anomalies)\n";
  return kOk;
}

/// The model directory's manifest names the command that produced it.
inline std::string infer_variant(const fs::path& model_path) {
  const auto mf = model_path.parent_path() / "manifest.json";
  std::ifstream f(mf);
  if (!f) return "unrefined";
  try {
    const auto j = json::parse(f);
    if (j.value("command", "") == "refine") return "refined";
  } catch (const json::exception&) {
  }
  return "unrefined";
}

inline int cmd_eval(const RunConfig& c, const fs::path& out, std::ostream& log) {
  const auto seed = detail::require_seed(c);
  const auto mpath = detail::model_file(c.model_path);
  const auto model = flow::load_model(mpath);
  const auto ds = data::load_features(detail::dataset_file(c.data_path));
  const auto split = c.split == "train" ? data::Split::train : c.split == "val" ? data::Split::val : data::Split::test;
  const auto part = ds.where(split);
  if (part.empty()) throw DataError("dataset has no '" + c.split + "' split");
  if (part.dim() != model.dim()) throw ShapeError("model dimension does not match the dataset");

  const auto train = ds.where(data::Split::train);
  std::size_t injected = 0;
  for (const auto& s : train.samples) injected += s.injected;
  const double rho = train.empty() ? 0.0 : static_cast<double>(injected) / static_cast<double>(train.size());
  const std::string variant = c.variant.empty() ? infer_variant(mpath) : c.variant;
  const auto r = metrics::evaluate(model, score::Pipeline::identity(model.dim()), part, seed, rho,
                                   variant == "refined" ? metrics::Variant::refined : metrics::Variant::unrefined);
  detail::ensure_dir(out);
  json e;
  e["auroc"] = metrics::fmt4(r.auroc);
  e["auroc_exact"] = r.auroc;
  e["n_nominal"] = r.n_nominal;
  e["n_anomalous"] = r.n_anomalous;
  e["seed"] = r.seed;
  e["rho"] = r.rho;
  e["variant"] = metrics::to_string(r.variant);
  e["split"] = c.split;
  detail::write_text(out / "eval.json", e.dump(2) + "\n");
  auto m = detail::manifest("eval", c);
  m["outputs"] = json::array({"eval.json"});
  detail::write_manifest(out, m);
  log << "AUROC " << metrics::fmt4(r.auroc) << " on " << r.n_nominal << " nominal / " << r.n_anomalous
      << " anomalous samples\n";
  return kOk;
}

inline int cmd_sweep(const RunConfig& c, const fs::path& out, std::ostream& log) {
  const auto seeds = c.resolved_seeds();
  const auto table = metrics::run_sweep(c.levels, seeds, c.sweep_config(), c.jobs);
  json extra;
  extra["seed"] = c.seed ? json(*c.seed) : json(nullptr);
  RunConfig rc = c;
  rc.seeds = seeds;
  rc.jobs = 1;  // results never depend on the thread count
  extra["run_config"] = to_json(rc);
  metrics::emit_report(table, c.sweep_config(), out, extra);
  for (double rho : table.levels) {
    log << "rho " << metrics::fmt4(rho) << ": refined " << metrics::fmt4(table.row(metrics::Variant::refined, rho).mean)
        << ", unrefined " << metrics::fmt4(table.row(metrics::Variant::unrefined, rho).mean) << '\n';
  }
  if (table.failures > 0) {
    log << table.failures << " sweep cell(s) failed; see manifest.json\n";
    return kCellFailures;
  }
  return kOk;
}

namespace detail {

inline void data_opts(CLI::App* s, Overrides& o) {
  s->add_option("--dim", o.dim, "Feature dimension");
  s->add_option("--rho", o.rho, "Contamination fraction in [0, 0.5]");
  s->add_option("--n-train", o.n_train, "Nominal training samples before contamination");
  s->add_option("--n-val", o.n_val, "Nominal validation samples");
  s->add_option("--n-test-nominal", o.n_test_nominal, "Nominal test samples");
  s->add_option("--n-test-anomalous", o.n_test_anomalous, "Anomalous test samples");
  s->add_option("--shift", o.shift, "Anomaly mean shift");
  s->add_option("--nominal-var", o.nominal_var, "Nominal component variance");
  s->add_option("--anomaly-cov-scale", o.anomaly_cov_scale, "Anomaly covariance multiplier");
}

inline void flow_opts(CLI::App* s, Overrides& o) {
  s->add_option("--blocks", o.blocks, "Coupling blocks");
  s->add_option("--hidden", o.hidden, "Hidden width of the coupling networks");
  s->add_option("--clamp", o.clamp, "Soft clamp on log-scales");
}

inline void train_opts(CLI::App* s, Overrides& o) {
  s->add_option("--epochs", o.epochs, "Training epochs");
  s->add_option("--batch-size", o.batch_size, "Minibatch size");
  s->add_option("--lr", o.lr, "Learning rate");
  s->add_option("--optimizer", o.optimizer, "sgd or adam");
}

inline void meta_opts(CLI::App* s, Overrides& o) {
  s->add_option("--alpha", o.alpha, "Inner learning rate");
  s->add_option("--beta", o.beta, "Meta learning rate");
  s->add_option("--inner-steps", o.inner_steps, "Inner adaptation steps");
  s->add_option("--meta-batch", o.meta_batch, "Tasks per meta step");
  s->add_option("--outer-steps", o.outer_steps, "Meta-training steps");
  s->add_option("--support", o.support, "Support set size");
  s->add_option("--query", o.query, "Query set size");
}

inline void refine_opts(CLI::App* s, Overrides& o) {
  s->add_option("--k", o.k, "IQR multiplier");
  s->add_option("--max-epochs", o.max_epochs, "Refinement epoch limit");
  s->add_option("--patience", o.patience, "Epochs without validation improvement before stopping");
  s->add_option("--min-delta", o.min_delta, "Minimum validation improvement");
  s->add_option("--threshold-scope", o.scope, "per-batch or per-epoch");
  s->add_option("--rejection-mode", o.rejection, "permanent or per-epoch");
  s->add_option("--val-metric", o.val_metric, "nll or auroc");
}

}  // namespace detail

/// Parse and dispatch. Returns the process exit code.
inline int run(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  CLI::App app{"Meta-learned normalizing-flow anomaly detection with iterative training-set refinement", "metarefine"};
  app.require_subcommand(1);
  app.fallthrough();
  app.set_version_flag("--version", std::string(METAREFINE_VERSION));
  Overrides o;
  app.add_option("--config", o.config, "JSON config file or a previous run's manifest.json");
  app.add_option("--seed", o.seed, "Random seed (required)");
  app.add_option("--out", o.out, "Output directory");
  app.add_option("--jobs", o.jobs, "Parallel sweep cells");
  app.add_option("--profile", o.profile, "desk or paper hyperparameter preset");

  auto* gen = app.add_subcommand("generate", "Write a contaminated synthetic benchmark");
  detail::data_opts(gen, o);

  auto* train = app.add_subcommand("train", "Train the unrefined baseline by plain NLL descent");
  train->add_option("--data", o.data, "Dataset file or directory");
  detail::flow_opts(train, o);
  detail::train_opts(train, o);

  auto* ref = app.add_subcommand("refine", "Meta-train, then iteratively refine the training set");
  ref->add_option("--data", o.data, "Dataset file or directory");
  detail::flow_opts(ref, o);
  detail::train_opts(ref, o);
  detail::meta_opts(ref, o);
  detail::refine_opts(ref, o);

  auto* ev = app.add_subcommand("eval", "Score a split and compute AUROC");
  ev->add_option("--model", o.model, "Model file or directory");
  ev->add_option("--data", o.data, "Dataset file or directory");
  ev->add_option("--split", o.split, "train, val or test");
  ev->add_option("--variant", o.variant, "refined or unrefined (default: from the model's manifest)");

  auto* sw = app.add_subcommand("sweep", "Refined vs unrefined over noise levels and seeds");
  sw->add_option("--levels", o.levels, "Noise levels")->delimiter(',');
  sw->add_option("--seeds", o.seeds, "Seeds")->delimiter(',');
  detail::data_opts(sw, o);
  detail::flow_opts(sw, o);
  detail::train_opts(sw, o);
  detail::meta_opts(sw, o);
  detail::refine_opts(sw, o);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    return kOk;
  } catch (const CLI::CallForVersion&) {
    out << METAREFINE_VERSION << '\n';
    return kOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << '\n';
    return kUsage;
  }

  try {
    const RunConfig c = resolve(o);
    const fs::path dir = o.out ? fs::path(*o.out) : fs::path("metarefine-out");
    if (gen->parsed()) return cmd_generate(c, dir, out);
    if (train->parsed()) return cmd_train(c, dir, out);
    if (ref->parsed()) return cmd_refine(c, dir, out);
    if (ev->parsed()) return cmd_eval(c, dir, out);
    return cmd_sweep(c, dir, out);
  } catch (const Error& e) {
    err << "error: " << e.what() << '\n';
    return exit_code(e.kind());
  } catch (const std::exception& e) {
    err << "internal error: " << e.what() << '\n';
    return kInternal;
  }
}

}  // namespace metarefine::cli
