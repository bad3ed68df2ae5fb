#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <string>
#include <vector>

#include "metarefine/data/dataset.hpp"
#include "metarefine/error.hpp"
#include "metarefine/rng.hpp"

namespace metarefine::data {

/// Nominal: Gaussian mixture with isotropic covariance `nominal_var * I`.
/// Anomalous: the same mixture shifted by `shift` along every coordinate,
/// with covariance scaled by `anomaly_cov_scale`.
struct SyntheticSpec {
  std::size_t dim = 8;
  std::vector<std::vector<double>> means;  // empty -> +-e_1
  std::vector<double> weights;             // empty -> uniform
  double nominal_var = 0.5;
  double shift = 3.0;
  double anomaly_cov_scale = 2.0;
  std::size_t n_train = 256;
  std::size_t n_val = 96;
  std::size_t n_test_nominal = 100;
  std::size_t n_test_anomalous = 100;
  std::uint64_t seed = 0;

  std::vector<std::vector<double>> resolved_means() const {
    if (!means.empty()) return means;
    std::vector<double> a(dim, 0.0), b(dim, 0.0);
    a[0] = 1.0;
    b[0] = -1.0;
    return {a, b};
  }

  std::vector<double> resolved_weights() const {
    if (!weights.empty()) return weights;
    const auto k = resolved_means().size();
    return std::vector<double>(k, 1.0 / static_cast<double>(k));
  }

  /// Mixture mean.
  std::vector<double> nominal_mean() const {
    auto m = resolved_means();
    auto w = resolved_weights();
    std::vector<double> out(dim, 0.0);
    for (std::size_t k = 0; k < m.size(); ++k)
      for (std::size_t i = 0; i < dim; ++i) out[i] += w[k] * m[k][i];
    return out;
  }

  void validate() const {
    if (dim < 1) throw ConfigError("dimension must be positive");
    const auto m = resolved_means();
    const auto w = resolved_weights();
    if (m.size() != w.size() || m.empty()) throw ConfigError("mixture means and weights disagree in count");
    double ws = 0.0;
    for (double x : w) {
      if (!(x >= 0.0)) throw ConfigError("mixture weights must be non-negative");
      ws += x;
    }
    if (std::abs(ws - 1.0) > 1e-9) throw ConfigError("mixture weights must sum to 1");
    for (const auto& v : m)
      if (v.size() != dim) throw ConfigError("mixture mean has wrong dimension");
    if (!(nominal_var > 0.0)) throw ConfigError("nominal variance must be positive");
    if (!(anomaly_cov_scale > 0.0)) throw ConfigError("anomaly covariance scale must be positive");
    if (!(shift >= 0.0) || !std::isfinite(shift)) throw ConfigError("shift magnitude must be finite and non-negative");
    if (n_train == 0 || n_val == 0 || n_test_nominal == 0 || n_test_anomalous == 0)
      throw ConfigError("split counts must be positive");
  }
};

struct ContaminationSpec {
  double rho = 0.0;
  std::uint64_t seed = 0;

  void validate() const {
    if (!(rho >= 0.0 && rho <= 0.5)) throw ConfigError("rho must lie in [0, 0.5]");
  }
};

namespace detail {

inline std::string make_id(const char* prefix, std::size_t i) {
  char buf[48];
  std::snprintf(buf, sizeof buf, "%s%05zu", prefix, i);
  return buf;
}

inline std::vector<double> draw(const SyntheticSpec& s, Rng& rng, bool anomalous) {
  const auto means = s.resolved_means();
  const auto w = s.resolved_weights();
  double u = rng.uniform(), acc = 0.0;
  std::size_t k = 0;
  for (; k + 1 < w.size(); ++k) {
    acc += w[k];
    if (u < acc) break;
  }
  const double sd = std::sqrt(s.nominal_var * (anomalous ? s.anomaly_cov_scale : 1.0));
  std::vector<double> x(s.dim);
  for (std::size_t i = 0; i < s.dim; ++i) x[i] = means[k][i] + (anomalous ? s.shift : 0.0) + sd * rng.normal();
  return x;
}

// Independent stream per dataset part so that changing one count never
// perturbs the others.
inline Rng stream(std::uint64_t seed, std::uint64_t part) { return Rng(Rng::mix(seed ^ (0x5eed0000ULL + part))); }

}  // namespace detail

/// Clean nominal train/val splits and a balanced test split.
inline Dataset generate(const SyntheticSpec& spec) {
  spec.validate();
  Dataset ds;
  auto emit = [&](std::uint64_t part, std::size_t n, const char* prefix, Label label, Split split) {
    Rng rng = detail::stream(spec.seed, part);
    for (std::size_t i = 0; i < n; ++i)
      ds.samples.push_back({detail::make_id(prefix, i), detail::draw(spec, rng, label == Label::anomalous), label, split,
                            false});
  };
  emit(1, spec.n_train, "trn-", Label::nominal, Split::train);
  emit(2, spec.n_val, "val-", Label::nominal, Split::val);
  emit(3, spec.n_test_nominal, "tst-n-", Label::nominal, Split::test);
  emit(4, spec.n_test_anomalous, "tst-a-", Label::anomalous, Split::test);
  return ds;
}

/// Anomalies available for contamination (not yet part of any dataset).
inline std::vector<Sample> generate_anomaly_pool(const SyntheticSpec& spec, std::size_t n) {
  spec.validate();
  Rng rng = detail::stream(spec.seed, 5);
  std::vector<Sample> pool;
  pool.reserve(n);
  for (std::size_t i = 0; i < n; ++i)
    pool.push_back({detail::make_id("pool-", i), detail::draw(spec, rng, true), Label::anomalous, Split::train, false});
  return pool;
}

/// Number of anomalies that makes them a fraction rho of the final set.
inline std::size_t injection_count(double rho, std::size_t n_nominal) {
  if (rho <= 0.0) return 0;
  return static_cast<std::size_t>(std::llround(rho * static_cast<double>(n_nominal) / (1.0 - rho)));
}

inline Dataset contaminate(const std::vector<Sample>& train_nominal, const std::vector<Sample>& anomaly_pool,
                           const ContaminationSpec& spec) {
  spec.validate();
  const std::size_t need = injection_count(spec.rho, train_nominal.size());
  if (need > anomaly_pool.size())
    throw DataError("contamination needs " + std::to_string(need) + " anomalies, pool has " +
                    std::to_string(anomaly_pool.size()));
  Dataset out;
  out.samples = train_nominal;
  std::vector<std::size_t> idx(anomaly_pool.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  Rng rng(Rng::mix(spec.seed ^ 0xc0ffeeULL));
  for (std::size_t i = 0; i < need; ++i) std::swap(idx[i], idx[i + rng.index(idx.size() - i)]);
  for (std::size_t i = 0; i < need; ++i) {
    Sample s = anomaly_pool[idx[i]];
    s.label = Label::anomalous;
    s.split = Split::train;
    s.injected = true;
    out.samples.push_back(std::move(s));
  }
  return out;
}

/// generate + contaminate: contaminated train, clean val, balanced test.
inline Dataset build_benchmark(const SyntheticSpec& spec, const ContaminationSpec& cspec) {
  cspec.validate();
  Dataset base = generate(spec);
  const std::size_t need = injection_count(cspec.rho, spec.n_train);
  auto pool = generate_anomaly_pool(spec, std::max<std::size_t>(need, spec.n_train));
  Dataset train = contaminate(base.where(Split::train).samples, pool, cspec);
  Dataset out = train;
  out.append(base.where(Split::val));
  out.append(base.where(Split::test));
  return out;
}

struct SplitFractions {
  double train = 1.0, val = 0.0, test = 0.0;
};

struct SplitResult {
  Dataset train, val, test;
};

/// Seeded disjoint partition. With `balance_test` the test split takes equal
/// numbers of nominal and anomalous samples.
inline SplitResult split(const Dataset& ds, SplitFractions f, std::uint64_t seed, bool balance_test = false) {
  if (f.train < 0 || f.val < 0 || f.test < 0 || f.train + f.val + f.test > 1.0 + 1e-12 ||
      f.train + f.val + f.test <= 0.0)
    throw UsageError("split fractions must be non-negative and sum to at most 1");
  Rng rng(Rng::mix(seed ^ 0x5b117ULL));
  std::vector<std::size_t> order(ds.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  rng.shuffle(order);

  const auto n = static_cast<double>(ds.size());
  const auto n_test = static_cast<std::size_t>(std::llround(f.test * n));
  std::vector<bool> taken(ds.size(), false);
  SplitResult r;
  auto put = [&](Dataset& d, std::size_t i, Split s) {
    Sample x = ds.samples[i];
    x.split = s;
    d.samples.push_back(std::move(x));
    taken[i] = true;
  };

  if (balance_test && n_test > 0) {
    const std::size_t per = n_test / 2;
    std::size_t got_n = 0, got_a = 0;
    for (std::size_t i : order) {
      const auto l = ds.samples[i].label;
      if (l == Label::nominal && got_n < per) {
        put(r.test, i, Split::test);
        ++got_n;
      } else if (l == Label::anomalous && got_a < per) {
        put(r.test, i, Split::test);
        ++got_a;
      }
    }
    if (got_n < per || got_a < per)
      throw DataError("not enough samples of each class for a balanced test split of " + std::to_string(2 * per));
  } else {
    std::size_t k = 0;
    for (std::size_t i : order) {
      if (k == n_test) break;
      put(r.test, i, Split::test);
      ++k;
    }
  }

  const auto n_train = static_cast<std::size_t>(std::llround(f.train * n));
  const auto n_val = static_cast<std::size_t>(std::llround(f.val * n));
  for (std::size_t i : order) {
    if (taken[i]) continue;
    if (r.train.size() < n_train)
      put(r.train, i, Split::train);
    else if (r.val.size() < n_val)
      put(r.val, i, Split::val);
  }
  return r;
}

}  // namespace metarefine::data
