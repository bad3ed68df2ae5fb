#pragma once

#include <algorithm>
#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "metarefine/error.hpp"

namespace metarefine::refine {

struct Quartiles {
  double q1 = 0.0;
  double q3 = 0.0;
  double iqr = 0.0;
};

struct ThresholdStats {
  double q1 = 0.0;
  double q3 = 0.0;
  double iqr = 0.0;
  double k = 0.0;
  double threshold = 0.0;  // q3 + k * iqr
};

/// Linear-interpolation sample quantile of sorted data at position p * (n - 1).
inline double sorted_quantile(std::span<const double> sorted, double p) {
  const double pos = p * static_cast<double>(sorted.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return sorted[lo] + frac * (sorted[hi] - sorted[lo]);
}

inline Quartiles compute_quantiles(std::span<const double> scores) {
  if (scores.empty()) throw UsageError("quantiles of an empty score list");
  for (std::size_t i = 0; i < scores.size(); ++i)
    if (!std::isfinite(scores[i])) throw NumericError("non-finite score at position " + std::to_string(i));
  std::vector<double> s(scores.begin(), scores.end());
  std::sort(s.begin(), s.end());
  Quartiles q;
  q.q1 = sorted_quantile(s, 0.25);
  q.q3 = sorted_quantile(s, 0.75);
  q.iqr = std::max(0.0, q.q3 - q.q1);
  return q;
}

inline ThresholdStats dynamic_threshold(std::span<const double> scores, double k) {
  if (!(k >= 0.0)) throw UsageError("threshold scaling factor k must be non-negative");
  const auto q = compute_quantiles(scores);
  return {q.q1, q.q3, q.iqr, k, q.q3 + k * q.iqr};
}

template <class Id>
struct Classification {
  std::vector<Id> retained;
  std::vector<Id> rejected;
};

/// Reject ids whose score is strictly above the threshold.
template <class Id>
Classification<Id> classify_batch(const std::vector<std::pair<Id, double>>& scores, const ThresholdStats& stats) {
  if (!std::isfinite(stats.threshold)) throw NumericError("non-finite threshold");
  Classification<Id> c;
  for (const auto& [id, s] : scores) (s > stats.threshold ? c.rejected : c.retained).push_back(id);
  return c;
}

}  // namespace metarefine::refine
