#pragma once

#include <algorithm>
#include <numeric>
#include <span>
#include <vector>

#include "metarefine/data/dataset.hpp"
#include "metarefine/error.hpp"

namespace metarefine::metrics {

/// Mann-Whitney AUROC with midranks: P(anomalous > nominal) + P(tie) / 2.
inline double auroc(std::span<const double> scores, std::span<const data::Label> labels) {
  if (scores.size() != labels.size()) throw UsageError("auroc: scores and labels differ in length");
  const std::size_t n = scores.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });

  // Twice the midrank keeps tie groups in exact integer arithmetic.
  double rank_sum_x2 = 0.0;
  std::size_t n_anom = 0;
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i + 1;
    while (j < n && scores[order[j]] == scores[order[i]]) ++j;
    const double midrank_x2 = static_cast<double>(i + 1 + j);  // (i+1) + j = 2 * mean rank of [i+1, j]
    for (std::size_t k = i; k < j; ++k)
      if (labels[order[k]] == data::Label::anomalous) {
        rank_sum_x2 += midrank_x2;
        ++n_anom;
      }
    i = j;
  }
  const std::size_t n_nom = n - n_anom;
  if (n_anom == 0 || n_nom == 0) throw UsageError("auroc needs both nominal and anomalous samples");
  const double na = static_cast<double>(n_anom), nn = static_cast<double>(n_nom);
  const double u = rank_sum_x2 / 2.0 - na * (na + 1.0) / 2.0;
  return u / (na * nn);
}

inline double auroc(const std::vector<double>& scores, const std::vector<data::Label>& labels) {
  return auroc(std::span<const double>(scores), std::span<const data::Label>(labels));
}

}  // namespace metarefine::metrics
