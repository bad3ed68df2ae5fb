#pragma once

#include <cmath>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "metarefine/diff/matrix.hpp"
#include "metarefine/error.hpp"

namespace metarefine::data {

enum class Label { nominal, anomalous };
enum class Split { train, val, test };

inline const char* to_string(Label l) { return l == Label::nominal ? "nominal" : "anomalous"; }
inline const char* to_string(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::val: return "val";
    case Split::test: return "test";
  }
  return "?";
}

struct Sample {
  std::string id;
  std::vector<double> features;
  Label label = Label::nominal;
  Split split = Split::train;
  bool injected = false;  // placed into the training set as contamination

  friend bool operator==(const Sample&, const Sample&) = default;
};

inline bool valid_id(const std::string& id) {
  if (id.empty()) return false;
  for (char c : id) {
    const bool ok = (c >= 'A' && c <= 'Z') || (c >= 'a' && c <= 'z') || (c >= '0' && c <= '9') || c == '_' || c == '-';
    if (!ok) return false;
  }
  return true;
}

struct Dataset {
  std::vector<Sample> samples;

  std::size_t size() const noexcept { return samples.size(); }
  bool empty() const noexcept { return samples.empty(); }
  std::size_t dim() const { return samples.empty() ? 0 : samples.front().features.size(); }

  /// Unique well-formed ids, finite features, one feature dimension.
  void validate() const {
    std::unordered_set<std::string> seen;
    const std::size_t d = dim();
    for (const auto& s : samples) {
      if (!valid_id(s.id)) throw DataError("invalid sample id '" + s.id + "'");
      if (!seen.insert(s.id).second) throw DataError("duplicate sample id '" + s.id + "'");
      if (s.features.size() != d || d == 0) throw DataError("sample '" + s.id + "' has inconsistent dimension");
      for (double v : s.features)
        if (!std::isfinite(v)) throw DataError("sample '" + s.id + "' has a non-finite feature");
    }
  }

  Dataset where(Split s) const {
    Dataset out;
    for (const auto& x : samples)
      if (x.split == s) out.samples.push_back(x);
    return out;
  }

  Dataset where(Label l) const {
    Dataset out;
    for (const auto& x : samples)
      if (x.label == l) out.samples.push_back(x);
    return out;
  }

  std::size_t count(Label l) const {
    std::size_t n = 0;
    for (const auto& x : samples) n += x.label == l;
    return n;
  }

  diff::Matrix matrix() const {
    diff::Matrix m(samples.size(), dim());
    for (std::size_t r = 0; r < samples.size(); ++r)
      std::copy(samples[r].features.begin(), samples[r].features.end(), m.row_span(r).begin());
    return m;
  }

  std::vector<Label> labels() const {
    std::vector<Label> out;
    out.reserve(samples.size());
    for (const auto& s : samples) out.push_back(s.label);
    return out;
  }

  std::unordered_map<std::string, Label> truth() const {
    std::unordered_map<std::string, Label> out;
    for (const auto& s : samples) out.emplace(s.id, s.label);
    return out;
  }

  void append(const Dataset& o) { samples.insert(samples.end(), o.samples.begin(), o.samples.end()); }

  friend bool operator==(const Dataset&, const Dataset&) = default;
};

}  // namespace metarefine::data
