#pragma once

#include <charconv>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_set>
#include <vector>

#include "metarefine/data/dataset.hpp"
#include "metarefine/error.hpp"

namespace metarefine::data {

// Feature file, version 1: UTF-8, comma-delimited, no quoting.
//   id,label,split,f0,...,f{d-1}
//   trn-00000,nominal,train,0.12,...
// label in {nominal, anomalous}; split in {train, val, test}; ids match
// [A-Za-z0-9_-]+. A training-split anomalous row is an injected sample.

namespace detail {

inline std::vector<std::string_view> split_commas(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  for (;;) {
    const auto pos = line.find(',', start);
    if (pos == std::string_view::npos) {
      out.push_back(line.substr(start));
      return out;
    }
    out.push_back(line.substr(start, pos - start));
    start = pos + 1;
  }
}

inline std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace detail

inline void write_features(std::ostream& os, const Dataset& ds) {
  os << "id,label,split";
  for (std::size_t i = 0; i < ds.dim(); ++i) os << ",f" << i;
  os << '\n';
  for (const auto& s : ds.samples) {
    os << s.id << ',' << to_string(s.label) << ',' << to_string(s.split);
    for (double v : s.features) os << ',' << detail::format_double(v);
    os << '\n';
  }
}

inline void save_features(const Dataset& ds, const std::filesystem::path& path) {
  ds.validate();
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw IoError("cannot open '" + path.string() + "' for writing");
  write_features(f, ds);
  if (!f) throw IoError("failed writing '" + path.string() + "'");
}

inline Dataset read_features(std::istream& is) {
  std::string line;
  std::size_t lineno = 1;
  if (!std::getline(is, line)) throw ParseError(1, "missing header");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  auto head = detail::split_commas(line);
  if (head.size() < 4 || head[0] != "id" || head[1] != "label" || head[2] != "split")
    throw ParseError(1, "header must start with id,label,split followed by feature columns");
  const std::size_t dim = head.size() - 3;
  for (std::size_t i = 0; i < dim; ++i)
    if (head[3 + i] != "f" + std::to_string(i)) throw ParseError(1, "expected feature column f" + std::to_string(i));

  Dataset ds;
  std::unordered_set<std::string> seen;
  while (std::getline(is, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    auto cols = detail::split_commas(line);
    if (cols.size() != dim + 3)
      throw ParseError(lineno, "expected " + std::to_string(dim + 3) + " fields, found " + std::to_string(cols.size()));
    Sample s;
    s.id = std::string(cols[0]);
    if (!valid_id(s.id)) throw ParseError(lineno, "invalid id '" + s.id + "'");
    if (cols[1] == "nominal")
      s.label = Label::nominal;
    else if (cols[1] == "anomalous")
      s.label = Label::anomalous;
    else
      throw ParseError(lineno, "unknown label '" + std::string(cols[1]) + "'");
    if (cols[2] == "train")
      s.split = Split::train;
    else if (cols[2] == "val")
      s.split = Split::val;
    else if (cols[2] == "test")
      s.split = Split::test;
    else
      throw ParseError(lineno, "unknown split '" + std::string(cols[2]) + "'");
    s.features.resize(dim);
    for (std::size_t i = 0; i < dim; ++i) {
      auto f = cols[3 + i];
      double v = 0.0;
      auto [ptr, ec] = std::from_chars(f.data(), f.data() + f.size(), v);
      if (ec != std::errc() || ptr != f.data() + f.size())
        throw ParseError(lineno, "malformed number '" + std::string(f) + "' in column f" + std::to_string(i));
      if (!std::isfinite(v)) throw ParseError(lineno, "non-finite value in column f" + std::to_string(i));
      s.features[i] = v;
    }
    s.injected = s.label == Label::anomalous && s.split == Split::train;
    if (!seen.insert(s.id).second) throw DataError("duplicate id '" + s.id + "' at line " + std::to_string(lineno));
    ds.samples.push_back(std::move(s));
  }
  return ds;
}

inline Dataset load_features(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot open '" + path.string() + "'");
  return read_features(f);
}

}  // namespace metarefine::data
