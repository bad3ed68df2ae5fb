#pragma once

#include <cmath>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "metarefine/diff/matrix.hpp"
#include "metarefine/error.hpp"

namespace metarefine::diff {

struct Segment {
  std::string name;
  std::size_t offset = 0;
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::size_t size() const noexcept { return rows * cols; }
};

/// Named (offset, shape) segments addressing into one flat parameter vector.
class ParamLayout {
 public:
  const Segment& add(std::string name, std::size_t rows, std::size_t cols) {
    for (const auto& s : segments_)
      if (s.name == name) throw ConfigError("duplicate parameter segment '" + name + "'");
    segments_.push_back({std::move(name), total_, rows, cols});
    total_ += rows * cols;
    return segments_.back();
  }

  const Segment& at(const std::string& name) const {
    for (const auto& s : segments_)
      if (s.name == name) return s;
    throw ConfigError("unknown parameter segment '" + name + "'");
  }

  std::size_t total() const noexcept { return total_; }
  const std::vector<Segment>& segments() const noexcept { return segments_; }

  friend bool operator==(const ParamLayout& a, const ParamLayout& b) {
    if (a.total_ != b.total_ || a.segments_.size() != b.segments_.size()) return false;
    for (std::size_t i = 0; i < a.segments_.size(); ++i) {
      const auto &x = a.segments_[i], &y = b.segments_[i];
      if (x.name != y.name || x.offset != y.offset || x.rows != y.rows || x.cols != y.cols) return false;
    }
    return true;
  }

 private:
  std::vector<Segment> segments_;
  std::size_t total_ = 0;
};

/// Flat parameter values plus the (shared, immutable) layout describing them.
class ParamVector {
 public:
  ParamVector() : layout_(std::make_shared<const ParamLayout>()) {}
  explicit ParamVector(std::shared_ptr<const ParamLayout> layout)
      : layout_(std::move(layout)), values_(layout_->total(), 0.0) {}
  ParamVector(std::shared_ptr<const ParamLayout> layout, std::vector<double> values)
      : layout_(std::move(layout)), values_(std::move(values)) {
    if (values_.size() != layout_->total())
      throw ShapeError("parameter vector length " + std::to_string(values_.size()) + " does not match layout total " +
                       std::to_string(layout_->total()));
  }

  /// Single unnamed segment of length n; handy for surrogate objectives.
  static ParamVector flat(std::vector<double> values) {
    auto layout = std::make_shared<ParamLayout>();
    layout->add("theta", 1, values.size());
    return ParamVector(std::move(layout), std::move(values));
  }

  const ParamLayout& layout() const noexcept { return *layout_; }
  const std::shared_ptr<const ParamLayout>& layout_ptr() const noexcept { return layout_; }

  std::size_t size() const noexcept { return values_.size(); }
  double& operator[](std::size_t i) { return values_[i]; }
  double operator[](std::size_t i) const { return values_[i]; }
  std::vector<double>& values() noexcept { return values_; }
  const std::vector<double>& values() const noexcept { return values_; }

  std::span<double> segment(const std::string& name) {
    const auto& s = layout_->at(name);
    return {values_.data() + s.offset, s.size()};
  }
  std::span<const double> segment(const std::string& name) const {
    const auto& s = layout_->at(name);
    return {values_.data() + s.offset, s.size()};
  }

  Matrix segment_matrix(const std::string& name) const {
    const auto& s = layout_->at(name);
    auto v = segment(name);
    return Matrix(s.rows, s.cols, std::vector<double>(v.begin(), v.end()));
  }

  bool all_finite() const noexcept {
    for (double v : values_)
      if (!std::isfinite(v)) return false;
    return true;
  }

  /// this += scale * direction
  ParamVector& add_scaled(std::span<const double> direction, double scale) {
    if (direction.size() != values_.size()) throw ShapeError("update length does not match parameter length");
    for (std::size_t i = 0; i < values_.size(); ++i) values_[i] += scale * direction[i];
    return *this;
  }

  friend bool operator==(const ParamVector& a, const ParamVector& b) {
    return a.values_ == b.values_ && *a.layout_ == *b.layout_;
  }

 private:
  std::shared_ptr<const ParamLayout> layout_;
  std::vector<double> values_;
};

inline double l2_norm(std::span<const double> v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

/// Rescale `g` in place so its global L2 norm is at most `max_norm`.
/// max_norm <= 0 disables clipping. Returns the pre-clip norm.
inline double clip_global_norm(std::span<double> g, double max_norm) {
  const double n = l2_norm(g);
  if (max_norm > 0.0 && n > max_norm) {
    const double s = max_norm / n;
    for (double& x : g) x *= s;
  }
  return n;
}

}  // namespace metarefine::diff
