#pragma once

#include <cmath>
#include <memory>
#include <numbers>
#include <string>
#include <vector>

#include "metarefine/diff/matrix.hpp"
#include "metarefine/diff/params.hpp"
#include "metarefine/diff/program.hpp"
#include "metarefine/diff/tape.hpp"
#include "metarefine/error.hpp"
#include "metarefine/rng.hpp"

namespace metarefine::flow {

using diff::GradResult;
using diff::Matrix;
using diff::ParamLayout;
using diff::ParamVector;

/// Architecture of an affine-coupling flow.
struct FlowArch {
  std::size_t dim = 0;
  std::size_t n_blocks = 4;
  std::size_t hidden = 64;
  double clamp = 2.0;

  friend bool operator==(const FlowArch&, const FlowArch&) = default;
};

/// Static description of one coupling block. Coordinates [trans_begin,
/// trans_begin + trans_count) are scaled and shifted by functions of the
/// conditioner coordinates; the rest pass through unchanged.
struct CouplingBlock {
  std::size_t index = 0;
  std::size_t trans_begin = 0, trans_count = 0;
  std::size_t cond_begin = 0, cond_count = 0;
  double clamp = 2.0;

  /// mask[i] is true for transformed coordinates.
  std::vector<bool> mask(std::size_t dim) const {
    std::vector<bool> m(dim, false);
    for (std::size_t i = 0; i < trans_count; ++i) m[trans_begin + i] = true;
    return m;
  }
  std::string prefix() const { return "b" + std::to_string(index) + "."; }
};

/// Even blocks transform the first ceil(d/2) coordinates, odd blocks the
/// remaining floor(d/2). For d = 1 the odd blocks are identities.
inline CouplingBlock coupling_block(const FlowArch& arch, std::size_t i) {
  const std::size_t first = (arch.dim + 1) / 2;
  CouplingBlock b;
  b.index = i;
  b.clamp = arch.clamp;
  if (i % 2 == 0) {
    b.trans_begin = 0;
    b.trans_count = first;
    b.cond_begin = first;
    b.cond_count = arch.dim - first;
  } else {
    b.trans_begin = first;
    b.trans_count = arch.dim - first;
    b.cond_begin = 0;
    b.cond_count = first;
  }
  return b;
}

inline void validate_arch(const FlowArch& arch) {
  if (arch.dim < 1) throw ConfigError("flow dimension must be at least 1");
  if (arch.n_blocks < 1) throw ConfigError("flow needs at least one coupling block");
  if (arch.hidden < 1) throw ConfigError("hidden width must be positive");
  if (!(arch.clamp > 0.0) || !std::isfinite(arch.clamp)) throw ConfigError("clamp must be a positive finite value");
}

inline std::shared_ptr<const ParamLayout> make_layout(const FlowArch& arch) {
  validate_arch(arch);
  auto layout = std::make_shared<ParamLayout>();
  for (std::size_t i = 0; i < arch.n_blocks; ++i) {
    const auto b = coupling_block(arch, i);
    for (const char* net : {"s", "t"}) {
      const std::string p = b.prefix() + net;
      layout->add(p + ".W0", b.cond_count, arch.hidden);
      layout->add(p + ".b0", 1, arch.hidden);
      layout->add(p + ".W1", arch.hidden, b.trans_count);
      layout->add(p + ".b1", 1, b.trans_count);
    }
  }
  return layout;
}

struct FlowModel {
  FlowArch arch;
  ParamVector params;

  std::size_t dim() const noexcept { return arch.dim; }
  std::vector<CouplingBlock> blocks() const {
    std::vector<CouplingBlock> out;
    for (std::size_t i = 0; i < arch.n_blocks; ++i) out.push_back(coupling_block(arch, i));
    return out;
  }

  friend bool operator==(const FlowModel&, const FlowModel&) = default;
};

/// Hidden layers use uniform(+-1/sqrt(fan_in)); the output layer of every
/// scale and translate network starts at zero, so the fresh flow is the identity.
inline FlowModel init_flow(std::size_t dim, std::size_t n_blocks, std::size_t hidden, std::uint64_t seed,
                           double clamp = 2.0) {
  FlowArch arch{dim, n_blocks, hidden, clamp};
  FlowModel m{arch, ParamVector(make_layout(arch))};
  Rng rng(seed);
  for (std::size_t i = 0; i < n_blocks; ++i) {
    const auto b = coupling_block(arch, i);
    const double bound = 1.0 / std::sqrt(static_cast<double>(std::max<std::size_t>(b.cond_count, 1)));
    for (const char* net : {"s", "t"}) {
      const std::string p = b.prefix() + net;
      for (double& v : m.params.segment(p + ".W0")) v = rng.uniform(-bound, bound);
      for (double& v : m.params.segment(p + ".b0")) v = rng.uniform(-bound, bound);
    }
  }
  return m;
}

namespace detail {

inline diff::Var conditioner(diff::Tape& t, const ParamLayout& layout, diff::Var params, diff::Var cond,
                             const std::string& net) {
  diff::Var w0 = t.segment(params, layout.at(net + ".W0"));
  diff::Var b0 = t.segment(params, layout.at(net + ".b0"));
  diff::Var w1 = t.segment(params, layout.at(net + ".W1"));
  diff::Var b1 = t.segment(params, layout.at(net + ".b1"));
  diff::Var h = t.tanh(t.affine(cond, w0, b0));
  return t.affine(h, w1, b1);
}

}  // namespace detail

struct FlowVars {
  diff::Var z;        // n x d
  diff::Var log_det;  // n x 1
};

/// Record one coupling block. Returns the block output and its n x 1 log-det.
inline FlowVars record_block(diff::Tape& t, const FlowArch& arch, const ParamLayout& layout, diff::Var params,
                             diff::Var x, const CouplingBlock& b) {
  const std::size_t n = t.value(x).rows();
  if (b.trans_count == 0) return {x, t.constant(Matrix(n, 1))};
  diff::Var xa = t.slice_cols(x, b.trans_begin, b.trans_count);
  diff::Var xb = t.slice_cols(x, b.cond_begin, b.cond_count);
  diff::Var s_raw = detail::conditioner(t, layout, params, xb, b.prefix() + "s");
  diff::Var shift = detail::conditioner(t, layout, params, xb, b.prefix() + "t");
  // soft clamp: clamp * (2/pi) * atan(s / clamp)
  diff::Var s = t.scale(t.atan(t.scale(s_raw, 1.0 / arch.clamp)), arch.clamp * 2.0 / std::numbers::pi);
  diff::Var ya = t.add(t.mul(xa, t.exp(s)), shift);
  diff::Var z = b.trans_begin == 0 ? t.concat_cols(ya, xb) : t.concat_cols(xb, ya);
  return {z, t.row_sum(s)};
}

/// Record the whole flow; log-dets accumulate over blocks.
inline FlowVars record_flow(diff::Tape& t, const FlowArch& arch, const ParamLayout& layout, diff::Var params,
                            diff::Var x) {
  FlowVars cur{x, {}};
  for (std::size_t i = 0; i < arch.n_blocks; ++i) {
    FlowVars next;
    try {
      next = record_block(t, arch, layout, params, cur.z, coupling_block(arch, i));
    } catch (const NumericError& e) {
      throw NumericError("coupling block " + std::to_string(i) + ": " + e.what());
    }
    cur.z = next.z;
    cur.log_det = cur.log_det.valid() ? t.add(cur.log_det, next.log_det) : next.log_det;
  }
  return cur;
}

inline double log_normal_const(std::size_t dim) {
  return -0.5 * static_cast<double>(dim) * std::log(2.0 * std::numbers::pi);
}

/// Per-sample negative log-likelihood, n x 1.
inline diff::Var record_nll(diff::Tape& t, const FlowArch& arch, const ParamLayout& layout, diff::Var params,
                            diff::Var x) {
  auto fv = record_flow(t, arch, layout, params, x);
  diff::Var half_sq = t.scale(t.row_sum(t.square(fv.z)), 0.5);
  // -log p = 0.5|z|^2 - log_norm_const - log_det
  return t.add_scalar(t.sub(half_sq, fv.log_det), -log_normal_const(arch.dim));
}

/// Differentiable program: mean negative log-likelihood of a row batch.
inline diff::Program nll_program(const FlowArch& arch) {
  auto layout = make_layout(arch);
  diff::Program p;
  p.layout = layout;
  p.input_dim = arch.dim;
  p.body = [arch, layout](diff::Tape& t, diff::Var params, diff::Var x) {
    return t.mean(record_nll(t, arch, *layout, params, x));
  };
  return p;
}

/// Differentiable program: per-sample flow output z (n x d).
inline diff::Program forward_program(const FlowArch& arch) {
  auto layout = make_layout(arch);
  diff::Program p;
  p.layout = layout;
  p.input_dim = arch.dim;
  p.body = [arch, layout](diff::Tape& t, diff::Var params, diff::Var x) {
    return record_flow(t, arch, *layout, params, x).z;
  };
  return p;
}

struct ForwardResult {
  std::vector<double> z;
  double log_det = 0.0;
};

struct BatchForward {
  Matrix z;
  std::vector<double> log_det;
};

inline void check_input(const FlowModel& m, const Matrix& x) {
  if (x.cols() != m.dim())
    throw ShapeError("flow of dimension " + std::to_string(m.dim()) + " given " + std::to_string(x.cols()) +
                     " features");
  if (!x.all_finite()) throw NumericError("non-finite flow input");
}

inline BatchForward flow_forward_batch(const FlowModel& m, const Matrix& x) {
  check_input(m, x);
  diff::Tape t;
  diff::Var xv = t.input(x);
  diff::Var p = t.params(m.params);
  auto fv = record_flow(t, m.arch, m.params.layout(), p, xv);
  return {t.value(fv.z), t.value(fv.log_det).data()};
}

inline ForwardResult flow_forward(const FlowModel& m, std::span<const double> x) {
  auto r = flow_forward_batch(m, Matrix::row(x));
  return {r.z.row_vector(0), r.log_det[0]};
}

namespace detail {

inline std::vector<double> mlp_eval(const ParamVector& p, const std::string& net, std::span<const double> in) {
  const auto& l = p.layout();
  const auto& w0 = l.at(net + ".W0");
  const auto& w1 = l.at(net + ".W1");
  auto W0 = p.segment(net + ".W0");
  auto B0 = p.segment(net + ".b0");
  auto W1 = p.segment(net + ".W1");
  auto B1 = p.segment(net + ".b1");
  std::vector<double> h(w0.cols);
  for (std::size_t j = 0; j < w0.cols; ++j) {
    double s = B0[j];
    for (std::size_t i = 0; i < w0.rows; ++i) s += in[i] * W0[i * w0.cols + j];
    h[j] = std::tanh(s);
  }
  std::vector<double> out(w1.cols);
  for (std::size_t j = 0; j < w1.cols; ++j) {
    double s = B1[j];
    for (std::size_t i = 0; i < w1.rows; ++i) s += h[i] * W1[i * w1.cols + j];
    out[j] = s;
  }
  return out;
}

}  // namespace detail

/// Analytic inverse, evaluated without a tape (blocks in reverse order).
inline std::vector<double> flow_inverse(const FlowModel& m, std::span<const double> z) {
  if (z.size() != m.dim()) throw ShapeError("flow_inverse dimension mismatch");
  std::vector<double> x(z.begin(), z.end());
  for (double v : x)
    if (!std::isfinite(v)) throw NumericError("non-finite flow_inverse input");
  for (std::size_t k = m.arch.n_blocks; k-- > 0;) {
    const auto b = coupling_block(m.arch, k);
    if (b.trans_count == 0) continue;
    std::span<const double> cond(x.data() + b.cond_begin, b.cond_count);
    auto s_raw = detail::mlp_eval(m.params, b.prefix() + "s", cond);
    auto shift = detail::mlp_eval(m.params, b.prefix() + "t", cond);
    for (std::size_t i = 0; i < b.trans_count; ++i) {
      const double s = m.arch.clamp * 2.0 / std::numbers::pi * std::atan(s_raw[i] / m.arch.clamp);
      double& v = x[b.trans_begin + i];
      v = (v - shift[i]) * std::exp(-s);
      if (!std::isfinite(v)) throw NumericError("coupling block " + std::to_string(k) + ": non-finite inverse");
    }
  }
  return x;
}

/// log N(z; 0, I) + log|det dz/dx| per row.
inline std::vector<double> log_prob_batch(const FlowModel& m, const Matrix& x) {
  auto r = flow_forward_batch(m, x);
  std::vector<double> out(x.rows());
  const double c = log_normal_const(m.dim());
  for (std::size_t i = 0; i < x.rows(); ++i) {
    double sq = 0.0;
    for (double v : r.z.row_span(i)) sq += v * v;
    out[i] = c - 0.5 * sq + r.log_det[i];
  }
  return out;
}

inline double log_prob(const FlowModel& m, std::span<const double> x) { return log_prob_batch(m, Matrix::row(x))[0]; }

inline double nll_loss(const FlowModel& m, const Matrix& batch) {
  if (batch.rows() == 0) throw UsageError("nll_loss of an empty batch");
  auto lp = log_prob_batch(m, batch);
  double s = 0.0;
  for (double v : lp) s -= v;
  return s / static_cast<double>(lp.size());
}

inline double nll_loss(const FlowModel& m, const std::vector<std::vector<double>>& batch) {
  if (batch.empty()) throw UsageError("nll_loss of an empty batch");
  return nll_loss(m, Matrix::from_rows(batch));
}

/// Mean NLL and its parameter gradient under `params` (same architecture).
inline GradResult nll_value_and_grad(const FlowArch& arch, const ParamVector& params, const Matrix& batch) {
  if (batch.rows() == 0) throw UsageError("nll gradient of an empty batch");
  diff::Tape t;
  diff::Var x = t.input(batch);
  diff::Var p = t.params(params);
  diff::Var loss = t.mean(record_nll(t, arch, params.layout(), p, x));
  t.set_output(loss);
  return t.backward(Matrix::scalar(1.0));
}

/// MAML objective over flow parameters; batches are n x d matrices.
class FlowObjective {
 public:
  using batch_type = Matrix;
  explicit FlowObjective(FlowArch arch) : arch_(arch) {}

  GradResult value_and_grad(const ParamVector& theta, const Matrix& batch) const {
    return nll_value_and_grad(arch_, theta, batch);
  }
  double loss(const ParamVector& theta, const Matrix& batch) const {
    return nll_loss(FlowModel{arch_, theta}, batch);
  }
  const FlowArch& arch() const noexcept { return arch_; }

 private:
  FlowArch arch_;
};

}  // namespace metarefine::flow
