#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <memory>
#include <string>

#include "metarefine/diff/matrix.hpp"
#include "metarefine/diff/params.hpp"
#include "metarefine/diff/tape.hpp"
#include "metarefine/rng.hpp"

namespace metarefine::diff {

/// A differentiable program: a parameter layout, an input arity (columns of
/// the input matrix) and a body that records its computation on a tape.
struct Program {
  std::shared_ptr<const ParamLayout> layout;
  std::size_t input_dim = 0;
  std::function<Var(Tape&, Var params, Var input)> body;
};

struct Evaluation {
  Matrix output;
  Tape tape;
};

inline Evaluation forward_eval(const Program& f, const ParamVector& params, const Matrix& input) {
  if (input.cols() != f.input_dim)
    throw ShapeError("program expects input arity " + std::to_string(f.input_dim) + ", got " +
                     std::to_string(input.cols()));
  if (!(params.layout() == *f.layout)) throw ShapeError("parameter layout does not match program declaration");
  Evaluation ev;
  Var x = ev.tape.input(input);
  Var p = ev.tape.params(params);
  Var out = f.body(ev.tape, p, x);
  ev.tape.set_output(out);
  ev.output = ev.tape.value(out);
  return ev;
}

inline GradResult backward(const Tape& tape, const Matrix& seed) { return tape.backward(seed); }

/// Loss (sum of outputs) and its gradient with respect to the parameters.
inline GradResult value_and_grad(const Program& f, const ParamVector& params, const Matrix& input) {
  auto ev = forward_eval(f, params, input);
  return ev.tape.backward(Matrix(ev.output.rows(), ev.output.cols(), 1.0));
}

inline double evaluate_loss(const Program& f, const ParamVector& params, const Matrix& input) {
  auto ev = forward_eval(f, params, input);
  double s = 0.0;
  for (double v : ev.output.data()) s += v;
  return s;
}

/// Worst per-coordinate relative error between `analytic` and central
/// differences of the summed program output.
inline double grad_check_against(const Program& f, const ParamVector& params, const Matrix& input,
                                 std::span<const double> analytic, double step) {
  if (!(step > 0.0)) throw UsageError("grad_check step must be positive");
  if (analytic.size() != params.size()) throw ShapeError("gradient length does not match parameter length");
  ParamVector probe = params;
  double worst = 0.0;
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double orig = probe[i];
    probe[i] = orig + step;
    const double up = evaluate_loss(f, probe, input);
    probe[i] = orig - step;
    const double down = evaluate_loss(f, probe, input);
    probe[i] = orig;
    if (!std::isfinite(up) || !std::isfinite(down))
      throw NumericError("non-finite loss at perturbed coordinate " + std::to_string(i));
    const double numeric = (up - down) / (2.0 * step);
    const double denom = std::max({std::abs(numeric), std::abs(analytic[i]), 1e-8});
    worst = std::max(worst, std::abs(numeric - analytic[i]) / denom);
  }
  return worst;
}

inline double grad_check(const Program& f, const ParamVector& params, const Matrix& input, double step) {
  if (!(step > 0.0)) throw UsageError("grad_check step must be positive");
  auto g = value_and_grad(f, params, input);
  return grad_check_against(f, params, input, g.gradient, step);
}

/// Tanh multilayer perceptron over row-batched inputs. `widths` lists layer
/// sizes including input and output; the last layer is linear.
inline Program make_mlp(const std::vector<std::size_t>& widths, double output_scale = 1.0) {
  if (widths.size() < 2) throw ConfigError("an MLP needs at least input and output widths");
  auto layout = std::make_shared<ParamLayout>();
  for (std::size_t l = 0; l + 1 < widths.size(); ++l) {
    layout->add("W" + std::to_string(l), widths[l], widths[l + 1]);
    layout->add("b" + std::to_string(l), 1, widths[l + 1]);
  }
  Program p;
  p.input_dim = widths.front();
  p.layout = layout;
  const std::size_t n_layers = widths.size() - 1;
  p.body = [layout, n_layers, output_scale](Tape& t, Var params, Var x) {
    Var h = x;
    for (std::size_t l = 0; l < n_layers; ++l) {
      Var w = t.segment(params, layout->at("W" + std::to_string(l)));
      Var b = t.segment(params, layout->at("b" + std::to_string(l)));
      h = t.affine(h, w, b);
      if (l + 1 < n_layers) h = t.tanh(h);
    }
    return output_scale == 1.0 ? h : t.scale(h, output_scale);
  };
  return p;
}

/// Fill a parameter vector with uniform(-scale, scale) draws.
inline ParamVector random_params(std::shared_ptr<const ParamLayout> layout, Rng& rng, double scale = 1.0) {
  ParamVector p(std::move(layout));
  for (auto& v : p.values()) v = rng.uniform(-scale, scale);
  return p;
}

}  // namespace metarefine::diff
