#pragma once

#include <array>
#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "metarefine/diff/matrix.hpp"
#include "metarefine/diff/params.hpp"
#include "metarefine/error.hpp"

namespace metarefine::diff {

enum class Op {
  input,
  params,
  constant,
  segment,
  add,
  sub,
  mul,
  matmul,
  affine,
  add_row,
  tanh,
  exp,
  log,
  atan,
  scale,
  add_scalar,
  square,
  sum,
  mean,
  row_sum,
  slice_cols,
  concat_cols,
};

inline const char* op_name(Op op) {
  switch (op) {
    case Op::input: return "input";
    case Op::params: return "params";
    case Op::constant: return "constant";
    case Op::segment: return "segment";
    case Op::add: return "add";
    case Op::sub: return "sub";
    case Op::mul: return "mul";
    case Op::matmul: return "matmul";
    case Op::affine: return "affine";
    case Op::add_row: return "add_row";
    case Op::tanh: return "tanh";
    case Op::exp: return "exp";
    case Op::log: return "log";
    case Op::atan: return "atan";
    case Op::scale: return "scale";
    case Op::add_scalar: return "add_scalar";
    case Op::square: return "square";
    case Op::sum: return "sum";
    case Op::mean: return "mean";
    case Op::row_sum: return "row_sum";
    case Op::slice_cols: return "slice_cols";
    case Op::concat_cols: return "concat_cols";
  }
  return "?";
}

/// Handle to a node recorded on a Tape.
struct Var {
  int id = -1;
  bool valid() const noexcept { return id >= 0; }
};

struct GradResult {
  std::vector<double> gradient;  // d loss / d params, same length as the parameter vector
  Matrix input_gradient;         // d loss / d input, shaped like the input (empty if no input node)
  double loss = 0.0;             // sum of output entries (the scalar loss for 1x1 outputs)
};

/// Eagerly evaluated record of primitive operations in topological order.
/// Every op computes its value on insertion and checks it for finiteness.
class Tape {
 public:
  struct Node {
    Op op;
    std::array<int, 3> in{-1, -1, -1};
    Matrix value;
    double scalar = 0.0;     // scale / add_scalar factor
    std::size_t a = 0, b = 0;  // segment offset, slice begin, ...
  };

  Var input(Matrix m) {
    Var v = push({Op::input, {}, std::move(m)});
    input_ = v.id;
    return v;
  }

  /// The single parameter leaf; segments address into it.
  Var params(const ParamVector& p) {
    if (params_ >= 0) throw UsageError("tape already has a parameter leaf");
    Var v = push({Op::params, {}, Matrix(1, p.size(), p.values())});
    params_ = v.id;
    return v;
  }

  Var constant(Matrix m) { return push({Op::constant, {}, std::move(m)}); }

  Var segment(Var p, const Segment& s) {
    const Matrix& pv = value(p);
    if (s.offset + s.size() > pv.size()) throw ShapeError("segment '" + s.name + "' out of range");
    Matrix m(s.rows, s.cols);
    std::copy_n(pv.data().begin() + static_cast<std::ptrdiff_t>(s.offset), s.size(), m.data().begin());
    Node n{Op::segment, {p.id}, std::move(m)};
    n.a = s.offset;
    return push(std::move(n));
  }

  Var add(Var x, Var y) { return binary_same(Op::add, x, y, [](double a, double b) { return a + b; }); }
  Var sub(Var x, Var y) { return binary_same(Op::sub, x, y, [](double a, double b) { return a - b; }); }
  Var mul(Var x, Var y) { return binary_same(Op::mul, x, y, [](double a, double b) { return a * b; }); }

  Var matmul(Var x, Var y) { return push({Op::matmul, {x.id, y.id}, diff::matmul(value(x), value(y))}); }

  /// x * w + b with b a 1 x cols row broadcast over rows.
  Var affine(Var x, Var w, Var b) {
    Matrix out = diff::matmul(value(x), value(w));
    const Matrix& bv = value(b);
    if (bv.rows() != 1 || bv.cols() != out.cols())
      throw ShapeError("affine bias " + bv.shape_string() + " vs output " + out.shape_string());
    for (std::size_t r = 0; r < out.rows(); ++r)
      for (std::size_t c = 0; c < out.cols(); ++c) out(r, c) += bv[c];
    return push({Op::affine, {x.id, w.id, b.id}, std::move(out)});
  }

  Var add_row(Var x, Var row) {
    const Matrix& rv = value(row);
    Matrix out = value(x);
    if (rv.rows() != 1 || rv.cols() != out.cols())
      throw ShapeError("add_row " + rv.shape_string() + " onto " + out.shape_string());
    for (std::size_t r = 0; r < out.rows(); ++r)
      for (std::size_t c = 0; c < out.cols(); ++c) out(r, c) += rv[c];
    return push({Op::add_row, {x.id, row.id}, std::move(out)});
  }

  Var tanh(Var x) { return unary(Op::tanh, x, [](double a) { return std::tanh(a); }); }
  Var exp(Var x) { return unary(Op::exp, x, [](double a) { return std::exp(a); }); }
  Var log(Var x) { return unary(Op::log, x, [](double a) { return std::log(a); }); }
  Var atan(Var x) { return unary(Op::atan, x, [](double a) { return std::atan(a); }); }
  Var square(Var x) { return unary(Op::square, x, [](double a) { return a * a; }); }

  Var scale(Var x, double s) {
    Node n{Op::scale, {x.id}, map(value(x), [s](double a) { return s * a; })};
    n.scalar = s;
    return push(std::move(n));
  }

  Var add_scalar(Var x, double s) {
    Node n{Op::add_scalar, {x.id}, map(value(x), [s](double a) { return a + s; })};
    n.scalar = s;
    return push(std::move(n));
  }

  Var sum(Var x) {
    double s = 0.0;
    for (double v : value(x).data()) s += v;
    return push({Op::sum, {x.id}, Matrix::scalar(s)});
  }

  Var mean(Var x) {
    const Matrix& m = value(x);
    if (m.empty()) throw ShapeError("mean of an empty matrix");
    double s = 0.0;
    for (double v : m.data()) s += v;
    return push({Op::mean, {x.id}, Matrix::scalar(s / static_cast<double>(m.size()))});
  }

  /// n x c -> n x 1
  Var row_sum(Var x) {
    const Matrix& m = value(x);
    Matrix out(m.rows(), 1);
    for (std::size_t r = 0; r < m.rows(); ++r) {
      double s = 0.0;
      for (double v : m.row_span(r)) s += v;
      out[r] = s;
    }
    return push({Op::row_sum, {x.id}, std::move(out)});
  }

  Var slice_cols(Var x, std::size_t begin, std::size_t count) {
    const Matrix& m = value(x);
    if (begin + count > m.cols()) throw ShapeError("slice_cols out of range");
    Matrix out(m.rows(), count);
    for (std::size_t r = 0; r < m.rows(); ++r)
      for (std::size_t c = 0; c < count; ++c) out(r, c) = m(r, begin + c);
    Node n{Op::slice_cols, {x.id}, std::move(out)};
    n.a = begin;
    return push(std::move(n));
  }

  Var concat_cols(Var x, Var y) {
    const Matrix &a = value(x), &b = value(y);
    if (a.rows() != b.rows()) throw ShapeError("concat_cols row mismatch " + a.shape_string() + " | " + b.shape_string());
    Matrix out(a.rows(), a.cols() + b.cols());
    for (std::size_t r = 0; r < a.rows(); ++r) {
      for (std::size_t c = 0; c < a.cols(); ++c) out(r, c) = a(r, c);
      for (std::size_t c = 0; c < b.cols(); ++c) out(r, a.cols() + c) = b(r, c);
    }
    return push({Op::concat_cols, {x.id, y.id}, std::move(out)});
  }

  const Matrix& value(Var v) const {
    if (v.id < 0 || static_cast<std::size_t>(v.id) >= nodes_.size()) throw UsageError("invalid tape variable");
    return nodes_[static_cast<std::size_t>(v.id)].value;
  }

  void set_output(Var v) { output_ = v.id; }
  Var output() const { return {output_}; }
  Var input_var() const { return {input_}; }
  Var params_var() const { return {params_}; }

  std::size_t size() const noexcept { return nodes_.size(); }
  const Node& node(std::size_t i) const { return nodes_.at(i); }

  /// Vector-Jacobian product of the output node with `seed`.
  GradResult backward(const Matrix& seed) const {
    if (output_ < 0) throw UsageError("tape has no output");
    const Matrix& out = nodes_[static_cast<std::size_t>(output_)].value;
    if (!seed.same_shape(out))
      throw ShapeError("seed " + seed.shape_string() + " does not match tape output " + out.shape_string());

    std::vector<std::optional<Matrix>> grads(nodes_.size());
    grads[static_cast<std::size_t>(output_)] = seed;

    for (int i = output_; i >= 0; --i) {
      auto& gslot = grads[static_cast<std::size_t>(i)];
      if (!gslot) continue;
      const Matrix& g = *gslot;
      const Node& n = nodes_[static_cast<std::size_t>(i)];
      propagate(n, g, grads);
    }

    GradResult r;
    r.gradient.assign(params_ >= 0 ? nodes_[static_cast<std::size_t>(params_)].value.size() : 0, 0.0);
    if (params_ >= 0 && grads[static_cast<std::size_t>(params_)]) r.gradient = grads[static_cast<std::size_t>(params_)]->data();
    if (input_ >= 0) {
      const Matrix& iv = nodes_[static_cast<std::size_t>(input_)].value;
      r.input_gradient = grads[static_cast<std::size_t>(input_)] ? *grads[static_cast<std::size_t>(input_)]
                                                                   : Matrix(iv.rows(), iv.cols());
    }
    for (double v : out.data()) r.loss += v;
    for (double v : r.gradient)
      if (!std::isfinite(v)) throw NumericError("non-finite gradient during backward pass");
    return r;
  }

 private:
  Var push(Node n) {
    if (!n.value.all_finite())
      throw NumericError("operation #" + std::to_string(nodes_.size()) + " (" + op_name(n.op) +
                         ") produced a non-finite value");
    nodes_.push_back(std::move(n));
    return {static_cast<int>(nodes_.size() - 1)};
  }

  template <class F>
  static Matrix map(const Matrix& m, F f) {
    Matrix out(m.rows(), m.cols());
    for (std::size_t i = 0; i < m.size(); ++i) out[i] = f(m[i]);
    return out;
  }

  template <class F>
  Var unary(Op op, Var x, F f) {
    return push({op, {x.id}, map(value(x), f)});
  }

  template <class F>
  Var binary_same(Op op, Var x, Var y, F f) {
    const Matrix &a = value(x), &b = value(y);
    if (!a.same_shape(b)) throw ShapeError(std::string(op_name(op)) + " " + a.shape_string() + " vs " + b.shape_string());
    Matrix out(a.rows(), a.cols());
    for (std::size_t i = 0; i < a.size(); ++i) out[i] = f(a[i], b[i]);
    return push({op, {x.id, y.id}, std::move(out)});
  }

  static void accumulate(std::vector<std::optional<Matrix>>& grads, int id, Matrix&& g) {
    auto& slot = grads[static_cast<std::size_t>(id)];
    if (!slot) {
      slot = std::move(g);
      return;
    }
    for (std::size_t i = 0; i < g.size(); ++i) (*slot)[i] += g[i];
  }

  // d(a*b)/da = g * b^T ; d/db = a^T * g
  static Matrix matmul_bt(const Matrix& g, const Matrix& b) {
    Matrix out(g.rows(), b.rows());
    for (std::size_t i = 0; i < g.rows(); ++i)
      for (std::size_t k = 0; k < b.rows(); ++k) {
        double s = 0.0;
        for (std::size_t j = 0; j < g.cols(); ++j) s += g(i, j) * b(k, j);
        out(i, k) = s;
      }
    return out;
  }
  static Matrix matmul_at(const Matrix& a, const Matrix& g) {
    Matrix out(a.cols(), g.cols());
    for (std::size_t r = 0; r < a.rows(); ++r)
      for (std::size_t k = 0; k < a.cols(); ++k) {
        const double ak = a(r, k);
        if (ak == 0.0) continue;
        for (std::size_t j = 0; j < g.cols(); ++j) out(k, j) += ak * g(r, j);
      }
    return out;
  }

  void propagate(const Node& n, const Matrix& g, std::vector<std::optional<Matrix>>& grads) const {
    auto val = [&](int id) -> const Matrix& { return nodes_[static_cast<std::size_t>(id)].value; };
    switch (n.op) {
      case Op::input:
      case Op::params:
      case Op::constant:
        return;
      case Op::segment: {
        const Matrix& pv = val(n.in[0]);
        Matrix gp(1, pv.size());
        std::copy(g.data().begin(), g.data().end(), gp.data().begin() + static_cast<std::ptrdiff_t>(n.a));
        accumulate(grads, n.in[0], std::move(gp));
        return;
      }
      case Op::add:
        accumulate(grads, n.in[0], Matrix(g));
        accumulate(grads, n.in[1], Matrix(g));
        return;
      case Op::sub:
        accumulate(grads, n.in[0], Matrix(g));
        accumulate(grads, n.in[1], map(g, [](double v) { return -v; }));
        return;
      case Op::mul: {
        const Matrix &a = val(n.in[0]), &b = val(n.in[1]);
        Matrix ga(g.rows(), g.cols()), gb(g.rows(), g.cols());
        for (std::size_t i = 0; i < g.size(); ++i) {
          ga[i] = g[i] * b[i];
          gb[i] = g[i] * a[i];
        }
        accumulate(grads, n.in[0], std::move(ga));
        accumulate(grads, n.in[1], std::move(gb));
        return;
      }
      case Op::matmul:
        accumulate(grads, n.in[0], matmul_bt(g, val(n.in[1])));
        accumulate(grads, n.in[1], matmul_at(val(n.in[0]), g));
        return;
      case Op::affine: {
        accumulate(grads, n.in[0], matmul_bt(g, val(n.in[1])));
        accumulate(grads, n.in[1], matmul_at(val(n.in[0]), g));
        Matrix gb(1, g.cols());
        for (std::size_t r = 0; r < g.rows(); ++r)
          for (std::size_t c = 0; c < g.cols(); ++c) gb[c] += g(r, c);
        accumulate(grads, n.in[2], std::move(gb));
        return;
      }
      case Op::add_row: {
        accumulate(grads, n.in[0], Matrix(g));
        Matrix gb(1, g.cols());
        for (std::size_t r = 0; r < g.rows(); ++r)
          for (std::size_t c = 0; c < g.cols(); ++c) gb[c] += g(r, c);
        accumulate(grads, n.in[1], std::move(gb));
        return;
      }
      case Op::tanh: {
        Matrix gx(g.rows(), g.cols());
        for (std::size_t i = 0; i < g.size(); ++i) gx[i] = g[i] * (1.0 - n.value[i] * n.value[i]);
        accumulate(grads, n.in[0], std::move(gx));
        return;
      }
      case Op::exp: {
        Matrix gx(g.rows(), g.cols());
        for (std::size_t i = 0; i < g.size(); ++i) gx[i] = g[i] * n.value[i];
        accumulate(grads, n.in[0], std::move(gx));
        return;
      }
      case Op::log: {
        const Matrix& x = val(n.in[0]);
        Matrix gx(g.rows(), g.cols());
        for (std::size_t i = 0; i < g.size(); ++i) gx[i] = g[i] / x[i];
        accumulate(grads, n.in[0], std::move(gx));
        return;
      }
      case Op::atan: {
        const Matrix& x = val(n.in[0]);
        Matrix gx(g.rows(), g.cols());
        for (std::size_t i = 0; i < g.size(); ++i) gx[i] = g[i] / (1.0 + x[i] * x[i]);
        accumulate(grads, n.in[0], std::move(gx));
        return;
      }
      case Op::scale:
        accumulate(grads, n.in[0], map(g, [s = n.scalar](double v) { return s * v; }));
        return;
      case Op::add_scalar:
        accumulate(grads, n.in[0], Matrix(g));
        return;
      case Op::square: {
        const Matrix& x = val(n.in[0]);
        Matrix gx(g.rows(), g.cols());
        for (std::size_t i = 0; i < g.size(); ++i) gx[i] = 2.0 * x[i] * g[i];
        accumulate(grads, n.in[0], std::move(gx));
        return;
      }
      case Op::sum: {
        const Matrix& x = val(n.in[0]);
        accumulate(grads, n.in[0], Matrix(x.rows(), x.cols(), g[0]));
        return;
      }
      case Op::mean: {
        const Matrix& x = val(n.in[0]);
        accumulate(grads, n.in[0], Matrix(x.rows(), x.cols(), g[0] / static_cast<double>(x.size())));
        return;
      }
      case Op::row_sum: {
        const Matrix& x = val(n.in[0]);
        Matrix gx(x.rows(), x.cols());
        for (std::size_t r = 0; r < x.rows(); ++r)
          for (std::size_t c = 0; c < x.cols(); ++c) gx(r, c) = g[r];
        accumulate(grads, n.in[0], std::move(gx));
        return;
      }
      case Op::slice_cols: {
        const Matrix& x = val(n.in[0]);
        Matrix gx(x.rows(), x.cols());
        for (std::size_t r = 0; r < g.rows(); ++r)
          for (std::size_t c = 0; c < g.cols(); ++c) gx(r, n.a + c) = g(r, c);
        accumulate(grads, n.in[0], std::move(gx));
        return;
      }
      case Op::concat_cols: {
        const Matrix &a = val(n.in[0]), &b = val(n.in[1]);
        Matrix ga(a.rows(), a.cols()), gb(b.rows(), b.cols());
        for (std::size_t r = 0; r < g.rows(); ++r) {
          for (std::size_t c = 0; c < a.cols(); ++c) ga(r, c) = g(r, c);
          for (std::size_t c = 0; c < b.cols(); ++c) gb(r, c) = g(r, a.cols() + c);
        }
        accumulate(grads, n.in[0], std::move(ga));
        accumulate(grads, n.in[1], std::move(gb));
        return;
      }
    }
  }

  std::vector<Node> nodes_;
  int input_ = -1;
  int params_ = -1;
  int output_ = -1;
};

}  // namespace metarefine::diff
