#pragma once

#include <cmath>
#include <functional>
#include <memory>
#include <stdexcept>
#include <utility>
#include <vector>

#include "sgm/matrix.hpp"

namespace sgm {

/// Handle to a value recorded on a Tape.
struct Var {
  int index = -1;
  bool valid() const { return index >= 0; }
};

/// Reverse-mode differentiation record over DenseMatrix operations.
///
/// Every primitive appends one node holding the forward value and an exact
/// adjoint rule, so nodes are already in topological order and backward()
/// visits each node exactly once in reverse. A Tape is single-threaded;
/// independent tapes (e.g. one per Monte Carlo sample) may run concurrently
/// and the caller sums their leaf gradients.
class Tape {
 public:
  static constexpr double kClampFloor = 1e-300;

  Var leaf(DenseMatrix value, bool trainable = false) {
    return push(std::move(value), trainable, -1, -1, nullptr);
  }

  Var constant(DenseMatrix value) { return leaf(std::move(value), false); }

  /// Stop-gradient: same value, blocks all propagation into `a`.
  Var detach(Var a) { return constant(val(a)); }

  // -- primitives -----------------------------------------------------------

  Var matmul(Var a, Var b) {
    DenseMatrix out = matmul_nn(val(a), val(b));
    return push(std::move(out), grad_any(a, b), a.index, b.index,
                [](Tape& t, const DenseMatrix& up, int self) {
                  const Node& n = t.nodes_[self];
                  t.accumulate(n.p0, matmul_nt(up, t.nodes_[n.p1].value));
                  t.accumulate(n.p1, matmul_tn(t.nodes_[n.p0].value, up));
                });
  }

  Var transpose(Var a) {
    return push(sgm::transpose(val(a)), needs(a), a.index, -1,
                [](Tape& t, const DenseMatrix& up, int self) {
                  t.accumulate(t.nodes_[self].p0, sgm::transpose(up));
                });
  }

  Var add(Var a, Var b) {
    return push(sgm::add(val(a), val(b)), grad_any(a, b), a.index, b.index,
                [](Tape& t, const DenseMatrix& up, int self) {
                  t.accumulate(t.nodes_[self].p0, up);
                  t.accumulate(t.nodes_[self].p1, up);
                });
  }

  Var sub(Var a, Var b) {
    return push(sgm::sub(val(a), val(b)), grad_any(a, b), a.index, b.index,
                [](Tape& t, const DenseMatrix& up, int self) {
                  t.accumulate(t.nodes_[self].p0, up);
                  t.accumulate(t.nodes_[self].p1, scale(up, -1.0));
                });
  }

  Var elementwise_mul(Var a, Var b) {
    return push(hadamard(val(a), val(b)), grad_any(a, b), a.index, b.index,
                [](Tape& t, const DenseMatrix& up, int self) {
                  const Node& n = t.nodes_[self];
                  t.accumulate(n.p0, hadamard(up, t.nodes_[n.p1].value));
                  t.accumulate(n.p1, hadamard(up, t.nodes_[n.p0].value));
                });
  }

  Var scalar_mul(Var a, double c) {
    return push(scale(val(a), c), needs(a), a.index, -1,
                [c](Tape& t, const DenseMatrix& up, int self) {
                  t.accumulate(t.nodes_[self].p0, scale(up, c));
                });
  }

  Var add_scalar(Var a, double c) {
    return push(shift(val(a), c), needs(a), a.index, -1,
                [](Tape& t, const DenseMatrix& up, int self) {
                  t.accumulate(t.nodes_[self].p0, up);
                });
  }

  /// Multiply every entry of `a` by the 1x1 value `s`.
  Var mul_scalar_var(Var a, Var s) {
    expect_scalar(val(s), "mul_scalar_var");
    return push(scale(val(a), val(s)(0, 0)), grad_any(a, s), a.index, s.index,
                [](Tape& t, const DenseMatrix& up, int self) {
                  const Node& n = t.nodes_[self];
                  t.accumulate(n.p0, scale(up, t.nodes_[n.p1].value(0, 0)));
                  DenseMatrix ds(1, 1);
                  ds(0, 0) = dot(up, t.nodes_[n.p0].value);
                  t.accumulate(n.p1, ds);
                });
  }

  Var exp(Var a) {
    DenseMatrix out = val(a);
    for (int i = 0; i < out.size(); ++i) out.data()[i] = std::exp(out.data()[i]);
    return push(std::move(out), needs(a), a.index, -1,
                [](Tape& t, const DenseMatrix& up, int self) {
                  // d exp = exp(x) * up, reusing the stored output value
                  t.accumulate(t.nodes_[self].p0, hadamard(up, t.nodes_[self].value));
                });
  }

  /// log with inputs clamped below kClampFloor; clamped entries count toward
  /// the saturation counter and receive zero derivative.
  Var log(Var a) {
    DenseMatrix out = val(a);
    for (int i = 0; i < out.size(); ++i) {
      double x = out.data()[i];
      if (x < kClampFloor) {
        x = kClampFloor;
        ++saturations_;
      }
      out.data()[i] = std::log(x);
    }
    return push(std::move(out), needs(a), a.index, -1,
                [](Tape& t, const DenseMatrix& up, int self) {
                  const DenseMatrix& x = t.nodes_[t.nodes_[self].p0].value;
                  DenseMatrix d = up;
                  for (int i = 0; i < d.size(); ++i) {
                    d.data()[i] = x.data()[i] < kClampFloor ? 0.0 : d.data()[i] / x.data()[i];
                  }
                  t.accumulate(t.nodes_[self].p0, std::move(d));
                });
  }

  Var tanh(Var a) {
    DenseMatrix out = val(a);
    for (int i = 0; i < out.size(); ++i) out.data()[i] = std::tanh(out.data()[i]);
    return push(std::move(out), needs(a), a.index, -1,
                [](Tape& t, const DenseMatrix& up, int self) {
                  const DenseMatrix& y = t.nodes_[self].value;
                  DenseMatrix d = up;
                  for (int i = 0; i < d.size(); ++i) {
                    d.data()[i] *= 1.0 - y.data()[i] * y.data()[i];
                  }
                  t.accumulate(t.nodes_[self].p0, std::move(d));
                });
  }

  Var leaky_relu(Var a, double slope = 0.1) {
    DenseMatrix out = val(a);
    for (int i = 0; i < out.size(); ++i) {
      if (out.data()[i] < 0.0) out.data()[i] *= slope;
    }
    return push(std::move(out), needs(a), a.index, -1,
                [slope](Tape& t, const DenseMatrix& up, int self) {
                  const DenseMatrix& x = t.nodes_[t.nodes_[self].p0].value;
                  DenseMatrix d = up;
                  for (int i = 0; i < d.size(); ++i) {
                    if (x.data()[i] < 0.0) d.data()[i] *= slope;
                  }
                  t.accumulate(t.nodes_[self].p0, std::move(d));
                });
  }

  Var row_sum(Var a) {
    return push(sgm::row_sum(val(a)), needs(a), a.index, -1,
                [](Tape& t, const DenseMatrix& up, int self) {
                  const DenseMatrix& x = t.nodes_[t.nodes_[self].p0].value;
                  DenseMatrix d(x.rows(), x.cols());
                  for (int i = 0; i < d.rows(); ++i)
                    for (int j = 0; j < d.cols(); ++j) d(i, j) = up(i, 0);
                  t.accumulate(t.nodes_[self].p0, std::move(d));
                });
  }

  Var col_sum(Var a) {
    return push(sgm::col_sum(val(a)), needs(a), a.index, -1,
                [](Tape& t, const DenseMatrix& up, int self) {
                  const DenseMatrix& x = t.nodes_[t.nodes_[self].p0].value;
                  DenseMatrix d(x.rows(), x.cols());
                  for (int i = 0; i < d.rows(); ++i)
                    for (int j = 0; j < d.cols(); ++j) d(i, j) = up(0, j);
                  t.accumulate(t.nodes_[self].p0, std::move(d));
                });
  }

  /// n x m -> n x 1, numerically stable log(sum(exp(row))).
  Var row_logsumexp(Var a) {
    const DenseMatrix& x = val(a);
    DenseMatrix out(x.rows(), 1);
    for (int i = 0; i < x.rows(); ++i) out(i, 0) = logsumexp(x.row(i), x.cols(), 1);
    return push(std::move(out), needs(a), a.index, -1,
                [](Tape& t, const DenseMatrix& up, int self) {
                  const DenseMatrix& x = t.nodes_[t.nodes_[self].p0].value;
                  const DenseMatrix& lse = t.nodes_[self].value;
                  DenseMatrix d(x.rows(), x.cols());
                  for (int i = 0; i < x.rows(); ++i)
                    for (int j = 0; j < x.cols(); ++j)
                      d(i, j) = up(i, 0) * std::exp(x(i, j) - lse(i, 0));
                  t.accumulate(t.nodes_[self].p0, std::move(d));
                });
  }

  /// n x m -> 1 x m
  Var col_logsumexp(Var a) {
    const DenseMatrix& x = val(a);
    DenseMatrix out(1, x.cols());
    for (int j = 0; j < x.cols(); ++j) out(0, j) = logsumexp(x.data() + j, x.rows(), x.cols());
    return push(std::move(out), needs(a), a.index, -1,
                [](Tape& t, const DenseMatrix& up, int self) {
                  const DenseMatrix& x = t.nodes_[t.nodes_[self].p0].value;
                  const DenseMatrix& lse = t.nodes_[self].value;
                  DenseMatrix d(x.rows(), x.cols());
                  for (int i = 0; i < x.rows(); ++i)
                    for (int j = 0; j < x.cols(); ++j)
                      d(i, j) = up(0, j) * std::exp(x(i, j) - lse(0, j));
                  t.accumulate(t.nodes_[self].p0, std::move(d));
                });
  }

  /// out(i,j) = a(i,j) / r(i,0). Denominators are clamped away from zero
  /// (magnitude >= kClampFloor, sign kept) and clamps are counted.
  Var broadcast_div_rows(Var a, Var r) {
    expect_col_vector(val(a), val(r), "broadcast_div_rows");
    const DenseMatrix& x = val(a);
    DenseMatrix out(x.rows(), x.cols());
    for (int i = 0; i < x.rows(); ++i) {
      double den = clamp_den(val(r)(i, 0));
      for (int j = 0; j < x.cols(); ++j) out(i, j) = x(i, j) / den;
    }
    return push(std::move(out), grad_any(a, r), a.index, r.index,
                [](Tape& t, const DenseMatrix& up, int self) {
                  const Node& n = t.nodes_[self];
                  const DenseMatrix& x = t.nodes_[n.p0].value;
                  const DenseMatrix& r = t.nodes_[n.p1].value;
                  DenseMatrix da(x.rows(), x.cols());
                  DenseMatrix dr(r.rows(), 1);
                  for (int i = 0; i < x.rows(); ++i) {
                    double den = clamp_den_nocount(r(i, 0));
                    double acc = 0.0;
                    for (int j = 0; j < x.cols(); ++j) {
                      da(i, j) = up(i, j) / den;
                      acc += up(i, j) * x(i, j);
                    }
                    dr(i, 0) = -acc / (den * den);
                  }
                  t.accumulate(n.p0, std::move(da));
                  t.accumulate(n.p1, std::move(dr));
                });
  }

  /// out(i,j) = a(i,j) / c(0,j)
  Var broadcast_div_cols(Var a, Var c) {
    expect_row_vector(val(a), val(c), "broadcast_div_cols");
    const DenseMatrix& x = val(a);
    DenseMatrix out(x.rows(), x.cols());
    for (int j = 0; j < x.cols(); ++j) {
      double den = clamp_den(val(c)(0, j));
      for (int i = 0; i < x.rows(); ++i) out(i, j) = x(i, j) / den;
    }
    return push(std::move(out), grad_any(a, c), a.index, c.index,
                [](Tape& t, const DenseMatrix& up, int self) {
                  const Node& n = t.nodes_[self];
                  const DenseMatrix& x = t.nodes_[n.p0].value;
                  const DenseMatrix& c = t.nodes_[n.p1].value;
                  DenseMatrix da(x.rows(), x.cols());
                  DenseMatrix dc(1, c.cols());
                  for (int j = 0; j < x.cols(); ++j) {
                    double den = clamp_den_nocount(c(0, j));
                    double acc = 0.0;
                    for (int i = 0; i < x.rows(); ++i) {
                      da(i, j) = up(i, j) / den;
                      acc += up(i, j) * x(i, j);
                    }
                    dc(0, j) = -acc / (den * den);
                  }
                  t.accumulate(n.p0, std::move(da));
                  t.accumulate(n.p1, std::move(dc));
                });
  }

  /// out(i,j) = a(i,j) - r(i,0)
  Var broadcast_sub_rows(Var a, Var r) {
    expect_col_vector(val(a), val(r), "broadcast_sub_rows");
    const DenseMatrix& x = val(a);
    DenseMatrix out(x.rows(), x.cols());
    for (int i = 0; i < x.rows(); ++i)
      for (int j = 0; j < x.cols(); ++j) out(i, j) = x(i, j) - val(r)(i, 0);
    return push(std::move(out), grad_any(a, r), a.index, r.index,
                [](Tape& t, const DenseMatrix& up, int self) {
                  const Node& n = t.nodes_[self];
                  t.accumulate(n.p0, up);
                  t.accumulate(n.p1, scale(sgm::row_sum(up), -1.0));
                });
  }

  /// out(i,j) = a(i,j) - c(0,j)
  Var broadcast_sub_cols(Var a, Var c) {
    expect_row_vector(val(a), val(c), "broadcast_sub_cols");
    const DenseMatrix& x = val(a);
    DenseMatrix out(x.rows(), x.cols());
    for (int i = 0; i < x.rows(); ++i)
      for (int j = 0; j < x.cols(); ++j) out(i, j) = x(i, j) - val(c)(0, j);
    return push(std::move(out), grad_any(a, c), a.index, c.index,
                [](Tape& t, const DenseMatrix& up, int self) {
                  const Node& n = t.nodes_[self];
                  t.accumulate(n.p0, up);
                  t.accumulate(n.p1, scale(sgm::col_sum(up), -1.0));
                });
  }

  /// out(i,j) = a(i,j) + c(0,j); the bias-add used by the encoder.
  Var broadcast_add_cols(Var a, Var c) {
    expect_row_vector(val(a), val(c), "broadcast_add_cols");
    const DenseMatrix& x = val(a);
    DenseMatrix out(x.rows(), x.cols());
    for (int i = 0; i < x.rows(); ++i)
      for (int j = 0; j < x.cols(); ++j) out(i, j) = x(i, j) + val(c)(0, j);
    return push(std::move(out), grad_any(a, c), a.index, c.index,
                [](Tape& t, const DenseMatrix& up, int self) {
                  const Node& n = t.nodes_[self];
                  t.accumulate(n.p0, up);
                  t.accumulate(n.p1, sgm::col_sum(up));
                });
  }

  Var slice_block(Var a, int r0, int c0, int rows, int cols) {
    return push(sgm::slice_block(val(a), r0, c0, rows, cols), needs(a), a.index, -1,
                [r0, c0](Tape& t, const DenseMatrix& up, int self) {
                  const DenseMatrix& x = t.nodes_[t.nodes_[self].p0].value;
                  t.accumulate(t.nodes_[self].p0,
                               sgm::pad_block(up, x.rows(), x.cols(), r0, c0));
                });
  }

  Var pad_block(Var a, int rows, int cols, int r0, int c0) {
    return push(sgm::pad_block(val(a), rows, cols, r0, c0), needs(a), a.index, -1,
                [r0, c0](Tape& t, const DenseMatrix& up, int self) {
                  const DenseMatrix& x = t.nodes_[t.nodes_[self].p0].value;
                  t.accumulate(t.nodes_[self].p0,
                               sgm::slice_block(up, r0, c0, x.rows(), x.cols()));
                });
  }

  Var reshape(Var a, int rows, int cols) {
    const DenseMatrix& x = val(a);
    if (rows * cols != x.size()) {
      throw std::invalid_argument("reshape: element count mismatch " + x.shape_str() + " -> " +
                                  std::to_string(rows) + "x" + std::to_string(cols));
    }
    DenseMatrix out(rows, cols);
    for (int i = 0; i < x.size(); ++i) out.data()[i] = x.data()[i];
    return push(std::move(out), needs(a), a.index, -1,
                [](Tape& t, const DenseMatrix& up, int self) {
                  const DenseMatrix& x = t.nodes_[t.nodes_[self].p0].value;
                  DenseMatrix d(x.rows(), x.cols());
                  for (int i = 0; i < d.size(); ++i) d.data()[i] = up.data()[i];
                  t.accumulate(t.nodes_[self].p0, std::move(d));
                });
  }

  /// Sum of all entries -> 1x1.
  Var reduce_sum(Var a) {
    DenseMatrix out(1, 1);
    out(0, 0) = total_sum(val(a));
    return push(std::move(out), needs(a), a.index, -1,
                [](Tape& t, const DenseMatrix& up, int self) {
                  const DenseMatrix& x = t.nodes_[t.nodes_[self].p0].value;
                  t.accumulate(t.nodes_[self].p0, DenseMatrix(x.rows(), x.cols(), up(0, 0)));
                });
  }

  /// Scalar node with a precomputed gradient wrt `input`. Lets an estimate
  /// assembled on per-sample scratch tapes rejoin this tape with an exact
  /// chain rule (the output is scalar, so the rule is a single scaling).
  Var precomputed_scalar(double value, Var input, DenseMatrix d_value_d_input) {
    check_same_shape(val(input), d_value_d_input, "precomputed_scalar");
    DenseMatrix out(1, 1);
    out(0, 0) = value;
    auto jac = std::make_shared<DenseMatrix>(std::move(d_value_d_input));
    return push(std::move(out), needs(input), input.index, -1,
                [jac](Tape& t, const DenseMatrix& up, int self) {
                  t.accumulate(t.nodes_[self].p0, scale(*jac, up(0, 0)));
                });
  }

  // -- gradients --------------------------------------------------------------

  /// Reverse pass from a scalar output. Adjoints of earlier backward calls are
  /// discarded; callers accumulate leaf gradients across calls themselves.
  void backward(Var output) {
    const DenseMatrix& v = val(output);
    if (v.rows() != 1 || v.cols() != 1) {
      throw std::invalid_argument("backward: output must be scalar, got " + v.shape_str());
    }
    DenseMatrix seed(1, 1);
    seed(0, 0) = 1.0;
    backward_from(output, seed);
  }

  /// Reverse pass seeded with an arbitrary adjoint at `node`.
  void backward_from(Var node, const DenseMatrix& seed) {
    check_same_shape(val(node), seed, "backward_from");
    for (Node& n : nodes_) n.adj = DenseMatrix();
    if (!nodes_[node.index].needs_grad) return;
    nodes_[node.index].adj = seed;
    for (int i = node.index; i >= 0; --i) {
      Node& n = nodes_[i];
      if (n.adj.empty() || !n.bw) continue;
      n.bw(*this, n.adj, i);
    }
  }

  const DenseMatrix& value(Var v) const { return nodes_.at(v.index).value; }

  /// Adjoint of `v` after the last backward pass; zeros if it was not reached.
  DenseMatrix grad(Var v) const {
    const Node& n = nodes_.at(v.index);
    if (n.adj.empty()) return DenseMatrix(n.value.rows(), n.value.cols());
    return n.adj;
  }

  size_t num_nodes() const { return nodes_.size(); }
  long saturation_count() const { return saturations_; }

 private:
  struct Node {
    DenseMatrix value;
    DenseMatrix adj;
    int p0 = -1;
    int p1 = -1;
    std::function<void(Tape&, const DenseMatrix&, int)> bw;
    bool needs_grad = false;
  };

  Var push(DenseMatrix value, bool needs_grad, int p0, int p1,
           std::function<void(Tape&, const DenseMatrix&, int)> bw) {
    Node n;
    n.value = std::move(value);
    n.p0 = p0;
    n.p1 = p1;
    n.bw = needs_grad ? std::move(bw) : nullptr;
    n.needs_grad = needs_grad;
    nodes_.push_back(std::move(n));
    return Var{static_cast<int>(nodes_.size()) - 1};
  }

  void accumulate(int idx, DenseMatrix delta) {
    if (idx < 0) return;
    Node& n = nodes_[idx];
    if (!n.needs_grad) return;
    if (n.adj.empty()) {
      n.adj = std::move(delta);
    } else {
      for (int i = 0; i < n.adj.size(); ++i) n.adj.data()[i] += delta.data()[i];
    }
  }

  const DenseMatrix& val(Var v) const { return nodes_.at(v.index).value; }
  bool needs(Var a) const { return nodes_.at(a.index).needs_grad; }
  bool grad_any(Var a, Var b) const { return needs(a) || needs(b); }

  double clamp_den(double d) {
    if (std::abs(d) < kClampFloor) {
      ++saturations_;
      return d < 0.0 ? -kClampFloor : kClampFloor;
    }
    return d;
  }

  static double clamp_den_nocount(double d) {
    if (std::abs(d) < kClampFloor) return d < 0.0 ? -kClampFloor : kClampFloor;
    return d;
  }

  static double logsumexp(const double* p, int n, int stride) {
    double m = p[0];
    for (int i = 1; i < n; ++i) m = std::max(m, p[i * static_cast<size_t>(stride)]);
    double s = 0.0;
    for (int i = 0; i < n; ++i) s += std::exp(p[i * static_cast<size_t>(stride)] - m);
    return m + std::log(s);
  }

  static double dot(const DenseMatrix& a, const DenseMatrix& b) {
    double s = 0.0;
    for (int i = 0; i < a.size(); ++i) s += a.data()[i] * b.data()[i];
    return s;
  }

  static void expect_scalar(const DenseMatrix& m, const char* op) {
    if (m.rows() != 1 || m.cols() != 1) {
      throw std::invalid_argument(std::string(op) + ": expected 1x1, got " + m.shape_str());
    }
  }

  static void expect_col_vector(const DenseMatrix& a, const DenseMatrix& r, const char* op) {
    if (r.rows() != a.rows() || r.cols() != 1) {
      throw std::invalid_argument(std::string(op) + ": expected " + std::to_string(a.rows()) +
                                  "x1 vector, got " + r.shape_str());
    }
  }

  static void expect_row_vector(const DenseMatrix& a, const DenseMatrix& c, const char* op) {
    if (c.cols() != a.cols() || c.rows() != 1) {
      throw std::invalid_argument(std::string(op) + ": expected 1x" + std::to_string(a.cols()) +
                                  " vector, got " + c.shape_str());
    }
  }

  std::vector<Node> nodes_;
  long saturations_ = 0;
};

}  // namespace sgm
