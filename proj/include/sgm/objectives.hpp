#pragma once

#include <cstdint>
#include <stdexcept>
#include <utility>
#include <vector>

#include "sgm/graph.hpp"
#include "sgm/matching.hpp"
#include "sgm/matrix.hpp"
#include "sgm/rng.hpp"
#include "sgm/sinkhorn.hpp"
#include "sgm/tape.hpp"

namespace sgm {

/// Pairwise matching reward. The default edge-agreement kernel scores 1 for
/// every ordered pair of matched edge orientations, so a perfect match of
/// identical graphs scores 2|E|. The dense custom kernel exists for oracle
/// tests on tiny problems and is rejected above 8 nodes.
class QapKernel {
 public:
  static QapKernel edge_agreement(const Graph& source, const Graph& target) {
    QapKernel k;
    k.n_s_ = source.num_nodes;
    k.n_t_ = target.num_nodes;
    k.adj_s_ = source.adjacency();
    k.adj_t_ = target.adjacency();
    return k;
  }

  static QapKernel custom(int n_s, int n_t, std::vector<double> entries) {
    if (n_s > 8 || n_t > 8) {
      throw std::invalid_argument("QapKernel::custom: only allowed for n_s, n_t <= 8");
    }
    const size_t want = static_cast<size_t>(n_s) * n_t * n_s * n_t;
    if (entries.size() != want) {
      throw std::invalid_argument("QapKernel::custom: expected " + std::to_string(want) +
                                  " entries, got " + std::to_string(entries.size()));
    }
    QapKernel k;
    k.n_s_ = n_s;
    k.n_t_ = n_t;
    k.custom_ = std::move(entries);
    return k;
  }

  int n_s() const { return n_s_; }
  int n_t() const { return n_t_; }
  bool is_custom() const { return !custom_.empty(); }

  /// K[i,j,i',j'] of the custom kernel.
  double entry(int i, int j, int ip, int jp) const {
    return custom_[((static_cast<size_t>(i) * n_t_ + j) * n_s_ + ip) * n_t_ + jp];
  }

  /// Scalar reward of the normal block m0 (n_s x n_t), on the tape.
  Var apply(Tape& t, Var m0) const {
    const DenseMatrix& m = t.value(m0);
    if (m.rows() != n_s_ || m.cols() != n_t_) {
      throw std::invalid_argument("QapKernel: matching block is " + m.shape_str() +
                                  ", kernel is for " + std::to_string(n_s_) + "x" +
                                  std::to_string(n_t_));
    }
    if (is_custom()) {
      // f = vec(M0) Kmat vec(M0)^T with row-major vec
      const int nm = n_s_ * n_t_;
      DenseMatrix kmat(nm, nm);
      for (int i = 0; i < n_s_; ++i)
        for (int j = 0; j < n_t_; ++j)
          for (int ip = 0; ip < n_s_; ++ip)
            for (int jp = 0; jp < n_t_; ++jp)
              kmat(i * n_t_ + j, ip * n_t_ + jp) = entry(i, j, ip, jp);
      Var v = t.reshape(m0, 1, nm);
      return t.matmul(t.matmul(v, t.constant(std::move(kmat))), t.transpose(v));
    }
    // sum((A_s * M0 * A_t) .* M0) = ordered-orientation quadruple sum
    Var inner = t.matmul(t.matmul(t.constant(adj_s_), m0), t.constant(adj_t_));
    return t.reduce_sum(t.elementwise_mul(inner, m0));
  }

 private:
  int n_s_ = 0, n_t_ = 0;
  DenseMatrix adj_s_, adj_t_;
  std::vector<double> custom_;
};

struct ObjectiveConfig {
  double lambda = 1.0;     // weight of the supervised term
  bool supervised = false; // off => the lambda term is skipped entirely

  void validate() const {
    if (lambda < 0.0) throw std::invalid_argument("ObjectiveConfig: lambda must be >= 0");
  }
};

namespace detail {
inline Var normal_block_var(Tape& t, Var matching) {
  const DenseMatrix& m = t.value(matching);
  if (m.rows() < 2 || m.cols() < 2) {
    throw std::invalid_argument("matching must be (n_s+1)x(n_t+1), got " + m.shape_str());
  }
  return t.slice_block(matching, 0, 0, m.rows() - 1, m.cols() - 1);
}
}  // namespace detail

/// QAP reward of a matching sample (dummy row/column contribute nothing).
inline Var f_qap(Tape& t, Var matching, const QapKernel& kernel) {
  return kernel.apply(t, detail::normal_block_var(t, matching));
}

constexpr double kSupervisedEps = 1e-12;

/// Negative cross entropy against the true correspondence:
/// sum over true pairs of log(M0_ij + eps). Zero iff every true pair has
/// probability one; the eps floor keeps peaked samples finite.
inline Var f_sup(Tape& t, Var matching, const Correspondence& truth) {
  Var m0 = detail::normal_block_var(t, matching);
  const DenseMatrix& m = t.value(m0);
  DenseMatrix mask(m.rows(), m.cols());
  for (const auto& [i, j] : truth) {
    if (i < 0 || j < 0 || i >= m.rows() || j >= m.cols()) {
      throw std::invalid_argument("f_sup: truth pair (" + std::to_string(i) + "," +
                                  std::to_string(j) + ") out of range for " + m.shape_str());
    }
    mask(i, j) = 1.0;
  }
  Var logs = t.log(t.add_scalar(m0, kSupervisedEps));
  return t.reduce_sum(t.elementwise_mul(t.constant(std::move(mask)), logs));
}

/// f_qap + lambda * f_sup (the supervised term only when configured and truth
/// is available).
inline Var f_combined(Tape& t, Var matching, const QapKernel& kernel,
                      const Correspondence* truth, const ObjectiveConfig& cfg) {
  cfg.validate();
  Var q = f_qap(t, matching, kernel);
  if (!cfg.supervised) return q;
  if (truth == nullptr) {
    throw std::invalid_argument("f_combined: supervised objective but no ground truth");
  }
  return t.add(q, t.scalar_mul(f_sup(t, matching, *truth), cfg.lambda));
}

/// Monte Carlo estimate of E[f(M)] under the relaxed matching distribution
/// at theta, with optional pathwise gradient wrt theta.
struct ObjectiveEstimate {
  double value = 0.0;
  DenseMatrix d_theta;  // empty unless gradients were requested
};

/// One relaxed sample per substream of `seed`; each runs on its own scratch
/// tape so memory stays bounded and samples could evaluate concurrently.
inline ObjectiveEstimate expected_objective_value(
    const DenseMatrix& theta, const SinkhornConfig& cfg, const QapKernel& kernel,
    const Correspondence* truth, const ObjectiveConfig& obj_cfg, int num_samples,
    uint64_t seed, bool track_gradients, bool allow_dummy = true) {
  if (num_samples < 1) {
    throw std::invalid_argument("expected_objective: num_samples must be >= 1");
  }
  const int n_s = theta.rows(), n_t = theta.cols();
  ObjectiveEstimate est;
  if (track_gradients) est.d_theta = DenseMatrix(n_s, n_t);
  for (int k = 0; k < num_samples; ++k) {
    Tape t;
    Var th = t.leaf(theta, track_gradients);
    Var phi = build_phi(t, th, allow_dummy);
    Var s = sample_relaxed_permutation(t, phi, cfg, substream(seed, "sample", k));
    Var m = transform_matching(t, s, n_s, n_t);
    Var f = f_combined(t, m, kernel, truth, obj_cfg);
    est.value += t.value(f)(0, 0);
    if (track_gradients) {
      t.backward(f);
      DenseMatrix g = t.grad(th);
      for (int i = 0; i < g.size(); ++i) est.d_theta.data()[i] += g.data()[i];
    }
  }
  est.value /= num_samples;
  if (track_gradients) est.d_theta = scale(est.d_theta, 1.0 / num_samples);
  return est;
}

/// Tape-level wrapper: the estimate joins `t` as a single scalar node whose
/// adjoint rule applies the precomputed d(estimate)/d(theta), so gradients
/// keep flowing from the objective through theta into whatever produced it.
inline Var expected_objective(Tape& t, Var theta, const SinkhornConfig& cfg,
                              const QapKernel& kernel, const Correspondence* truth,
                              const ObjectiveConfig& obj_cfg, int num_samples, uint64_t seed,
                              bool allow_dummy = true) {
  ObjectiveEstimate est = expected_objective_value(t.value(theta), cfg, kernel, truth, obj_cfg,
                                                   num_samples, seed,
                                                   /*track_gradients=*/true, allow_dummy);
  return t.precomputed_scalar(est.value, theta, std::move(est.d_theta));
}

}  // namespace sgm
