#pragma once

#include <cstdint>
#include <stdexcept>
#include <utility>
#include <vector>

#include "sgm/matrix.hpp"
#include "sgm/rng.hpp"
#include "sgm/sinkhorn.hpp"
#include "sgm/tape.hpp"

namespace sgm {

/// Matching-preference parameters, one score per (source, target) node pair.
struct MatchParams {
  DenseMatrix theta;  // n_s x n_t

  int n_s() const { return theta.rows(); }
  int n_t() const { return theta.cols(); }

  void validate() const {
    if (theta.rows() < 1 || theta.cols() < 1) {
      throw std::invalid_argument("MatchParams: theta must be non-empty");
    }
    if (!theta.all_finite()) throw std::invalid_argument("MatchParams: theta has non-finite entries");
  }
};

/// Permutation-distribution parameters over the (n_s + n_t)-sized problem.
struct PermParams {
  DenseMatrix phi;  // m x m, m = n_s + n_t

  void validate() const {
    if (phi.rows() != phi.cols()) {
      throw std::invalid_argument("PermParams: phi must be square, got " + phi.shape_str());
    }
    if (!phi.all_finite()) throw std::invalid_argument("PermParams: phi has non-finite entries");
  }
};

/// A relaxed or discrete matching matrix of shape (n_s+1) x (n_t+1): the
/// top-left block pairs normal nodes, the last column/row is the aggregate
/// dummy, and the bottom-right corner is identically zero.
struct MatchingSample {
  DenseMatrix m;

  int n_s() const { return m.rows() - 1; }
  int n_t() const { return m.cols() - 1; }
  DenseMatrix normal_block() const { return sgm::slice_block(m, 0, 0, n_s(), n_t()); }
};

/// Score used by the dummy-node ablation to forbid dummy assignments without
/// changing any matrix shape. Large enough to dominate after temperature
/// scaling, small enough to stay finite through log-space Sinkhorn.
constexpr double kForbiddenScore = -1e6;

/// Embed theta as the top-left n_s x n_t block of an m x m phi whose other
/// entries are zero (dummy assignments carry no preference). When
/// allow_dummy is false the dummy blocks are set to kForbiddenScore instead.
inline Var build_phi(Tape& t, Var theta, bool allow_dummy = true) {
  const DenseMatrix& th = t.value(theta);
  const int n_s = th.rows(), n_t = th.cols(), m = n_s + n_t;
  Var phi = t.pad_block(theta, m, m, 0, 0);
  if (!allow_dummy) {
    DenseMatrix penalty(m, m);
    for (int i = 0; i < n_s; ++i)
      for (int j = n_t; j < m; ++j) penalty(i, j) = kForbiddenScore;
    for (int i = n_s; i < m; ++i)
      for (int j = 0; j < n_t; ++j) penalty(i, j) = kForbiddenScore;
    phi = t.add(phi, t.constant(std::move(penalty)));
  }
  return phi;
}

inline PermParams build_phi(const MatchParams& params, bool allow_dummy = true) {
  Tape t;
  Var phi = build_phi(t, t.constant(params.theta), allow_dummy);
  return PermParams{t.value(phi)};
}

/// Condense an m x m (relaxed) permutation into an (n_s+1) x (n_t+1) matching
/// by summing each dummy block into the aggregate dummy row/column. Linear,
/// differentiable, and equivalent to the explicit B*S*C product with the
/// bottom-right dummy-dummy mass dropped (that entry is pinned to zero and
/// never enters an objective).
inline Var transform_matching(Tape& t, Var s, int n_s, int n_t) {
  const DenseMatrix& sv = t.value(s);
  const int m = n_s + n_t;
  if (sv.rows() != m || sv.cols() != m) {
    throw std::invalid_argument("transform_matching: S is " + sv.shape_str() + ", expected " +
                                std::to_string(m) + "x" + std::to_string(m));
  }
  Var normal = t.slice_block(s, 0, 0, n_s, n_t);
  Var to_dummy = t.row_sum(t.slice_block(s, 0, n_t, n_s, n_s));    // n_s x 1
  Var from_dummy = t.col_sum(t.slice_block(s, n_s, 0, n_t, n_t));  // 1 x n_t
  Var out = t.pad_block(normal, n_s + 1, n_t + 1, 0, 0);
  out = t.add(out, t.pad_block(to_dummy, n_s + 1, n_t + 1, 0, n_t));
  out = t.add(out, t.pad_block(from_dummy, n_s + 1, n_t + 1, n_s, 0));
  return out;
}

inline MatchingSample transform_matching(const DenseMatrix& s, int n_s, int n_t) {
  Tape t;
  Var out = transform_matching(t, t.constant(s), n_s, n_t);
  return MatchingSample{t.value(out)};
}

/// Average of `num_samples` transformed relaxed samples from the matching
/// distribution at `theta`. No gradients are tracked; each sample uses a
/// fresh substream of `seed`, which is what makes refinement stochastic.
inline DenseMatrix mean_matching(const MatchParams& theta, const SinkhornConfig& cfg,
                                 int num_samples, uint64_t seed, bool allow_dummy = true) {
  if (num_samples < 1) throw std::invalid_argument("mean_matching: num_samples must be >= 1");
  const int n_s = theta.n_s(), n_t = theta.n_t();
  DenseMatrix mean(n_s + 1, n_t + 1);
  for (int k = 0; k < num_samples; ++k) {
    Tape t;
    Var phi = build_phi(t, t.constant(theta.theta), allow_dummy);
    Var s = sample_relaxed_permutation(t, phi, cfg, substream(seed, "sample", k));
    Var m = transform_matching(t, s, n_s, n_t);
    const DenseMatrix& mv = t.value(m);
    for (int i = 0; i < mean.size(); ++i) mean.data()[i] += mv.data()[i];
  }
  return scale(mean, 1.0 / num_samples);
}

/// Per-node probabilities of being matched to a normal (non-dummy) node:
/// row sums and column sums of the mean matching's normal block.
inline std::pair<std::vector<double>, std::vector<double>> matched_probabilities(
    const DenseMatrix& m_bar) {
  const int n_s = m_bar.rows() - 1, n_t = m_bar.cols() - 1;
  if (n_s < 1 || n_t < 1) {
    throw std::invalid_argument("matched_probabilities: matrix too small, " + m_bar.shape_str());
  }
  std::vector<double> a_s(n_s, 0.0), a_t(n_t, 0.0);
  for (int i = 0; i < n_s; ++i) {
    for (int j = 0; j < n_t; ++j) {
      a_s[i] += m_bar(i, j);
      a_t[j] += m_bar(i, j);
    }
  }
  return {std::move(a_s), std::move(a_t)};
}

/// Append one zero row and one zero column (the dummy scores) to theta.
inline Var pad_theta(Tape& t, Var theta) {
  const DenseMatrix& th = t.value(theta);
  return t.pad_block(theta, th.rows() + 1, th.cols() + 1, 0, 0);
}

inline DenseMatrix pad_theta(const DenseMatrix& theta) {
  return pad_block(theta, theta.rows() + 1, theta.cols() + 1, 0, 0);
}

}  // namespace sgm
