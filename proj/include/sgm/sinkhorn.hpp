#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>

#include "sgm/matrix.hpp"
#include "sgm/rng.hpp"
#include "sgm/tape.hpp"

namespace sgm {

/// Knobs of the Gumbel-Sinkhorn relaxation.
struct SinkhornConfig {
  double temperature = 1.0;  // tau
  int iterations = 10;       // L; use ~100 for evaluation-time estimates
  double noise_scale = 1.0;  // 1 = Gumbel noise on, 0 = deterministic relaxation

  void validate() const {
    if (!(temperature > 0.0)) throw std::invalid_argument("SinkhornConfig: temperature must be > 0");
    if (iterations < 1) throw std::invalid_argument("SinkhornConfig: iterations must be >= 1");
    if (noise_scale != 0.0 && noise_scale != 1.0) {
      throw std::invalid_argument("SinkhornConfig: noise_scale is a 0/1 toggle");
    }
  }
};

/// i.i.d. standard Gumbel draws, g = -log(-log u) with u clamped into
/// [1e-12, 1-1e-12] so the noise stays finite. Treated as a constant
/// (no gradient) wherever it enters a tape.
inline DenseMatrix sample_gumbel(int rows, int cols, uint64_t seed) {
  Rng rng(seed);
  DenseMatrix g(rows, cols);
  for (int i = 0; i < g.size(); ++i) {
    double u = rng.next_double01();
    u = std::min(std::max(u, 1e-12), 1.0 - 1e-12);
    g.data()[i] = -std::log(-std::log(u));
  }
  return g;
}

/// Log-space Sinkhorn: L rounds of alternating row/column log-sum-exp
/// normalization, then exponentiation. Stable for arbitrarily peaked logits,
/// and every step is on the tape, so the result is fully differentiable.
inline Var sinkhorn(Tape& t, Var logits, int iterations) {
  const DenseMatrix& x = t.value(logits);
  if (x.rows() != x.cols()) {
    throw std::invalid_argument("sinkhorn: input must be square, got " + x.shape_str());
  }
  if (iterations < 1) throw std::invalid_argument("sinkhorn: iterations must be >= 1");
  Var z = logits;
  for (int l = 0; l < iterations; ++l) {
    z = t.broadcast_sub_rows(z, t.row_logsumexp(z));
    z = t.broadcast_sub_cols(z, t.col_logsumexp(z));
  }
  return t.exp(z);
}

/// Draw one relaxed permutation S = sinkhorn((phi + noise) / tau, L).
/// Doubly stochastic up to Sinkhorn convergence; with noise off and tau -> 0
/// it concentrates on argmax_S trace(S^T phi).
inline Var sample_relaxed_permutation(Tape& t, Var phi, const SinkhornConfig& cfg,
                                      uint64_t seed) {
  cfg.validate();
  const DenseMatrix& p = t.value(phi);
  if (p.rows() != p.cols()) {
    throw std::invalid_argument("sample_relaxed_permutation: phi must be square, got " +
                                p.shape_str());
  }
  Var logits = phi;
  if (cfg.noise_scale != 0.0) {
    Var noise = t.constant(scale(sample_gumbel(p.rows(), p.cols(), seed), cfg.noise_scale));
    logits = t.add(logits, noise);
  }
  logits = t.scalar_mul(logits, 1.0 / cfg.temperature);
  return sinkhorn(t, logits, cfg.iterations);
}

/// Tape-off convenience overload.
inline DenseMatrix sample_relaxed_permutation(const DenseMatrix& phi, const SinkhornConfig& cfg,
                                              uint64_t seed) {
  Tape t;
  Var v = sample_relaxed_permutation(t, t.constant(phi), cfg, seed);
  return t.value(v);
}

}  // namespace sgm
