#pragma once

#include <cstdint>
#include <stdexcept>
#include <vector>

#include "sgm/encoder.hpp"
#include "sgm/graph.hpp"
#include "sgm/matching.hpp"
#include "sgm/objectives.hpp"
#include "sgm/sinkhorn.hpp"
#include "sgm/tape.hpp"

namespace sgm {

/// Record of one iterative-refinement run: the incumbent parameters after
/// every step, the incumbent's cached estimate, and whether each proposal was
/// accepted. The estimate sequence is non-decreasing by construction of the
/// accept rule; validate() asserts it.
struct RefineTrace {
  std::vector<DenseMatrix> thetas;
  std::vector<double> estimates;
  std::vector<bool> accepted;

  int steps() const { return static_cast<int>(thetas.size()) - 1; }

  void validate() const {
    if (thetas.empty() || thetas.size() != estimates.size() ||
        thetas.size() != accepted.size()) {
      throw std::logic_error("RefineTrace: inconsistent lengths");
    }
    for (size_t i = 1; i < estimates.size(); ++i) {
      if (estimates[i] < estimates[i - 1]) {
        throw std::logic_error("RefineTrace: accepted estimates decreased at step " +
                               std::to_string(i));
      }
    }
  }
};

struct RefineConfig {
  int steps = 4;             // refinement iterations after the initial prediction
  int num_samples = 10;      // samples for both mean matchings and estimates
  SinkhornConfig sampling;   // relaxation used when drawing matchings
  SinkhornConfig estimation; // relaxation used for acceptance estimates
  bool allow_dummy = true;

  void validate() const {
    if (steps < 0) throw std::invalid_argument("RefineConfig: steps must be >= 0");
    if (num_samples < 1) throw std::invalid_argument("RefineConfig: num_samples must be >= 1");
    sampling.validate();
    estimation.validate();
  }
};

/// Prediction-time iterative refinement: start from the encoder's theta, then
/// repeatedly re-encode with reweighted features, keeping a proposal only if
/// its estimated expected objective does not drop. Estimates use the
/// unsupervised objective only (no ground truth is assumed at test time) and
/// a fresh seed per step; the incumbent's estimate is cached, never redone.
inline RefineTrace refine_loop(const GraphPair& pair, const EncoderWeights& weights,
                               const QapKernel& kernel, const RefineConfig& cfg,
                               uint64_t seed) {
  cfg.validate();
  const ObjectiveConfig unsupervised{};  // supervised=false

  RefineTrace trace;
  DenseMatrix incumbent;
  {
    Tape t;
    EncoderVars vars = register_encoder(t, weights, /*trainable=*/false);
    incumbent = t.value(compute_theta(t, vars, weights.config, pair));
  }
  double incumbent_est =
      expected_objective_value(incumbent, cfg.estimation, kernel, nullptr, unsupervised,
                               cfg.num_samples, substream(seed, "estimate", 0),
                               /*track_gradients=*/false, cfg.allow_dummy)
          .value;
  trace.thetas.push_back(incumbent);
  trace.estimates.push_back(incumbent_est);
  trace.accepted.push_back(true);

  for (int step = 1; step <= cfg.steps; ++step) {
    DenseMatrix proposal;
    {
      Tape t;
      EncoderVars vars = register_encoder(t, weights, /*trainable=*/false);
      proposal = t.value(refine_theta(t, vars, weights.config, incumbent, pair, cfg.sampling,
                                      cfg.num_samples, substream(seed, "refine", step),
                                      cfg.allow_dummy));
    }
    const double proposal_est =
        expected_objective_value(proposal, cfg.estimation, kernel, nullptr, unsupervised,
                                 cfg.num_samples, substream(seed, "estimate", step),
                                 /*track_gradients=*/false, cfg.allow_dummy)
            .value;
    const bool accept = proposal_est >= incumbent_est;
    if (accept) {
      incumbent = std::move(proposal);
      incumbent_est = proposal_est;
    }
    trace.thetas.push_back(incumbent);
    trace.estimates.push_back(incumbent_est);
    trace.accepted.push_back(accept);
  }
  trace.validate();
  return trace;
}

}  // namespace sgm
