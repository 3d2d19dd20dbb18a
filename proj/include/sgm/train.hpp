#pragma once

#include <chrono>
#include <cmath>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "sgm/decode.hpp"
#include "sgm/encoder.hpp"
#include "sgm/graph.hpp"
#include "sgm/objectives.hpp"
#include "sgm/refine.hpp"
#include "sgm/rng.hpp"
#include "sgm/sinkhorn.hpp"
#include "sgm/tape.hpp"

namespace sgm {

// -- Adam ---------------------------------------------------------------------

struct AdamConfig {
  double learning_rate = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamState {
  std::vector<DenseMatrix> m, v;
  long step = 0;

  void init(const std::vector<DenseMatrix*>& params) {
    m.clear();
    v.clear();
    for (const DenseMatrix* p : params) {
      m.push_back(DenseMatrix(p->rows(), p->cols()));
      v.push_back(DenseMatrix(p->rows(), p->cols()));
    }
    step = 0;
  }
};

/// Standard Adam descent step with bias correction. Callers maximizing an
/// objective pass negated gradients.
inline void adam_step(const std::vector<DenseMatrix*>& params,
                      const std::vector<DenseMatrix>& grads, AdamState& state,
                      const AdamConfig& cfg) {
  if (params.size() != grads.size() || params.size() != state.m.size()) {
    throw std::invalid_argument("adam_step: parameter/gradient/state count mismatch");
  }
  ++state.step;
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
  for (size_t k = 0; k < params.size(); ++k) {
    DenseMatrix& p = *params[k];
    check_same_shape(p, grads[k], "adam_step");
    for (int i = 0; i < p.size(); ++i) {
      const double g = grads[k].data()[i];
      double& m = state.m[k].data()[i];
      double& v = state.v[k].data()[i];
      m = cfg.beta1 * m + (1.0 - cfg.beta1) * g;
      v = cfg.beta2 * v + (1.0 - cfg.beta2) * g * g;
      p.data()[i] -= cfg.learning_rate * (m / bc1) / (std::sqrt(v / bc2) + cfg.eps);
    }
  }
}

// -- training loop --------------------------------------------------------------

struct TrainConfig {
  int epochs = 100;
  double learning_rate = 1e-4;
  int refine_steps = 4;          // T
  int samples_per_estimate = 10; // Monte Carlo samples per expectation
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  uint64_t seed = 0;
  SinkhornConfig sampling;       // noise toggle and temperature live here
  bool allow_dummy = true;
  bool sum_over_proposals = true;  // loss covers rejected proposals too
  bool batch_pairs = false;        // one Adam update per epoch instead of per pair

  void validate() const {
    if (epochs < 1) throw std::invalid_argument("TrainConfig: epochs must be >= 1");
    if (learning_rate < 0.0) throw std::invalid_argument("TrainConfig: negative learning rate");
    if (refine_steps < 0) throw std::invalid_argument("TrainConfig: refine_steps must be >= 0");
    if (samples_per_estimate < 1) {
      throw std::invalid_argument("TrainConfig: samples_per_estimate must be >= 1");
    }
    sampling.validate();
  }
};

struct EpochRecord {
  int epoch = 0;
  double mean_objective = 0.0;
  std::optional<double> node_correctness;
  double seconds = 0.0;
};

struct TrainResult {
  EncoderWeights weights;  // snapshot of the best epoch
  std::vector<EpochRecord> log;
  int best_epoch = -1;
  double best_objective = 0.0;
};

/// Thrown when an expectation or gradient goes non-finite; carries the
/// offending pair so runs can point at bad data.
struct TrainingDiverged : std::runtime_error {
  int pair_index;
  explicit TrainingDiverged(int pair, const std::string& what)
      : std::runtime_error("training diverged on pair " + std::to_string(pair) + ": " + what),
        pair_index(pair) {}
};

namespace detail {

inline std::vector<Var> trainable_vars(const EncoderVars& vars, const EncoderConfig& cfg) {
  std::vector<Var> vs;
  for (Var v : vars.w) vs.push_back(v);
  for (Var v : vars.b) vs.push_back(v);
  if (cfg.epsilon_learnable) {
    for (Var v : vars.eps) vs.push_back(v);
  }
  return vs;
}

}  // namespace detail

/// Maximize the summed expected objective over all refinement steps with Adam.
/// Per pair and epoch: run the refinement schedule, accumulate d(sum_t E[f])
/// wrt the weights across the T+1 steps (stop-gradient into the previous
/// incumbent), then apply one ascent update. Estimates that gate acceptance
/// use fresh seeds and no gradients; the incumbent's estimate is cached so the
/// accepted sequence is monotone by construction. The epoch whose mean
/// objective is best is returned.
inline TrainResult train(const std::vector<GraphPair>& dataset, EncoderWeights weights,
                         const TrainConfig& cfg, const ObjectiveConfig& obj_cfg) {
  cfg.validate();
  obj_cfg.validate();
  weights.validate();
  if (dataset.empty()) throw std::invalid_argument("train: empty dataset");
  for (size_t p = 0; p < dataset.size(); ++p) {
    dataset[p].validate();
    if (obj_cfg.supervised && !dataset[p].ground_truth) {
      throw std::invalid_argument("train: supervised objective but pair " + std::to_string(p) +
                                  " has no ground truth");
    }
  }

  std::vector<QapKernel> kernels;
  for (const auto& pair : dataset) {
    kernels.push_back(QapKernel::edge_agreement(pair.source, pair.target));
  }

  AdamConfig adam{cfg.learning_rate, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps};
  AdamState state;
  state.init(weights.parameters());

  const uint64_t root = substream(cfg.seed, "train");
  const int T = cfg.refine_steps;
  const int P = static_cast<int>(dataset.size());

  TrainResult result;
  result.weights = weights;

  std::vector<DenseMatrix> batch_grads;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const auto t_start = std::chrono::steady_clock::now();
    double objective_sum = 0.0;
    double nc_sum = 0.0;
    int nc_count = 0;
    if (cfg.batch_pairs) {
      batch_grads.assign(state.m.size(), DenseMatrix());
      for (size_t k = 0; k < state.m.size(); ++k) {
        batch_grads[k] = DenseMatrix(state.m[k].rows(), state.m[k].cols());
      }
    }

    for (int p = 0; p < P; ++p) {
      const GraphPair& pair = dataset[p];
      const Correspondence* truth = pair.ground_truth ? &*pair.ground_truth : nullptr;
      const uint64_t pair_seed = substream(root, "pair", static_cast<uint64_t>(epoch) * P + p);

      Tape tape;
      EncoderVars vars = register_encoder(tape, weights, /*trainable=*/true);
      std::vector<Var> leaves = detail::trainable_vars(vars, weights.config);
      std::vector<DenseMatrix> grads(leaves.size());
      for (size_t k = 0; k < leaves.size(); ++k) {
        const DenseMatrix& v = tape.value(leaves[k]);
        grads[k] = DenseMatrix(v.rows(), v.cols());
      }

      // loss gradient of one proposal, accumulated across steps
      auto accumulate_loss = [&](Var theta, int step) {
        ObjectiveEstimate est = expected_objective_value(
            tape.value(theta), cfg.sampling, kernels[p], truth, obj_cfg,
            cfg.samples_per_estimate, substream(pair_seed, "loss", step),
            /*track_gradients=*/true, cfg.allow_dummy);
        if (!std::isfinite(est.value) || !est.d_theta.all_finite()) {
          throw TrainingDiverged(p, "non-finite loss at step " + std::to_string(step));
        }
        tape.backward_from(theta, est.d_theta);
        for (size_t k = 0; k < leaves.size(); ++k) {
          DenseMatrix g = tape.grad(leaves[k]);
          for (int i = 0; i < g.size(); ++i) grads[k].data()[i] += g.data()[i];
        }
        return est.value;
      };
      auto acceptance_estimate = [&](const DenseMatrix& theta, int step) {
        double v = expected_objective_value(theta, cfg.sampling, kernels[p], truth, obj_cfg,
                                            cfg.samples_per_estimate,
                                            substream(pair_seed, "accept", step),
                                            /*track_gradients=*/false, cfg.allow_dummy)
                       .value;
        if (!std::isfinite(v)) {
          throw TrainingDiverged(p, "non-finite estimate at step " + std::to_string(step));
        }
        return v;
      };

      RefineTrace trace;
      Var theta0 = compute_theta(tape, vars, weights.config, pair);
      accumulate_loss(theta0, 0);
      DenseMatrix incumbent = tape.value(theta0);
      double incumbent_est = acceptance_estimate(incumbent, 0);
      trace.thetas.push_back(incumbent);
      trace.estimates.push_back(incumbent_est);
      trace.accepted.push_back(true);

      for (int step = 1; step <= T; ++step) {
        Var proposal = refine_theta(tape, vars, weights.config, incumbent, pair, cfg.sampling,
                                    cfg.samples_per_estimate,
                                    substream(pair_seed, "refine", step), cfg.allow_dummy);
        const double proposal_est = acceptance_estimate(tape.value(proposal), step);
        const bool accept = proposal_est >= incumbent_est;
        if (cfg.sum_over_proposals || accept) accumulate_loss(proposal, step);
        if (accept) {
          incumbent = tape.value(proposal);
          incumbent_est = proposal_est;
        }
        trace.thetas.push_back(incumbent);
        trace.estimates.push_back(incumbent_est);
        trace.accepted.push_back(accept);
      }
      trace.validate();  // Algorithm retention rule, asserted on every run

      if (cfg.batch_pairs) {
        for (size_t k = 0; k < grads.size(); ++k) {
          for (int i = 0; i < grads[k].size(); ++i) {
            batch_grads[k].data()[i] += grads[k].data()[i] / P;
          }
        }
      } else {
        for (auto& g : grads) g = scale(g, -1.0);  // ascent
        adam_step(weights.parameters(), grads, state, adam);
      }

      objective_sum += incumbent_est;
      if (truth) {
        DiscreteMatching pred = decode(MatchParams{incumbent}, cfg.allow_dummy);
        nc_sum += node_correctness(pred, *truth);
        ++nc_count;
      }
    }

    if (cfg.batch_pairs) {
      for (auto& g : batch_grads) g = scale(g, -1.0);
      adam_step(weights.parameters(), batch_grads, state, adam);
    }

    EpochRecord rec;
    rec.epoch = epoch;
    rec.mean_objective = objective_sum / P;
    if (nc_count == P) rec.node_correctness = nc_sum / nc_count;
    rec.seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
    result.log.push_back(rec);

    if (result.best_epoch < 0 || rec.mean_objective > result.best_objective) {
      result.best_epoch = epoch;
      result.best_objective = rec.mean_objective;
      result.weights = weights;
    }
  }
  return result;
}

}  // namespace sgm
