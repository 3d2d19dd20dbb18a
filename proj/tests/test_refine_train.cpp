#include <catch2/catch_amalgamated.hpp>

#include "sgm/refine.hpp"
#include "sgm/train.hpp"
#include "test_helpers.hpp"

using namespace sgm;
using sgm::test::random_matrix;

namespace {

EncoderConfig desk_config(const GraphPair& pair, int hidden = 4, int layers = 2) {
  EncoderConfig cfg;
  cfg.layers = layers;
  cfg.hidden = hidden;
  cfg.input_dim = pair.source.features.cols();
  return cfg;
}

GraphPair identical_pair(int nodes, uint64_t seed, int max_degree = 6) {
  return make_benchmark_pair(nodes, 2, 0.0, seed, max_degree);
}

}  // namespace

TEST_CASE("refine_loop with zero steps returns only the initial prediction") {
  GraphPair pair = identical_pair(5, 1);
  EncoderWeights w = EncoderWeights::glorot(desk_config(pair), 2);
  QapKernel kernel = QapKernel::edge_agreement(pair.source, pair.target);
  RefineConfig cfg;
  cfg.steps = 0;
  RefineTrace trace = refine_loop(pair, w, kernel, cfg, 3);
  REQUIRE(trace.thetas.size() == 1);
  REQUIRE(trace.accepted == std::vector<bool>{true});
}

TEST_CASE("refine_loop keeps the incumbent when a proposal scores lower") {
  // scan seeds until some proposal is rejected, then check the retention rule
  GraphPair pair = identical_pair(6, 2);
  EncoderWeights w = EncoderWeights::glorot(desk_config(pair), 7);
  QapKernel kernel = QapKernel::edge_agreement(pair.source, pair.target);
  RefineConfig cfg;
  cfg.steps = 4;
  bool saw_rejection = false;
  for (uint64_t seed = 0; seed < 20 && !saw_rejection; ++seed) {
    RefineTrace trace = refine_loop(pair, w, kernel, cfg, seed);
    trace.validate();
    for (size_t t = 1; t < trace.accepted.size(); ++t) {
      if (!trace.accepted[t]) {
        saw_rejection = true;
        REQUIRE(trace.thetas[t] == trace.thetas[t - 1]);
        REQUIRE(trace.estimates[t] == trace.estimates[t - 1]);
      }
    }
  }
  REQUIRE(saw_rejection);
}

TEST_CASE("refine_loop accepted estimates never decrease across many runs") {
  Rng rng(55);
  for (int c = 0; c < 15; ++c) {
    GraphPair pair = make_benchmark_pair(rng.uniform_int(4, 8), 2, 0.1, rng.next_u64(), 6);
    EncoderWeights w = EncoderWeights::glorot(desk_config(pair, 3, 2), rng.next_u64());
    QapKernel kernel = QapKernel::edge_agreement(pair.source, pair.target);
    RefineConfig cfg;
    cfg.steps = 3;
    cfg.num_samples = 4;
    RefineTrace trace = refine_loop(pair, w, kernel, cfg, rng.next_u64());
    trace.validate();
    for (size_t t = 1; t < trace.estimates.size(); ++t) {
      REQUIRE(trace.estimates[t] >= trace.estimates[t - 1]);
    }
  }
}

TEST_CASE("RefineTrace validation catches decreasing estimates") {
  RefineTrace bad;
  bad.thetas = {DenseMatrix(1, 1, 0.0), DenseMatrix(1, 1, 0.0)};
  bad.estimates = {2.0, 1.0};
  bad.accepted = {true, true};
  REQUIRE_THROWS_AS(bad.validate(), std::logic_error);
}

TEST_CASE("adam leaves parameters alone on zero gradients") {
  Rng rng(3);
  DenseMatrix p = random_matrix(3, 3, rng);
  DenseMatrix orig = p;
  AdamState state;
  std::vector<DenseMatrix*> params = {&p};
  state.init(params);
  adam_step(params, {DenseMatrix(3, 3, 0.0)}, state, AdamConfig{});
  REQUIRE(p == orig);
}

TEST_CASE("first adam step moves by about lr against the gradient sign") {
  Rng rng(4);
  DenseMatrix p = random_matrix(2, 3, rng);
  DenseMatrix orig = p;
  DenseMatrix g = random_matrix(2, 3, rng, 0.5, 2.0);
  g(0, 1) *= -1.0;
  AdamConfig cfg;
  cfg.learning_rate = 0.01;
  AdamState state;
  std::vector<DenseMatrix*> params = {&p};
  state.init(params);
  adam_step(params, {g}, state, cfg);
  for (int i = 0; i < p.size(); ++i) {
    const double step = p.data()[i] - orig.data()[i];
    const double sign = g.data()[i] > 0 ? 1.0 : -1.0;
    REQUIRE(step * sign < 0.0);  // against the gradient
    REQUIRE(std::abs(step) == Catch::Approx(cfg.learning_rate).epsilon(1e-4));
  }
}

TEST_CASE("adam trajectories are reproducible") {
  auto run = [] {
    Rng rng(5);
    DenseMatrix p = random_matrix(2, 2, rng);
    AdamState state;
    std::vector<DenseMatrix*> params = {&p};
    state.init(params);
    for (int i = 0; i < 10; ++i) {
      adam_step(params, {random_matrix(2, 2, rng)}, state, AdamConfig{});
    }
    return p;
  };
  REQUIRE(run() == run());
}

TEST_CASE("one training epoch updates weights and logs a record") {
  GraphPair pair = identical_pair(5, 7);
  EncoderWeights w = EncoderWeights::glorot(desk_config(pair), 11);
  TrainConfig cfg;
  cfg.epochs = 1;
  cfg.refine_steps = 1;
  cfg.samples_per_estimate = 3;
  cfg.learning_rate = 1e-3;
  TrainResult result = train({pair}, w, cfg, ObjectiveConfig{});
  REQUIRE(result.log.size() == 1);
  REQUIRE(result.log[0].node_correctness.has_value());
  bool changed = false;
  for (size_t l = 0; l < w.w.size(); ++l) {
    if (!(result.weights.w[l] == w.w[l])) changed = true;
  }
  REQUIRE(changed);
}

TEST_CASE("zero learning rate leaves weights bit-exact") {
  GraphPair pair = identical_pair(5, 9);
  EncoderWeights w = EncoderWeights::glorot(desk_config(pair), 13);
  TrainConfig cfg;
  cfg.epochs = 2;
  cfg.refine_steps = 1;
  cfg.samples_per_estimate = 2;
  cfg.learning_rate = 0.0;
  TrainResult result = train({pair}, w, cfg, ObjectiveConfig{});
  for (size_t l = 0; l < w.w.size(); ++l) {
    REQUIRE(result.weights.w[l] == w.w[l]);
    REQUIRE(result.weights.b[l] == w.b[l]);
  }
}

TEST_CASE("training is reproducible from config and seed") {
  GraphPair pair = identical_pair(6, 15);
  EncoderWeights w = EncoderWeights::glorot(desk_config(pair), 17);
  TrainConfig cfg;
  cfg.epochs = 3;
  cfg.refine_steps = 2;
  cfg.samples_per_estimate = 3;
  cfg.seed = 99;
  auto a = train({pair}, w, cfg, ObjectiveConfig{});
  auto b = train({pair}, w, cfg, ObjectiveConfig{});
  REQUIRE(a.log.size() == b.log.size());
  for (size_t e = 0; e < a.log.size(); ++e) {
    REQUIRE(a.log[e].mean_objective == b.log[e].mean_objective);
    REQUIRE(a.log[e].node_correctness == b.log[e].node_correctness);
  }
  for (size_t l = 0; l < a.weights.w.size(); ++l) {
    REQUIRE(a.weights.w[l] == b.weights.w[l]);
  }
}

TEST_CASE("unsupervised training on an identical pair approaches the optimum") {
  GraphPair pair = identical_pair(5, 23);
  EncoderWeights w = EncoderWeights::glorot(desk_config(pair, 24, 3), 31);
  TrainConfig cfg;
  cfg.epochs = 300;
  cfg.refine_steps = 1;
  cfg.samples_per_estimate = 5;
  cfg.learning_rate = 5e-3;
  cfg.seed = 1;
  TrainResult result = train({pair}, w, cfg, ObjectiveConfig{});

  // the optimum for isomorphic graphs is matching every edge: 2|E|; measure
  // the trained parameters with an evaluation-grade estimate (more Sinkhorn
  // rounds than the short training relaxation)
  Tape t;
  EncoderVars vars = register_encoder(t, result.weights, false);
  DenseMatrix theta = t.value(compute_theta(t, vars, result.weights.config, pair));
  QapKernel kernel = QapKernel::edge_agreement(pair.source, pair.target);
  SinkhornConfig eval_cfg;
  eval_cfg.iterations = 100;
  const double est = expected_objective_value(theta, eval_cfg, kernel, nullptr,
                                              ObjectiveConfig{}, 20, 77, false)
                         .value;
  const double optimum = 2.0 * pair.source.num_edges();
  REQUIRE(est >= 0.9 * optimum);
}

TEST_CASE("supervised training demands ground truth") {
  GraphPair pair = identical_pair(4, 3);
  pair.ground_truth.reset();
  EncoderWeights w = EncoderWeights::glorot(desk_config(pair), 7);
  TrainConfig cfg;
  cfg.epochs = 1;
  ObjectiveConfig obj;
  obj.supervised = true;
  REQUIRE_THROWS_AS(train({pair}, w, cfg, obj), std::invalid_argument);
}

TEST_CASE("batch mode averages gradients across pairs") {
  GraphPair a = identical_pair(4, 41);
  GraphPair b = identical_pair(5, 43);
  EncoderWeights w = EncoderWeights::glorot(desk_config(a), 3);
  TrainConfig cfg;
  cfg.epochs = 2;
  cfg.refine_steps = 1;
  cfg.samples_per_estimate = 2;
  cfg.batch_pairs = true;
  TrainResult result = train({a, b}, w, cfg, ObjectiveConfig{});
  REQUIRE(result.log.size() == 2);
}

TEST_CASE("loss over accepted incumbents only is a supported variant") {
  GraphPair pair = identical_pair(5, 51);
  EncoderWeights w = EncoderWeights::glorot(desk_config(pair), 5);
  TrainConfig cfg;
  cfg.epochs = 1;
  cfg.refine_steps = 2;
  cfg.samples_per_estimate = 2;
  cfg.sum_over_proposals = false;
  REQUIRE_NOTHROW(train({pair}, w, cfg, ObjectiveConfig{}));
}
