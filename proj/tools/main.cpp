// Command-line pipeline: dataset generation, training, matching, evaluation.
//
// Exit codes: 0 success, 2 config error, 3 data error, 4 numerical failure.
// Every command writes its resolved configuration next to its outputs so any
// run can be reproduced from the artifact directory alone.

#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "sgm/sgm.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct Timer {
  std::chrono::steady_clock::time_point start = std::chrono::steady_clock::now();
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  }
};

void write_json(const json& j, const fs::path& path, int indent = 2) {
  std::ofstream out(path);
  if (!out) throw sgm::DataError("cannot write " + path.string());
  out << j.dump(indent) << "\n";
  if (!out) throw sgm::DataError("write failed: " + path.string());
}

json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw sgm::DataError("cannot open " + path.string());
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw sgm::DataError(path.string() + ": " + e.what());
  }
}

fs::path prepare_out_dir(const std::string& out) {
  fs::path dir(out);
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) {
    throw sgm::DataError("cannot create output directory: " + out);
  }
  return dir;
}

std::string pair_file_name(int index) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "pair_%03d.json", index);
  return buf;
}

std::vector<std::string> dataset_pair_files(const fs::path& data_dir) {
  json manifest = read_json(data_dir / "manifest.json");
  if (!manifest.contains("pairs") || !manifest["pairs"].is_array()) {
    throw sgm::DataError((data_dir / "manifest.json").string() + ": missing 'pairs' array");
  }
  std::vector<std::string> files;
  for (const auto& name : manifest["pairs"]) files.push_back(name.get<std::string>());
  if (files.empty()) throw sgm::DataError("dataset manifest lists no pairs");
  return files;
}

std::vector<sgm::GraphPair> load_dataset(const fs::path& data_dir, int max_degree) {
  std::vector<sgm::GraphPair> pairs;
  for (const auto& name : dataset_pair_files(data_dir)) {
    pairs.push_back(sgm::load_pair((data_dir / name).string(), max_degree));
  }
  const int d = pairs[0].source.features.cols();
  for (size_t i = 1; i < pairs.size(); ++i) {
    if (pairs[i].source.features.cols() != d) {
      throw sgm::DataError("pair " + std::to_string(i) + " has feature width " +
                           std::to_string(pairs[i].source.features.cols()) +
                           ", expected " + std::to_string(d));
    }
  }
  return pairs;
}

// -- gen ----------------------------------------------------------------------

struct GenOptions {
  int nodes = 100;
  int attach = 2;
  double noise = 0.05;
  int pairs = 1;
  int max_degree = sgm::kDefaultMaxDegree;
  uint64_t seed = 0;
  std::string out;
};

json gen_config_json(const GenOptions& o) {
  return json{{"command", "gen"},       {"nodes", o.nodes},
              {"attach", o.attach},     {"noise", o.noise},
              {"pairs", o.pairs},       {"max_degree", o.max_degree},
              {"seed", o.seed},         {"out", o.out}};
}

int cmd_gen(const GenOptions& o) {
  if (o.noise < 0.0 || o.noise > 1.0) throw ConfigError("--noise must lie in [0,1]");
  if (o.pairs < 1) throw ConfigError("--pairs must be positive");
  fs::path dir = prepare_out_dir(o.out);

  json manifest;
  manifest["pairs"] = json::array();
  for (int k = 0; k < o.pairs; ++k) {
    sgm::GraphPair pair = sgm::make_benchmark_pair(o.nodes, o.attach, o.noise,
                                                   sgm::substream(o.seed, "data", k),
                                                   o.max_degree);
    // structure only; features are recomputed from degrees at load
    pair.source.features = sgm::DenseMatrix();
    pair.target.features = sgm::DenseMatrix();
    const std::string name = pair_file_name(k);
    sgm::save_pair(pair, (dir / name).string());
    manifest["pairs"].push_back(name);
  }
  write_json(manifest, dir / "manifest.json");
  write_json(gen_config_json(o), dir / "config.json");
  std::cout << "wrote " << o.pairs << " pairs to " << dir.string() << "\n";
  return 0;
}

// -- train --------------------------------------------------------------------

struct TrainOptions {
  std::string data;
  std::string out;
  int epochs = 100;
  double lr = 1e-4;
  int refine_steps = 4;
  int samples = 10;
  int hidden = 64;
  int layers = 5;
  double lambda = 1.0;
  bool supervised = false;
  uint64_t seed = 0;
  double tau = 1.0;
  int sinkhorn_iters = 10;
  std::string activation = "tanh";
  int max_degree = sgm::kDefaultMaxDegree;
  bool no_dummy = false;
  bool no_stochastic = false;
  bool batch = false;
  bool eps_learnable = false;
  bool sum_accepted_only = false;
};

json train_config_json(const TrainOptions& o) {
  return json{{"command", "train"},
              {"data", o.data},
              {"out", o.out},
              {"epochs", o.epochs},
              {"lr", o.lr},
              {"T", o.refine_steps},
              {"samples", o.samples},
              {"hidden", o.hidden},
              {"layers", o.layers},
              {"lambda", o.lambda},
              {"supervised", o.supervised},
              {"seed", o.seed},
              {"tau", o.tau},
              {"sinkhorn_iters", o.sinkhorn_iters},
              {"activation", o.activation},
              {"max_degree", o.max_degree},
              {"no_dummy", o.no_dummy},
              {"no_stochastic", o.no_stochastic},
              {"batch", o.batch},
              {"eps_learnable", o.eps_learnable},
              {"sum_accepted_only", o.sum_accepted_only}};
}

int cmd_train(const TrainOptions& o) {
  std::vector<sgm::GraphPair> dataset = load_dataset(o.data, o.max_degree);
  if (o.supervised) {
    for (size_t i = 0; i < dataset.size(); ++i) {
      if (!dataset[i].ground_truth) {
        throw ConfigError("--supervised but pair " + std::to_string(i) +
                          " carries no ground truth");
      }
    }
  }
  fs::path dir = prepare_out_dir(o.out);
  write_json(train_config_json(o), dir / "config.json");

  sgm::EncoderConfig ecfg;
  ecfg.layers = o.layers;
  ecfg.hidden = o.hidden;
  ecfg.input_dim = dataset[0].source.features.cols();
  ecfg.activation = sgm::activation_from_name(o.activation);
  ecfg.epsilon_learnable = o.eps_learnable;
  sgm::EncoderWeights weights =
      sgm::EncoderWeights::glorot(ecfg, sgm::substream(o.seed, "init"));

  sgm::TrainConfig tcfg;
  tcfg.epochs = o.epochs;
  tcfg.learning_rate = o.lr;
  tcfg.refine_steps = o.refine_steps;
  tcfg.samples_per_estimate = o.samples;
  tcfg.seed = o.seed;
  tcfg.sampling.temperature = o.tau;
  tcfg.sampling.iterations = o.sinkhorn_iters;
  tcfg.sampling.noise_scale = o.no_stochastic ? 0.0 : 1.0;
  tcfg.allow_dummy = !o.no_dummy;
  tcfg.sum_over_proposals = !o.sum_accepted_only;
  tcfg.batch_pairs = o.batch;

  sgm::ObjectiveConfig obj;
  obj.lambda = o.lambda;
  obj.supervised = o.supervised;

  sgm::TrainResult result = sgm::train(dataset, std::move(weights), tcfg, obj);

  std::ofstream log(dir / "log.jsonl");
  for (const auto& rec : result.log) {
    json j{{"epoch", rec.epoch}, {"mean_objective", rec.mean_objective},
           {"seconds", rec.seconds}};
    if (rec.node_correctness) j["node_correctness"] = *rec.node_correctness;
    log << j.dump() << "\n";
  }
  sgm::save_weights(result.weights, (dir / "checkpoint.json").string());
  json summary{{"best_epoch", result.best_epoch}, {"best_objective", result.best_objective}};
  write_json(summary, dir / "summary.json");
  std::cout << "best epoch " << result.best_epoch << " mean objective "
            << result.best_objective << "\n";
  return 0;
}

// -- match --------------------------------------------------------------------

struct MatchOptions {
  std::string data;
  std::string checkpoint;
  std::string out;
  int refine_steps = 4;
  int samples = 10;
  uint64_t seed = 0;
  double tau = 1.0;
  int sinkhorn_iters = 10;
  int eval_iters = 100;
  int max_degree = sgm::kDefaultMaxDegree;
  bool no_dummy = false;
  bool no_stochastic = false;
  int jobs = 1;
};

json match_config_json(const MatchOptions& o) {
  return json{{"command", "match"},
              {"data", o.data},
              {"checkpoint", o.checkpoint},
              {"out", o.out},
              {"T", o.refine_steps},
              {"samples", o.samples},
              {"seed", o.seed},
              {"tau", o.tau},
              {"sinkhorn_iters", o.sinkhorn_iters},
              {"eval_iters", o.eval_iters},
              {"max_degree", o.max_degree},
              {"no_dummy", o.no_dummy},
              {"no_stochastic", o.no_stochastic},
              {"jobs", o.jobs}};
}

std::string match_file_name(int index) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "match_%03d.json", index);
  return buf;
}

/// Assignment in the orientation of the pair file on disk. For swapped pairs
/// the solver's source is the file's target, so the mapping is inverted and
/// unmatched file-source nodes go to the dummy.
std::vector<int> file_oriented_assignment(const sgm::GraphPair& pair,
                                          const sgm::DiscreteMatching& pred) {
  if (!pair.swapped) return pred.target_of;
  std::vector<int> out(pair.n_t(), sgm::kDummy);
  for (int i = 0; i < pred.n_s(); ++i) {
    if (pred.target_of[i] != sgm::kDummy) out[pred.target_of[i]] = i;
  }
  return out;
}

int cmd_match(const MatchOptions& o) {
  if (o.jobs < 1) throw ConfigError("--jobs must be positive");
  std::vector<sgm::GraphPair> dataset = load_dataset(o.data, o.max_degree);
  sgm::EncoderWeights weights = sgm::load_weights(o.checkpoint);
  if (weights.config.input_dim != dataset[0].source.features.cols()) {
    throw sgm::DataError("checkpoint expects feature width " +
                         std::to_string(weights.config.input_dim) + ", dataset has " +
                         std::to_string(dataset[0].source.features.cols()));
  }
  fs::path dir = prepare_out_dir(o.out);
  write_json(match_config_json(o), dir / "config.json");

  sgm::RefineConfig rcfg;
  rcfg.steps = o.refine_steps;
  rcfg.num_samples = o.samples;
  rcfg.sampling.temperature = o.tau;
  rcfg.sampling.iterations = o.sinkhorn_iters;
  rcfg.sampling.noise_scale = o.no_stochastic ? 0.0 : 1.0;
  rcfg.estimation = rcfg.sampling;
  rcfg.estimation.iterations = o.eval_iters;
  rcfg.allow_dummy = !o.no_dummy;

  const int n = static_cast<int>(dataset.size());
  std::vector<json> results(n);
  std::atomic<int> next{0};
  std::atomic<bool> failed{false};
  std::string failure;
  std::mutex failure_mutex;

  auto worker = [&] {
    for (int k = next.fetch_add(1); k < n; k = next.fetch_add(1)) {
      if (failed.load()) return;
      try {
        const sgm::GraphPair& pair = dataset[k];
        Timer timer;
        sgm::QapKernel kernel = sgm::QapKernel::edge_agreement(pair.source, pair.target);
        sgm::RefineTrace trace =
            refine_loop(pair, weights, kernel, rcfg, sgm::substream(o.seed, "match", k));
        sgm::DiscreteMatching pred =
            sgm::decode(sgm::MatchParams{trace.thetas.back()}, rcfg.allow_dummy);

        json j;
        j["pair"] = pair_file_name(k);
        j["assignment"] = file_oriented_assignment(pair, pred);
        j["objective"] = pred.objective;
        j["estimates"] = trace.estimates;
        json metrics{{"seconds", timer.seconds()}};
        if (pair.ground_truth) {
          metrics["node_correctness"] = sgm::node_correctness(pred, *pair.ground_truth);
          sgm::HardSoftMatch hs = sgm::hard_soft_match(pred, *pair.ground_truth);
          metrics["hard_match"] = hs.hard;
          metrics["soft_match"] = hs.soft;
        }
        j["metrics"] = std::move(metrics);
        results[k] = std::move(j);
      } catch (const std::exception& e) {
        std::scoped_lock lock(failure_mutex);
        failed.store(true);
        failure = e.what();
      }
    }
  };

  if (o.jobs == 1) {
    worker();
  } else {
    std::vector<std::thread> threads;
    for (int t = 0; t < o.jobs; ++t) threads.emplace_back(worker);
    for (auto& t : threads) t.join();
  }
  if (failed.load()) throw std::runtime_error(failure);

  json manifest;
  manifest["matches"] = json::array();
  for (int k = 0; k < n; ++k) {
    const std::string name = match_file_name(k);
    write_json(results[k], dir / name);
    manifest["matches"].push_back(name);
  }
  write_json(manifest, dir / "manifest.json");
  std::cout << "matched " << n << " pairs into " << dir.string() << "\n";
  return 0;
}

// -- eval ---------------------------------------------------------------------

struct EvalOptions {
  std::string data;
  std::string matches;
  std::string out;
  int max_degree = sgm::kDefaultMaxDegree;
};

struct MetricAccumulator {
  std::vector<double> values;
  void add(double v) { values.push_back(v); }
  double mean() const {
    double s = 0.0;
    for (double v : values) s += v;
    return values.empty() ? 0.0 : s / values.size();
  }
  double stderr_of_mean() const {
    if (values.size() < 2) return 0.0;
    const double m = mean();
    double sq = 0.0;
    for (double v : values) sq += (v - m) * (v - m);
    return std::sqrt(sq / (values.size() - 1)) / std::sqrt(double(values.size()));
  }
  json summary() const { return json{{"mean", mean()}, {"stderr", stderr_of_mean()}}; }
};

int cmd_eval(const EvalOptions& o) {
  std::vector<sgm::GraphPair> dataset = load_dataset(o.data, o.max_degree);
  fs::path match_dir(o.matches);
  json manifest = read_json(match_dir / "manifest.json");
  if (!manifest.contains("matches")) {
    throw sgm::DataError("match manifest without 'matches' array");
  }
  if (manifest["matches"].size() != dataset.size()) {
    throw sgm::DataError("dataset has " + std::to_string(dataset.size()) + " pairs but " +
                         std::to_string(manifest["matches"].size()) + " matchings");
  }
  fs::path dir = prepare_out_dir(o.out);
  write_json(json{{"command", "eval"},
                  {"data", o.data},
                  {"matches", o.matches},
                  {"out", o.out},
                  {"max_degree", o.max_degree}},
             dir / "config.json");

  std::ofstream csv(dir / "report.csv");
  csv << "pair_id,nc,hard,soft,objective,seconds\n";
  MetricAccumulator nc, hard, soft, objective;
  for (size_t k = 0; k < dataset.size(); ++k) {
    const json m = read_json(match_dir / manifest["matches"][k].get<std::string>());
    const sgm::GraphPair& pair = dataset[k];
    std::vector<int> assignment = m["assignment"].get<std::vector<int>>();

    // recompute the metrics from the stored assignment; aggregate totals are
    // then recomputations from individual matching files by construction
    sgm::DiscreteMatching pred;
    if (pair.swapped) {
      pred.target_of.assign(pair.n_s(), sgm::kDummy);
      for (size_t j = 0; j < assignment.size(); ++j) {
        if (assignment[j] != sgm::kDummy) pred.target_of[assignment[j]] = static_cast<int>(j);
      }
    } else {
      pred.target_of = assignment;
    }
    pred.validate(pair.n_t());

    const double obj_val = m["objective"].get<double>();
    const double secs = m.contains("metrics") && m["metrics"].contains("seconds")
                            ? m["metrics"]["seconds"].get<double>()
                            : 0.0;
    std::string nc_field = "", hard_field = "", soft_field = "";
    if (pair.ground_truth) {
      const double nc_val = sgm::node_correctness(pred, *pair.ground_truth);
      sgm::HardSoftMatch hs = sgm::hard_soft_match(pred, *pair.ground_truth);
      if (m.contains("metrics") && m["metrics"].contains("node_correctness")) {
        const double stored = m["metrics"]["node_correctness"].get<double>();
        if (std::abs(stored - nc_val) > 1e-12) {
          throw sgm::DataError("stored node correctness disagrees with recomputation for " +
                               manifest["matches"][k].get<std::string>());
        }
      }
      nc.add(nc_val);
      hard.add(hs.hard);
      soft.add(hs.soft);
      nc_field = std::to_string(nc_val);
      hard_field = std::to_string(hs.hard);
      soft_field = std::to_string(hs.soft);
    }
    objective.add(obj_val);
    csv << k << "," << nc_field << "," << hard_field << "," << soft_field << "," << obj_val
        << "," << secs << "\n";
  }

  json report;
  report["pairs"] = dataset.size();
  report["objective"] = objective.summary();
  if (!nc.values.empty()) {
    report["node_correctness"] = nc.summary();
    report["hard_match"] = hard.summary();
    report["soft_match"] = soft.summary();
  }
  write_json(report, dir / "report.json");
  std::cout << report.dump(2) << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"stochastic graph matching pipeline"};
  app.require_subcommand(1);

  GenOptions gen;
  CLI::App* c_gen = app.add_subcommand("gen", "generate a synthetic benchmark dataset");
  c_gen->add_option("--nodes", gen.nodes, "nodes per graph")->check(CLI::PositiveNumber);
  c_gen->add_option("--attach", gen.attach, "BA attachment count");
  c_gen->add_option("--noise", gen.noise, "fraction of noisy edges added to the target");
  c_gen->add_option("--pairs", gen.pairs, "number of pairs");
  c_gen->add_option("--max-degree", gen.max_degree, "degree feature cap");
  c_gen->add_option("--seed", gen.seed, "root seed");
  c_gen->add_option("--out", gen.out, "output directory")->required();

  TrainOptions tr;
  CLI::App* c_train = app.add_subcommand("train", "train the matching model");
  c_train->add_option("--data", tr.data, "dataset directory")->required();
  c_train->add_option("--out", tr.out, "output directory")->required();
  c_train->add_option("--epochs", tr.epochs, "training epochs");
  c_train->add_option("--lr", tr.lr, "Adam learning rate");
  c_train->add_option("--T", tr.refine_steps, "refinement steps per pair");
  c_train->add_option("--samples", tr.samples, "Monte Carlo samples per estimate");
  c_train->add_option("--hidden", tr.hidden, "encoder hidden width");
  c_train->add_option("--layers", tr.layers, "encoder layers");
  c_train->add_option("--lambda", tr.lambda, "supervised term weight");
  c_train->add_flag("--supervised", tr.supervised, "use the supervised objective");
  c_train->add_option("--seed", tr.seed, "root seed");
  c_train->add_option("--tau", tr.tau, "relaxation temperature");
  c_train->add_option("--sinkhorn-iters", tr.sinkhorn_iters, "Sinkhorn rounds while training");
  c_train->add_option("--activation", tr.activation, "tanh or leaky_relu");
  c_train->add_option("--max-degree", tr.max_degree, "degree feature cap");
  c_train->add_flag("--no-dummy", tr.no_dummy, "forbid dummy assignments (ablation)");
  c_train->add_flag("--no-stochastic", tr.no_stochastic, "disable Gumbel noise (ablation)");
  c_train->add_flag("--batch", tr.batch, "average gradients across pairs per update");
  c_train->add_flag("--eps-learnable", tr.eps_learnable, "learn the GIN epsilon");
  c_train->add_flag("--sum-accepted-only", tr.sum_accepted_only,
                    "sum the loss over accepted incumbents instead of all proposals");

  MatchOptions ma;
  CLI::App* c_match = app.add_subcommand("match", "decode matchings with a trained model");
  c_match->add_option("--data", ma.data, "dataset directory")->required();
  c_match->add_option("--checkpoint", ma.checkpoint, "trained weights")->required();
  c_match->add_option("--out", ma.out, "output directory")->required();
  c_match->add_option("--T", ma.refine_steps, "refinement steps");
  c_match->add_option("--samples", ma.samples, "Monte Carlo samples per estimate");
  c_match->add_option("--seed", ma.seed, "root seed");
  c_match->add_option("--tau", ma.tau, "relaxation temperature");
  c_match->add_option("--sinkhorn-iters", ma.sinkhorn_iters, "Sinkhorn rounds for sampling");
  c_match->add_option("--eval-iters", ma.eval_iters, "Sinkhorn rounds for estimates");
  c_match->add_option("--max-degree", ma.max_degree, "degree feature cap");
  c_match->add_flag("--no-dummy", ma.no_dummy, "forbid dummy assignments (ablation)");
  c_match->add_flag("--no-stochastic", ma.no_stochastic, "disable Gumbel noise (ablation)");
  c_match->add_option("--jobs", ma.jobs, "parallel workers over pairs");

  EvalOptions ev;
  CLI::App* c_eval = app.add_subcommand("eval", "aggregate metrics from matchings");
  c_eval->add_option("--data", ev.data, "dataset directory")->required();
  c_eval->add_option("--matches", ev.matches, "matching directory")->required();
  c_eval->add_option("--out", ev.out, "output directory")->required();
  c_eval->add_option("--max-degree", ev.max_degree, "degree feature cap");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);  // --help
    app.exit(e);
    return 2;
  }

  try {
    if (c_gen->parsed()) return cmd_gen(gen);
    if (c_train->parsed()) return cmd_train(tr);
    if (c_match->parsed()) return cmd_match(ma);
    if (c_eval->parsed()) return cmd_eval(ev);
    std::cerr << "no subcommand\n";
    return 2;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const std::invalid_argument& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const sgm::DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 3;
  } catch (const sgm::TrainingDiverged& e) {
    std::cerr << "numerical failure: " << e.what() << "\n";
    return 4;
  } catch (const std::exception& e) {
    std::cerr << "numerical failure: " << e.what() << "\n";
    return 4;
  }
}
