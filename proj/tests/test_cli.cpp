#include <catch2/catch_amalgamated.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>

#include <json.hpp>

#include "sgm/pair_io.hpp"

using nlohmann::json;
namespace fs = std::filesystem;

#ifndef SGM_CLI_PATH
#error "SGM_CLI_PATH must point at the built binary"
#endif

namespace {

struct RunResult {
  int exit_code;
  std::string output;
};

RunResult run_cli(const std::string& args) {
  const std::string log = (fs::temp_directory_path() / "sgm_cli_out.txt").string();
  const std::string cmd = std::string(SGM_CLI_PATH) + " " + args + " > " + log + " 2>&1";
  const int status = std::system(cmd.c_str());
  std::ifstream in(log);
  std::string output((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return {WEXITSTATUS(status), output};
}

fs::path scratch_dir(const std::string& name) {
  fs::path dir = fs::temp_directory_path() / "sgm_cli_test" / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

json read_json_file(const fs::path& p) {
  std::ifstream in(p);
  REQUIRE(in.good());
  return json::parse(in);
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  REQUIRE(in.good());
  return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

}  // namespace

TEST_CASE("gen writes pairs, a manifest, and its resolved config") {
  fs::path dir = scratch_dir("gen");
  RunResult r = run_cli("gen --nodes 20 --noise 0.05 --pairs 3 --seed 7 --out " +
                        (dir / "data").string());
  REQUIRE(r.exit_code == 0);
  json manifest = read_json_file(dir / "data" / "manifest.json");
  REQUIRE(manifest["pairs"].size() == 3);
  for (const auto& name : manifest["pairs"]) {
    sgm::GraphPair pair = sgm::load_pair((dir / "data" / name.get<std::string>()).string());
    pair.validate();
    REQUIRE(pair.ground_truth.has_value());
  }
  json config = read_json_file(dir / "data" / "config.json");
  REQUIRE(config["nodes"] == 20);
  REQUIRE(config["noise"] == 0.05);
}

TEST_CASE("gen with zero noise produces isomorphic pairs") {
  fs::path dir = scratch_dir("gen0");
  REQUIRE(run_cli("gen --nodes 15 --noise 0 --pairs 1 --seed 3 --out " + dir.string())
              .exit_code == 0);
  sgm::GraphPair pair = sgm::load_pair((dir / "pair_000.json").string());
  REQUIRE(pair.source.num_edges() == pair.target.num_edges());
  // the truth maps source edges exactly onto target edges
  std::vector<int> perm(pair.n_s());
  for (const auto& [i, j] : *pair.ground_truth) perm[i] = j;
  std::set<sgm::Edge> target_edges(pair.target.edges.begin(), pair.target.edges.end());
  for (const auto& [a, b] : pair.source.edges) {
    REQUIRE(target_edges.count({std::min(perm[a], perm[b]), std::max(perm[a], perm[b])}) == 1);
  }
}

TEST_CASE("gen reruns are byte-identical") {
  fs::path a = scratch_dir("gen_a"), b = scratch_dir("gen_b");
  REQUIRE(run_cli("gen --nodes 12 --noise 0.1 --pairs 2 --seed 9 --out " + a.string())
              .exit_code == 0);
  REQUIRE(run_cli("gen --nodes 12 --noise 0.1 --pairs 2 --seed 9 --out " + b.string())
              .exit_code == 0);
  REQUIRE(slurp(a / "pair_000.json") == slurp(b / "pair_000.json"));
  REQUIRE(slurp(a / "pair_001.json") == slurp(b / "pair_001.json"));
  REQUIRE(slurp(a / "manifest.json") == slurp(b / "manifest.json"));
}

TEST_CASE("the full pipeline runs and its reports are consistent") {
  fs::path dir = scratch_dir("pipeline");
  const std::string data = (dir / "data").string();
  const std::string run = (dir / "run").string();
  const std::string matches = (dir / "matches").string();
  const std::string report = (dir / "eval").string();

  REQUIRE(run_cli("gen --nodes 16 --noise 0 --pairs 2 --seed 21 --out " + data).exit_code == 0);
  RunResult tr = run_cli("train --data " + data + " --out " + run +
                         " --epochs 2 --hidden 8 --layers 2 --T 1 --samples 3 --seed 4");
  REQUIRE(tr.exit_code == 0);
  REQUIRE(fs::exists(fs::path(run) / "checkpoint.json"));
  REQUIRE(fs::exists(fs::path(run) / "log.jsonl"));

  // one log record per epoch with the contract fields
  std::ifstream log(fs::path(run) / "log.jsonl");
  std::string line;
  int records = 0;
  while (std::getline(log, line)) {
    json rec = json::parse(line);
    REQUIRE(rec.contains("epoch"));
    REQUIRE(rec.contains("mean_objective"));
    REQUIRE(rec.contains("seconds"));
    ++records;
  }
  REQUIRE(records == 2);

  REQUIRE(run_cli("match --data " + data + " --checkpoint " + run +
                  "/checkpoint.json --out " + matches + " --T 1 --samples 3 --seed 5")
              .exit_code == 0);
  json match0 = read_json_file(fs::path(matches) / "match_000.json");
  REQUIRE(match0.contains("assignment"));
  REQUIRE(match0.contains("objective"));
  REQUIRE(match0["metrics"].contains("node_correctness"));

  REQUIRE(run_cli("eval --data " + data + " --matches " + matches + " --out " + report)
              .exit_code == 0);
  const std::string csv = slurp(fs::path(report) / "report.csv");
  REQUIRE(csv.rfind("pair_id,nc,hard,soft,objective,seconds", 0) == 0);

  // aggregate equals recomputation from the individual matching files
  json agg = read_json_file(fs::path(report) / "report.json");
  json match1 = read_json_file(fs::path(matches) / "match_001.json");
  const double mean_nc = (match0["metrics"]["node_correctness"].get<double>() +
                          match1["metrics"]["node_correctness"].get<double>()) /
                         2.0;
  REQUIRE(agg["node_correctness"]["mean"].get<double>() == Catch::Approx(mean_nc).margin(1e-12));
}

TEST_CASE("supervised training without ground truth is a startup error") {
  fs::path dir = scratch_dir("nosup");
  const std::string data = (dir / "data").string();
  REQUIRE(run_cli("gen --nodes 10 --noise 0 --pairs 1 --seed 2 --out " + data).exit_code == 0);
  // strip the ground truth from the pair file
  json pair = read_json_file(fs::path(data) / "pair_000.json");
  pair.erase("ground_truth");
  std::ofstream(fs::path(data) / "pair_000.json") << pair.dump();
  RunResult r = run_cli("train --data " + data + " --out " + (dir / "run").string() +
                        " --epochs 1 --hidden 4 --layers 1 --supervised");
  REQUIRE(r.exit_code == 2);
}

TEST_CASE("bad flags and bad data use distinct exit codes") {
  fs::path dir = scratch_dir("errors");
  REQUIRE(run_cli("train --data /nonexistent --out " + (dir / "x").string()).exit_code == 3);
  REQUIRE(run_cli("gen --nodes 10 --noise 2.0 --pairs 1 --out " + (dir / "y").string())
              .exit_code == 2);
  REQUIRE(run_cli("nonsense").exit_code == 2);
  REQUIRE(run_cli("match --data /nonexistent --checkpoint nope --out " +
                  (dir / "z").string())
              .exit_code == 3);
}

TEST_CASE("ablation flags are echoed in the resolved config") {
  fs::path dir = scratch_dir("ablation");
  const std::string data = (dir / "data").string();
  REQUIRE(run_cli("gen --nodes 10 --noise 0 --pairs 1 --seed 6 --out " + data).exit_code == 0);
  REQUIRE(run_cli("train --data " + data + " --out " + (dir / "run").string() +
                  " --epochs 1 --hidden 4 --layers 1 --T 0 --samples 2 --no-dummy "
                  "--no-stochastic")
              .exit_code == 0);
  json config = read_json_file(dir / "run" / "config.json");
  REQUIRE(config["no_dummy"] == true);
  REQUIRE(config["no_stochastic"] == true);
  REQUIRE(config["T"] == 0);
}

TEST_CASE("match respects --jobs and stays deterministic") {
  fs::path dir = scratch_dir("jobs");
  const std::string data = (dir / "data").string();
  const std::string run = (dir / "run").string();
  REQUIRE(run_cli("gen --nodes 12 --noise 0 --pairs 3 --seed 8 --out " + data).exit_code == 0);
  REQUIRE(run_cli("train --data " + data + " --out " + run +
                  " --epochs 1 --hidden 4 --layers 1 --T 0 --samples 2")
              .exit_code == 0);
  const std::string m1 = (dir / "m1").string(), m2 = (dir / "m2").string();
  REQUIRE(run_cli("match --data " + data + " --checkpoint " + run +
                  "/checkpoint.json --out " + m1 + " --T 1 --samples 2 --seed 9 --jobs 1")
              .exit_code == 0);
  REQUIRE(run_cli("match --data " + data + " --checkpoint " + run +
                  "/checkpoint.json --out " + m2 + " --T 1 --samples 2 --seed 9 --jobs 3")
              .exit_code == 0);
  for (int k = 0; k < 3; ++k) {
    char name[32];
    std::snprintf(name, sizeof(name), "match_%03d.json", k);
    json a = read_json_file(fs::path(m1) / name);
    json b = read_json_file(fs::path(m2) / name);
    REQUIRE(a["assignment"] == b["assignment"]);
    REQUIRE(a["objective"] == b["objective"]);
    REQUIRE(a["estimates"] == b["estimates"]);
  }
}
