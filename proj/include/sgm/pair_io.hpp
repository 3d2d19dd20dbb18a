#pragma once

#include <fstream>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>

#include <json.hpp>

#include "sgm/graph.hpp"

namespace sgm {

/// Raised for malformed or inconsistent data files; the CLI maps it to its
/// data-error exit code.
struct DataError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

namespace detail {

inline nlohmann::json graph_to_json(const Graph& g) {
  nlohmann::json j;
  j["n"] = g.num_nodes;
  nlohmann::json edges = nlohmann::json::array();
  for (const auto& [a, b] : g.edges) edges.push_back({a, b});
  j["edges"] = std::move(edges);
  if (g.has_features()) {
    nlohmann::json feats = nlohmann::json::array();
    for (int i = 0; i < g.features.rows(); ++i) {
      nlohmann::json row = nlohmann::json::array();
      for (int k = 0; k < g.features.cols(); ++k) row.push_back(g.features(i, k));
      feats.push_back(std::move(row));
    }
    j["features"] = std::move(feats);
  }
  return j;
}

inline Graph graph_from_json(const nlohmann::json& j, const std::string& field) {
  Graph g;
  if (!j.contains("n") || !j["n"].is_number_integer()) {
    throw DataError(field + ".n: missing or not an integer");
  }
  g.num_nodes = j["n"].get<int>();
  if (g.num_nodes <= 0) throw DataError(field + ".n: must be positive");
  if (!j.contains("edges") || !j["edges"].is_array()) {
    throw DataError(field + ".edges: missing or not an array");
  }
  for (const auto& e : j["edges"]) {
    if (!e.is_array() || e.size() != 2) throw DataError(field + ".edges: entry is not a pair");
    int a = e[0].get<int>(), b = e[1].get<int>();
    if (a < 0 || b < 0 || a >= g.num_nodes || b >= g.num_nodes) {
      throw DataError(field + ".edges: node index (" + std::to_string(a) + "," +
                      std::to_string(b) + ") out of range for n=" +
                      std::to_string(g.num_nodes));
    }
    if (a == b) throw DataError(field + ".edges: self-loop at " + std::to_string(a));
    g.edges.push_back({std::min(a, b), std::max(a, b)});
  }
  normalize_edges(g.edges);
  if (j.contains("features")) {
    const auto& feats = j["features"];
    if (!feats.is_array() || static_cast<int>(feats.size()) != g.num_nodes) {
      throw DataError(field + ".features: need exactly one row per node");
    }
    int d = feats.empty() ? 0 : static_cast<int>(feats[0].size());
    g.features = DenseMatrix(g.num_nodes, d);
    for (int i = 0; i < g.num_nodes; ++i) {
      if (static_cast<int>(feats[i].size()) != d) {
        throw DataError(field + ".features: ragged row " + std::to_string(i));
      }
      for (int k = 0; k < d; ++k) g.features(i, k) = feats[i][k].get<double>();
    }
  }
  return g;
}

inline int line_of_offset(const std::string& text, size_t offset) {
  int line = 1;
  for (size_t i = 0; i < offset && i < text.size(); ++i) {
    if (text[i] == '\n') ++line;
  }
  return line;
}

}  // namespace detail

/// Pair file schema:
///   {"source": {"n", "edges", "features"?}, "target": {...}, "ground_truth"?}
/// Missing features are filled with degree features at load. If the file has
/// n_s > n_t the sides are swapped (and the truth transposed); `swapped`
/// records it so outputs can use the caller's orientation.
inline GraphPair load_pair(const std::string& path, int max_degree = kDefaultMaxDegree) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open pair file: " + path);
  std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw DataError(path + ":" + std::to_string(detail::line_of_offset(text, e.byte)) +
                    ": " + e.what());
  }
  try {
    GraphPair pair;
    if (!j.contains("source") || !j.contains("target")) {
      throw DataError("pair file needs 'source' and 'target' objects");
    }
    pair.source = detail::graph_from_json(j["source"], "source");
    pair.target = detail::graph_from_json(j["target"], "target");
    if (j.contains("ground_truth")) {
      Correspondence truth;
      for (const auto& e : j["ground_truth"]) {
        if (!e.is_array() || e.size() != 2) {
          throw DataError("ground_truth: entry is not a pair");
        }
        truth.push_back({e[0].get<int>(), e[1].get<int>()});
      }
      pair.ground_truth = std::move(truth);
    }
    if (pair.source.num_nodes > pair.target.num_nodes) {
      std::swap(pair.source, pair.target);
      pair.swapped = true;
      if (pair.ground_truth) {
        for (auto& [a, b] : *pair.ground_truth) std::swap(a, b);
      }
    }
    if (!pair.source.has_features()) {
      pair.source.features = degree_features(pair.source, max_degree);
    }
    if (!pair.target.has_features()) {
      pair.target.features = degree_features(pair.target, max_degree);
    }
    pair.validate();
    return pair;
  } catch (const std::invalid_argument& e) {
    throw DataError(path + ": " + e.what());
  } catch (const nlohmann::json::exception& e) {
    throw DataError(path + ": " + e.what());
  }
}

inline void save_pair(const GraphPair& pair, const std::string& path) {
  nlohmann::json j;
  if (pair.swapped) {
    // Write back in the caller's original orientation.
    j["source"] = detail::graph_to_json(pair.target);
    j["target"] = detail::graph_to_json(pair.source);
    if (pair.ground_truth) {
      nlohmann::json truth = nlohmann::json::array();
      for (const auto& [a, b] : *pair.ground_truth) truth.push_back({b, a});
      j["ground_truth"] = std::move(truth);
    }
  } else {
    j["source"] = detail::graph_to_json(pair.source);
    j["target"] = detail::graph_to_json(pair.target);
    if (pair.ground_truth) {
      nlohmann::json truth = nlohmann::json::array();
      for (const auto& [a, b] : *pair.ground_truth) truth.push_back({a, b});
      j["ground_truth"] = std::move(truth);
    }
  }
  std::ofstream out(path);
  if (!out) throw DataError("cannot write pair file: " + path);
  out << j.dump(2) << "\n";
  if (!out) throw DataError("write failed: " + path);
}

}  // namespace sgm
