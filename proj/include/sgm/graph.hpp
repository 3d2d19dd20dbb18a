#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "sgm/matrix.hpp"
#include "sgm/rng.hpp"

namespace sgm {

using Edge = std::pair<int, int>;
using Correspondence = std::vector<std::pair<int, int>>;

/// Undirected graph with optional per-node feature vectors. Immutable by
/// convention after construction; share freely across workers.
struct Graph {
  int num_nodes = 0;
  std::vector<Edge> edges;  // stored with i < j, sorted, unique
  DenseMatrix features;     // num_nodes x d; empty means "not assigned yet"

  int num_edges() const { return static_cast<int>(edges.size()); }

  std::vector<int> degrees() const {
    std::vector<int> deg(num_nodes, 0);
    for (const auto& [i, j] : edges) {
      ++deg[i];
      ++deg[j];
    }
    return deg;
  }

  /// Dense symmetric 0/1 adjacency.
  DenseMatrix adjacency() const {
    DenseMatrix a(num_nodes, num_nodes);
    for (const auto& [i, j] : edges) {
      a(i, j) = 1.0;
      a(j, i) = 1.0;
    }
    return a;
  }

  bool has_features() const { return !features.empty(); }

  void validate() const {
    if (num_nodes <= 0) throw std::invalid_argument("Graph: num_nodes must be positive");
    Edge prev{-1, -1};
    for (const auto& e : edges) {
      if (e.first < 0 || e.second < 0 || e.first >= num_nodes || e.second >= num_nodes) {
        throw std::invalid_argument("Graph: edge (" + std::to_string(e.first) + "," +
                                    std::to_string(e.second) + ") out of range for " +
                                    std::to_string(num_nodes) + " nodes");
      }
      if (e.first == e.second) {
        throw std::invalid_argument("Graph: self-loop at node " + std::to_string(e.first));
      }
      if (e.first > e.second) {
        throw std::invalid_argument("Graph: edge not normalized (" + std::to_string(e.first) +
                                    "," + std::to_string(e.second) + ")");
      }
      if (!(prev < e)) {
        throw std::invalid_argument("Graph: duplicate or unsorted edge (" +
                                    std::to_string(e.first) + "," + std::to_string(e.second) +
                                    ")");
      }
      prev = e;
    }
    if (!features.empty() && features.rows() != num_nodes) {
      throw std::invalid_argument("Graph: features have " + std::to_string(features.rows()) +
                                  " rows for " + std::to_string(num_nodes) + " nodes");
    }
  }
};

inline void normalize_edges(std::vector<Edge>& edges) {
  for (auto& e : edges) {
    if (e.first > e.second) std::swap(e.first, e.second);
  }
  std::sort(edges.begin(), edges.end());
  edges.erase(std::unique(edges.begin(), edges.end()), edges.end());
}

/// A matching instance: source, target, and (when known) the true node
/// correspondence. The convention source.num_nodes <= target.num_nodes is
/// enforced at load by swapping; `swapped` records the original orientation
/// so reported matchings can be flipped back.
struct GraphPair {
  Graph source;
  Graph target;
  std::optional<Correspondence> ground_truth;
  bool swapped = false;

  int n_s() const { return source.num_nodes; }
  int n_t() const { return target.num_nodes; }

  void validate() const {
    source.validate();
    target.validate();
    if (source.num_nodes > target.num_nodes) {
      throw std::invalid_argument("GraphPair: source has more nodes than target");
    }
    if (source.has_features() && target.has_features() &&
        source.features.cols() != target.features.cols()) {
      throw std::invalid_argument("GraphPair: feature widths differ, " +
                                  source.features.shape_str() + " vs " +
                                  target.features.shape_str());
    }
    if (ground_truth) {
      std::vector<bool> src_seen(source.num_nodes, false), tgt_seen(target.num_nodes, false);
      for (const auto& [i, j] : *ground_truth) {
        if (i < 0 || i >= source.num_nodes || j < 0 || j >= target.num_nodes) {
          throw std::invalid_argument("GraphPair: ground_truth pair (" + std::to_string(i) +
                                      "," + std::to_string(j) + ") out of range");
        }
        if (src_seen[i] || tgt_seen[j]) {
          throw std::invalid_argument("GraphPair: ground_truth not injective at (" +
                                      std::to_string(i) + "," + std::to_string(j) + ")");
        }
        src_seen[i] = true;
        tgt_seen[j] = true;
      }
    }
  }
};

/// Barabasi-Albert random graph: a 2-node seed with one edge, then each new
/// node attaches to min(attach, existing) distinct nodes drawn by preferential
/// attachment. Connected by construction and byte-identical for a fixed seed.
inline Graph generate_ba(int num_nodes, int attach, uint64_t seed) {
  if (num_nodes < 2) throw std::invalid_argument("generate_ba: need at least 2 nodes");
  if (attach < 1) throw std::invalid_argument("generate_ba: attach must be positive");
  if (attach >= num_nodes) {
    throw std::invalid_argument("generate_ba: attach (" + std::to_string(attach) +
                                ") must be < num_nodes (" + std::to_string(num_nodes) + ")");
  }
  Rng rng(seed);
  Graph g;
  g.num_nodes = num_nodes;
  g.edges.push_back({0, 1});
  // One list entry per edge endpoint; uniform draws from it are
  // degree-proportional.
  std::vector<int> endpoints = {0, 1};
  std::vector<char> taken(num_nodes, 0);
  for (int v = 2; v < num_nodes; ++v) {
    int want = std::min(attach, v);
    std::vector<int> chosen;
    chosen.reserve(want);
    while (static_cast<int>(chosen.size()) < want) {
      int u = endpoints[rng.uniform_int(0, static_cast<int>(endpoints.size()) - 1)];
      if (taken[u]) continue;
      taken[u] = 1;
      chosen.push_back(u);
    }
    for (int u : chosen) {
      taken[u] = 0;
      g.edges.push_back({std::min(u, v), std::max(u, v)});
      endpoints.push_back(u);
      endpoints.push_back(v);
    }
  }
  normalize_edges(g.edges);
  return g;
}

/// Add round(noise_fraction * |E|) uniformly chosen non-edges, then relabel
/// nodes with a random permutation. Returns the corrupted graph (features
/// dropped; recompute from the new structure) and the correspondence
/// source node i -> target node perm[i]. Original edges all survive.
inline std::pair<Graph, Correspondence> corrupt(const Graph& g, double noise_fraction,
                                                uint64_t seed) {
  if (noise_fraction < 0.0 || noise_fraction > 1.0) {
    throw std::invalid_argument("corrupt: noise_fraction must lie in [0,1]");
  }
  g.validate();
  const int n = g.num_nodes;
  const int to_add = static_cast<int>(std::llround(noise_fraction * g.num_edges()));

  std::vector<Edge> edges = g.edges;
  if (to_add > 0) {
    std::vector<char> present(static_cast<size_t>(n) * n, 0);
    for (const auto& [i, j] : edges) present[static_cast<size_t>(i) * n + j] = 1;
    std::vector<Edge> complement;
    for (int i = 0; i < n; ++i)
      for (int j = i + 1; j < n; ++j)
        if (!present[static_cast<size_t>(i) * n + j]) complement.push_back({i, j});
    if (static_cast<int>(complement.size()) < to_add) {
      throw std::invalid_argument("corrupt: graph too dense, cannot add " +
                                  std::to_string(to_add) + " edges (complement has " +
                                  std::to_string(complement.size()) + ")");
    }
    Rng rng(substream(seed, "noise-edges"));
    // Partial Fisher-Yates over the complement.
    for (int k = 0; k < to_add; ++k) {
      int pick = rng.uniform_int(k, static_cast<int>(complement.size()) - 1);
      std::swap(complement[k], complement[pick]);
      edges.push_back(complement[k]);
    }
  }

  Rng rng(substream(seed, "relabel"));
  std::vector<int> perm(n);
  for (int i = 0; i < n; ++i) perm[i] = i;
  for (int i = n - 1; i > 0; --i) std::swap(perm[i], perm[rng.uniform_int(0, i)]);

  Graph target;
  target.num_nodes = n;
  target.edges.reserve(edges.size());
  for (const auto& [i, j] : edges) {
    target.edges.push_back({std::min(perm[i], perm[j]), std::max(perm[i], perm[j])});
  }
  normalize_edges(target.edges);

  Correspondence truth(n);
  for (int i = 0; i < n; ++i) truth[i] = {i, perm[i]};
  return {std::move(target), std::move(truth)};
}

/// One-hot encoding of min(degree, max_degree); width max_degree + 1, so the
/// last column is an overflow bucket for heavy-tailed degree distributions.
inline DenseMatrix degree_features(const Graph& g, int max_degree) {
  if (max_degree < 1) throw std::invalid_argument("degree_features: max_degree must be positive");
  DenseMatrix x(g.num_nodes, max_degree + 1);
  std::vector<int> deg = g.degrees();
  for (int v = 0; v < g.num_nodes; ++v) {
    x(v, std::min(deg[v], max_degree)) = 1.0;
  }
  return x;
}

constexpr int kDefaultMaxDegree = 32;

/// Generate a benchmark pair: BA source, noise-corrupted relabeled target,
/// degree features on both sides.
inline GraphPair make_benchmark_pair(int num_nodes, int attach, double noise_fraction,
                                     uint64_t seed, int max_degree = kDefaultMaxDegree) {
  GraphPair pair;
  pair.source = generate_ba(num_nodes, attach, substream(seed, "ba"));
  auto [target, truth] = corrupt(pair.source, noise_fraction, substream(seed, "corrupt"));
  pair.target = std::move(target);
  pair.ground_truth = std::move(truth);
  pair.source.features = degree_features(pair.source, max_degree);
  pair.target.features = degree_features(pair.target, max_degree);
  pair.validate();
  return pair;
}

}  // namespace sgm
