#pragma once

#include <cmath>
#include <stdexcept>
#include <vector>

#include "sgm/graph.hpp"
#include "sgm/hungarian.hpp"
#include "sgm/matching.hpp"
#include "sgm/matrix.hpp"

namespace sgm {

constexpr int kDummy = -1;

/// A discrete matching: each source node is assigned a target node or the
/// aggregate dummy. Injective on non-dummy targets by construction.
struct DiscreteMatching {
  std::vector<int> target_of;  // per source node; kDummy for unmatched
  double objective = 0.0;      // trace(M^T pad(theta)) of the decoded matching

  int n_s() const { return static_cast<int>(target_of.size()); }

  void validate(int n_t) const {
    std::vector<char> seen(n_t, 0);
    for (int j : target_of) {
      if (j == kDummy) continue;
      if (j < 0 || j >= n_t) throw std::invalid_argument("DiscreteMatching: target out of range");
      if (seen[j]) throw std::invalid_argument("DiscreteMatching: target assigned twice");
      seen[j] = 1;
    }
  }
};

/// MAP decoding: solve the full m x m assignment over phi (theta in the
/// top-left block, zeros on dummy assignments) and read off which source rows
/// landed on real target columns. Maximizes trace(M^T pad(theta)) exactly.
inline DiscreteMatching decode(const MatchParams& params, bool allow_dummy = true) {
  params.validate();
  const int n_s = params.n_s(), n_t = params.n_t();
  PermParams phi = build_phi(params, allow_dummy);
  Assignment a = hungarian_max(phi.phi);
  DiscreteMatching out;
  out.target_of.assign(n_s, kDummy);
  for (int i = 0; i < n_s; ++i) {
    const int j = a.col_of_row[i];
    if (j < n_t) {
      out.target_of[i] = j;
      out.objective += params.theta(i, j);
    }
  }
  return out;
}

/// Fraction of ground-truth pairs the prediction reproduces.
inline double node_correctness(const DiscreteMatching& pred, const Correspondence& truth) {
  if (truth.empty()) throw std::invalid_argument("node_correctness: empty ground truth");
  int hit = 0;
  for (const auto& [i, j] : truth) {
    if (i < 0 || i >= pred.n_s()) {
      throw std::invalid_argument("node_correctness: truth source index out of range");
    }
    if (pred.target_of[i] == j) ++hit;
  }
  return static_cast<double>(hit) / static_cast<double>(truth.size());
}

struct HardSoftMatch {
  int hard = 1;       // 1 iff every required pair is satisfied
  double soft = 1.0;  // satisfied fraction
};

/// Check a required pattern of assignments; entries with target kDummy demand
/// a dummy assignment. An empty pattern is vacuously satisfied.
inline HardSoftMatch hard_soft_match(const DiscreteMatching& pred,
                                     const std::vector<std::pair<int, int>>& pattern) {
  if (pattern.empty()) return {1, 1.0};
  int hit = 0;
  for (const auto& [i, j] : pattern) {
    if (i < 0 || i >= pred.n_s()) {
      throw std::invalid_argument("hard_soft_match: pattern source index out of range");
    }
    if (pred.target_of[i] == j) ++hit;
  }
  HardSoftMatch r;
  r.soft = static_cast<double>(hit) / static_cast<double>(pattern.size());
  r.hard = hit == static_cast<int>(pattern.size()) ? 1 : 0;
  return r;
}

}  // namespace sgm
