#pragma once

#include <limits>
#include <stdexcept>
#include <vector>

#include "sgm/matrix.hpp"

namespace sgm {

/// Result of a linear assignment: column chosen for each row, plus the total
/// score recomputed by summing matrix entries in row order (so it compares
/// exactly against enumeration oracles).
struct Assignment {
  std::vector<int> col_of_row;
  double value = 0.0;
};

/// Exact maximum-score assignment via shortest augmenting paths with dual
/// potentials, O(r^2 c). Accepts r <= c directly and transposes internally
/// otherwise. Deterministic: rows are processed in increasing index order and
/// ties on the augmenting column go to the lowest column index.
inline Assignment hungarian_max(const DenseMatrix& scores) {
  if (scores.rows() == 0 || scores.cols() == 0) {
    throw std::invalid_argument("hungarian_max: empty matrix");
  }
  if (!scores.all_finite()) {
    throw std::invalid_argument("hungarian_max: scores must be finite");
  }
  if (scores.rows() > scores.cols()) {
    DenseMatrix t = transpose(scores);
    Assignment by_col = hungarian_max(t);
    Assignment out;
    out.col_of_row.assign(scores.rows(), -1);
    for (int j = 0; j < t.rows(); ++j) out.col_of_row[by_col.col_of_row[j]] = j;
    out.value = by_col.value;
    return out;
  }

  const int n = scores.rows(), m = scores.cols();
  constexpr double kInf = std::numeric_limits<double>::infinity();
  // 1-based duals; p[j] = row matched to column j (0 = none).
  std::vector<double> u(n + 1, 0.0), v(m + 1, 0.0), minv(m + 1);
  std::vector<int> p(m + 1, 0), way(m + 1, 0);
  std::vector<char> used(m + 1);
  for (int i = 1; i <= n; ++i) {
    p[0] = i;
    int j0 = 0;
    minv.assign(m + 1, kInf);
    used.assign(m + 1, 0);
    do {
      used[j0] = 1;
      const int i0 = p[j0];
      int j1 = -1;
      double delta = kInf;
      for (int j = 1; j <= m; ++j) {
        if (used[j]) continue;
        const double cur = -scores(i0 - 1, j - 1) - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (int j = 0; j <= m; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      const int j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0 != 0);
  }

  Assignment out;
  out.col_of_row.assign(n, -1);
  for (int j = 1; j <= m; ++j) {
    if (p[j] != 0) out.col_of_row[p[j] - 1] = j - 1;
  }
  for (int i = 0; i < n; ++i) out.value += scores(i, out.col_of_row[i]);
  return out;
}

}  // namespace sgm
