#pragma once

#include <functional>

#include "sgm/matrix.hpp"
#include "sgm/rng.hpp"

namespace sgm::test {

inline DenseMatrix random_matrix(int rows, int cols, Rng& rng, double lo = -1.0,
                                 double hi = 1.0) {
  DenseMatrix m(rows, cols);
  for (int i = 0; i < m.size(); ++i) m.data()[i] = rng.uniform(lo, hi);
  return m;
}

/// Central finite differences of a scalar function of one matrix. Independent
/// oracle for every adjoint rule: it only ever calls the forward path.
inline DenseMatrix finite_difference(const std::function<double(const DenseMatrix&)>& f,
                                     const DenseMatrix& x, double step = 1e-5) {
  DenseMatrix g(x.rows(), x.cols());
  DenseMatrix probe = x;
  for (int i = 0; i < x.size(); ++i) {
    const double orig = probe.data()[i];
    probe.data()[i] = orig + step;
    const double hi = f(probe);
    probe.data()[i] = orig - step;
    const double lo = f(probe);
    probe.data()[i] = orig;
    g.data()[i] = (hi - lo) / (2.0 * step);
  }
  return g;
}

/// Frobenius-norm relative error with an absolute floor for near-zero pairs.
inline double rel_error(const DenseMatrix& got, const DenseMatrix& want) {
  const double diff = frobenius_norm(sub(got, want));
  const double denom = std::max({frobenius_norm(got), frobenius_norm(want), 1e-10});
  return diff / denom;
}

}  // namespace sgm::test
