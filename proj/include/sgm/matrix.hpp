#pragma once

#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <stdexcept>
#include <string>
#include <vector>

namespace sgm {

/// Dense row-major matrix of doubles. The single value carrier for the
/// whole pipeline (features, logits, matchings, weights, gradients).
class DenseMatrix {
 public:
  DenseMatrix() = default;

  DenseMatrix(int rows, int cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(static_cast<size_t>(rows) * cols, fill) {
    if (rows < 0 || cols < 0) {
      throw std::invalid_argument("DenseMatrix: negative shape " + shape_str());
    }
  }

  static DenseMatrix identity(int n) {
    DenseMatrix m(n, n);
    for (int i = 0; i < n; ++i) m(i, i) = 1.0;
    return m;
  }

  static DenseMatrix from_rows(std::initializer_list<std::initializer_list<double>> rows) {
    int r = static_cast<int>(rows.size());
    int c = r == 0 ? 0 : static_cast<int>(rows.begin()->size());
    DenseMatrix m(r, c);
    int i = 0;
    for (const auto& row : rows) {
      if (static_cast<int>(row.size()) != c) {
        throw std::invalid_argument("DenseMatrix::from_rows: ragged rows");
      }
      int j = 0;
      for (double v : row) m(i, j++) = v;
      ++i;
    }
    return m;
  }

  int rows() const { return rows_; }
  int cols() const { return cols_; }
  int size() const { return rows_ * cols_; }
  bool empty() const { return data_.empty(); }

  double& operator()(int i, int j) { return data_[static_cast<size_t>(i) * cols_ + j]; }
  double operator()(int i, int j) const { return data_[static_cast<size_t>(i) * cols_ + j]; }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  double* row(int i) { return data_.data() + static_cast<size_t>(i) * cols_; }
  const double* row(int i) const { return data_.data() + static_cast<size_t>(i) * cols_; }

  bool same_shape(const DenseMatrix& o) const { return rows_ == o.rows_ && cols_ == o.cols_; }

  std::string shape_str() const {
    return std::to_string(rows_) + "x" + std::to_string(cols_);
  }

  bool all_finite() const {
    for (double v : data_) {
      if (!std::isfinite(v)) return false;
    }
    return true;
  }

  void fill(double v) { data_.assign(data_.size(), v); }

  bool operator==(const DenseMatrix& o) const {
    return rows_ == o.rows_ && cols_ == o.cols_ && data_ == o.data_;
  }

 private:
  int rows_ = 0;
  int cols_ = 0;
  std::vector<double> data_;
};

inline void check_same_shape(const DenseMatrix& a, const DenseMatrix& b, const char* op) {
  if (!a.same_shape(b)) {
    throw std::invalid_argument(std::string(op) + ": shape mismatch " + a.shape_str() +
                                " vs " + b.shape_str());
  }
}

// ---------------------------------------------------------------------------
// Value-level kernels. The tape wraps these with adjoint rules; tape-off code
// paths call them directly.
// ---------------------------------------------------------------------------

/// C = A * B
inline DenseMatrix matmul_nn(const DenseMatrix& a, const DenseMatrix& b) {
  if (a.cols() != b.rows()) {
    throw std::invalid_argument("matmul: inner dim mismatch " + a.shape_str() + " vs " +
                                b.shape_str());
  }
  DenseMatrix c(a.rows(), b.cols());
  const int m = a.rows(), k = a.cols(), n = b.cols();
  for (int i = 0; i < m; ++i) {
    double* ci = c.row(i);
    const double* ai = a.row(i);
    for (int p = 0; p < k; ++p) {
      const double aip = ai[p];
      if (aip == 0.0) continue;
      const double* bp = b.row(p);
      for (int j = 0; j < n; ++j) ci[j] += aip * bp[j];
    }
  }
  return c;
}

/// C = A * B^T
inline DenseMatrix matmul_nt(const DenseMatrix& a, const DenseMatrix& b) {
  if (a.cols() != b.cols()) {
    throw std::invalid_argument("matmul_nt: inner dim mismatch " + a.shape_str() + " vs " +
                                b.shape_str());
  }
  DenseMatrix c(a.rows(), b.rows());
  const int k = a.cols();
  for (int i = 0; i < a.rows(); ++i) {
    const double* ai = a.row(i);
    double* ci = c.row(i);
    for (int j = 0; j < b.rows(); ++j) {
      const double* bj = b.row(j);
      double s = 0.0;
      for (int p = 0; p < k; ++p) s += ai[p] * bj[p];
      ci[j] = s;
    }
  }
  return c;
}

/// C = A^T * B
inline DenseMatrix matmul_tn(const DenseMatrix& a, const DenseMatrix& b) {
  if (a.rows() != b.rows()) {
    throw std::invalid_argument("matmul_tn: inner dim mismatch " + a.shape_str() + " vs " +
                                b.shape_str());
  }
  DenseMatrix c(a.cols(), b.cols());
  const int n = b.cols();
  for (int i = 0; i < a.rows(); ++i) {
    const double* ai = a.row(i);
    const double* bi = b.row(i);
    for (int p = 0; p < a.cols(); ++p) {
      const double aip = ai[p];
      if (aip == 0.0) continue;
      double* cp = c.row(p);
      for (int j = 0; j < n; ++j) cp[j] += aip * bi[j];
    }
  }
  return c;
}

inline DenseMatrix transpose(const DenseMatrix& a) {
  DenseMatrix t(a.cols(), a.rows());
  for (int i = 0; i < a.rows(); ++i)
    for (int j = 0; j < a.cols(); ++j) t(j, i) = a(i, j);
  return t;
}

inline DenseMatrix add(const DenseMatrix& a, const DenseMatrix& b) {
  check_same_shape(a, b, "add");
  DenseMatrix c = a;
  for (int i = 0; i < c.size(); ++i) c.data()[i] += b.data()[i];
  return c;
}

inline DenseMatrix sub(const DenseMatrix& a, const DenseMatrix& b) {
  check_same_shape(a, b, "sub");
  DenseMatrix c = a;
  for (int i = 0; i < c.size(); ++i) c.data()[i] -= b.data()[i];
  return c;
}

inline DenseMatrix hadamard(const DenseMatrix& a, const DenseMatrix& b) {
  check_same_shape(a, b, "elementwise_mul");
  DenseMatrix c = a;
  for (int i = 0; i < c.size(); ++i) c.data()[i] *= b.data()[i];
  return c;
}

inline DenseMatrix scale(const DenseMatrix& a, double s) {
  DenseMatrix c = a;
  for (int i = 0; i < c.size(); ++i) c.data()[i] *= s;
  return c;
}

inline DenseMatrix shift(const DenseMatrix& a, double s) {
  DenseMatrix c = a;
  for (int i = 0; i < c.size(); ++i) c.data()[i] += s;
  return c;
}

/// n x m -> n x 1
inline DenseMatrix row_sum(const DenseMatrix& a) {
  DenseMatrix c(a.rows(), 1);
  for (int i = 0; i < a.rows(); ++i) {
    const double* ai = a.row(i);
    double s = 0.0;
    for (int j = 0; j < a.cols(); ++j) s += ai[j];
    c(i, 0) = s;
  }
  return c;
}

/// n x m -> 1 x m
inline DenseMatrix col_sum(const DenseMatrix& a) {
  DenseMatrix c(1, a.cols());
  for (int i = 0; i < a.rows(); ++i) {
    const double* ai = a.row(i);
    for (int j = 0; j < a.cols(); ++j) c(0, j) += ai[j];
  }
  return c;
}

inline double total_sum(const DenseMatrix& a) {
  double s = 0.0;
  for (int i = 0; i < a.size(); ++i) s += a.data()[i];
  return s;
}

inline DenseMatrix slice_block(const DenseMatrix& a, int r0, int c0, int rows, int cols) {
  if (r0 < 0 || c0 < 0 || r0 + rows > a.rows() || c0 + cols > a.cols()) {
    throw std::invalid_argument("slice_block: block " + std::to_string(r0) + "," +
                                std::to_string(c0) + " size " + std::to_string(rows) + "x" +
                                std::to_string(cols) + " out of " + a.shape_str());
  }
  DenseMatrix c(rows, cols);
  for (int i = 0; i < rows; ++i)
    for (int j = 0; j < cols; ++j) c(i, j) = a(r0 + i, c0 + j);
  return c;
}

/// Embed `a` into a rows x cols zero matrix with top-left corner at (r0, c0).
inline DenseMatrix pad_block(const DenseMatrix& a, int rows, int cols, int r0, int c0) {
  if (r0 < 0 || c0 < 0 || r0 + a.rows() > rows || c0 + a.cols() > cols) {
    throw std::invalid_argument("pad_block: block does not fit, " + a.shape_str() + " at (" +
                                std::to_string(r0) + "," + std::to_string(c0) + ") into " +
                                std::to_string(rows) + "x" + std::to_string(cols));
  }
  DenseMatrix c(rows, cols);
  for (int i = 0; i < a.rows(); ++i)
    for (int j = 0; j < a.cols(); ++j) c(r0 + i, c0 + j) = a(i, j);
  return c;
}

inline double max_abs_diff(const DenseMatrix& a, const DenseMatrix& b) {
  check_same_shape(a, b, "max_abs_diff");
  double m = 0.0;
  for (int i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a.data()[i] - b.data()[i]));
  return m;
}

inline double frobenius_norm(const DenseMatrix& a) {
  double s = 0.0;
  for (int i = 0; i < a.size(); ++i) s += a.data()[i] * a.data()[i];
  return std::sqrt(s);
}

}  // namespace sgm
