#include <catch2/catch_amalgamated.hpp>

#include "sgm/tape.hpp"
#include "test_helpers.hpp"

using namespace sgm;
using sgm::test::finite_difference;
using sgm::test::random_matrix;
using sgm::test::rel_error;

namespace {

// Weighted total of a matrix so adjoint mistakes cannot cancel symmetrically.
Var weighted_total(Tape& t, Var v, const DenseMatrix& w) {
  return t.reduce_sum(t.elementwise_mul(v, t.constant(w)));
}

// Checks d/dx of sum(W .* op(x)) against central finite differences.
void check_unary(const std::function<Var(Tape&, Var)>& op, const DenseMatrix& x,
                 double tol = 1e-6) {
  DenseMatrix w;
  {
    Tape t;
    Var y = op(t, t.constant(x));
    Rng rng(99);
    w = random_matrix(t.value(y).rows(), t.value(y).cols(), rng);
  }
  auto forward = [&](const DenseMatrix& in) {
    Tape t;
    Var y = weighted_total(t, op(t, t.constant(in)), w);
    return t.value(y)(0, 0);
  };
  Tape t;
  Var leaf = t.leaf(x, true);
  t.backward(weighted_total(t, op(t, leaf), w));
  INFO("shape " << x.shape_str());
  REQUIRE(rel_error(t.grad(leaf), finite_difference(forward, x)) < tol);
}

void check_binary_both(const std::function<Var(Tape&, Var, Var)>& op, const DenseMatrix& a,
                       const DenseMatrix& b, double tol = 1e-6) {
  check_unary([&](Tape& t, Var x) { return op(t, x, t.constant(b)); }, a, tol);
  check_unary([&](Tape& t, Var x) { return op(t, t.constant(a), x); }, b, tol);
}

}  // namespace

TEST_CASE("matmul identity and shape errors") {
  Tape t;
  Rng rng(1);
  DenseMatrix a = random_matrix(3, 4, rng);
  Var v = t.matmul(t.constant(DenseMatrix::identity(3)), t.constant(a));
  REQUIRE(max_abs_diff(t.value(v), a) == 0.0);
  REQUIRE_THROWS_AS(t.matmul(t.constant(a), t.constant(a)), std::invalid_argument);
}

TEST_CASE("finite differences validate every primitive") {
  Rng rng(1234);
  auto shape = [&] { return rng.uniform_int(1, 5); };
  const int kCases = 100;

  SECTION("matmul") {
    for (int c = 0; c < kCases; ++c) {
      int m = shape(), k = shape(), n = shape();
      check_binary_both([](Tape& t, Var a, Var b) { return t.matmul(a, b); },
                        random_matrix(m, k, rng), random_matrix(k, n, rng));
    }
  }
  SECTION("transpose") {
    for (int c = 0; c < kCases; ++c) {
      check_unary([](Tape& t, Var v) { return t.transpose(v); },
                  random_matrix(shape(), shape(), rng));
    }
  }
  SECTION("add sub elementwise_mul") {
    for (int c = 0; c < kCases; ++c) {
      int m = shape(), n = shape();
      check_binary_both([](Tape& t, Var a, Var b) { return t.add(a, b); },
                        random_matrix(m, n, rng), random_matrix(m, n, rng));
      check_binary_both([](Tape& t, Var a, Var b) { return t.sub(a, b); },
                        random_matrix(m, n, rng), random_matrix(m, n, rng));
      check_binary_both([](Tape& t, Var a, Var b) { return t.elementwise_mul(a, b); },
                        random_matrix(m, n, rng), random_matrix(m, n, rng));
    }
  }
  SECTION("scalar ops") {
    for (int c = 0; c < kCases; ++c) {
      double s = rng.uniform(-2.0, 2.0);
      check_unary([s](Tape& t, Var v) { return t.scalar_mul(v, s); },
                  random_matrix(shape(), shape(), rng));
      check_unary([s](Tape& t, Var v) { return t.add_scalar(v, s); },
                  random_matrix(shape(), shape(), rng));
    }
  }
  SECTION("mul_scalar_var") {
    for (int c = 0; c < kCases; ++c) {
      check_binary_both([](Tape& t, Var a, Var s) { return t.mul_scalar_var(a, s); },
                        random_matrix(shape(), shape(), rng), random_matrix(1, 1, rng));
    }
  }
  SECTION("exp tanh leaky_relu") {
    for (int c = 0; c < kCases; ++c) {
      check_unary([](Tape& t, Var v) { return t.exp(v); },
                  random_matrix(shape(), shape(), rng));
      check_unary([](Tape& t, Var v) { return t.tanh(v); },
                  random_matrix(shape(), shape(), rng, -2.0, 2.0));
      // keep entries away from the kink so the finite difference is valid
      DenseMatrix x = random_matrix(shape(), shape(), rng);
      for (int i = 0; i < x.size(); ++i) {
        if (std::abs(x.data()[i]) < 0.05) x.data()[i] += 0.1;
      }
      check_unary([](Tape& t, Var v) { return t.leaky_relu(v, 0.1); }, x);
    }
  }
  SECTION("log") {
    for (int c = 0; c < kCases; ++c) {
      check_unary([](Tape& t, Var v) { return t.log(v); },
                  random_matrix(shape(), shape(), rng, 0.1, 3.0));
    }
  }
  SECTION("row/col sums and logsumexp") {
    for (int c = 0; c < kCases; ++c) {
      check_unary([](Tape& t, Var v) { return t.row_sum(v); },
                  random_matrix(shape(), shape(), rng));
      check_unary([](Tape& t, Var v) { return t.col_sum(v); },
                  random_matrix(shape(), shape(), rng));
      check_unary([](Tape& t, Var v) { return t.row_logsumexp(v); },
                  random_matrix(shape(), shape(), rng, -3.0, 3.0));
      check_unary([](Tape& t, Var v) { return t.col_logsumexp(v); },
                  random_matrix(shape(), shape(), rng, -3.0, 3.0));
    }
  }
  SECTION("row/col broadcasts") {
    for (int c = 0; c < kCases; ++c) {
      int m = shape(), n = shape();
      DenseMatrix a = random_matrix(m, n, rng);
      // denominators away from zero on both sides
      DenseMatrix r = random_matrix(m, 1, rng, 0.3, 2.0);
      DenseMatrix cv = random_matrix(1, n, rng, 0.3, 2.0);
      if (c % 2 == 0) {
        r = scale(r, -1.0);
        cv = scale(cv, -1.0);
      }
      check_binary_both([](Tape& t, Var x, Var d) { return t.broadcast_div_rows(x, d); }, a, r);
      check_binary_both([](Tape& t, Var x, Var d) { return t.broadcast_div_cols(x, d); }, a, cv);
      check_binary_both([](Tape& t, Var x, Var d) { return t.broadcast_sub_rows(x, d); }, a, r);
      check_binary_both([](Tape& t, Var x, Var d) { return t.broadcast_sub_cols(x, d); }, a, cv);
      check_binary_both([](Tape& t, Var x, Var d) { return t.broadcast_add_cols(x, d); }, a, cv);
    }
  }
  SECTION("slice pad reshape reduce") {
    for (int c = 0; c < kCases; ++c) {
      int m = rng.uniform_int(2, 5), n = rng.uniform_int(2, 5);
      int r0 = rng.uniform_int(0, m - 1), c0 = rng.uniform_int(0, n - 1);
      int h = rng.uniform_int(1, m - r0), w = rng.uniform_int(1, n - c0);
      check_unary([=](Tape& t, Var v) { return t.slice_block(v, r0, c0, h, w); },
                  random_matrix(m, n, rng));
      check_unary([=](Tape& t, Var v) { return t.pad_block(v, m + 2, n + 3, 1, 2); },
                  random_matrix(m, n, rng));
      check_unary([=](Tape& t, Var v) { return t.reshape(v, n, m); },
                  random_matrix(m, n, rng));
      check_unary([](Tape& t, Var v) { return t.reduce_sum(v); },
                  random_matrix(m, n, rng));
    }
  }
}

TEST_CASE("finite differences validate random composites") {
  Rng rng(77);
  for (int c = 0; c < 20; ++c) {
    DenseMatrix b = random_matrix(4, 4, rng);
    check_unary(
        [&](Tape& t, Var v) {
          Var z = t.matmul(v, t.constant(b));
          z = t.tanh(z);
          z = t.broadcast_sub_rows(z, t.row_logsumexp(z));
          z = t.exp(z);
          return t.elementwise_mul(z, v);
        },
        random_matrix(4, 4, rng), 1e-6);
  }
}

TEST_CASE("gradient of reduce_sum is all ones") {
  Tape t;
  Rng rng(5);
  Var x = t.leaf(random_matrix(3, 4, rng), true);
  t.backward(t.reduce_sum(x));
  REQUIRE(max_abs_diff(t.grad(x), DenseMatrix(3, 4, 1.0)) == 0.0);
}

TEST_CASE("gradient of trace(X^T X)/2 is X") {
  Tape t;
  Rng rng(6);
  DenseMatrix x = random_matrix(4, 3, rng);
  Var v = t.leaf(x, true);
  Var f = t.scalar_mul(t.reduce_sum(t.elementwise_mul(v, v)), 0.5);
  t.backward(f);
  REQUIRE(max_abs_diff(t.grad(v), x) < 1e-12);
}

TEST_CASE("stop-gradient blocks propagation exactly") {
  Tape t;
  Rng rng(7);
  DenseMatrix x = random_matrix(3, 3, rng);
  Var v = t.leaf(x, true);
  Var frozen = t.detach(v);
  Var f = t.reduce_sum(t.elementwise_mul(frozen, frozen));
  t.backward(f);
  REQUIRE(max_abs_diff(t.grad(v), DenseMatrix(3, 3)) == 0.0);

  // mixed: only the live path contributes
  Var g = t.reduce_sum(t.elementwise_mul(frozen, v));
  t.backward(g);
  REQUIRE(max_abs_diff(t.grad(v), x) < 1e-12);
}

TEST_CASE("backward rejects non-scalar outputs") {
  Tape t;
  Var v = t.leaf(DenseMatrix(2, 2, 1.0), true);
  REQUIRE_THROWS_AS(t.backward(v), std::invalid_argument);
}

TEST_CASE("tape replay is deterministic") {
  auto run = [] {
    Tape t;
    Rng rng(123);
    Var a = t.leaf(random_matrix(4, 4, rng), true);
    Var b = t.leaf(random_matrix(4, 4, rng), true);
    Var f = t.reduce_sum(t.tanh(t.matmul(a, b)));
    t.backward(f);
    return std::pair{t.grad(a), t.grad(b)};
  };
  auto [ga1, gb1] = run();
  auto [ga2, gb2] = run();
  REQUIRE(ga1 == ga2);
  REQUIRE(gb1 == gb2);
}

TEST_CASE("log clamps tiny inputs and counts saturations") {
  Tape t;
  DenseMatrix x(1, 3);
  x(0, 0) = 0.0;
  x(0, 1) = 1e-310;
  x(0, 2) = 2.0;
  Var v = t.leaf(x, true);
  Var y = t.log(v);
  REQUIRE(t.saturation_count() == 2);
  REQUIRE(t.value(y)(0, 0) == std::log(Tape::kClampFloor));
  REQUIRE(t.value(y)(0, 2) == Catch::Approx(std::log(2.0)));
  t.backward(t.reduce_sum(y));
  REQUIRE(t.grad(v)(0, 0) == 0.0);  // clamped region is flat
  REQUIRE(t.grad(v)(0, 2) == Catch::Approx(0.5));
}

TEST_CASE("precomputed_scalar applies the stored jacobian") {
  Tape t;
  Rng rng(9);
  DenseMatrix x = random_matrix(2, 3, rng);
  DenseMatrix jac = random_matrix(2, 3, rng);
  Var v = t.leaf(x, true);
  Var e = t.precomputed_scalar(4.5, v, jac);
  REQUIRE(t.value(e)(0, 0) == 4.5);
  t.backward(t.scalar_mul(e, 2.0));
  REQUIRE(max_abs_diff(t.grad(v), scale(jac, 2.0)) < 1e-15);
}

TEST_CASE("backward_from seeds an arbitrary adjoint") {
  // d(sum(W .* (A B)))/dA computed two ways: full backward vs seeding at A B.
  Tape t;
  Rng rng(10);
  DenseMatrix a = random_matrix(3, 2, rng), b = random_matrix(2, 4, rng);
  DenseMatrix w = random_matrix(3, 4, rng);
  Var va = t.leaf(a, true);
  Var prod = t.matmul(va, t.constant(b));
  t.backward(t.reduce_sum(t.elementwise_mul(prod, t.constant(w))));
  DenseMatrix full = t.grad(va);
  t.backward_from(prod, w);
  REQUIRE(max_abs_diff(t.grad(va), full) == 0.0);
}

TEST_CASE("adjoints accumulate across fan-out") {
  Tape t;
  DenseMatrix x(1, 1);
  x(0, 0) = 3.0;
  Var v = t.leaf(x, true);
  Var f = t.add(t.elementwise_mul(v, v), v);  // x^2 + x
  t.backward(t.reduce_sum(f));
  REQUIRE(t.grad(v)(0, 0) == Catch::Approx(7.0));  // 2x + 1
}
