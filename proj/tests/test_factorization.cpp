#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "nnc/errors.hpp"
#include "nnc/factorization.hpp"
#include "nnc/rng.hpp"
#include "oracles.hpp"

using namespace nnc;

namespace {

double max_orthonormality_defect(const Matrix& u) {
  double worst = 0.0;
  for (int a = 0; a < u.cols(); ++a)
    for (int b = 0; b < u.cols(); ++b) {
      double dot = 0.0;
      for (int i = 0; i < u.rows(); ++i) dot += u(i, a) * u(i, b);
      worst = std::max(worst, std::abs(dot - (a == b ? 1.0 : 0.0)));
    }
  return worst;
}

}  // namespace

TEST_CASE("truncated_svd of the identity keeps unit singular values") {
  SvdResult r = truncated_svd(Matrix::identity(4), 4);
  for (double s : r.s) CHECK(s == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(relative_error(Matrix::identity(4), reconstruct(r)) < 1e-12);
}

TEST_CASE("rank-1 outer product is recovered exactly at p = 1") {
  Rng rng(101);
  const int m = 7, n = 5;
  std::vector<double> x(m), y(n);
  double nx = 0.0, ny = 0.0;
  for (double& v : x) v = rng.normal();
  for (double& v : y) v = rng.normal();
  for (double v : x) nx += v * v;
  for (double v : y) ny += v * v;

  Matrix a(m, n);
  for (int j = 0; j < n; ++j)
    for (int i = 0; i < m; ++i) a(i, j) = x[i] * y[j];

  SvdResult r = truncated_svd(a, 1);
  CHECK(r.s[0] == doctest::Approx(std::sqrt(nx) * std::sqrt(ny)).epsilon(1e-10));
  CHECK(relative_error(a, reconstruct(r)) < 1e-10);
}

TEST_CASE("singular values match the gram-matrix eigendecomposition oracle") {
  Rng rng(103);
  Matrix a = oracle::random_matrix(rng, 8, 6);
  SvdResult r = truncated_svd(a, 3);
  const std::vector<double> want = oracle::singular_values_by_gram(a);
  for (int k = 0; k < 3; ++k)
    CHECK(std::abs(r.s[k] - want[k]) <= 1e-8 * want[0]);
}

TEST_CASE("truncated_svd validates its inputs") {
  Matrix a(4, 3);
  a(0, 0) = 1.0;
  CHECK_THROWS_AS(truncated_svd(a, 0), InvalidArgument);
  CHECK_THROWS_AS(truncated_svd(a, 4), InvalidArgument);
  Matrix bad(2, 2, {1.0, 2.0, std::nan(""), 0.0});
  CHECK_THROWS_AS(truncated_svd(bad, 1), InvalidArgument);
}

TEST_CASE("truncation error equals the discarded spectrum tail") {
  Rng rng(107);
  for (int trial = 0; trial < 10; ++trial) {
    const int m = rng.uniform_int(4, 12), n = rng.uniform_int(4, 12);
    Matrix a = oracle::random_matrix(rng, m, n);
    const std::vector<double> spectrum = oracle::singular_values_by_gram(a);
    const double norm = frobenius_norm(a);
    for (int p = 1; p <= std::min(m, n); ++p) {
      SvdResult r = truncated_svd(a, p);
      Matrix rec = reconstruct(r);
      double err2 = 0.0;
      for (std::int64_t i = 0; i < a.size(); ++i) {
        const double d = a.values()[i] - rec.values()[i];
        err2 += d * d;
      }
      double tail2 = 0.0;
      for (int k = p; k < std::min(m, n); ++k) tail2 += spectrum[k] * spectrum[k];
      CHECK(std::abs(std::sqrt(err2) - std::sqrt(tail2)) <= 1e-8 * std::max(norm, 1.0));
    }
  }
}

TEST_CASE("truncated_svd beats random factor pairs of the same rank") {
  Rng rng(109);
  for (int trial = 0; trial < 20; ++trial) {
    const int m = rng.uniform_int(4, 16), n = rng.uniform_int(4, 16);
    const int p = rng.uniform_int(1, std::min(m, n));
    Matrix a = oracle::random_matrix(rng, m, n);
    const double best = relative_error(a, reconstruct(truncated_svd(a, p)));
    for (int rival = 0; rival < 5; ++rival) {
      Matrix rec = matmul(oracle::random_matrix(rng, m, p), oracle::random_matrix(rng, p, n));
      CHECK(best <= relative_error(a, rec) + 1e-12);
    }
  }
}

TEST_CASE("svd reconstruction error is non-increasing in the rank") {
  Rng rng(113);
  Matrix a = oracle::random_matrix(rng, 10, 8);
  double prev = 2.0;
  for (int p = 1; p <= 8; ++p) {
    const double err = relative_error(a, reconstruct(truncated_svd(a, p)));
    CHECK(err <= prev + 1e-12);
    prev = err;
  }
}

TEST_CASE("svd factors are orthonormal and deterministic") {
  Rng rng(127);
  Matrix a = oracle::random_matrix(rng, 9, 14);
  SvdResult r1 = truncated_svd(a, 6);
  SvdResult r2 = truncated_svd(a, 6);
  CHECK(max_orthonormality_defect(r1.u) < 1e-10);
  CHECK(max_orthonormality_defect(r1.v) < 1e-10);
  CHECK(r1.u.values() == r2.u.values());  // bit-identical
  CHECK(r1.v.values() == r2.v.values());
  CHECK(r1.s == r2.s);

  // Sign convention: largest-magnitude entry of each left vector is positive.
  for (int c = 0; c < r1.u.cols(); ++c) {
    int arg = 0;
    for (int i = 1; i < r1.u.rows(); ++i)
      if (std::abs(r1.u(i, c)) > std::abs(r1.u(arg, c))) arg = i;
    CHECK(r1.u(arg, c) > 0.0);
  }
}

TEST_CASE("svd handles rank-deficient and degenerate spectra") {
  // Exact zero columns: orthonormal completion must still deliver a valid u.
  Matrix a(5, 3);
  for (int i = 0; i < 5; ++i) a(i, 0) = 1.0 + i;
  SvdResult r = truncated_svd(a, 3);
  CHECK(max_orthonormality_defect(r.u) < 1e-10);
  CHECK(r.s[1] == 0.0);
  CHECK(relative_error(a, reconstruct(r)) < 1e-12);
}

TEST_CASE("hosvd at full ranks reconstructs losslessly") {
  Rng rng(131);
  Tensor t = oracle::random_tensor(rng, {3, 3, 6, 8});
  TuckerResult r = hosvd(t, {{3, 6}, {4, 8}});
  CHECK(relative_error(t, reconstruct(r)) <= 1e-10);
  CHECK(r.decomposed_modes() == std::vector<int>{3, 4});
}

TEST_CASE("hosvd recovers a planted low-rank tensor exactly") {
  Rng rng(137);
  Tensor core = oracle::random_tensor(rng, {3, 3, 2, 3});
  Matrix q3 = oracle::random_orthonormal(rng, 10, 2);
  Matrix q4 = oracle::random_orthonormal(rng, 12, 3);
  Tensor t = mode_product(mode_product(core, q3, 3), q4, 4);

  TuckerResult r = hosvd(t, {{3, 2}, {4, 3}});
  CHECK(relative_error(t, reconstruct(r)) <= 1e-9);
  CHECK(r.core.shape() == std::vector<int>{3, 3, 2, 3});
}

TEST_CASE("hosvd reconstruction error equals the projection oracle") {
  Rng rng(139);
  Tensor t = oracle::random_tensor(rng, {3, 3, 8, 16});
  TuckerResult r = hosvd(t, {{3, 4}, {4, 8}});
  const double got = relative_error(t, reconstruct(r));

  const Matrix p3 = oracle::leading_left_projector(oracle::matricize_by_index_map(t, 3), 4);
  const Matrix p4 = oracle::leading_left_projector(oracle::matricize_by_index_map(t, 4), 8);
  Tensor projected = oracle::mode_product_by_loops(oracle::mode_product_by_loops(t, p3, 3), p4, 4);
  double num = 0.0, den = 0.0;
  for (std::int64_t i = 0; i < t.size(); ++i) {
    const double d = t.data()[i] - projected.data()[i];
    num += d * d;
    den += t.data()[i] * t.data()[i];
  }
  const double want = std::sqrt(num / den);
  CHECK(std::abs(got - want) <= 1e-9);
}

TEST_CASE("hosvd rejects ranks above the mode extent") {
  Tensor t({3, 3, 4, 5});
  t.data()[0] = 1.0;
  CHECK_THROWS_AS(hosvd(t, {{3, 5}, {4, 2}}), InvalidArgument);
  CHECK_THROWS_AS(hosvd(t, {{5, 1}}), InvalidArgument);
}

TEST_CASE("hosvd error is non-increasing in each mode rank") {
  Rng rng(149);
  Tensor t = oracle::random_tensor(rng, {3, 3, 6, 8});
  double prev = 2.0;
  for (int r4 = 1; r4 <= 8; ++r4) {
    const double err = relative_error(t, reconstruct(hosvd(t, {{3, 4}, {4, r4}})));
    CHECK(err <= prev + 1e-12);
    prev = err;
  }
}

TEST_CASE("hosvd factors are orthonormal and the core is all-orthogonal") {
  Rng rng(151);
  Tensor t = oracle::random_tensor(rng, {3, 3, 6, 8});
  TuckerResult truncated = hosvd(t, {{3, 5}, {4, 6}});
  for (const auto& [mode, factor] : truncated.factors) {
    CAPTURE(mode);
    CHECK(max_orthonormality_defect(factor) < 1e-10);
  }

  // Distinct mode-k slices of the full-rank core are mutually orthogonal
  // (truncating the other modes projects the slices and breaks exactness, so
  // the property is checked where it holds).
  TuckerResult r = hosvd(t, {{3, 6}, {4, 8}});
  for (int mode : {3, 4}) {
    Matrix unfolded = matricize(r.core, mode);
    const double scale = frobenius_norm(r.core);
    for (int a = 0; a < unfolded.rows(); ++a)
      for (int b = a + 1; b < unfolded.rows(); ++b) {
        double dot = 0.0;
        for (int c = 0; c < unfolded.cols(); ++c) dot += unfolded(a, c) * unfolded(b, c);
        CHECK(std::abs(dot) <= 1e-8 * scale * scale);
      }
  }
}

TEST_CASE("re-decomposing a reconstruction is idempotent") {
  Rng rng(157);
  Tensor t = oracle::random_tensor(rng, {3, 3, 6, 8});
  TuckerResult first = hosvd(t, {{3, 3}, {4, 4}});
  Tensor rec1 = reconstruct(first);
  TuckerResult second = hosvd(rec1, {{3, 3}, {4, 4}});
  Tensor rec2 = reconstruct(second);
  CHECK(relative_error(rec1, rec2) <= 1e-10);
}

TEST_CASE("relative_error basics and the loop oracle") {
  Rng rng(163);
  Tensor t = oracle::random_tensor(rng, {4, 5});
  CHECK(relative_error(t, t) == 0.0);

  Tensor zero({4, 5});
  CHECK(relative_error(t, zero) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK_THROWS_AS(relative_error(zero, t), UndefinedRatio);
  CHECK_THROWS_AS(relative_error(t, Tensor({5, 4})), InvalidArgument);

  Tensor u = oracle::random_tensor(rng, {4, 5});
  double num = 0.0, den = 0.0;
  for (std::int64_t i = 0; i < t.size(); ++i) {
    const double d = t.data()[i] - u.data()[i];
    num += d * d;
    den += t.data()[i] * t.data()[i];
  }
  CHECK(std::abs(relative_error(t, u) - std::sqrt(num / den)) <= 1e-12);
}
