#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "nnc/errors.hpp"
#include "nnc/factorization.hpp"
#include "nnc/rng.hpp"
#include "nnc/tensor.hpp"
#include "oracles.hpp"

using namespace nnc;

TEST_CASE("tensor construction validates shape against data") {
  CHECK_THROWS_AS(Tensor({3, 0, 2}), InvalidArgument);
  CHECK_THROWS_AS(Tensor({2, 2}, {1.0, 2.0, 3.0}), InvalidArgument);
  Tensor t({2, 3});
  CHECK(t.size() == 6);
  CHECK(t.extent(1) == 2);
  CHECK(t.extent(2) == 3);
  CHECK_THROWS_AS(t.extent(3), InvalidArgument);
}

TEST_CASE("matrix and 2-way tensor convert losslessly") {
  Rng rng(11);
  Matrix m = oracle::random_matrix(rng, 4, 7);
  Matrix back = Matrix::from_tensor(m.to_tensor());
  CHECK(back.rows() == 4);
  CHECK(back.cols() == 7);
  CHECK(back.values() == m.values());
}

TEST_CASE("matricize of a 2-way tensor: mode 1 is identity, mode 2 is transpose") {
  Rng rng(5);
  Matrix m = oracle::random_matrix(rng, 3, 5);
  Tensor t = m.to_tensor();

  Matrix m1 = matricize(t, 1);
  CHECK(m1.values() == m.values());

  Matrix m2 = matricize(t, 2);
  CHECK(m2.rows() == 5);
  CHECK(m2.cols() == 3);
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 5; ++c) CHECK(m2(c, r) == m(r, c));
}

TEST_CASE("matricize of a 3x4x2 tensor matches the index-map oracle entry by entry") {
  Rng rng(7);
  Tensor t = oracle::random_tensor(rng, {3, 4, 2});
  for (int mode = 1; mode <= 3; ++mode) {
    Matrix got = matricize(t, mode);
    Matrix want = oracle::matricize_by_index_map(t, mode);
    REQUIRE(got.rows() == want.rows());
    REQUIRE(got.cols() == want.cols());
    CHECK(got.values() == want.values());
  }
  Matrix m2 = matricize(t, 2);
  CHECK(m2.rows() == 4);
  CHECK(m2.cols() == 6);
}

TEST_CASE("matricize rejects out-of-range modes") {
  Tensor t({2, 2, 2});
  CHECK_THROWS_AS(matricize(t, 0), InvalidArgument);
  CHECK_THROWS_AS(matricize(t, 4), InvalidArgument);
}

TEST_CASE("fold is the exact inverse of matricize for every mode") {
  Rng rng(13);
  const std::vector<std::vector<int>> shapes = {{6}, {3, 4}, {3, 4, 2}, {2, 3, 4, 5}};
  for (const auto& shape : shapes) {
    Tensor t = oracle::random_tensor(rng, shape);
    for (int mode = 1; mode <= t.order(); ++mode) {
      Tensor back = fold(matricize(t, mode), mode, shape);
      CHECK(back.values() == t.values());  // bit-exact round trip
    }
  }
}

TEST_CASE("fold of a 4x6 matrix at mode 2 matches the index-map oracle") {
  Rng rng(17);
  Tensor t = oracle::random_tensor(rng, {3, 4, 2});
  Matrix unfolded = oracle::matricize_by_index_map(t, 2);
  Tensor folded = fold(unfolded, 2, {3, 4, 2});
  CHECK(folded.values() == t.values());
}

TEST_CASE("fold rejects inconsistent shapes") {
  Matrix m(4, 6);
  CHECK_THROWS_AS(fold(m, 2, {3, 4, 3}), InvalidArgument);   // wrong volume
  CHECK_THROWS_AS(fold(m, 1, {3, 4, 2}), InvalidArgument);   // rows vs extent
  CHECK_THROWS_AS(fold(m, 5, {3, 4, 2}), InvalidArgument);   // bad mode
}

TEST_CASE("mode_product with the identity is the identity") {
  Rng rng(19);
  Tensor t = oracle::random_tensor(rng, {3, 4, 2});
  for (int mode = 1; mode <= 3; ++mode) {
    Tensor got = mode_product(t, Matrix::identity(t.extent(mode)), mode);
    CHECK(got.values() == t.values());
  }
}

TEST_CASE("mode_product over mode 1 of a 2-way tensor is the matrix product") {
  Rng rng(23);
  Matrix a = oracle::random_matrix(rng, 5, 3);
  Matrix b = oracle::random_matrix(rng, 3, 4);
  Tensor got = mode_product(b.to_tensor(), a, 1);
  Matrix want = matmul(a, b);
  CHECK(got.values() == want.values());
}

TEST_CASE("mode_product matches the triple-loop oracle") {
  Rng rng(29);
  Tensor t = oracle::random_tensor(rng, {3, 4, 2});
  Matrix m = oracle::random_matrix(rng, 5, 4);
  Tensor got = mode_product(t, m, 2);
  Tensor want = oracle::mode_product_by_loops(t, m, 2);
  REQUIRE(got.shape() == std::vector<int>{3, 5, 2});
  CHECK(oracle::rel_err_vec(got.values(), want.values()) < 1e-14);
}

TEST_CASE("mode_product rejects dimension mismatches") {
  Tensor t({3, 4, 2});
  CHECK_THROWS_AS(mode_product(t, Matrix(5, 3), 2), InvalidArgument);
}

TEST_CASE("kronecker: identity and scalar cases") {
  Rng rng(31);
  Matrix b = oracle::random_matrix(rng, 3, 2);
  Matrix i1 = Matrix::identity(1);
  CHECK(kronecker(i1, b).values() == b.values());

  Matrix two(1, 1, {2.0});
  Matrix got = kronecker(two, Matrix::identity(2));
  CHECK(got(0, 0) == 2.0);
  CHECK(got(0, 1) == 0.0);
  CHECK(got(1, 0) == 0.0);
  CHECK(got(1, 1) == 2.0);
}

TEST_CASE("kronecker matches the element formula oracle") {
  Rng rng(37);
  Matrix a = oracle::random_matrix(rng, 2, 3);
  Matrix b = oracle::random_matrix(rng, 3, 2);
  Matrix got = kronecker(a, b);
  Matrix want = oracle::kronecker_by_formula(a, b);
  REQUIRE(got.rows() == 6);
  REQUIRE(got.cols() == 6);
  CHECK(got.values() == want.values());
}

// Unfolding a full mode-product chain must equal the factor times the core
// unfolding times the transposed Kronecker chain of the remaining factors in
// descending mode order. This pins the matricization convention.
TEST_CASE("unfolding of a mode-product chain matches the kronecker form") {
  Rng rng(41);
  for (int trial = 0; trial < 10; ++trial) {
    Tensor core = oracle::random_tensor(rng, {3, 4, 2});
    std::vector<Matrix> factors = {oracle::random_matrix(rng, 5, 3),
                                   oracle::random_matrix(rng, 6, 4),
                                   oracle::random_matrix(rng, 4, 2)};
    Tensor full = core;
    for (int mode = 1; mode <= 3; ++mode) full = mode_product(full, factors[mode - 1], mode);

    for (int mode = 1; mode <= 3; ++mode) {
      Matrix lhs = matricize(full, mode);
      // Kronecker chain over the other modes, descending.
      Matrix chain = Matrix::identity(1);
      for (int other = 3; other >= 1; --other) {
        if (other == mode) continue;
        chain = kronecker(chain, factors[other - 1]);
      }
      Matrix rhs = matmul(matmul(factors[mode - 1], matricize(core, mode)), transpose(chain));
      CHECK(relative_error(lhs, rhs) <= 1e-10);
    }
  }
}

TEST_CASE("mode products over distinct modes commute") {
  Rng rng(43);
  for (int trial = 0; trial < 10; ++trial) {
    Tensor t = oracle::random_tensor(rng, {3, 4, 2});
    Matrix c1 = oracle::random_matrix(rng, 5, 3);
    Matrix c2 = oracle::random_matrix(rng, 6, 4);
    Tensor ab = mode_product(mode_product(t, c1, 1), c2, 2);
    Tensor ba = mode_product(mode_product(t, c2, 2), c1, 1);
    CHECK(relative_error(ab, ba) <= 1e-12);
  }
}

TEST_CASE("mode_product is linear in the tensor argument") {
  Rng rng(47);
  for (int trial = 0; trial < 10; ++trial) {
    Tensor t = oracle::random_tensor(rng, {3, 4, 2});
    Tensor u = oracle::random_tensor(rng, {3, 4, 2});
    Matrix m = oracle::random_matrix(rng, 5, 4);
    const double alpha = rng.uniform(-2.0, 2.0);
    const double beta = rng.uniform(-2.0, 2.0);

    Tensor mix({3, 4, 2});
    for (std::int64_t i = 0; i < mix.size(); ++i)
      mix.data()[i] = alpha * t.data()[i] + beta * u.data()[i];

    Tensor lhs = mode_product(mix, m, 2);
    Tensor a = mode_product(t, m, 2);
    Tensor b = mode_product(u, m, 2);
    Tensor rhs({3, 5, 2});
    for (std::int64_t i = 0; i < rhs.size(); ++i)
      rhs.data()[i] = alpha * a.data()[i] + beta * b.data()[i];
    CHECK(relative_error(lhs, rhs) <= 1e-12);
  }
}
