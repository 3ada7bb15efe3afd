#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>

#include "nnc/errors.hpp"
#include "nnc/rank_selection.hpp"
#include "nnc/reference_model.hpp"
#include "nnc/rng.hpp"
#include "oracles.hpp"

using namespace nnc;

namespace {

// Planted-rank matrix: `rank` strong directions plus i.i.d. gaussian noise.
Matrix planted_matrix(Rng& rng, int rows, int cols, int rank, double signal, double noise) {
  Matrix a(rows, cols);
  if (rank > 0) {
    Matrix u = oracle::random_orthonormal(rng, rows, rank);
    Matrix v = oracle::random_orthonormal(rng, cols, rank);
    for (int k = 0; k < rank; ++k) {
      const double s = signal * rng.uniform(0.8, 1.2);
      for (int j = 0; j < cols; ++j)
        for (int i = 0; i < rows; ++i) a(i, j) += s * u(i, k) * v(j, k);
    }
  }
  for (double& x : a.values()) x += rng.normal(0.0, noise);
  return a;
}

}  // namespace

TEST_CASE("weaken_rank evaluates the weakening formula") {
  CHECK(weaken_rank(256, 64, 0.5) == 160);
  CHECK(weaken_rank(20, 5, 0.3) == 20);   // initial <= 20 passes through
  CHECK(weaken_rank(20, 5, 0.9) == 20);
  CHECK(weaken_rank(100, 100, 0.6) == 100);  // zero gap
  CHECK(weaken_rank(21, 1, 0.5) == 11);
}

TEST_CASE("weaken_rank validates preconditions") {
  CHECK_THROWS_AS(weaken_rank(10, 0, 0.5), InvalidArgument);
  CHECK_THROWS_AS(weaken_rank(10, 11, 0.5), InvalidArgument);
  CHECK_THROWS_AS(weaken_rank(10, 5, 0.0), InvalidArgument);
  CHECK_THROWS_AS(weaken_rank(10, 5, 1.0), InvalidArgument);
}

TEST_CASE("weakened rank is sandwiched between extreme and initial") {
  Rng rng(211);
  for (int trial = 0; trial < 2000; ++trial) {
    const int initial = rng.uniform_int(1, 512);
    const int extreme = rng.uniform_int(1, initial);
    const double k = rng.uniform(0.01, 0.99);
    const int w = weaken_rank(initial, extreme, k);
    CHECK(w >= extreme);
    CHECK(w <= initial);
  }
}

TEST_CASE("larger weakening factor never increases the weakened rank") {
  Rng rng(223);
  for (int trial = 0; trial < 500; ++trial) {
    const int initial = rng.uniform_int(21, 512);
    const int extreme = rng.uniform_int(1, initial);
    const int w_soft = weaken_rank(initial, extreme, 0.5);
    const int w_mid = weaken_rank(initial, extreme, 0.6);
    const int w_hard = weaken_rank(initial, extreme, 0.7);
    CHECK(w_hard <= w_mid);
    CHECK(w_mid <= w_soft);
  }
}

TEST_CASE("iterating weaken_rank converges to a fixed point") {
  Rng rng(227);
  for (int trial = 0; trial < 100; ++trial) {
    const int extreme = rng.uniform_int(1, 30);
    int r = rng.uniform_int(std::max(extreme, 21), 512);
    const double k = rng.uniform(0.5, 0.7);
    int prev = r + 1;
    int steps = 0;
    while (r < prev) {
      prev = r;
      r = weaken_rank(prev, std::min(extreme, prev), k);
      CHECK(r <= prev);
      REQUIRE(++steps < 200);
    }
    // Fixed point: either the extreme rank or the small-layer threshold.
    CHECK((r == weaken_rank(r, std::min(extreme, r), k)));
  }
}

TEST_CASE("vbmf recovers a planted rank on noisy 100x80 matrices") {
  int hits = 0;
  const int trials = 12;
  for (int trial = 0; trial < trials; ++trial) {
    Rng rng(4000 + trial);
    Matrix a = planted_matrix(rng, 100, 80, 5, 5.0, 0.05);
    const int rank = vbmf_extreme_rank(a);
    if (std::abs(rank - 5) <= 1) ++hits;
  }
  CHECK(hits >= (trials * 9) / 10);
}

TEST_CASE("vbmf sees pure noise as rank zero") {
  int zeros = 0;
  const int trials = 9;
  for (int trial = 0; trial < trials; ++trial) {
    Rng rng(5000 + trial);
    Matrix a = planted_matrix(rng, 100, 80, 0, 0.0, 0.1);
    if (vbmf_extreme_rank(a) == 0) ++zeros;
  }
  CHECK(zeros > trials / 2);
}

TEST_CASE("vbmf finds rank one in a barely-noisy rank-1 matrix") {
  Rng rng(229);
  Matrix a = planted_matrix(rng, 60, 40, 1, 8.0, 1e-6);
  CHECK(vbmf_extreme_rank(a) == 1);
}

TEST_CASE("vbmf rejects degenerate input") {
  Matrix zero(10, 8);
  CHECK_THROWS_AS(vbmf_extreme_rank(zero), DegenerateInput);
  Matrix bad(2, 2, {1.0, std::numeric_limits<double>::infinity(), 0.0, 0.0});
  CHECK_THROWS_AS(vbmf_extreme_rank(bad), InvalidArgument);
}

TEST_CASE("vbmf rank is invariant under positive rescaling") {
  Rng rng(233);
  Matrix a = planted_matrix(rng, 64, 48, 4, 5.0, 0.08);
  const int base = vbmf_extreme_rank(a);
  for (double scale : {1e-3, 7.0, 1e4}) {
    Matrix b = a;
    for (double& v : b.values()) v *= scale;
    CHECK(vbmf_extreme_rank(b) == base);
  }
}

TEST_CASE("conv kernels get independent mode-3 and mode-4 estimates") {
  Rng rng(239);
  // Kernel with planted channel ranks (4, 6).
  Tensor core = oracle::random_tensor(rng, {3, 3, 4, 6});
  Matrix q3 = oracle::random_orthonormal(rng, 32, 4);
  Matrix q4 = oracle::random_orthonormal(rng, 48, 6);
  Tensor kernel = mode_product(mode_product(core, q3, 3), q4, 4);
  for (double& v : kernel.values()) v += rng.normal(0.0, 0.01);

  const std::map<int, int> ranks = extreme_ranks_for_conv(kernel);
  REQUIRE(ranks.count(3) == 1);
  REQUIRE(ranks.count(4) == 1);
  CHECK(std::abs(ranks.at(3) - 4) <= 1);
  CHECK(std::abs(ranks.at(4) - 6) <= 1);
  CHECK(ranks.at(3) <= 32);
  CHECK(ranks.at(4) <= 48);

  Tensor zero({3, 3, 4, 6});
  CHECK_THROWS_AS(extreme_ranks_for_conv(zero), DegenerateInput);
  CHECK_THROWS_AS(extreme_ranks_for_conv(Tensor({3, 3, 4})), InvalidArgument);
}

TEST_CASE("build_rank_plan weakens a planted conv layer per the formula") {
  Rng rng(241);
  Tensor core = oracle::random_tensor(rng, {3, 3, 5, 7});
  Matrix q3 = oracle::random_orthonormal(rng, 64, 5);
  Matrix q4 = oracle::random_orthonormal(rng, 128, 7);
  Tensor kernel = mode_product(mode_product(core, q3, 3), q4, 4);
  for (double& v : kernel.values()) v += rng.normal(0.0, 0.01);

  std::vector<Layer> layers;
  layers.push_back({"conv", Conv{kernel, std::vector<double>(128, 0.0), 1, 1}});
  layers.push_back({"fc", FC{oracle::random_matrix(rng, 4, 128 * 8 * 8),
                             std::vector<double>(4, 0.0)}});
  layers.push_back({"softmax", Softmax{}});
  ModelGraph model("m", "1", Shape3{64, 8, 8}, std::move(layers));

  const auto plans = build_rank_plan(model, 0.6);
  REQUIRE(plans.size() == 2);
  const RankPlan& conv_plan = plans[0];
  CHECK(conv_plan.kind == PlanKind::conv);
  CHECK(conv_plan.initial_ranks.at(3) == 64);
  CHECK(conv_plan.initial_ranks.at(4) == 128);
  CHECK_FALSE(conv_plan.skip);
  for (int mode : {3, 4}) {
    const int expected = weaken_rank(conv_plan.initial_ranks.at(mode),
                                     conv_plan.extreme_ranks.at(mode), 0.6);
    CHECK(conv_plan.weakened_ranks.at(mode) == expected);
  }
}

TEST_CASE("build_rank_plan skips layers that are already small") {
  Rng rng(251);
  std::vector<Layer> layers;
  layers.push_back(
      {"conv", Conv{oracle::random_tensor(rng, {3, 3, 16, 16}), std::vector<double>(16, 0.0), 1, 1}});
  layers.push_back({"fc", FC{oracle::random_matrix(rng, 4, 16 * 8 * 8),
                             std::vector<double>(4, 0.0)}});
  layers.push_back({"softmax", Softmax{}});
  ModelGraph model("m", "1", Shape3{16, 8, 8}, std::move(layers));

  const auto plans = build_rank_plan(model, 0.6);
  REQUIRE(plans.size() == 2);
  CHECK(plans[0].skip);
  CHECK(plans[0].skip_reason == "already-small");
  CHECK(plans[1].skip);  // fc initial rank is 4
}

TEST_CASE("build_rank_plan signals nothing-to-do without decomposable layers") {
  std::vector<Layer> layers;
  layers.push_back({"relu", ReLU{}});
  layers.push_back({"softmax", Softmax{}});
  ModelGraph model("m", "1", Shape3{4, 1, 1}, std::move(layers));
  CHECK_THROWS_AS(build_rank_plan(model, 0.6), NothingToDo);
}

TEST_CASE("factorized stacks are re-analyzed through their inner kernels") {
  Rng rng(263);

  // Factorized conv whose core carries planted channel ranks (4, 6) well
  // below the stack's inner ranks (24, 26).
  FactorizedConv fac;
  fac.first = oracle::random_tensor(rng, {1, 1, 30, 24});
  Tensor core = oracle::random_tensor(rng, {3, 3, 4, 6});
  Matrix q3 = oracle::random_orthonormal(rng, 24, 4);
  Matrix q4 = oracle::random_orthonormal(rng, 26, 6);
  fac.middle = mode_product(mode_product(core, q3, 3), q4, 4);
  for (double& v : fac.middle.values()) v += rng.normal(0.0, 0.01);
  fac.last = oracle::random_tensor(rng, {1, 1, 26, 28});
  fac.bias.assign(28, 0.0);
  fac.padding = 1;

  FactorizedFC ffc;
  ffc.first = oracle::random_matrix(rng, 24, 28 * 8 * 8);
  ffc.last = oracle::random_matrix(rng, 4, 24);
  ffc.bias.assign(4, 0.0);

  std::vector<Layer> layers;
  layers.push_back({"fconv", fac});
  layers.push_back({"ffc", ffc});
  layers.push_back({"softmax", Softmax{}});
  ModelGraph model("m", "1", Shape3{30, 8, 8}, std::move(layers));

  const auto plans = build_rank_plan(model, 0.6);
  REQUIRE(plans.size() == 2);
  CHECK(plans[0].kind == PlanKind::factorized_conv);
  CHECK(plans[0].initial_ranks.at(3) == 24);
  CHECK(plans[0].initial_ranks.at(4) == 26);
  CHECK_FALSE(plans[0].skip);
  CHECK(std::abs(plans[0].extreme_ranks.at(3) - 4) <= 1);
  CHECK(std::abs(plans[0].extreme_ranks.at(4) - 6) <= 1);
  for (int mode : {3, 4})
    CHECK(plans[0].weakened_ranks.at(mode) ==
          weaken_rank(plans[0].initial_ranks.at(mode), plans[0].extreme_ranks.at(mode), 0.6));

  CHECK(plans[1].kind == PlanKind::factorized_fc);
  CHECK(plans[1].initial_ranks.at(0) == 24);
  CHECK(plans[1].extreme_ranks.at(0) >= 1);
  CHECK(plans[1].weakened_ranks.at(0) <= 24);
}

TEST_CASE("disabling weakening collapses the plan to extreme ranks") {
  Rng rng(257);
  std::vector<Layer> layers;
  layers.push_back({"fc1", FC{planted_matrix(rng, 64, 256, 6, 5.0, 0.05),
                              std::vector<double>(64, 0.0)}});
  layers.push_back({"fc2", FC{oracle::random_matrix(rng, 4, 64), std::vector<double>(4, 0.0)}});
  layers.push_back({"softmax", Softmax{}});
  ModelGraph model("m", "1", Shape3{256, 1, 1}, std::move(layers));

  const auto strong = build_rank_plan(model, 0.6, /*weaken=*/false);
  CHECK(strong[0].weakened_ranks.at(0) == strong[0].extreme_ranks.at(0));

  const auto weak = build_rank_plan(model, 0.6, /*weaken=*/true);
  CHECK(weak[0].weakened_ranks.at(0) ==
        weaken_rank(weak[0].initial_ranks.at(0), weak[0].extreme_ranks.at(0), 0.6));
  CHECK(weak[0].weakened_ranks.at(0) >= strong[0].weakened_ranks.at(0));
}
