#include <doctest.h>

#include <map>

#include "oracles.hpp"
#include "stict/ict.hpp"
#include "support.hpp"

using namespace stict;
using test::uniform_int;

TEST_CASE("LCS plan and mix match the brute-force oracle") {
  std::mt19937_64 rng(21);
  for (int trial = 0; trial < 150; ++trial) {
    const int window = trial % 3 == 0 ? 5 : 3;
    const int n = uniform_int(rng, 1, 2), c = uniform_int(rng, 1, 4);
    const int h = uniform_int(rng, window, 8), w = uniform_int(rng, window, 8);
    const auto f = test::random_tensor({n, c, h, w}, rng);
    std::mt19937_64 plan_rng(static_cast<std::uint64_t>(trial));
    const MixPlan plan = lcs_plan(f, window, plan_rng);
    plan.validate();
    CHECK(plan.offset == oracle::lcs_offsets(f, window));
    const auto got = mix(f, apply_shuffle(f, plan), plan.lambda_map<double>());
    CHECK(test::max_abs_diff(got, oracle::shuffle_mix(f, plan.offset, plan.lambda, window)) <= 1e-10);
  }
}

TEST_CASE("LCS ties go to the smallest raster offset") {
  const Tensor<double> flat(Shape{1, 2, 4, 4}, 1.0);
  std::mt19937_64 rng(0);
  const MixPlan plan = lcs_plan(flat, 3, rng);
  CHECK(plan.offset[0] == 5);       // (0, 0): first in-bounds non-centre neighbour is (0, +1)
  CHECK(plan.offset[1 * 4 + 1] == 0);  // interior: top-left corner of the window
  CHECK(plan.offset[3] == 3);       // (0, 3): left neighbour
}

TEST_CASE("lambda of one makes mixing the identity, bitwise") {
  std::mt19937_64 rng(22);
  for (int trial = 0; trial < 20; ++trial) {
    const auto f = test::random_tensor<float>({2, 3, 5, 6}, rng);
    MixPlan plan = random_plan(2, 5, 6, 3, MixScheme::RandomFeature, rng);
    std::fill(plan.lambda.begin(), plan.lambda.end(), 1.0);
    CHECK(mix(f, apply_shuffle(f, plan), plan.lambda_map<float>()).bitwise_equal(f));
    Tape<float> tape;
    auto v = tape.constant(f);
    CHECK(mix(v, apply_shuffle(v, plan), plan.lambda_map<float>()).value().bitwise_equal(f));
  }
}

TEST_CASE("random plans stay inside the window and cover every candidate") {
  std::mt19937_64 rng(23);
  std::map<int, int> interior_hits;
  for (int trial = 0; trial < 300; ++trial) {
    const MixPlan plan = random_plan(2, 6, 7, 3, MixScheme::RandomRgb, rng);
    plan.validate();
    CHECK(plan.scheme == MixScheme::RandomRgb);
    interior_hits[plan.offset[2 * 7 + 3]]++;
    for (double l : plan.lambda) CHECK((l >= 0 && l <= 1));
  }
  CHECK(interior_hits.size() == 8);
  CHECK(interior_hits.count(4) == 0);
}

TEST_CASE("plan validation and window checks") {
  std::mt19937_64 rng(24);
  MixPlan plan = random_plan(1, 4, 4, 3, MixScheme::Spatial, rng);
  plan.offset[5] = 4;  // centre
  CHECK_THROWS_AS(plan.validate(), ValidationError);
  plan = random_plan(1, 4, 4, 3, MixScheme::Spatial, rng);
  plan.offset[0] = 0;  // (-1, -1) from the corner
  CHECK_THROWS_AS(plan.validate(), ValidationError);
  plan = random_plan(1, 4, 4, 3, MixScheme::Spatial, rng);
  plan.lambda[2] = 1.5;
  CHECK_THROWS_AS(plan.validate(), ValidationError);
  CHECK_THROWS_AS(random_plan(1, 4, 4, 4, MixScheme::Spatial, rng), ValidationError);
  CHECK_THROWS_AS(random_plan(1, 2, 4, 3, MixScheme::Spatial, rng), ValidationError);
  CHECK_THROWS_AS(parse_scheme("LCS"), ValidationError);
  for (auto s : {MixScheme::Spatial, MixScheme::RandomFeature, MixScheme::RandomRgb}) CHECK(parse_scheme(scheme_name(s)) == s);
}

TEST_CASE("temporal target of a static scene is the prediction itself") {
  std::mt19937_64 rng(25);
  const auto pred = test::random_tensor<float>({2, 1, 8, 8}, rng, 0, 1);
  const Tensor<float> zero(Shape{2, 2, 8, 8});
  CHECK(temporal_target(pred, pred, zero, zero, 0.5).bitwise_equal(pred));
}

TEST_CASE("temporal target blends the two warped neighbours") {
  std::mt19937_64 rng(26);
  for (int trial = 0; trial < 20; ++trial) {
    const auto a = test::random_tensor({1, 1, 6, 6}, rng, 0, 1);
    const auto b = test::random_tensor({1, 1, 6, 6}, rng, 0, 1);
    const auto fb = test::random_tensor({1, 2, 6, 6}, rng, -2, 2);
    const auto ff = test::random_tensor({1, 2, 6, 6}, rng, -2, 2);
    const double lt = std::uniform_real_distribution<double>(0, 1)(rng);
    const auto got = temporal_target(a, b, fb, ff, lt);
    const auto wa = oracle::warp(a, fb), wb = oracle::warp(b, ff);
    for (std::size_t i = 0; i < got.size(); ++i) CHECK(std::abs(got[i] - (lt * wa[i] + (1 - lt) * wb[i])) <= 1e-12);
  }
}

TEST_CASE("flow and triplet validation") {
  const Tensor<float> frame(Shape{1, 3, 8, 8});
  CHECK_THROWS_AS(validate_flow(Tensor<float>(Shape{1, 3, 8, 8}), frame), ShapeError);
  CHECK_THROWS_AS(validate_flow(Tensor<float>(Shape{1, 2, 8, 4}), frame), ShapeError);
  CHECK_THROWS_AS(validate_flow(Tensor<float>(Shape{1, 2, 8, 8}, std::nanf("")), frame), NumericalError);
  FrameTriplet<float> t{frame, frame, frame, Tensor<float>(Shape{1, 2, 8, 8}), Tensor<float>(Shape{1, 2, 8, 8}), 0.5, 1};
  CHECK_NOTHROW(t.validate());
  t.lambda_t = 1.2;
  CHECK_THROWS_AS(t.validate(), ValidationError);
  t.lambda_t = 0.5;
  t.next = Tensor<float>(Shape{1, 3, 8, 16});
  CHECK_THROWS_AS(t.validate(), ShapeError);
}
