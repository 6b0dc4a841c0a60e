#include <doctest.h>

#include <cmath>

#include "lrm/schedule.hpp"

using namespace lrm;

TEST_CASE("gamma examples") {
  CHECK(StepSchedule::constant(0.1, 100).gamma(7) == 0.1);
  CHECK(StepSchedule::poly(1.0, 1.0, 100).gamma(4) == doctest::Approx(0.25));
  CHECK(StepSchedule::sqrt_log(1.0, 100).gamma(4) == doctest::Approx(1.0 / (2.0 * std::log(5.0))));
  CHECK(StepSchedule::sqrt_log(1.0, 100).gamma(4) == doctest::Approx(0.3107).epsilon(1e-4));
}

TEST_CASE("tau examples") {
  CHECK(StepSchedule::constant(0.1, 100).tau(5) == doctest::Approx(0.5));
  CHECK(StepSchedule::poly(1.0, 1.0, 100).tau(3) == doctest::Approx(1.0 + 0.5 + 1.0 / 3.0));
  for (const auto& s : {StepSchedule::constant(0.3, 10), StepSchedule::poly(2.0, 0.7, 10),
                        StepSchedule::sqrt_log(0.5, 10)}) {
    CHECK(s.tau(0) == 0.0);
  }
}

TEST_CASE("schedule invariants") {
  for (const auto& s : {StepSchedule::constant(0.3, 2000), StepSchedule::poly(2.0, 0.7, 2000),
                        StepSchedule::sqrt_log(0.5, 2000), StepSchedule::poly(1.0, 2.0, 2000)}) {
    for (long k = 1; k <= s.max_k(); ++k) {
      REQUIRE(s.gamma(k) > 0.0);
      REQUIRE(s.gamma(k) <= s.gamma(1));
      if (k > 1) REQUIRE(s.gamma(k) <= s.gamma(k - 1));
      REQUIRE(s.tau(k) > s.tau(k - 1));
      // τ is a running sum, so differences recover γ up to rounding in τ.
      REQUIRE(std::abs((s.tau(k) - s.tau(k - 1)) - s.gamma(k)) <= 4e-16 * s.tau(k));
    }
  }
}

TEST_CASE("index_at_time inverts the clock") {
  const auto s = StepSchedule::poly(1.0, 0.6, 5000);
  for (long k : {1L, 10L, 333L, 4000L}) CHECK(s.index_at_time(s.tau(k)) == k);
}

TEST_CASE("invalid schedules are rejected at construction") {
  CHECK_THROWS(StepSchedule::constant(0.0, 10));
  CHECK_THROWS(StepSchedule::poly(1.0, 0.0, 10));
  CHECK_THROWS(StepSchedule::sqrt_log(-1.0, 10));
  CHECK_THROWS(StepSchedule::constant(0.1, 0));
  CHECK_THROWS(StepSchedule::constant(0.1, 10).gamma(0));
  CHECK_THROWS(StepSchedule::constant(0.1, 10).gamma(11));
}

TEST_CASE("compute_P examples") {
  CHECK(compute_P(1.0, 0.0) == doctest::Approx(2.0));
  CHECK(compute_P(0.0, 2.0) == doctest::Approx(12.0));
  CHECK(compute_P(1.0, 0.5) == doctest::Approx(6.0));
}

TEST_CASE("robbins-monro verdicts") {
  const auto poly2 = validate(StepSchedule::poly(1.0, 2.0, 1000), 2.0);
  CHECK_FALSE(poly2.rm_divergent);
  CHECK(poly2.rm_square_summable);
  const auto constant = validate(StepSchedule::constant(0.1, 1000), 2.0);
  CHECK(constant.rm_divergent);
  CHECK_FALSE(constant.rm_square_summable);
  const auto sqrtlog = validate(StepSchedule::sqrt_log(0.1, 1000), 6.0);
  CHECK(sqrtlog.rm_divergent);
  CHECK(sqrtlog.rm_square_summable);
  for (double p : {0.51, 0.75, 1.0}) {
    const auto r = validate(StepSchedule::poly(1.0, p, 100), 2.0);
    CHECK(r.rm_divergent);
    CHECK(r.rm_square_summable);
  }
  CHECK_FALSE(validate(StepSchedule::poly(1.0, 0.5, 100), 2.0).rm_square_summable);
  CHECK_FALSE(validate(StepSchedule::poly(1.0, 1.5, 100), 2.0).rm_divergent);
}

TEST_CASE("step-size condition: first index is re-checked independently") {
  auto holds = [](const StepSchedule& s, double P, long k) {
    const double g0 = s.gamma(k), g1 = s.gamma(k + 1);
    return g1 / g0 + P * g0 * g1 < 1.0 - g0;
  };
  // Fast-decaying schedules satisfy the condition on a tail.
  const auto s = StepSchedule::poly(0.05, 2.0, 20000);
  const auto r = validate(s, 2.0);
  REQUIRE(r.strange_condition_first_index);
  const long k0 = *r.strange_condition_first_index;
  for (long k = k0; k < s.max_k(); ++k) REQUIRE(holds(s, 2.0, k));
  if (k0 > 1) CHECK_FALSE(holds(s, 2.0, k0 - 1));
  CHECK(r.P_used == 2.0);
  CHECK(strange_condition_holds(s, 2.0, k0));
}

TEST_CASE("step-size condition on the slowly decreasing schedule") {
  // 1 − γ_{k+1}/γ_k decays like 1/(2k) while γ_k decays like 1/(√k log k),
  // so the inequality fails on every long enough tail.
  const auto s = StepSchedule::sqrt_log(0.1, 1000000);
  const auto r = validate(s, 6.0);
  CHECK(r.rm_divergent);
  CHECK(r.rm_square_summable);
  CHECK_FALSE(r.strange_condition_first_index.has_value());
  REQUIRE(r.strange_condition_last_violation);
  CHECK(*r.strange_condition_last_violation == s.max_k() - 1);
  CHECK(strange_condition_holds(s, 6.0, 100));
  CHECK_FALSE(strange_condition_holds(s, 6.0, 100000));
}
