#include <doctest.h>

#include <cmath>

#include "lrm/noise.hpp"
#include "lrm/sampler.hpp"

using namespace lrm;

TEST_CASE("zero noise models return the zero vector") {
  const Eigen::VectorXd x = Eigen::VectorXd::Constant(3, 2.0);
  const StreamKey key{1, 0, Substream::kNoiseU};
  CHECK(sample_noise(NoiseModel::none(), x, key, 4).isZero(0.0));
  CHECK(sample_noise(NoiseModel::gaussian(0.0), x, key, 4).isZero(0.0));
  CHECK(NoiseModel::gaussian(0.0).is_zero());
}

TEST_CASE("gaussian noise variance") {
  const auto model = NoiseModel::gaussian(2.0);
  const Eigen::VectorXd x = Eigen::VectorXd::Zero(1);
  const int n = 100000;
  double s = 0, s2 = 0;
  for (int k = 0; k < n; ++k) {
    const double u = sample_noise(model, x, {8, 0, Substream::kNoiseU}, k)(0);
    s += u;
    s2 += u * u;
  }
  const double var = s2 / n - (s / n) * (s / n);
  CHECK(var >= 3.9);
  CHECK(var <= 4.1);
}

TEST_CASE("noise is deterministic in (model, x, stream, k)") {
  const auto model = NoiseModel::state_scaled(1.5, 2.0);
  const Eigen::VectorXd x = Eigen::VectorXd::Constant(4, 3.0);
  const StreamKey key{77, 5, Substream::kNoiseUPrime};
  const Eigen::VectorXd a = sample_noise(model, x, key, 12), b = sample_noise(model, x, key, 12);
  CHECK((a.array() == b.array()).all());
  CHECK((a.array() != sample_noise(model, x, key, 13).array()).any());
}

TEST_CASE("state-scaled factor and the second-moment bound") {
  const auto model = NoiseModel::state_scaled(2.0, 1.0);
  CHECK(model.factor(Eigen::VectorXd::Constant(1, 0.5)) == doctest::Approx(2.0));
  CHECK(model.factor(Eigen::VectorXd::Constant(1, 4.0)) == doctest::Approx(0.5));
  for (const auto& m : {NoiseModel::gaussian(1.3), NoiseModel::state_scaled(2.0, 1.0)}) {
    for (double r : {0.0, 0.7, 10.0}) {
      const Eigen::VectorXd x = Eigen::VectorXd::Constant(2, r);
      const int n = 100000;
      double s2 = 0;
      for (int k = 0; k < n; ++k) s2 += sample_noise(m, x, {3, 1, Substream::kNoiseU}, k).squaredNorm();
      CHECK(s2 / n <= 1.05 * m.second_moment_bound(2));
    }
  }
}

TEST_CASE("martingale-difference diagnostic") {
  SUBCASE("all-zero records pass with zero running mean") {
    std::vector<StepRecord> records(100);
    for (auto& r : records) r.noise_U = Eigen::VectorXd::Zero(2);
    const MdsCheck c = mds_check(records, 10);
    CHECK(c.max_abs_running_mean == 0.0);
    CHECK(c.pass);
  }
  SUBCASE("gaussian noise passes the 4-sigma rule") {
    std::vector<Eigen::VectorXd> noise;
    const auto m = NoiseModel::gaussian(1.0);
    for (int k = 0; k < 10000; ++k) {
      noise.push_back(sample_noise(m, Eigen::VectorXd::Zero(1), {4, 0, Substream::kNoiseU}, k));
    }
    const MdsCheck c = mds_check(noise, 10000);
    CHECK(c.pass);
    CHECK(c.max_abs_running_mean <= 0.04);
    CHECK(c.windows == 1);
  }
  SUBCASE("constant offset fails") {
    std::vector<Eigen::VectorXd> noise(1000, Eigen::VectorXd::Ones(3));
    CHECK_FALSE(mds_check(noise, 100).pass);
  }
}
