#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "lrm/metric.hpp"

using namespace lrm;

namespace {

Matrix normals(Eigen::Index n, Eigen::Index d, std::uint32_t replica, double scale = 1.0) {
  CounterRng rng({99, replica, Substream::kMetric}, 0);
  Matrix m(n, d);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < d; ++j) m(i, j) = scale * rng.normal();
  }
  return m;
}

// Brute-force optimal matching by enumerating permutations.
double brute_w2(const Matrix& a, const Matrix& b) {
  std::vector<int> perm(static_cast<std::size_t>(a.rows()));
  std::iota(perm.begin(), perm.end(), 0);
  double best = 1e300;
  do {
    double c = 0;
    for (Eigen::Index i = 0; i < a.rows(); ++i) c += (a.row(i) - b.row(perm[i])).squaredNorm();
    best = std::min(best, c);
  } while (std::next_permutation(perm.begin(), perm.end()));
  return std::sqrt(best / a.rows());
}

}  // namespace

TEST_CASE("ensemble statistics") {
  Matrix s(3, 2);
  s << 1, 2, 3, 4, 5, 9;
  const Ensemble e(s, 10, 1.5);
  CHECK(e.mean()(0) == doctest::Approx(3.0));
  CHECK(e.covariance()(0, 0) == doctest::Approx(4.0));
  CHECK(e.mean_sq_norm() == doctest::Approx((5.0 + 25.0 + 106.0) / 3.0));
  CHECK_THROWS(Ensemble(Matrix::Zero(1, 2)));
  Matrix bad = s;
  bad(0, 0) = std::nan("");
  CHECK_THROWS(Ensemble(bad));
}

TEST_CASE("gaussian closed form") {
  const Matrix I = Matrix::Identity(2, 2);
  Vector mu(2);
  mu << 3.0, 4.0;
  CHECK(w2_gaussian(Vector::Zero(2), I, Vector::Zero(2), I) == doctest::Approx(0.0));
  CHECK(w2_gaussian(Vector::Zero(2), I, mu, I) == doctest::Approx(5.0));
  CHECK(w2_gaussian(Vector::Zero(1), Matrix::Identity(1, 1), Vector::Zero(1),
                    Matrix::Constant(1, 1, 2.25)) == doctest::Approx(0.5));
  Matrix C(2, 2);
  C << 2.0, 0.3, 0.3, 0.5;
  CHECK(w2_gaussian(mu, C, Vector::Zero(2), I) == doctest::Approx(w2_gaussian(Vector::Zero(2), I, mu, C)));
}

TEST_CASE("quantile 1-D estimator") {
  const Matrix a = normals(1000, 1, 1);
  CHECK(w2_1d(a, a) == 0.0);
  const Matrix shifted = a.array() + 0.7;
  CHECK(w2_1d(a, shifted) == doctest::Approx(0.7).epsilon(1e-12));
  const Matrix x = normals(100000, 1, 2), y = normals(100000, 1, 3, std::sqrt(1.0 / 0.95));
  const double target = std::sqrt(1.0 / 0.95) - 1.0;
  CHECK(std::abs(w2_1d(x, y) - target) <= 0.2 * target);
  const Matrix b = normals(700, 1, 4);
  CHECK(w2_1d(a, b) == doctest::Approx(w2_1d(b, a)));
}

TEST_CASE("assignment estimator") {
  Matrix a(2, 1), b(2, 1);
  a << 0, 1;
  b << 1, 2;
  CHECK(w2_assignment(a, b) == doctest::Approx(1.0));
  const Matrix x = normals(64, 3, 5);
  Matrix perm = x;
  for (Eigen::Index i = 0; i < 64; ++i) perm.row(i) = x.row((i * 17) % 64);
  CHECK(w2_assignment(x, perm) == 0.0);
  SUBCASE("matches brute force on small instances") {
    for (std::uint32_t r = 0; r < 20; ++r) {
      const Matrix p = normals(6, 2, 100 + r), q = normals(6, 2, 200 + r);
      CHECK(w2_assignment(p, q) == doctest::Approx(brute_w2(p, q)).epsilon(1e-12));
    }
  }
  SUBCASE("equals the quantile estimator in 1-D") {
    for (std::uint32_t r = 0; r < 5; ++r) {
      const Matrix p = normals(200, 1, 300 + r), q = normals(200, 1, 400 + r, 2.0);
      CHECK(std::abs(w2_assignment(p, q) - w2_1d(p, q)) < 1e-12);
    }
  }
  SUBCASE("cap is enforced") {
    CHECK_THROWS(w2_assignment(normals(20, 1, 1), normals(20, 1, 2), 10));
  }
  SUBCASE("symmetric and a metric on random triples") {
    for (std::uint32_t r = 0; r < 100; ++r) {
      const Matrix p = normals(24, 2, 1000 + r), q = normals(24, 2, 2000 + r, 1.5),
                   s = normals(24, 2, 3000 + r, 0.5);
      const double pq = w2_assignment(p, q), qs = w2_assignment(q, s), ps = w2_assignment(p, s);
      REQUIRE(pq == doctest::Approx(w2_assignment(q, p)).epsilon(1e-12));
      REQUIRE(ps <= pq + qs + 1e-12);
    }
  }
}

TEST_CASE("sliced estimator") {
  const Matrix a = normals(300, 3, 7);
  CHECK(sliced_w2(a, a, 64, {1, 0, Substream::kMetric}) == 0.0);
  const Matrix b = normals(300, 3, 8, 1.3);
  const double s1 = sliced_w2(a, b, 256, {1, 0, Substream::kMetric});
  const double s2 = sliced_w2(a, b, 256, {2, 0, Substream::kMetric});
  CHECK(std::abs(s1 - s2) <= 3.0 / std::sqrt(256.0) * s1);
  CHECK(s1 == doctest::Approx(sliced_w2(b, a, 256, {1, 0, Substream::kMetric})));
  SUBCASE("never exceeds the assignment value") {
    for (std::uint32_t r = 0; r < 50; ++r) {
      const Matrix p = normals(40, 2, 500 + r), q = normals(40, 2, 600 + r, 1.4);
      CHECK(sliced_w2(p, q, 64, {r, 0, Substream::kMetric}) <= w2_assignment(p, q) + 1e-12);
    }
  }
  CHECK_THROWS(sliced_w2(a, b, 8, {1, 0, Substream::kMetric}));
}

TEST_CASE("estimator order p") {
  const Matrix a = normals(100, 1, 9);
  const Matrix b = a.array() + 2.0;
  CHECK(w2_1d(a, b, 1.5) == doctest::Approx(2.0));
  CHECK_THROWS(w2_1d(a, b, 1.0));
  CHECK_THROWS(w2_1d(a, b, 2.5));
  const W2Report r = sliced_w2_report(normals(50, 2, 1), normals(50, 2, 2), 64, {1, 0, Substream::kMetric}, 1.5);
  CHECK(r.order == 1.5);
  CHECK(r.method_name() == "sliced(64)");
  CHECK(w2_1d_report(a, b).method_name() == "quantile_1d");
}

TEST_CASE("moment tracking") {
  SUBCASE("all-zero ensembles") {
    std::vector<Ensemble> es;
    for (long k = 0; k < 4; ++k) es.emplace_back(Matrix::Zero(5, 2), k);
    const MomentTrack t = moment_track(es);
    for (double v : t.mean_sq_norm) CHECK(v == 0.0);
    CHECK(t.stabilized);
  }
  SUBCASE("stationary standard normal ensembles") {
    const int n = 4000, d = 3;
    std::vector<Ensemble> es;
    for (std::uint32_t k = 0; k < 6; ++k) es.emplace_back(normals(n, d, 700 + k), k);
    const MomentTrack t = moment_track(es);
    for (double v : t.mean_sq_norm) CHECK(std::abs(v - d) <= 3.0 * std::sqrt(2.0 * d / n));
    CHECK(t.stabilized);
  }
  SUBCASE("exploding series") {
    std::vector<long> k;
    std::vector<double> v;
    for (int i = 0; i < 8; ++i) {
      k.push_back(i);
      v.push_back(std::pow(4.0, i));
    }
    CHECK_FALSE(moment_track(k, v).stabilized);
  }
}

TEST_CASE("bias scaling fit") {
  SUBCASE("zero bias") {
    std::vector<std::vector<BiasSample>> traces(3);
    for (auto& t : traces) {
      for (long k = 0; k < 10; ++k) t.push_back({k, 0.1, 0.0, 1.0});
    }
    const BiasFit f = bias_scaling_fit(traces);
    CHECK(f.c_hat == 0.0);
    CHECK(f.trend_ok());
  }
  SUBCASE("pla closed form on the quadratic") {
    // ‖b‖² = (γx/(1+γ))², ratio = (γ²x²/(1+γ)²)/(γ²x² + γ) ≤ 1/(1+γ)².
    const double g = 0.1;
    std::vector<std::vector<BiasSample>> traces(4);
    double x = 5.0;
    for (long k = 0; k < 50; ++k) {
      for (auto& t : traces) t.push_back({k, g, std::pow(g * x / (1 + g), 2), x * x});
      x /= 1 + g;
    }
    const BiasFit f = bias_scaling_fit(traces);
    CHECK(f.c_hat <= 1.0 / ((1 + g) * (1 + g)));
    CHECK(f.c_hat <= 0.827);
    CHECK(f.c_hat == doctest::Approx(std::pow(g * 5.0 / (1 + g), 2) / (g * g * 25.0 + g)));
    CHECK(f.trend_slope < 0.0);
    CHECK(f.trend_ok());
  }
  SUBCASE("upward trend is flagged") {
    std::vector<std::vector<BiasSample>> traces(2);
    for (long k = 0; k < 40; ++k) {
      for (auto& t : traces) t.push_back({k, 0.1, 0.001 * k * (1 + 0.01 * (k % 3)), 1.0});
    }
    CHECK_FALSE(bias_scaling_fit(traces).trend_ok());
  }
  SUBCASE("misaligned traces are rejected") {
    std::vector<std::vector<BiasSample>> traces{{{0, 0.1, 0, 1}}, {{1, 0.1, 0, 1}}};
    CHECK_THROWS(bias_scaling_fit(traces));
  }
}

TEST_CASE("extra-noise bias constant") {
  std::vector<StepRecord> recs(1);
  StepRecord& r = recs[0];
  r.gamma = 0.1;
  r.drift = Vector::Constant(1, 2.0);
  r.bias_b = Vector::Constant(1, 0.3);
  r.xi = Vector::Constant(1, 1.0);
  r.xi_prime = Vector::Constant(1, 0.5);
  r.noise_U_prime = Vector::Constant(1, 1.0);
  const double denom = 0.01 * 4.0 + 0.01 * 1.0 + 0.1 * 0.25 + 0.1 * 1.0;
  CHECK(bias_noise_constant(recs) == doctest::Approx(0.09 / denom));
}
