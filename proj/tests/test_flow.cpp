#include <doctest.h>

#include <cmath>

#include "lrm/flow.hpp"

using namespace lrm;

namespace {

Vector vec(std::initializer_list<double> v) {
  Vector out(static_cast<Eigen::Index>(v.size()));
  Eigen::Index i = 0;
  for (double x : v) out(i++) = x;
  return out;
}

PotentialModel std_gaussian(int d) { return build_gaussian(Vector::Zero(d), Matrix::Identity(d, d)); }

// LRM window x_n..x_J and its records for an SGLD replica.
std::pair<std::vector<Vector>, std::vector<StepRecord>> lrm_window(const SchemeConfig& cfg,
                                                                    const StreamKey& key, long n,
                                                                    long J) {
  Trajectory t = run(cfg, J, key);
  return {std::vector<Vector>(t.states.begin() + n, t.states.begin() + J + 1),
          std::vector<StepRecord>(t.records.begin() + n, t.records.begin() + J)};
}

}  // namespace

TEST_CASE("coarse increments match the sampler's Gaussian draws") {
  const auto s = StepSchedule::sqrt_log(1.0, 100);
  const StreamKey key{4, 2, Substream::kSchemeXi};
  const BrownianStore store(s, 3, key);
  SchemeConfig cfg(Scheme::kSgld, std_gaussian(3), s, Vector::Zero(3));
  const Trajectory t = run(cfg, 20, key);
  for (long k = 0; k < 20; ++k) {
    const Vector expected = std::sqrt(2.0 * s.gamma(k + 1)) * t.records[k].xi;
    CHECK((store.coarse(k).array() == expected.array()).all());
  }
}

TEST_CASE("bridge refinement") {
  const auto s = StepSchedule::constant(0.1, 1000);
  const BrownianStore store(s, 2, {9, 0, Substream::kSchemeXi});
  SUBCASE("m = 1 is the coarse increment") {
    const auto fine = refine_bridge(store, 5, 1);
    REQUIRE(fine.size() == 1);
    CHECK((fine[0].array() == store.coarse(5).array()).all());
  }
  SUBCASE("fine increments sum to the coarse increment") {
    for (long k = 0; k < 50; ++k) {
      Vector sum = Vector::Zero(2);
      for (const auto& f : refine_bridge(store, k, 16)) sum += f;
      REQUIRE((sum - store.coarse(k)).cwiseAbs().maxCoeff() < 1e-14);
    }
  }
  SUBCASE("deterministic") {
    Matrix a, b;
    store.refine(17, 8, a);
    store.refine(17, 8, b);
    CHECK((a.array() == b.array()).all());
  }
}

TEST_CASE("bridge covariance given the coarse increment") {
  // Deviations f_i − ΔB/m have covariance (2γ/m)(δ_ij − 1/m) per coordinate.
  const int m = 4;
  const double gamma = 0.1;
  const auto s = StepSchedule::constant(gamma, 10);
  const int trials = 100000;
  Matrix acc = Matrix::Zero(m, m);
  Matrix fine;
  for (int r = 0; r < trials; ++r) {
    const BrownianStore store(s, 1, {31, static_cast<std::uint32_t>(r), Substream::kSchemeXi});
    store.refine(0, m, fine);
    const Vector dev = fine.row(0).transpose().array() - store.coarse(0)(0) / m;
    acc += dev * dev.transpose();
  }
  acc /= trials;
  for (int i = 0; i < m; ++i) {
    for (int j = 0; j < m; ++j) {
      const double expected = 2.0 * gamma / m * ((i == j ? 1.0 : 0.0) - 1.0 / m);
      CHECK(std::abs(acc(i, j) - expected) < 0.03 * 2.0 * gamma / m);
    }
  }
}

TEST_CASE("horizon grid") {
  const auto s = StepSchedule::constant(0.25, 100);
  const auto grid = horizon_grid(s, 4, 1.0);
  CHECK(grid == std::vector<long>{4, 5, 6, 7, 8});
}

TEST_CASE("flow oracle: zero drift and identity diffusion is Brownian motion") {
  const auto s = StepSchedule::sqrt_log(1.0, 200);
  const BrownianStore store(s, 2, {2, 0, Substream::kSchemeXi});
  const FlowField field = FlowField::langevin(build_flat(2), DiffusionCoeff::identity(2));
  const Vector x0 = vec({1.0, -3.0});
  const FlowPath p = flow_oracle(field, x0, 1.0, 8, store, 10);
  CHECK((p.fine_states[0].array() == x0.array()).all());
  CHECK(p.grid_offsets.front() == 0.0);
  Vector w = x0;
  std::size_t idx = 1;
  for (long k : std::vector<long>(p.grid_k.begin(), p.grid_k.end() - 1)) {
    for (const auto& f : refine_bridge(store, k, 8)) {
      w += f;
      REQUIRE((p.fine_states[idx] - w).norm() < 1e-13);
      ++idx;
    }
  }
  CHECK(idx == p.fine_states.size());
}

TEST_CASE("flow oracle reproduces the OU transition") {
  const auto s = StepSchedule::constant(0.1, 100);
  const FlowField field = FlowField::langevin(std_gaussian(1), DiffusionCoeff::identity(1));
  const Matrix A = Matrix::Identity(1, 1);
  const GaussianLaw law = ou_exact_transition(A, Vector::Zero(1), vec({2.0}), 1.0);
  CHECK(law.mean(0) == doctest::Approx(2.0 * std::exp(-1.0)));
  CHECK(law.covariance(0, 0) == doctest::Approx(1.0 - std::exp(-2.0)));

  const int R = 4096;
  double sum = 0, sum2 = 0, exact_sum = 0, exact_sum2 = 0;
  for (int r = 0; r < R; ++r) {
    const BrownianStore store(s, 1, {17, static_cast<std::uint32_t>(r), Substream::kSchemeXi});
    const double phi = flow_oracle(field, vec({2.0}), 1.0, 16, store, 0).fine_states.back()(0);
    const double ou = ou_exact_path(A, Vector::Zero(1), vec({2.0}), 1.0, 16, store, 0).fine_states.back()(0);
    sum += phi;
    sum2 += phi * phi;
    exact_sum += ou;
    exact_sum2 += ou * ou;
  }
  const double mean = sum / R, var = sum2 / R - mean * mean;
  const double se_mean = std::sqrt(law.covariance(0, 0) / R);
  CHECK(std::abs(mean - law.mean(0)) < 4.0 * se_mean + 0.01);
  CHECK(std::abs(var - law.covariance(0, 0)) < 4.0 * law.covariance(0, 0) * std::sqrt(2.0 / R) + 0.01);
  // On the same increments the exact path and the oracle differ by O(1/m) only.
  const double exact_mean = exact_sum / R, exact_var = exact_sum2 / R - exact_mean * exact_mean;
  CHECK(std::abs(mean / exact_mean - 1.0) < 0.02);
  CHECK(std::abs(var / exact_var - 1.0) < 0.02);
}

TEST_CASE("OU stationary limit has unit variance") {
  const GaussianLaw law = ou_exact_transition(Matrix::Identity(1, 1), Vector::Zero(1), vec({5.0}), 50.0);
  CHECK(law.covariance(0, 0) == doctest::Approx(1.0));
  CHECK(std::abs(law.mean(0)) < 1e-15);
}

TEST_CASE("exact coupling with zero drift and one substep") {
  const auto s = StepSchedule::constant(0.1, 200);
  const StreamKey key{12, 0, Substream::kSchemeXi};
  const BrownianStore store(s, 2, key);
  SchemeConfig cfg(Scheme::kSgld, build_flat(2), s, vec({0.5, 0.5}));
  const FlowField field = FlowField::for_config(cfg);
  auto [states, records] = lrm_window(cfg, key, 20, 30);
  const CoupledPair pair = make_coupled_pair(field, store, 20, 1.0, 1, states, records);
  for (std::size_t j = 0; j < pair.grid_size(); ++j) {
    CHECK((pair.lrm_states[j].array() == pair.flow.at_grid(j).array()).all());
  }
  const auto picard = picard_process(pair, field, store);
  const auto terms = decomposition_report(pair, picard);
  for (std::size_t j = 0; j < terms.offsets.size(); ++j) {
    CHECK(terms.lrm_flow[j] == 0.0);
    CHECK(terms.picard_flow[j] == 0.0);
  }
  CHECK(terms.violations == 0);
}

TEST_CASE("picard process") {
  const auto s = StepSchedule::constant(0.2, 100);
  const StreamKey key{3, 1, Substream::kSchemeXi};
  const BrownianStore store(s, 1, key);

  SUBCASE("zero drift: anchor plus the Brownian path") {
    SchemeConfig cfg(Scheme::kSgld, build_flat(1), s, vec({1.5}));
    const FlowField field = FlowField::for_config(cfg);
    auto [states, records] = lrm_window(cfg, key, 0, 5);
    const CoupledPair pair = make_coupled_pair(field, store, 0, 1.0, 4, states, records);
    const auto picard = picard_process(pair, field, store);
    CHECK((picard[0].array() == states[0].array()).all());
    double w = 1.5;
    std::size_t idx = 1;
    for (long k = 0; k < 5; ++k) {
      for (const auto& f : refine_bridge(store, k, 4)) {
        w += f(0);
        CHECK(picard[idx++](0) == doctest::Approx(w).epsilon(1e-14));
      }
    }
  }
  SUBCASE("quadratic, one coarse step: closed-form integral of the interpolation") {
    for (int m : {4, 16, 64}) {
      for (std::uint32_t r = 0; r < 20; ++r) {
        const StreamKey rk{3, r, Substream::kSchemeXi};
        const BrownianStore st(s, 1, rk);
        SchemeConfig cfg(Scheme::kSgld, std_gaussian(1), s, vec({2.0}));
        const FlowField field = FlowField::for_config(cfg);
        auto [states, records] = lrm_window(cfg, rk, 0, 1);
        const CoupledPair pair = make_coupled_pair(field, st, 0, 0.2, m, states, records);
        REQUIRE(pair.grid_size() == 2);
        const auto picard = picard_process(pair, field, st);
        // X_u = x − u·x + W(u), W piecewise linear through the fine path.
        const double x = 2.0, g = 0.2, h = g / m;
        double integral = g * x - 0.5 * g * g * x, w = 0.0;
        for (const auto& f : refine_bridge(st, 0, m)) {
          integral += h * (w + 0.5 * f(0));
          w += f(0);
        }
        const double closed = x - integral + w;
        const double gap = std::abs(picard.back()(0) - closed);
        CHECK(gap <= 0.5 * h * (g * x + std::abs(w)) + 1e-13);
        CHECK(gap <= g * g / m * (x + 10.0));
      }
    }
  }
  SUBCASE("anchor offset terms vanish and the inequality holds path-wise") {
    SchemeConfig cfg(Scheme::kRmm, std_gaussian(1), s, vec({3.0}));
    const FlowField field = FlowField::for_config(cfg);
    for (std::uint32_t r = 0; r < 50; ++r) {
      const StreamKey rk{8, r, Substream::kSchemeXi};
      const BrownianStore st(s, 1, rk);
      auto [states, records] = lrm_window(cfg, rk, 10, 15);
      const CoupledPair pair = make_coupled_pair(field, st, 10, 1.0, 16, states, records);
      const auto terms = decomposition_report(pair, picard_process(pair, field, st));
      CHECK(terms.lrm_flow[0] == 0.0);
      CHECK(terms.picard_flow[0] == 0.0);
      CHECK(terms.lrm_picard[0] == 0.0);
      CHECK(terms.violations == 0);
      const auto interp = interpolate_lrm(pair, field, st);
      for (std::size_t j = 0; j < pair.grid_size(); ++j) CHECK((interp[j * 16].array() == states[j].array()).all());
    }
  }
}

TEST_CASE("monotone trend rule") {
  CHECK(monotone_trend({1.0, 0.9, 1.0, 0.5}));
  CHECK_FALSE(monotone_trend({1.0, 1.2}));
  CHECK(monotone_trend({1.0, 1.2}, 1.25));
  CHECK(monotone_trend({}));
}

TEST_CASE("wapt deviation") {
  SUBCASE("sanity coupling is exact") {
    SchemeConfig cfg(Scheme::kSgld, build_flat(2), StepSchedule::constant(0.1, 200), Vector::Zero(2));
    WaptOptions o;
    o.anchors = {10, 20, 40, 80};
    o.replicas = 8;
    o.substeps = 1;
    const WaptResult res = wapt_deviation(cfg, FlowField::for_config(cfg), o, {1, 0, Substream::kSchemeXi});
    REQUIRE(res.anchors.size() == 4);
    for (const auto& a : res.anchors) {
      CHECK(a.D == 0.0);
      CHECK(a.mean_sq_dev.front() == 0.0);
    }
    CHECK(res.monotone_trend);
  }
  SUBCASE("deviation is non-negative, zero at the anchor, and decays") {
    SchemeConfig cfg(Scheme::kSgld, std_gaussian(1), StepSchedule::sqrt_log(1.0, 1200), Vector::Zero(1));
    WaptOptions o;
    o.anchors = {10, 100, 1000};
    o.replicas = 64;
    o.substeps = 8;
    const WaptResult res = wapt_deviation(cfg, FlowField::for_config(cfg), o, {2, 0, Substream::kSchemeXi});
    for (const auto& a : res.anchors) {
      CHECK(a.mean_sq_dev.front() == 0.0);
      for (double d : a.mean_sq_dev) CHECK(d >= 0.0);
      CHECK(a.decomposition_violations == 0);
    }
    CHECK(res.anchors.front().D > res.anchors.back().D);
  }
  SUBCASE("jobs do not change the result") {
    SchemeConfig cfg(Scheme::kOrmm, std_gaussian(1), StepSchedule::sqrt_log(1.0, 300), Vector::Zero(1));
    WaptOptions o;
    o.anchors = {10, 100};
    o.replicas = 16;
    o.substeps = 8;
    const auto a = wapt_deviation(cfg, FlowField::for_config(cfg), o, {3, 0, Substream::kSchemeXi});
    o.jobs = 3;
    const auto b = wapt_deviation(cfg, FlowField::for_config(cfg), o, {3, 0, Substream::kSchemeXi});
    for (std::size_t i = 0; i < a.anchors.size(); ++i) CHECK(a.anchors[i].D == b.anchors[i].D);
  }
  SUBCASE("anchors must increase") {
    SchemeConfig cfg(Scheme::kSgld, std_gaussian(1), StepSchedule::constant(0.1, 300), Vector::Zero(1));
    WaptOptions o;
    o.anchors = {100, 10};
    CHECK_THROWS(wapt_deviation(cfg, FlowField::for_config(cfg), o, {3, 0, Substream::kSchemeXi}));
  }
}
