#include "lrm/metric.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <stdexcept>

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>

namespace lrm {

// ---------------------------------------------------------------------------
// Ensemble

Ensemble::Ensemble(Matrix samples, long checkpoint_k, double tau)
    : samples_(std::move(samples)), k_(checkpoint_k), tau_(tau) {
  if (samples_.rows() < 2) throw std::invalid_argument("Ensemble: need at least 2 samples");
  if (samples_.cols() < 1) throw std::invalid_argument("Ensemble: zero dimension");
  if (!samples_.allFinite()) throw std::invalid_argument("Ensemble: non-finite sample");
}

Ensemble Ensemble::from_states(const std::vector<Vector>& states, long checkpoint_k,
                               double tau) {
  if (states.empty()) throw std::invalid_argument("Ensemble: no states");
  Matrix m(static_cast<Eigen::Index>(states.size()), states.front().size());
  for (std::size_t i = 0; i < states.size(); ++i) {
    if (states[i].size() != m.cols()) throw std::invalid_argument("Ensemble: ragged states");
    m.row(static_cast<Eigen::Index>(i)) = states[i].transpose();
  }
  return Ensemble(std::move(m), checkpoint_k, tau);
}

Vector Ensemble::mean() const { return samples_.colwise().mean().transpose(); }

Matrix Ensemble::covariance() const {
  const Matrix centered = samples_.rowwise() - samples_.colwise().mean();
  return centered.transpose() * centered / static_cast<double>(samples_.rows() - 1);
}

double Ensemble::mean_sq_norm() const { return samples_.rowwise().squaredNorm().mean(); }

// ---------------------------------------------------------------------------
// Reports

std::string to_string(W2Method method) {
  switch (method) {
    case W2Method::kGaussianClosedForm: return "gaussian";
    case W2Method::kQuantile1d: return "quantile_1d";
    case W2Method::kAssignment: return "assignment";
    case W2Method::kSliced: return "sliced";
  }
  return "unknown";
}

std::string W2Report::method_name() const {
  if (method == W2Method::kSliced) return "sliced(" + std::to_string(projections) + ")";
  return to_string(method);
}

namespace {

void check_order(double p) {
  if (!(p > 1.0 && p <= 2.0)) throw std::invalid_argument("W2: order p must lie in (1, 2]");
}

double pow_abs(double x, double p) {
  const double a = std::abs(x);
  return p == 2.0 ? a * a : std::pow(a, p);
}

double root(double x, double p) { return p == 2.0 ? std::sqrt(x) : std::pow(x, 1.0 / p); }

Matrix sqrt_spd(const Matrix& C, const char* what) {
  if (C.rows() != C.cols()) throw std::invalid_argument(std::string(what) + " is not square");
  if (!C.allFinite() || !C.isApprox(C.transpose(), 1e-10)) {
    throw std::invalid_argument(std::string(what) + " is not symmetric");
  }
  Eigen::SelfAdjointEigenSolver<Matrix> es(0.5 * (C + C.transpose()));
  if (es.eigenvalues().minCoeff() <= 0.0) {
    throw std::invalid_argument(std::string(what) + " is not positive definite");
  }
  return es.operatorSqrt();
}

// Mean of |a_(i) − b_(i)|^p over the quantile coupling of two sorted sets.
double sorted_cost(const std::vector<double>& a, const std::vector<double>& b, double p) {
  const std::vector<double>& small = a.size() <= b.size() ? a : b;
  const std::vector<double>& large = a.size() <= b.size() ? b : a;
  const std::size_t n = small.size();
  const std::size_t N = large.size();
  double sum = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t j = n == N ? i
                                 : static_cast<std::size_t>(
                                       std::floor((static_cast<double>(i) + 0.5) * N / n));
    sum += pow_abs(small[i] - large[std::min(j, N - 1)], p);
  }
  return sum / static_cast<double>(n);
}

std::vector<double> sorted_copy(const Eigen::Ref<const Vector>& v) {
  std::vector<double> out(v.data(), v.data() + v.size());
  std::sort(out.begin(), out.end());
  return out;
}

}  // namespace

double w2_gaussian(const Vector& m1, const Matrix& C1, const Vector& m2, const Matrix& C2) {
  if (m1.size() != m2.size() || C1.rows() != m1.size() || C2.rows() != m2.size()) {
    throw std::invalid_argument("w2_gaussian: dimension mismatch");
  }
  const Matrix s1 = sqrt_spd(C1, "w2_gaussian: C1");
  sqrt_spd(C2, "w2_gaussian: C2");
  const Matrix middle = s1 * C2 * s1;
  Eigen::SelfAdjointEigenSolver<Matrix> es(0.5 * (middle + middle.transpose()));
  const double cross = es.eigenvalues().cwiseMax(0.0).cwiseSqrt().sum();
  const double value = (m1 - m2).squaredNorm() + C1.trace() + C2.trace() - 2.0 * cross;
  return std::sqrt(std::max(0.0, value));
}

double w2_1d(const Vector& a, const Vector& b, double p) {
  check_order(p);
  if (a.size() == 0 || b.size() == 0) throw std::invalid_argument("w2_1d: empty sample");
  return root(sorted_cost(sorted_copy(a), sorted_copy(b), p), p);
}

double w2_1d(const Matrix& a, const Matrix& b, double p) {
  if (a.cols() != 1 || b.cols() != 1) throw std::invalid_argument("w2_1d: samples must be 1-D");
  return w2_1d(Vector(a.col(0)), Vector(b.col(0)), p);
}

W2Report w2_1d_report(const Matrix& a, const Matrix& b, double p) {
  W2Report r;
  r.method = W2Method::kQuantile1d;
  r.value = w2_1d(a, b, p);
  r.n_used = std::min(a.rows(), b.rows());
  r.order = p;
  return r;
}

double w2_assignment(const Matrix& a, const Matrix& b, Eigen::Index cap, double p) {
  check_order(p);
  if (a.rows() != b.rows()) throw std::invalid_argument("w2_assignment: sample sizes differ");
  if (a.cols() != b.cols()) throw std::invalid_argument("w2_assignment: dimensions differ");
  if (a.rows() == 0) throw std::invalid_argument("w2_assignment: empty sample");
  if (a.rows() > cap) {
    throw std::invalid_argument("w2_assignment: n=" + std::to_string(a.rows()) +
                                " exceeds the cap " + std::to_string(cap));
  }
  const int n = static_cast<int>(a.rows());
  Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> cost(n, n);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) {
      const double d2 = (a.row(i) - b.row(j)).squaredNorm();
      cost(i, j) = p == 2.0 ? d2 : std::pow(d2, 0.5 * p);
    }
  }

  // Hungarian algorithm with potentials (rows 1..n, columns 1..n; column 0
  // is the virtual start).
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0);
  std::vector<int> match(n + 1, 0), way(n + 1, 0);
  std::vector<double> minv(n + 1);
  std::vector<char> used(n + 1);
  for (int i = 1; i <= n; ++i) {
    match[0] = i;
    int j0 = 0;
    std::fill(minv.begin(), minv.end(), inf);
    std::fill(used.begin(), used.end(), 0);
    do {
      used[j0] = 1;
      const int i0 = match[j0];
      double delta = inf;
      int j1 = 0;
      for (int j = 1; j <= n; ++j) {
        if (used[j]) continue;
        const double cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (int j = 0; j <= n; ++j) {
        if (used[j]) {
          u[match[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (match[j0] != 0);
    do {
      const int j1 = way[j0];
      match[j0] = match[j1];
      j0 = j1;
    } while (j0 != 0);
  }
  double total = 0.0;
  for (int j = 1; j <= n; ++j) total += cost(match[j] - 1, j - 1);
  return root(std::max(0.0, total / n), p);
}

W2Report w2_assignment_report(const Matrix& a, const Matrix& b, Eigen::Index cap, double p) {
  W2Report r;
  r.method = W2Method::kAssignment;
  r.value = w2_assignment(a, b, cap, p);
  r.n_used = a.rows();
  r.order = p;
  return r;
}

double sliced_w2(const Matrix& a, const Matrix& b, int projections, const StreamKey& stream,
                 double p) {
  check_order(p);
  if (projections < 32) throw std::invalid_argument("sliced_w2: need at least 32 projections");
  if (a.cols() != b.cols()) throw std::invalid_argument("sliced_w2: dimensions differ");
  if (a.rows() == 0 || b.rows() == 0) throw std::invalid_argument("sliced_w2: empty sample");
  const StreamKey key = stream.with(Substream::kMetric);
  const Eigen::Index dim = a.cols();
  double total = 0.0;
  Vector dir(dim);
  for (int j = 0; j < projections; ++j) {
    CounterRng rng(key, static_cast<std::uint64_t>(j));
    do {
      rng.normals(dir);
    } while (dir.norm() == 0.0);
    dir.normalize();
    total += sorted_cost(sorted_copy(a * dir), sorted_copy(b * dir), p);
  }
  return root(total / projections, p);
}

W2Report sliced_w2_report(const Matrix& a, const Matrix& b, int projections,
                          const StreamKey& stream, double p) {
  W2Report r;
  r.method = W2Method::kSliced;
  r.value = sliced_w2(a, b, projections, stream, p);
  r.n_used = std::min(a.rows(), b.rows());
  r.projections = projections;
  r.order = p;
  return r;
}

// ---------------------------------------------------------------------------
// Moments

MomentTrack moment_track(const std::vector<long>& k, const std::vector<double>& values) {
  if (k.size() != values.size()) throw std::invalid_argument("moment_track: size mismatch");
  if (values.size() < 2) throw std::invalid_argument("moment_track: need at least 2 checkpoints");
  MomentTrack t;
  t.k = k;
  t.mean_sq_norm = values;
  double running = -std::numeric_limits<double>::infinity();
  for (double v : values) {
    running = std::max(running, v);
    t.running_max.push_back(running);
  }
  const std::size_t half = values.size() / 2;
  t.first_half_max = *std::max_element(values.begin(), values.begin() + half);
  t.second_half_max = *std::max_element(values.begin() + half, values.end());
  t.stabilized = std::isfinite(t.second_half_max) && t.second_half_max <= 1.1 * t.first_half_max;
  return t;
}

MomentTrack moment_track(const std::vector<Ensemble>& ensembles) {
  std::vector<long> k;
  std::vector<double> v;
  for (const auto& e : ensembles) {
    k.push_back(e.checkpoint_k());
    v.push_back(e.mean_sq_norm());
  }
  return moment_track(k, v);
}

// ---------------------------------------------------------------------------
// Bias scaling

BiasFit bias_scaling_fit(const std::vector<std::vector<BiasSample>>& traces) {
  if (traces.empty() || traces.front().empty()) {
    throw std::invalid_argument("bias_scaling_fit: no samples");
  }
  const std::size_t K = traces.front().size();
  for (const auto& t : traces) {
    if (t.size() != K) throw std::invalid_argument("bias_scaling_fit: traces differ in length");
  }
  BiasFit fit;
  const double R = static_cast<double>(traces.size());
  for (std::size_t i = 0; i < K; ++i) {
    const BiasSample& head = traces.front()[i];
    if (!(head.gamma > 0.0)) throw std::invalid_argument("bias_scaling_fit: zero step size");
    double b2 = 0.0, v2 = 0.0;
    for (const auto& t : traces) {
      if (t[i].k != head.k || t[i].gamma != head.gamma) {
        throw std::invalid_argument("bias_scaling_fit: traces are not aligned by k");
      }
      b2 += t[i].b2;
      v2 += t[i].v2;
    }
    b2 /= R;
    v2 /= R;
    const double g = head.gamma;
    fit.k.push_back(head.k);
    fit.ratio.push_back(b2 / (g * g * v2 + g));
  }
  fit.c_hat = *std::max_element(fit.ratio.begin(), fit.ratio.end());

  std::vector<double> sorted = fit.ratio;
  std::nth_element(sorted.begin(), sorted.begin() + sorted.size() / 2, sorted.end());
  fit.median_ratio = sorted[sorted.size() / 2];

  if (K >= 3) {
    double mk = 0.0, mr = 0.0;
    for (std::size_t i = 0; i < K; ++i) {
      mk += static_cast<double>(fit.k[i]);
      mr += fit.ratio[i];
    }
    mk /= K;
    mr /= K;
    double sxx = 0.0, sxy = 0.0;
    for (std::size_t i = 0; i < K; ++i) {
      const double dk = static_cast<double>(fit.k[i]) - mk;
      sxx += dk * dk;
      sxy += dk * (fit.ratio[i] - mr);
    }
    if (sxx > 0.0) {
      fit.trend_slope = sxy / sxx;
      const double intercept = mr - fit.trend_slope * mk;
      double sse = 0.0;
      for (std::size_t i = 0; i < K; ++i) {
        const double e = fit.ratio[i] - intercept - fit.trend_slope * static_cast<double>(fit.k[i]);
        sse += e * e;
      }
      fit.slope_stderr = std::sqrt(sse / static_cast<double>(K - 2) / sxx);
    }
  }
  return fit;
}

BiasFit bias_scaling_fit(const std::vector<Trajectory>& trajectories) {
  std::vector<std::vector<BiasSample>> traces;
  traces.reserve(trajectories.size());
  for (const auto& t : trajectories) {
    if (!t.bias.empty()) {
      traces.push_back(t.bias);
      continue;
    }
    std::vector<BiasSample> trace;
    trace.reserve(t.records.size());
    for (const auto& r : t.records) {
      trace.push_back({r.k, r.gamma, r.bias_b.squaredNorm(), r.drift.squaredNorm()});
    }
    traces.push_back(std::move(trace));
  }
  return bias_scaling_fit(traces);
}

double bias_noise_constant(const std::vector<StepRecord>& records) {
  double c = 0.0;
  for (const auto& r : records) {
    const double g = r.gamma;
    if (!(g > 0.0)) throw std::invalid_argument("bias_noise_constant: zero step size");
    double denom = g * g * r.drift.squaredNorm() + g * r.xi.squaredNorm();
    if (r.noise_U_prime) denom += g * g * r.noise_U_prime->squaredNorm();
    if (r.xi_prime) denom += g * r.xi_prime->squaredNorm();
    const double b2 = r.bias_b.squaredNorm();
    if (b2 == 0.0) continue;
    c = std::max(c, denom > 0.0 ? b2 / denom : std::numeric_limits<double>::infinity());
  }
  return c;
}

}  // namespace lrm
