#include "lrm/model.hpp"

#include <algorithm>
#include <cfloat>
#include <cmath>
#include <limits>
#include <stdexcept>

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>

#include "lrm/errors.hpp"

namespace lrm {

namespace {

bool is_symmetric(const Matrix& M) {
  return M.rows() == M.cols() &&
         (M - M.transpose()).norm() <= 1e-12 * std::max(1.0, M.norm());
}

// Smallest and largest eigenvalue of a symmetric matrix.
std::pair<double, double> eigen_range(const Matrix& M) {
  Eigen::SelfAdjointEigenSolver<Matrix> es(M, Eigen::EigenvaluesOnly);
  return {es.eigenvalues().minCoeff(), es.eigenvalues().maxCoeff()};
}

Matrix sym_sqrt(const Matrix& M) {
  Eigen::SelfAdjointEigenSolver<Matrix> es(M);
  return es.eigenvectors() * es.eigenvalues().cwiseSqrt().asDiagonal() *
         es.eigenvectors().transpose();
}

void require_spd(const Matrix& M, const char* what) {
  if (!is_symmetric(M)) {
    throw std::invalid_argument(std::string(what) + " must be symmetric");
  }
  Eigen::LLT<Matrix> llt(M);
  if (llt.info() != Eigen::Success || eigen_range(M).first <= 0.0) {
    throw std::invalid_argument(std::string(what) + " must be positive definite");
  }
}

Vector unit_direction(CounterRng& rng, int dim) {
  Vector u = rng.normals(dim);
  double n = u.norm();
  while (n < 1e-12) {
    u = rng.normals(dim);
    n = u.norm();
  }
  return u / n;
}

// Centre and spread used to place random probes for a model.
std::pair<Vector, double> probe_frame(const PotentialModel& model) {
  if (const auto& mom = model.reference_moments()) {
    const double sd = std::sqrt(std::max(eigen_range(mom->covariance).second, 1e-12));
    return {mom->mean, 2.0 * sd};
  }
  return {Vector::Zero(model.dim()), 2.0};
}

}  // namespace

// ---------------------------------------------------------------------------
// PotentialModel

PotentialModel::PotentialModel(std::string name, int dim, Potential f, Gradient grad)
    : name_(std::move(name)), dim_(dim), f_(std::move(f)), grad_(std::move(grad)) {
  if (dim_ <= 0) throw std::invalid_argument("PotentialModel: dim must be positive");
}

Vector PotentialModel::grad_f(const Vector& x) const {
  Vector out(dim_);
  grad_(x, out);
  return out;
}

Matrix PotentialModel::sample_reference(Eigen::Index n, const StreamKey& key) const {
  if (!sampler_) {
    throw std::logic_error("PotentialModel '" + name_ + "' has no reference sampler");
  }
  return sampler_(n, key);
}

PotentialModel PotentialModel::with_lipschitz(double L) const {
  PotentialModel m = *this;
  m.lipschitz_L_ = L;
  return m;
}

PotentialModel PotentialModel::with_growth(double Cv) const {
  PotentialModel m = *this;
  m.growth_Cv_ = Cv;
  return m;
}

PotentialModel PotentialModel::with_dissipativity(Dissipativity d) const {
  PotentialModel m = *this;
  m.dissipativity_ = d;
  return m;
}

PotentialModel PotentialModel::with_reference(ReferenceMoments mom) const {
  PotentialModel m = *this;
  m.moments_ = std::move(mom);
  return m;
}

PotentialModel PotentialModel::with_reference_sampler(ReferenceSampler s) const {
  PotentialModel m = *this;
  m.sampler_ = std::move(s);
  return m;
}

PotentialModel PotentialModel::with_precision(Matrix A) const {
  PotentialModel m = *this;
  m.precision_ = std::move(A);
  return m;
}

// ---------------------------------------------------------------------------
// Target zoo

PotentialModel build_gaussian(const Vector& mean, const Matrix& precision) {
  if (precision.rows() != mean.size()) {
    throw std::invalid_argument("build_gaussian: mean/precision dimension mismatch");
  }
  require_spd(precision, "build_gaussian: precision");
  const int dim = static_cast<int>(mean.size());
  const auto [lmin, lmax] = eigen_range(precision);

  auto f = [mean, precision](const Vector& x) {
    const Vector d = x - mean;
    return 0.5 * d.dot(precision * d);
  };
  auto grad = [mean, precision](const Vector& x, Vector& out) {
    out.noalias() = precision * (x - mean);
  };

  const Vector pm = precision * mean;
  Dissipativity diss;
  if (pm.squaredNorm() == 0.0) {
    diss = {lmin, 0.0, 1.0};
  } else {
    // ⟨x, P(μ−x)⟩ ≤ −λ‖x‖² + ‖x‖‖Pμ‖ and Young with weight λ/2.
    diss = {0.5 * lmin, pm.squaredNorm() / (2.0 * lmin), 1.0};
  }

  Matrix cov = precision.inverse();
  cov = 0.5 * (cov + cov.transpose());
  const Matrix chol = Eigen::LLT<Matrix>(cov).matrixL();
  auto sampler = [mean, chol, dim](Eigen::Index n, const StreamKey& key) {
    Matrix out(n, dim);
    for (Eigen::Index i = 0; i < n; ++i) {
      CounterRng rng(key, static_cast<std::uint64_t>(i));
      out.row(i) = (mean + chol * rng.normals(dim)).transpose();
    }
    return out;
  };

  return PotentialModel("gaussian", dim, f, grad)
      .with_lipschitz(lmax)
      .with_growth(pm.norm())
      .with_dissipativity(diss)
      .with_reference({mean, cov})
      .with_reference_sampler(sampler)
      .with_precision(precision);
}

PotentialModel build_gaussian_mixture(const Vector& weights,
                                      const std::vector<Vector>& means) {
  if (means.empty() || weights.size() == 0) {
    throw std::invalid_argument("build_gaussian_mixture: empty mixture");
  }
  if (static_cast<std::size_t>(weights.size()) != means.size()) {
    throw std::invalid_argument("build_gaussian_mixture: weights/means size mismatch");
  }
  const Eigen::Index dim = means.front().size();
  if (dim == 0) throw std::invalid_argument("build_gaussian_mixture: zero dimension");
  for (const auto& m : means) {
    if (m.size() != dim) {
      throw std::invalid_argument("build_gaussian_mixture: inconsistent mean dimensions");
    }
  }
  for (Eigen::Index i = 0; i < weights.size(); ++i) {
    if (!(weights[i] > 0.0)) {
      throw std::invalid_argument("build_gaussian_mixture: weights must be positive");
    }
    if (weights[i] < DBL_MIN) {
      throw std::invalid_argument("build_gaussian_mixture: weight underflow");
    }
  }
  if (std::abs(weights.sum() - 1.0) > 1e-9) {
    throw std::invalid_argument("build_gaussian_mixture: weights must sum to 1");
  }

  const Eigen::Index K = weights.size();
  Matrix mu(dim, K);
  for (Eigen::Index i = 0; i < K; ++i) mu.col(i) = means[static_cast<std::size_t>(i)];
  const Vector log_w = weights.array().log().matrix();

  // log w_i − ½‖x − μ_i‖², shifted by its max before exponentiation.
  auto log_terms = [mu, log_w](const Vector& x) -> Vector {
    return log_w - 0.5 * (mu.colwise() - x).colwise().squaredNorm().transpose();
  };
  auto f = [log_terms](const Vector& x) {
    const Vector t = log_terms(x);
    const double shift = t.maxCoeff();
    return -(shift + std::log((t.array() - shift).exp().sum()));
  };
  auto grad = [log_terms, mu](const Vector& x, Vector& out) {
    const Vector t = log_terms(x);
    const Vector r = (t.array() - t.maxCoeff()).exp().matrix();
    out.noalias() = x - mu * (r / r.sum());
  };

  Vector mean = mu * weights;
  Matrix cov = Matrix::Identity(dim, dim);
  for (Eigen::Index i = 0; i < K; ++i) {
    const Vector d = mu.col(i) - mean;
    cov += weights[i] * d * d.transpose();
  }
  Vector cdf(K);
  double acc = 0.0;
  for (Eigen::Index i = 0; i < K; ++i) {
    acc += weights[i];
    cdf[i] = acc;
  }
  auto sampler = [mu, cdf, dim, K](Eigen::Index n, const StreamKey& key) {
    Matrix out(n, dim);
    for (Eigen::Index i = 0; i < n; ++i) {
      CounterRng rng(key, static_cast<std::uint64_t>(i));
      const double u = rng.uniform() * cdf[K - 1];
      Eigen::Index c = 0;
      while (c + 1 < K && u > cdf[c]) ++c;
      out.row(i) = (mu.col(c) + rng.normals(dim)).transpose();
    }
    return out;
  };

  // ∇²f = I − Cov(μ_I) under the posterior over components, and that
  // covariance is bounded by diam²/4 in every direction.
  double diam2 = 0.0;
  for (Eigen::Index i = 0; i < K; ++i) {
    for (Eigen::Index j = i + 1; j < K; ++j) diam2 = std::max(diam2, (mu.col(i) - mu.col(j)).squaredNorm());
  }
  const double L = std::max(1.0, 0.25 * diam2 - 1.0);

  return PotentialModel("mixture", static_cast<int>(dim), f, grad)
      .with_lipschitz(L)
      .with_reference({mean, cov})
      .with_reference_sampler(sampler);
}

PotentialModel build_repulsive(int dim) {
  auto f = [](const Vector& x) { return -0.5 * x.squaredNorm(); };
  auto grad = [](const Vector& x, Vector& out) { out = -x; };
  return PotentialModel("repulsive", dim, f, grad).with_lipschitz(1.0);
}

PotentialModel build_flat(int dim) {
  auto f = [](const Vector&) { return 0.0; };
  auto grad = [](const Vector& x, Vector& out) { out.setZero(x.size()); };
  return PotentialModel("flat", dim, f, grad).with_lipschitz(0.0).with_growth(0.0);
}

// ---------------------------------------------------------------------------
// DiffusionCoeff

DiffusionCoeff DiffusionCoeff::identity(int dim) {
  DiffusionCoeff d(DiffusionKind::kConstantIdentity, dim);
  d.hs_bound_ = std::sqrt(static_cast<double>(dim));
  d.lipschitz_ = 0.0;
  return d;
}

DiffusionCoeff DiffusionCoeff::constant(Matrix M) {
  if (M.rows() != M.cols() || M.rows() == 0) {
    throw std::invalid_argument("DiffusionCoeff::constant: square matrix required");
  }
  DiffusionCoeff d(DiffusionKind::kConstantMatrix, static_cast<int>(M.rows()));
  d.hs_bound_ = M.norm();
  d.lipschitz_ = 0.0;
  d.matrix_ = std::move(M);
  return d;
}

DiffusionCoeff DiffusionCoeff::state_dependent(int dim, Field sigma, double hs_bound,
                                               std::optional<double> lipschitz) {
  DiffusionCoeff d(DiffusionKind::kStateDependent, dim);
  d.field_ = std::move(sigma);
  d.hs_bound_ = hs_bound;
  d.lipschitz_ = lipschitz;
  return d;
}

Matrix DiffusionCoeff::at(const Vector& x) const {
  switch (kind_) {
    case DiffusionKind::kConstantIdentity: return Matrix::Identity(dim_, dim_);
    case DiffusionKind::kConstantMatrix: return matrix_;
    case DiffusionKind::kStateDependent: return field_(x);
  }
  return {};
}

void DiffusionCoeff::apply(const Vector& x, const Vector& xi, Vector& out) const {
  switch (kind_) {
    case DiffusionKind::kConstantIdentity: out = xi; return;
    case DiffusionKind::kConstantMatrix: out.noalias() = matrix_ * xi; return;
    case DiffusionKind::kStateDependent: out.noalias() = field_(x) * xi; return;
  }
}

// ---------------------------------------------------------------------------
// MirrorMap

MirrorMap MirrorMap::quadratic(const Matrix& A) {
  require_spd(A, "MirrorMap::quadratic: A");
  MirrorMap m(MirrorKind::kQuadratic, static_cast<int>(A.rows()));
  m.A_ = A;
  m.A_inv_ = A.inverse();
  m.A_inv_ = 0.5 * (m.A_inv_ + m.A_inv_.transpose());
  m.factor_ = sym_sqrt(A);
  return m;
}

MirrorMap MirrorMap::custom(int dim, Gradient grad_phi_star, Hessian hess_phi_star) {
  MirrorMap m(MirrorKind::kCustom, dim);
  m.grad_ = std::move(grad_phi_star);
  m.hess_ = std::move(hess_phi_star);
  return m;
}

Vector MirrorMap::grad_phi_star(const Vector& x) const {
  if (kind_ == MirrorKind::kQuadratic) return A_inv_ * x;
  return grad_(x);
}

Matrix MirrorMap::hess_phi_star(const Vector& x) const {
  if (kind_ == MirrorKind::kQuadratic) return A_inv_;
  return hess_(x);
}

Matrix MirrorMap::diffusion_factor(const Vector& x, long iteration) const {
  if (kind_ == MirrorKind::kQuadratic) return factor_;
  const Matrix H = hess_(x);
  if (!H.allFinite() || !is_symmetric(H)) {
    throw SamplerFailure(FailureKind::kGeometry, iteration, x,
                         "mirror Hessian is not symmetric and finite");
  }
  Eigen::SelfAdjointEigenSolver<Matrix> es(H);
  if (es.eigenvalues().minCoeff() <= 0.0) {
    throw SamplerFailure(FailureKind::kGeometry, iteration, x,
                         "mirror Hessian is not positive definite");
  }
  return es.eigenvectors() * es.eigenvalues().cwiseInverse().cwiseSqrt().asDiagonal() *
         es.eigenvectors().transpose();
}

MirrorDiagnostics check_mirror(const MirrorMap& mirror, int probes, double radius,
                               const StreamKey& stream) {
  MirrorDiagnostics out;
  out.probes = probes;
  out.min_hessian_eigenvalue = std::numeric_limits<double>::infinity();
  out.spd_everywhere = true;
  const int dim = mirror.dim();
  Vector prev;
  Matrix prev_sigma;
  for (int i = 0; i < probes; ++i) {
    CounterRng rng(stream, static_cast<std::uint64_t>(i));
    Vector x(dim);
    for (int j = 0; j < dim; ++j) x[j] = radius * (2.0 * rng.uniform() - 1.0);
    const Matrix H = mirror.hess_phi_star(x);
    const double lmin = Eigen::SelfAdjointEigenSolver<Matrix>(
                            0.5 * (H + H.transpose()), Eigen::EigenvaluesOnly)
                            .eigenvalues()
                            .minCoeff();
    out.min_hessian_eigenvalue = std::min(out.min_hessian_eigenvalue, lmin);
    if (!(lmin > 0.0) || !is_symmetric(H)) {
      out.spd_everywhere = false;
      continue;
    }
    const Matrix sigma = mirror.diffusion_factor(x);
    out.max_sigma_hs_norm = std::max(out.max_sigma_hs_norm, sigma.norm());

    const Vector y = x + 1e-4 * unit_direction(rng, dim);
    const double local = (mirror.diffusion_factor(y) - sigma).norm() / (y - x).norm();
    out.sigma_lipschitz_hat = std::max(out.sigma_lipschitz_hat, local);
    if (prev.size() == dim) {
      const double global = (sigma - prev_sigma).norm() / std::max((x - prev).norm(), 1e-12);
      out.sigma_lipschitz_hat = std::max(out.sigma_lipschitz_hat, global);
    }
    prev = x;
    prev_sigma = sigma;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Estimators

GradientCheck gradient_check(const PotentialModel& model, int probes,
                             const StreamKey& stream, double tolerance) {
  GradientCheck out;
  out.probes = probes;
  const auto [centre, spread] = probe_frame(model);
  const int dim = model.dim();
  for (int i = 0; i < probes; ++i) {
    CounterRng rng(stream, static_cast<std::uint64_t>(i));
    const Vector x = centre + spread * rng.normals(dim);
    const Vector g = model.grad_f(x);
    Vector fd(dim);
    for (int j = 0; j < dim; ++j) {
      const double h = 1e-5 * std::max(1.0, std::abs(x[j]));
      Vector xp = x, xm = x;
      xp[j] += h;
      xm[j] -= h;
      fd[j] = (model.f(xp) - model.f(xm)) / (xp[j] - xm[j]);
    }
    const double err = (fd - g).norm() / std::max(1.0, g.norm());
    out.max_relative_error = std::max(out.max_relative_error, err);
  }
  out.pass = out.max_relative_error < tolerance;
  return out;
}

DissipativityEstimate dissipativity_estimate(const std::function<Vector(const Vector&)>& v,
                                             int dim,
                                             const std::vector<double>& radius_grid,
                                             int directions_per_radius,
                                             const StreamKey& stream, double kappa) {
  if (radius_grid.empty()) {
    throw std::invalid_argument("dissipativity_estimate: empty radius grid");
  }
  if (directions_per_radius <= 0) {
    throw std::invalid_argument("dissipativity_estimate: directions_per_radius must be positive");
  }
  DissipativityEstimate out;
  out.kappa = kappa;

  struct Probe {
    double inner;  // ⟨x, v(x)⟩
    double power;  // ‖x‖^{1+κ}
    double radius;
  };
  // The same directions at every radius, so that each direction traces a
  // ray and the growth rate of −⟨x, v(x)⟩ can be read off its outer end.
  std::vector<Vector> dirs;
  for (int j = 0; j < dim; ++j) {
    dirs.push_back(Vector::Unit(dim, j));
    dirs.push_back(-Vector::Unit(dim, j));
  }
  {
    CounterRng rng(stream, 0);
    for (int j = 0; j < directions_per_radius; ++j) dirs.push_back(unit_direction(rng, dim));
  }
  std::vector<double> radii = radius_grid;
  for (double r : radii) {
    if (r < 0.0 || !std::isfinite(r)) throw std::invalid_argument("dissipativity_estimate: bad radius");
  }
  std::sort(radii.begin(), radii.end());
  radii.erase(std::unique(radii.begin(), radii.end()), radii.end());

  std::vector<Probe> probes;
  // inner[d][i]: ⟨x, v(x)⟩ along direction d at radius index i.
  std::vector<std::vector<double>> inner(dirs.size());
  for (std::size_t ri = 0; ri < radii.size(); ++ri) {
    const double r = radii[ri];
    for (std::size_t d = 0; d < dirs.size(); ++d) {
      const Vector x = r * dirs[d];
      const double ip = x.dot(v(x));
      inner[d].push_back(ip);
      if (r == 0.0 && d > 0) continue;
      probes.push_back({ip, std::pow(r, 1.0 + kappa), r});
    }
  }
  out.probes = static_cast<int>(probes.size());

  // Along a ray −⟨x, v⟩ ≈ α‖x‖^{1+κ} − c‖x‖ (the linear part comes from
  // bounded perturbations such as mixture means), so α is the slope of
  // −⟨x, v⟩/‖x‖ against ‖x‖^κ between the two outermost radii.
  double alpha = std::numeric_limits<double>::infinity();
  const std::size_t n = radii.size();
  for (std::size_t d = 0; d < dirs.size(); ++d) {
    if (n >= 2 && radii[n - 2] > 0.0) {
      const double ra = radii[n - 2], rb = radii[n - 1];
      const double slope = (-inner[d][n - 1] / rb + inner[d][n - 2] / ra) /
                           (std::pow(rb, kappa) - std::pow(ra, kappa));
      alpha = std::min(alpha, slope);
    } else if (radii[n - 1] > 0.0) {
      alpha = std::min(alpha, -inner[d][n - 1] / std::pow(radii[n - 1], 1.0 + kappa));
    }
  }
  double growth = 0.0;
  for (const auto& p : probes) growth = std::max(growth, p.inner / (1.0 + p.radius));
  out.growth_Cv_hat = growth;
  if (!(alpha > 0.0) || !std::isfinite(alpha)) {
    out.dissipative = false;
    out.alpha_hat = std::isfinite(alpha) ? alpha : 0.0;
    out.beta_hat = std::numeric_limits<double>::infinity();
    out.violations = static_cast<int>(
        std::count_if(probes.begin(), probes.end(),
                      [](const Probe& p) { return p.radius > 0.0 && p.inner > 0.0; }));
    return out;
  }
  double beta = 0.0;
  for (const auto& p : probes) beta = std::max(beta, p.inner + alpha * p.power);
  out.dissipative = true;
  out.alpha_hat = alpha;
  out.beta_hat = beta;
  out.violations = static_cast<int>(std::count_if(
      probes.begin(), probes.end(),
      [&](const Probe& p) { return p.inner > -alpha * p.power + beta; }));
  return out;
}

DissipativityEstimate dissipativity_estimate(const PotentialModel& model,
                                             const std::vector<double>& radius_grid,
                                             int directions_per_radius,
                                             const StreamKey& stream, double kappa) {
  return dissipativity_estimate([&model](const Vector& x) { return model.drift(x); },
                                model.dim(), radius_grid, directions_per_radius, stream,
                                kappa);
}

double lipschitz_estimate(const PotentialModel& model, int pair_count,
                          const StreamKey& stream) {
  if (pair_count < 100) {
    throw std::invalid_argument("lipschitz_estimate: pair_count must be at least 100");
  }
  const int dim = model.dim();
  const auto [centre, spread] = probe_frame(model);
  constexpr double kLocalScale = 1e-3;
  constexpr std::size_t kRefineCount = 8;

  double best = 0.0;
  std::vector<std::pair<double, Vector>> curved;  // (local ratio, centre)
  auto ratio = [&model](const Vector& x, const Vector& y) {
    const double d = (x - y).norm();
    return d > 0.0 ? (model.grad_f(x) - model.grad_f(y)).norm() / d : 0.0;
  };

  for (int i = 0; i < pair_count; ++i) {
    CounterRng rng(stream, static_cast<std::uint64_t>(i));
    const Vector x = centre + spread * rng.normals(dim);
    const Vector y_local = x + kLocalScale * unit_direction(rng, dim);
    const Vector y_global = centre + spread * rng.normals(dim);
    const double local = ratio(x, y_local);
    best = std::max({best, local, ratio(x, y_global)});
    curved.emplace_back(local, x);
  }
  std::partial_sort(curved.begin(),
                    curved.begin() + std::min(kRefineCount, curved.size()), curved.end(),
                    [](const auto& a, const auto& b) { return a.first > b.first; });
  curved.resize(std::min(kRefineCount, curved.size()));
  curved.emplace_back(0.0, centre);
  curved.emplace_back(0.0, Vector::Zero(dim));

  // Power iteration with finite-difference Hessian-vector products.
  CounterRng rng(stream, static_cast<std::uint64_t>(pair_count));
  constexpr double h = 1e-4;
  for (const auto& [unused, x] : curved) {
    Vector u = unit_direction(rng, dim);
    double lambda = 0.0;
    for (int it = 0; it < 60; ++it) {
      const Vector w = (model.grad_f(x + h * u) - model.grad_f(x - h * u)) / (2.0 * h);
      lambda = w.norm();
      if (lambda < 1e-300) break;
      u = w / lambda;
    }
    best = std::max(best, lambda);
  }
  return best;
}

std::vector<double> default_radius_grid(const PotentialModel& model, int points) {
  double scale = 10.0;
  if (const auto& mom = model.reference_moments()) {
    const double sd = std::sqrt(std::max(eigen_range(mom->covariance).second, 0.0));
    scale = std::max(scale, 4.0 * (mom->mean.norm() + 3.0 * sd));
  }
  std::vector<double> grid(static_cast<std::size_t>(points));
  for (int i = 0; i < points; ++i) grid[static_cast<std::size_t>(i)] = scale * i / (points - 1);
  return grid;
}

}  // namespace lrm
