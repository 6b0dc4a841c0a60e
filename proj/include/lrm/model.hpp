#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "lrm/stream.hpp"

namespace lrm {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

// ⟨x, v(x)⟩ ≤ −alpha‖x‖^{1+kappa} + beta with v = −∇f. kappa = 1 is the
// strong (quadratic) form.
struct Dissipativity {
  double alpha = 0.0;
  double beta = 0.0;
  double kappa = 1.0;
};

struct ReferenceMoments {
  Vector mean;
  Matrix covariance;
};

// Target density π ∝ exp(−f) together with the regularity constants the
// convergence theory consumes. Immutable; the `with_*` builders return
// modified copies so estimated constants can be attached after the fact.
class PotentialModel {
 public:
  using Potential = std::function<double(const Vector&)>;
  using Gradient = std::function<void(const Vector& x, Vector& out)>;
  // Exact draws from π: returns an n × dim matrix.
  using ReferenceSampler = std::function<Matrix(Eigen::Index n, const StreamKey&)>;

  PotentialModel(std::string name, int dim, Potential f, Gradient grad);

  const std::string& name() const { return name_; }
  int dim() const { return dim_; }

  double f(const Vector& x) const { return f_(x); }
  Vector grad_f(const Vector& x) const;
  void grad_f(const Vector& x, Vector& out) const { grad_(x, out); }
  // The Langevin vector field v = −∇f.
  Vector drift(const Vector& x) const { return -grad_f(x); }

  const std::optional<double>& lipschitz_L() const { return lipschitz_L_; }
  const std::optional<double>& growth_Cv() const { return growth_Cv_; }
  const std::optional<Dissipativity>& dissipativity() const { return dissipativity_; }
  const std::optional<ReferenceMoments>& reference_moments() const { return moments_; }
  // Set for Gaussian targets: f(x) = ½(x−m)ᵀA(x−m).
  const std::optional<Matrix>& gaussian_precision() const { return precision_; }

  bool has_reference_sampler() const { return static_cast<bool>(sampler_); }
  Matrix sample_reference(Eigen::Index n, const StreamKey& key) const;

  PotentialModel with_lipschitz(double L) const;
  PotentialModel with_growth(double Cv) const;
  PotentialModel with_dissipativity(Dissipativity d) const;
  PotentialModel with_reference(ReferenceMoments m) const;
  PotentialModel with_reference_sampler(ReferenceSampler s) const;
  PotentialModel with_precision(Matrix A) const;

 private:
  std::string name_;
  int dim_;
  Potential f_;
  Gradient grad_;
  std::optional<double> lipschitz_L_;
  std::optional<double> growth_Cv_;
  std::optional<Dissipativity> dissipativity_;
  std::optional<ReferenceMoments> moments_;
  std::optional<Matrix> precision_;
  ReferenceSampler sampler_;
};

// f(x) = ½(x−mean)ᵀ·precision·(x−mean). Throws std::invalid_argument unless
// precision is symmetric positive definite.
PotentialModel build_gaussian(const Vector& mean, const Matrix& precision);

// Equal identity-covariance mixture: f(x) = −log Σ w_i exp(−‖x−μ_i‖²/2).
// Throws std::invalid_argument on an empty mixture, weights off the simplex,
// or weights too small to be represented in log space.
PotentialModel build_gaussian_mixture(const Vector& weights,
                                      const std::vector<Vector>& means);

// v(x) = +x, so f(x) = −½‖x‖². Not dissipative; used to exercise the
// divergence guard.
PotentialModel build_repulsive(int dim);

// f ≡ 0 (pure Brownian motion). Coupling sanity fixture.
PotentialModel build_flat(int dim);

// ---------------------------------------------------------------------------

enum class DiffusionKind { kConstantIdentity, kConstantMatrix, kStateDependent };

class DiffusionCoeff {
 public:
  using Field = std::function<Matrix(const Vector&)>;

  static DiffusionCoeff identity(int dim);
  static DiffusionCoeff constant(Matrix M);
  static DiffusionCoeff state_dependent(int dim, Field sigma, double hs_bound,
                                        std::optional<double> lipschitz = std::nullopt);

  DiffusionKind kind() const { return kind_; }
  bool is_identity() const { return kind_ == DiffusionKind::kConstantIdentity; }
  int dim() const { return dim_; }
  double hs_bound_Csigma() const { return hs_bound_; }
  const std::optional<double>& lipschitz_L_sigma() const { return lipschitz_; }

  Matrix at(const Vector& x) const;
  // out = σ(x)·xi. Identity diffusion copies xi unchanged.
  void apply(const Vector& x, const Vector& xi, Vector& out) const;
  double hs_norm(const Vector& x) const { return at(x).norm(); }

 private:
  DiffusionCoeff(DiffusionKind kind, int dim) : kind_(kind), dim_(dim) {}

  DiffusionKind kind_;
  int dim_;
  Matrix matrix_;
  Field field_;
  double hs_bound_ = 0.0;
  std::optional<double> lipschitz_;
};

// ---------------------------------------------------------------------------

enum class MirrorKind { kQuadratic, kCustom };

// Dual-space description of a mirror map φ: ∇φ* and ∇²φ*.
class MirrorMap {
 public:
  using Gradient = std::function<Vector(const Vector&)>;
  using Hessian = std::function<Matrix(const Vector&)>;

  // φ(y) = ½yᵀAy, so ∇φ*(x) = A⁻¹x and ∇²φ*(x) = A⁻¹.
  static MirrorMap quadratic(const Matrix& A);
  static MirrorMap custom(int dim, Gradient grad_phi_star, Hessian hess_phi_star);

  MirrorKind kind() const { return kind_; }
  int dim() const { return dim_; }
  Vector grad_phi_star(const Vector& x) const;
  Matrix hess_phi_star(const Vector& x) const;
  // (∇²φ*(x)⁻¹)^{1/2}, the Mirror Langevin diffusion factor. Throws
  // SamplerFailure(kGeometry) when the Hessian is not SPD; precomputed for
  // quadratic maps.
  Matrix diffusion_factor(const Vector& x, long iteration = -1) const;
  const Matrix& quadratic_A() const { return A_; }

 private:
  MirrorMap(MirrorKind kind, int dim) : kind_(kind), dim_(dim) {}

  MirrorKind kind_;
  int dim_;
  Matrix A_, A_inv_, factor_;
  Gradient grad_;
  Hessian hess_;
};

// Probe-level checks of the mirror-map regularity conditions: ∇²φ* SPD,
// bounded Hilbert-Schmidt norm of σ = (∇²φ*)^{-1/2}, and the Frobenius
// Lipschitz constant of σ (modified self-concordance in dual coordinates).
struct MirrorDiagnostics {
  double min_hessian_eigenvalue = 0.0;
  double max_sigma_hs_norm = 0.0;
  double sigma_lipschitz_hat = 0.0;
  int probes = 0;
  bool spd_everywhere = false;
};

MirrorDiagnostics check_mirror(const MirrorMap& mirror, int probes, double radius,
                               const StreamKey& stream);

// ---------------------------------------------------------------------------
// Estimators. Each takes an explicit stream and is a pure function of it.

struct GradientCheck {
  double max_relative_error = 0.0;
  int probes = 0;
  bool pass = false;  // max_relative_error < tolerance
};

// Central finite differences of f against grad_f at random probes. Errors
// are ‖fd − g‖ / max(1, ‖g‖).
GradientCheck gradient_check(const PotentialModel& model, int probes,
                             const StreamKey& stream, double tolerance = 1e-5);

struct DissipativityEstimate {
  bool dissipative = false;  // false reports NOT_DISSIPATIVE
  double alpha_hat = 0.0;
  double beta_hat = 0.0;
  double kappa = 1.0;
  double growth_Cv_hat = 0.0;  // max ⟨x, v(x)⟩ / (1 + ‖x‖) over probes
  int violations = 0;
  int probes = 0;
};

// Probes x = r·u on a radial grid times uniform sphere directions (the
// coordinate axes are always included). alpha_hat is the smallest slope
// −⟨x,v⟩/‖x‖^{1+κ} on the outermost shell; beta_hat is then the smallest
// offset making every probe satisfy the bound.
DissipativityEstimate dissipativity_estimate(const PotentialModel& model,
                                             const std::vector<double>& radius_grid,
                                             int directions_per_radius,
                                             const StreamKey& stream,
                                             double kappa = 1.0);

// Same estimator for an arbitrary vector field v.
DissipativityEstimate dissipativity_estimate(const std::function<Vector(const Vector&)>& v,
                                             int dim,
                                             const std::vector<double>& radius_grid,
                                             int directions_per_radius,
                                             const StreamKey& stream,
                                             double kappa = 1.0);

// Max of ‖∇f(x) − ∇f(y)‖/‖x − y‖ over local pairs (‖x−y‖ ≈ 1e−3) and global
// pairs, followed by a finite-difference power iteration on the Hessian at
// the most curved local centres. Throws std::invalid_argument if
// pair_count < 100.
double lipschitz_estimate(const PotentialModel& model, int pair_count,
                          const StreamKey& stream);

// Radius grid spanning the target's scale: from 0 to max(10, 4·(‖m‖ + 3·sd)).
std::vector<double> default_radius_grid(const PotentialModel& model, int points = 40);

}  // namespace lrm
