#pragma once

#include <functional>
#include <optional>
#include <vector>

#include "lrm/model.hpp"
#include "lrm/sampler.hpp"
#include "lrm/schedule.hpp"
#include "lrm/stream.hpp"

namespace lrm {

// Brownian path shared by the sampler and the flow oracle. The increment
// over [τ_k, τ_{k+1}] is √(2γ_{k+1})·ξ_k, with ξ_k the sampler's SCHEME_XI draw
// at counter k, so B carries the √2 of the Langevin diffusion and has
// quadratic variation 2t per coordinate. Increments are regenerated on demand
// from the counter-based stream instead of being held in memory.
class BrownianStore {
 public:
  // The schedule must outlive the store.
  BrownianStore(const StepSchedule& schedule, int dim, StreamKey stream);

  int dim() const { return dim_; }
  const StreamKey& stream() const { return stream_; }
  const StepSchedule& schedule() const { return schedule_; }

  // B_{τ_{k+1}} − B_{τ_k}.
  Vector coarse(long k) const;
  void coarse(long k, Vector& out) const;

  // m fine increments over [τ_k, τ_{k+1}] as the columns of `out`
  // (dim × m), drawn from the Brownian-bridge law given the coarse
  // increment: each has variance 2γ/m and Cov(fine_i, fine_j) =
  // 2γ/m·(δ_ij − 1/m) conditional on the coarse value. m = 1 returns the
  // coarse increment itself.
  void refine(long k, int m, Matrix& out) const;

 private:
  const StepSchedule& schedule_;
  int dim_;
  StreamKey stream_;
};

std::vector<Vector> refine_bridge(const BrownianStore& store, long k, int m);

// dΦ = v(Φ)ds + σ(Φ)dB in the sampler's state space.
struct FlowField {
  using Velocity = std::function<void(const Vector& x, Vector& out)>;
  using Sigma = std::function<Matrix(const Vector& x)>;

  int dim = 0;
  Velocity velocity;
  Sigma sigma;  // empty: identity

  // v = −∇f with the given diffusion.
  static FlowField langevin(const PotentialModel& model, const DiffusionCoeff& diffusion);
  // Mirror Langevin in dual coordinates: v = −∇f(∇φ*(x)), σ = (∇²φ*⁻¹)^{1/2}.
  static FlowField mirror(const PotentialModel& model, const MirrorMap& mirror);
  // The flow the scheme in `cfg` discretises.
  static FlowField for_config(const SchemeConfig& cfg);

  bool identity_sigma() const { return !sigma; }
};

// Fine-grid path over the coarse intervals starting at anchor_k.
struct FlowPath {
  long anchor_k = 0;
  int substeps = 1;
  std::vector<long> grid_k;          // coarse indices n..J
  std::vector<double> grid_offsets;  // τ_j − τ_n
  std::vector<Vector> fine_states;   // (J−n)·m + 1 states; index (j−n)·m is grid point j
  std::vector<double> fine_offsets;

  const Vector& at_grid(std::size_t i) const { return fine_states[i * substeps]; }
};

// Coarse indices n..J covered by a horizon T from anchor n: the largest J
// with τ_J ≤ τ_n + T, clamped to the schedule length.
std::vector<long> horizon_grid(const StepSchedule& schedule, long anchor_k, double horizon_T);

// Euler–Maruyama on the fine grid driven by the refined shared increments:
// Φ ← Φ + h·v(Φ) + σ(Φ)·ΔB with h = γ_{k+1}/m. Throws
// SamplerFailure(kDiverged) on a non-finite state.
FlowPath flow_oracle(const FlowField& field, const Vector& x_anchor, double horizon_T, int m,
                     const BrownianStore& store, long anchor_k);

// Exact law of the Ornstein–Uhlenbeck flow for f(x) = ½(x−μ)ᵀA(x−μ):
// mean μ + e^{−As}(x₀−μ), covariance A⁻¹(I − e^{−2As}).
struct GaussianLaw {
  Vector mean;
  Matrix covariance;
};
GaussianLaw ou_exact_transition(const Matrix& A, const Vector& mu, const Vector& x0, double s);

// The exact OU transition sampled along the same fine increments the oracle
// uses: X ← μ + e^{−Ah}(X−μ) + chol(A⁻¹(I−e^{−2Ah}))·ΔB/√(2h). Its law is
// exact for every h, and sharing ΔB with flow_oracle cancels Monte-Carlo
// noise when the two are compared replica by replica.
FlowPath ou_exact_path(const Matrix& A, const Vector& mu, const Vector& x_anchor,
                       double horizon_T, int m, const BrownianStore& store, long anchor_k);

// LRM iterates and flow over the same window of the shared Brownian path.
struct CoupledPair {
  long anchor_k = 0;
  double t_anchor = 0.0;
  double horizon_T = 0.0;
  int substeps = 1;
  std::vector<Vector> lrm_states;   // x_j, j = n..J
  std::vector<StepRecord> records;  // steps j = n..J−1
  FlowPath flow;                    // flow.fine_states[0] = x_n

  std::size_t grid_size() const { return lrm_states.size(); }
};

// Builds the pair from an LRM window (states x_n..x_J and the records in
// between) and runs the oracle from x_n.
CoupledPair make_coupled_pair(const FlowField& field, const BrownianStore& store,
                              long anchor_k, double horizon_T, int m,
                              std::vector<Vector> lrm_states, std::vector<StepRecord> records);

// Picard process on the fine grid: X^p_s = X_t + ∫v(X_{t+u})du + ∫σ(X_{t+u})dB
// by left-point quadrature along the interpolation
//   X_{τ_k+u} = x_k − u·(drift_k + U_k + b_k) + σ(x_k)·(B_{τ_k+u} − B_{τ_k}),
// in which the conditional-expectation term is replaced by the realised
// perturbation of the completed interval. Returns the fine-grid states;
// entry (j−n)·m sits on grid point j.
std::vector<Vector> picard_process(const CoupledPair& pair, const FlowField& field,
                                   const BrownianStore& store);

// Interpolated LRM path on the fine grid (exactly x_j on grid points).
std::vector<Vector> interpolate_lrm(const CoupledPair& pair, const FlowField& field,
                                    const BrownianStore& store);

// Per grid offset: ‖X−Φ‖², ‖X^p−Φ‖², ‖X−X^p‖² for one path.
struct DecompositionTerms {
  std::vector<double> offsets;
  std::vector<double> lrm_flow;
  std::vector<double> picard_flow;
  std::vector<double> lrm_picard;
  long violations = 0;  // grid points where ½‖X−Φ‖² > ‖X^p−Φ‖² + ‖X−X^p‖²
};
DecompositionTerms decomposition_report(const CoupledPair& pair,
                                        const std::vector<Vector>& picard_states);

struct WaptOptions {
  std::vector<long> anchors;  // strictly increasing iteration indices
  double horizon_T = 1.0;
  int replicas = 256;
  int substeps = 16;
  bool decomposition = true;
  double trend_tolerance = 1.15;  // D_{i+1} ≤ D_i · tolerance
  int jobs = 1;
};

struct WaptAnchor {
  long anchor_k = 0;
  double tau = 0.0;
  std::vector<double> offsets;
  std::vector<double> mean_sq_dev;  // (1/R)Σ‖X−Φ‖² per grid offset
  double D = 0.0;                   // max over offsets
  std::vector<double> mean_picard_flow;
  std::vector<double> mean_lrm_picard;
  long decomposition_violations = 0;
};

struct WaptResult {
  std::vector<WaptAnchor> anchors;
  int replicas = 0;
  bool monotone_trend = false;
  double first_last_ratio = 0.0;  // D(first anchor) / D(last anchor)
};

// Synchronously coupled WAPT statistic: for each anchor n, R replicas run the
// scheme from cfg.x0 and the flow oracle from x_n on the same Brownian path;
// D(τ_n) = max_j (1/R)Σ_r ‖x_j − Φ_{τ_j−τ_n}(x_n)‖². Replica r uses
// base_stream.for_replica(r). Throws ConfigError on bad options and
// propagates SamplerFailure.
WaptResult wapt_deviation(const SchemeConfig& cfg, const FlowField& field,
                          const WaptOptions& options, const StreamKey& base_stream);

// Each successive value ≤ previous × tolerance.
bool monotone_trend(const std::vector<double>& values, double tolerance = 1.15);

}  // namespace lrm
