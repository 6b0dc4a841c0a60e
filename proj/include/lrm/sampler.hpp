#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "lrm/model.hpp"
#include "lrm/noise.hpp"
#include "lrm/schedule.hpp"
#include "lrm/stream.hpp"

namespace lrm {

enum class Scheme { kSgld, kRmm, kOrmm, kSrk, kMl, kPla };

std::string to_string(Scheme scheme);
std::optional<Scheme> parse_scheme(std::string_view name);
// Schemes whose perturbation carries a nonzero bias term b.
bool is_biased(Scheme scheme);

// Stochastic Runge-Kutta stage weights.
namespace srk {
inline const double c1 = 0.5 + 1.0 / std::sqrt(6.0);
inline const double c2 = 1.0 / std::sqrt(12.0);
inline const double c3 = 0.5 - 1.0 / std::sqrt(6.0);
}  // namespace srk

struct SchemeConfig {
  SchemeConfig(Scheme scheme, PotentialModel model, StepSchedule schedule, Vector x0);

  Scheme scheme;
  PotentialModel model;
  DiffusionCoeff diffusion;
  std::optional<MirrorMap> mirror;
  NoiseModel noise;
  StepSchedule schedule;
  Vector x0;
  double pla_tol = 1e-10;
  int pla_max_iter = 200;
  // Lets schemes other than SGLD run with a non-identity diffusion applied
  // to the final-step Gaussian term.
  bool allow_general_diffusion = false;
};

// Throws ConfigError when the scheme and its ingredients are incompatible.
void validate_config(const SchemeConfig& cfg);

// Standard normals and the uniform α consumed by one step. Drawn from the
// replica's substreams at counter k; tests may fill them by hand.
struct StepDraws {
  Vector xi;           // ξ_{k+1} (SCHEME_XI), the Brownian increment driver
  Vector aux;          // ζ for RMM/ORMM, ξ' for SRK (SCHEME_XI_PRIME)
  double alpha = 1.0;  // RMM/ORMM mid-point fraction (ALPHA)
  Vector noise;        // ζ behind U (NOISE_U); 2·dim entries for SRK
  Vector noise_prime;  // ζ behind U' (NOISE_U_PRIME)
};

void draw_step(const SchemeConfig& cfg, long k, const StreamKey& stream, StepDraws& out);
StepDraws draw_step(const SchemeConfig& cfg, long k, const StreamKey& stream);

// One iteration x_k → x_{k+1} in LRM form:
//   x_{k+1} = x_k − γ_{k+1}(drift + noise_U + bias_b) + √(2γ_{k+1})·σ(x_k)·xi
// where drift is the field the template subtracts (∇f(x_k), or
// ∇f(∇φ*(x_k)) for Mirror Langevin), so the Langevin vector field is −drift.
struct StepRecord {
  long k = 0;
  double gamma = 0.0;
  Vector drift;
  Vector noise_U;
  Vector bias_b;
  Vector xi;
  std::optional<Vector> xi_prime;
  std::optional<double> alpha;
  // Perturbation of the gradient used by the inner stage relative to
  // ∇f(x_k) (RMM, SRK: U'; ORMM: cached gradient minus ∇f(x_k)).
  std::optional<Vector> noise_U_prime;
  std::optional<Vector> x_mid;  // RMM/ORMM mid-point
  long grad_calls = 0;
  long mirror_calls = 0;
  long fixed_point_iterations = 0;  // PLA
  Vector x_next;
};

// The LRM update evaluated from a record; `sigma_xi` is σ(x_k)·ξ. Every
// step computes x_next through this function.
Vector lrm_reconstruct(const Vector& x_k, const StepRecord& record, const Vector& sigma_xi);

// Scratch buffers reused across steps.
struct StepScratch {
  Vector g0, g1, g2, stage1, stage2, u1, u2, sigma_xi, xi_prime;
};

StepRecord sgld_step(const SchemeConfig& cfg, const Vector& x, long k, const StreamKey& stream);
StepRecord sgld_step(const SchemeConfig& cfg, const Vector& x, long k, const StepDraws& draws);

StepRecord rmm_step(const SchemeConfig& cfg, const Vector& x, long k, const StreamKey& stream);
StepRecord rmm_step(const SchemeConfig& cfg, const Vector& x, long k, const StepDraws& draws);

struct OrmmStep {
  StepRecord record;
  Vector cache;  // ∇̃f(x_{k+½}), consumed by the next mid-point
};
// ∇̃f(x_0), the cache before the first ORMM step (one oracle call).
Vector ormm_initial_cache(const SchemeConfig& cfg, const StreamKey& stream);
OrmmStep ormm_step(const SchemeConfig& cfg, const Vector& x, const Vector& cache, long k,
                   const StreamKey& stream);
OrmmStep ormm_step(const SchemeConfig& cfg, const Vector& x, const Vector& cache, long k,
                   const StepDraws& draws);

StepRecord srk_step(const SchemeConfig& cfg, const Vector& x, long k, const StreamKey& stream);
StepRecord srk_step(const SchemeConfig& cfg, const Vector& x, long k, const StepDraws& draws);

StepRecord ml_step(const SchemeConfig& cfg, const Vector& x, long k, const StreamKey& stream);
StepRecord ml_step(const SchemeConfig& cfg, const Vector& x, long k, const StepDraws& draws);

StepRecord pla_step(const SchemeConfig& cfg, const Vector& x, long k, const StreamKey& stream);
StepRecord pla_step(const SchemeConfig& cfg, const Vector& x, long k, const StepDraws& draws);

// Scheme dispatch with reusable buffers. `cache` is used by ORMM only.
void apply_step(const SchemeConfig& cfg, const Vector& x, long k, const StepDraws& draws,
                Vector& cache, StepScratch& scratch, StepRecord& out);

// Drives one replica forward, owning its state and the ORMM cache. The
// configuration must outlive the stepper.
class Stepper {
 public:
  Stepper(const SchemeConfig& cfg, const StreamKey& stream);

  // Performs iteration k = iteration() and returns its record. Throws
  // SamplerFailure; the stepper is unusable afterwards.
  const StepRecord& advance();

  const Vector& state() const { return x_; }
  long iteration() const { return k_; }
  long grad_calls() const { return grad_calls_; }

 private:
  const SchemeConfig& cfg_;
  StreamKey stream_;
  Vector x_;
  Vector cache_;
  long k_ = 0;
  long grad_calls_ = 0;
  StepDraws draws_;
  StepScratch scratch_;
  StepRecord record_;
};

struct RunOptions {
  // Snapshot every `checkpoint_every` iterations (0 disables), plus the
  // explicit list; the final iterate is always included when either is set.
  long checkpoint_every = 0;
  std::vector<long> checkpoints;
  bool keep_states = true;
  bool keep_records = true;
  bool collect_bias = false;
  long bias_every = 1;  // keep the bias sample of every n-th iteration
};

struct Checkpoint {
  long k = 0;
  Vector state;
};

// Per-iteration inputs of the bias-scaling ratio.
struct BiasSample {
  long k = 0;
  double gamma = 0.0;
  double b2 = 0.0;  // ‖b_{k+1}‖²
  double v2 = 0.0;  // ‖v(x_k)‖²
};

struct Trajectory {
  std::uint32_t replica_id = 0;
  StreamKey stream;
  std::vector<Vector> states;       // x_0..x_K when keep_states
  std::vector<StepRecord> records;  // when keep_records
  std::vector<Checkpoint> checkpoints;
  std::vector<BiasSample> bias;  // when collect_bias
  Vector final_state;
  long iterations = 0;
  long init_grad_calls = 0;   // ORMM cache initialisation
  long total_grad_calls = 0;  // includes init_grad_calls
};

// K iterations from cfg.x0. Deterministic given (cfg, stream). Propagates
// SamplerFailure with the failing index.
Trajectory run(const SchemeConfig& cfg, long iterations, const StreamKey& stream,
               const RunOptions& options = {});

}  // namespace lrm
