#include "lrm/sampler.hpp"

#include <algorithm>
#include <cmath>

#include "lrm/errors.hpp"

namespace lrm {

std::string to_string(Scheme scheme) {
  switch (scheme) {
    case Scheme::kSgld: return "sgld";
    case Scheme::kRmm: return "rmm";
    case Scheme::kOrmm: return "ormm";
    case Scheme::kSrk: return "srk";
    case Scheme::kMl: return "ml";
    case Scheme::kPla: return "pla";
  }
  return "unknown";
}

std::optional<Scheme> parse_scheme(std::string_view name) {
  for (Scheme s : {Scheme::kSgld, Scheme::kRmm, Scheme::kOrmm, Scheme::kSrk, Scheme::kMl,
                   Scheme::kPla}) {
    if (name == to_string(s)) return s;
  }
  return std::nullopt;
}

bool is_biased(Scheme scheme) {
  return scheme == Scheme::kRmm || scheme == Scheme::kOrmm || scheme == Scheme::kSrk ||
         scheme == Scheme::kPla;
}

SchemeConfig::SchemeConfig(Scheme scheme_, PotentialModel model_, StepSchedule schedule_,
                           Vector x0_)
    : scheme(scheme_),
      model(std::move(model_)),
      diffusion(DiffusionCoeff::identity(model.dim())),
      schedule(std::move(schedule_)),
      x0(std::move(x0_)) {}

void validate_config(const SchemeConfig& cfg) {
  const int dim = cfg.model.dim();
  if (cfg.x0.size() != dim) throw ConfigError("x0", "dimension does not match the target");
  if (!cfg.x0.allFinite()) throw ConfigError("x0", "must be finite");
  if (cfg.diffusion.dim() != dim) throw ConfigError("diffusion", "dimension mismatch");
  if (cfg.scheme == Scheme::kMl) {
    if (!cfg.mirror) throw ConfigError("mirror", "Mirror Langevin requires a mirror map");
    if (cfg.mirror->dim() != dim) throw ConfigError("mirror", "dimension mismatch");
  } else if (cfg.scheme != Scheme::kSgld && !cfg.diffusion.is_identity() &&
             !cfg.allow_general_diffusion) {
    throw ConfigError("diffusion", to_string(cfg.scheme) + " requires identity diffusion");
  }
  if (cfg.scheme == Scheme::kPla) {
    if (!cfg.model.lipschitz_L()) {
      throw ConfigError("target", "PLA needs a Lipschitz constant for its contraction check");
    }
    const double contraction = cfg.schedule.gamma(1) * *cfg.model.lipschitz_L();
    if (!(contraction < 1.0)) {
      throw ConfigError("schedule", "PLA fixed point needs gamma_1 * L < 1 (got " +
                                        std::to_string(contraction) + ")");
    }
    if (!(cfg.pla_tol > 0.0)) throw ConfigError("pla.tol", "must be positive");
    if (cfg.pla_max_iter <= 0) throw ConfigError("pla.max_iter", "must be positive");
  }
}

// ---------------------------------------------------------------------------
// Draws

void draw_step(const SchemeConfig& cfg, long k, const StreamKey& stream, StepDraws& out) {
  const Eigen::Index dim = cfg.model.dim();
  const auto counter = static_cast<std::uint64_t>(k);
  out.xi.resize(dim);
  CounterRng(stream.with(Substream::kSchemeXi), counter).normals(out.xi);

  const bool midpoint = cfg.scheme == Scheme::kRmm || cfg.scheme == Scheme::kOrmm;
  if (midpoint || cfg.scheme == Scheme::kSrk) {
    out.aux.resize(dim);
    CounterRng(stream.with(Substream::kSchemeXiPrime), counter).normals(out.aux);
  }
  if (midpoint) out.alpha = CounterRng(stream.with(Substream::kAlpha), counter).uniform();

  if (!cfg.noise.is_zero() && cfg.scheme != Scheme::kPla) {
    out.noise.resize(cfg.scheme == Scheme::kSrk ? 2 * dim : dim);
    CounterRng(stream.with(Substream::kNoiseU), counter).normals(out.noise);
    if (cfg.scheme == Scheme::kRmm || cfg.scheme == Scheme::kSrk) {
      out.noise_prime.resize(dim);
      CounterRng(stream.with(Substream::kNoiseUPrime), counter).normals(out.noise_prime);
    }
  }
}

StepDraws draw_step(const SchemeConfig& cfg, long k, const StreamKey& stream) {
  StepDraws d;
  draw_step(cfg, k, stream, d);
  return d;
}

// ---------------------------------------------------------------------------
// Updates

Vector lrm_reconstruct(const Vector& x_k, const StepRecord& r, const Vector& sigma_xi) {
  return x_k - r.gamma * (r.drift + r.noise_U + r.bias_b) + std::sqrt(2.0 * r.gamma) * sigma_xi;
}

namespace {

// U at evaluation point x from standard normals z (zero when noise is off
// or the draws carry no noise entries).
void noise_at(const SchemeConfig& cfg, const Vector& x, const Eigen::Ref<const Vector>& z,
              Vector& out) {
  if (cfg.noise.is_zero() || z.size() == 0) {
    out.setZero(x.size());
    return;
  }
  out = cfg.noise.factor(x) * z;
}

Eigen::Ref<const Vector> segment_or_empty(const Vector& v, Eigen::Index start, Eigen::Index n) {
  if (v.size() < start + n) return v.head(0);
  return v.segment(start, n);
}

void finish(const SchemeConfig& cfg, const Vector& x, long k, const Vector& sigma_xi,
            StepRecord& out) {
  out.x_next = x - out.gamma * (out.drift + out.noise_U + out.bias_b) +
               std::sqrt(2.0 * out.gamma) * sigma_xi;
  if (!out.x_next.allFinite()) {
    throw SamplerFailure(FailureKind::kDiverged, k, x,
                         to_string(cfg.scheme) + " produced a non-finite iterate");
  }
}

void begin(const SchemeConfig& cfg, long k, const StepDraws& draws, StepRecord& out) {
  out.k = k;
  out.gamma = cfg.schedule.gamma(k + 1);
  out.xi = draws.xi;
  out.xi_prime.reset();
  out.alpha.reset();
  out.noise_U_prime.reset();
  out.x_mid.reset();
  out.grad_calls = 0;
  out.mirror_calls = 0;
  out.fixed_point_iterations = 0;
}

void final_noise(const SchemeConfig& cfg, const Vector& x, const Vector& xi, StepScratch& s) {
  cfg.diffusion.apply(x, xi, s.sigma_xi);
}

void sgld_apply(const SchemeConfig& cfg, const Vector& x, long k, const StepDraws& draws,
                StepScratch& s, StepRecord& out) {
  begin(cfg, k, draws, out);
  cfg.model.grad_f(x, out.drift);
  out.grad_calls = 1;
  noise_at(cfg, x, draws.noise, out.noise_U);
  out.bias_b.setZero(x.size());
  final_noise(cfg, x, draws.xi, s);
  finish(cfg, x, k, s.sigma_xi, out);
}

// Shared mid-point construction of RMM and ORMM: ξ' = √α·ξ + √(1−α)·ζ has
// standard marginals and cross-covariance √α·I with ξ.
void midpoint_noise(const StepDraws& draws, StepScratch& s) {
  s.xi_prime = std::sqrt(draws.alpha) * draws.xi + std::sqrt(1.0 - draws.alpha) * draws.aux;
}

void rmm_apply(const SchemeConfig& cfg, const Vector& x, long k, const StepDraws& draws,
               StepScratch& s, StepRecord& out) {
  begin(cfg, k, draws, out);
  const double g = out.gamma;
  const double a = draws.alpha;
  midpoint_noise(draws, s);

  cfg.model.grad_f(x, s.g0);
  noise_at(cfg, x, draws.noise_prime, s.u1);  // U'
  s.stage1 = x - g * a * (s.g0 + s.u1) + std::sqrt(2.0 * g * a) * s.xi_prime;
  cfg.model.grad_f(s.stage1, s.g1);
  noise_at(cfg, s.stage1, draws.noise, out.noise_U);
  out.grad_calls = 2;

  out.drift = s.g0;
  out.bias_b = s.g1 - s.g0;
  out.xi_prime = s.xi_prime;
  out.alpha = a;
  out.noise_U_prime = s.u1;
  out.x_mid = s.stage1;
  final_noise(cfg, x, draws.xi, s);
  finish(cfg, x, k, s.sigma_xi, out);
}

void ormm_apply(const SchemeConfig& cfg, const Vector& x, long k, const StepDraws& draws,
                Vector& cache, StepScratch& s, StepRecord& out) {
  begin(cfg, k, draws, out);
  const double g = out.gamma;
  const double a = draws.alpha;
  midpoint_noise(draws, s);

  // ∇f(x_k) is evaluated for the decomposition only; the scheme itself
  // touches the oracle once, at the mid-point.
  cfg.model.grad_f(x, s.g0);
  s.stage1 = x - g * a * cache + std::sqrt(2.0 * g * a) * s.xi_prime;
  cfg.model.grad_f(s.stage1, s.g1);
  noise_at(cfg, s.stage1, draws.noise, out.noise_U);
  out.grad_calls = 1;

  out.drift = s.g0;
  out.bias_b = s.g1 - s.g0;
  out.xi_prime = s.xi_prime;
  out.alpha = a;
  out.noise_U_prime = cache - s.g0;
  out.x_mid = s.stage1;
  cache = s.g1 + out.noise_U;
  final_noise(cfg, x, draws.xi, s);
  finish(cfg, x, k, s.sigma_xi, out);
}

void srk_apply(const SchemeConfig& cfg, const Vector& x, long k, const StepDraws& draws,
               StepScratch& s, StepRecord& out) {
  begin(cfg, k, draws, out);
  const Eigen::Index dim = x.size();
  const double g = out.gamma;
  const double root = std::sqrt(2.0 * g);

  cfg.model.grad_f(x, s.g0);
  noise_at(cfg, x, draws.noise_prime, s.u1);  // U'
  out.noise_U_prime = s.u1;
  s.stage1 = x + root * (srk::c1 * draws.xi + srk::c2 * draws.aux);
  s.stage2 = x - g * (s.g0 + s.u1) + root * (srk::c3 * draws.xi + srk::c2 * draws.aux);
  cfg.model.grad_f(s.stage1, s.g1);
  cfg.model.grad_f(s.stage2, s.g2);
  out.grad_calls = 3;

  noise_at(cfg, s.stage1, segment_or_empty(draws.noise, 0, dim), s.u1);
  noise_at(cfg, s.stage2, segment_or_empty(draws.noise, dim, dim), s.u2);
  out.noise_U = 0.5 * (s.u1 + s.u2);
  out.drift = s.g0;
  out.bias_b = 0.5 * (s.g1 + s.g2) - s.g0;
  out.xi_prime = draws.aux;
  final_noise(cfg, x, draws.xi, s);
  finish(cfg, x, k, s.sigma_xi, out);
}

void ml_apply(const SchemeConfig& cfg, const Vector& x, long k, const StepDraws& draws,
              StepScratch& s, StepRecord& out) {
  begin(cfg, k, draws, out);
  const MirrorMap& mirror = *cfg.mirror;
  s.stage1 = mirror.grad_phi_star(x);
  cfg.model.grad_f(s.stage1, out.drift);
  out.grad_calls = 1;
  out.mirror_calls = 1;
  noise_at(cfg, s.stage1, draws.noise, out.noise_U);
  out.bias_b.setZero(x.size());
  s.sigma_xi.noalias() = mirror.diffusion_factor(x, k) * draws.xi;
  finish(cfg, x, k, s.sigma_xi, out);
}

void pla_apply(const SchemeConfig& cfg, const Vector& x, long k, const StepDraws& draws,
               StepScratch& s, StepRecord& out) {
  begin(cfg, k, draws, out);
  const double g = out.gamma;
  cfg.model.grad_f(x, out.drift);
  out.noise_U.setZero(x.size());
  final_noise(cfg, x, draws.xi, s);

  if (g == 0.0) {
    out.bias_b.setZero(x.size());
    finish(cfg, x, k, s.sigma_xi, out);
    return;
  }

  // Picard iteration z ← x − γ∇f(z) + √(2γ)σξ, a contraction when γL < 1.
  s.stage2 = x + std::sqrt(2.0 * g) * s.sigma_xi;
  s.stage1 = x;
  bool converged = false;
  for (int it = 0; it < cfg.pla_max_iter; ++it) {
    cfg.model.grad_f(s.stage1, s.g1);
    ++out.grad_calls;
    s.u1 = s.stage2 - g * s.g1;
    const double change = (s.u1 - s.stage1).norm();
    s.stage1.swap(s.u1);
    if (!std::isfinite(change)) break;
    if (change < cfg.pla_tol) {
      converged = true;
      break;
    }
  }
  out.fixed_point_iterations = out.grad_calls;
  if (!converged) {
    if (!s.stage1.allFinite()) {
      throw SamplerFailure(FailureKind::kDiverged, k, x, "pla fixed point left finite range");
    }
    throw SamplerFailure(FailureKind::kImplicit, k, x,
                         "pla fixed point did not converge in " +
                             std::to_string(cfg.pla_max_iter) + " iterations");
  }
  // b = ∇f(x_{k+1}) − ∇f(x_k), with ∇f(x_{k+1}) the gradient that produced
  // the accepted fixed-point iterate.
  out.bias_b = s.g1 - out.drift;
  finish(cfg, x, k, s.sigma_xi, out);
}

StepRecord dispatch_once(const SchemeConfig& cfg, const Vector& x, long k,
                         const StepDraws& draws, Scheme expected) {
  if (cfg.scheme != expected) {
    throw ConfigError("scheme", "configuration is for " + to_string(cfg.scheme) + ", not " +
                                    to_string(expected));
  }
  StepScratch scratch;
  StepRecord out;
  Vector unused;
  apply_step(cfg, x, k, draws, unused, scratch, out);
  return out;
}

}  // namespace

void apply_step(const SchemeConfig& cfg, const Vector& x, long k, const StepDraws& draws,
                Vector& cache, StepScratch& scratch, StepRecord& out) {
  switch (cfg.scheme) {
    case Scheme::kSgld: sgld_apply(cfg, x, k, draws, scratch, out); return;
    case Scheme::kRmm: rmm_apply(cfg, x, k, draws, scratch, out); return;
    case Scheme::kOrmm: ormm_apply(cfg, x, k, draws, cache, scratch, out); return;
    case Scheme::kSrk: srk_apply(cfg, x, k, draws, scratch, out); return;
    case Scheme::kMl: ml_apply(cfg, x, k, draws, scratch, out); return;
    case Scheme::kPla: pla_apply(cfg, x, k, draws, scratch, out); return;
  }
}

StepRecord sgld_step(const SchemeConfig& cfg, const Vector& x, long k, const StepDraws& d) {
  return dispatch_once(cfg, x, k, d, Scheme::kSgld);
}
StepRecord sgld_step(const SchemeConfig& cfg, const Vector& x, long k, const StreamKey& s) {
  return sgld_step(cfg, x, k, draw_step(cfg, k, s));
}

StepRecord rmm_step(const SchemeConfig& cfg, const Vector& x, long k, const StepDraws& d) {
  return dispatch_once(cfg, x, k, d, Scheme::kRmm);
}
StepRecord rmm_step(const SchemeConfig& cfg, const Vector& x, long k, const StreamKey& s) {
  return rmm_step(cfg, x, k, draw_step(cfg, k, s));
}

StepRecord srk_step(const SchemeConfig& cfg, const Vector& x, long k, const StepDraws& d) {
  return dispatch_once(cfg, x, k, d, Scheme::kSrk);
}
StepRecord srk_step(const SchemeConfig& cfg, const Vector& x, long k, const StreamKey& s) {
  return srk_step(cfg, x, k, draw_step(cfg, k, s));
}

StepRecord ml_step(const SchemeConfig& cfg, const Vector& x, long k, const StepDraws& d) {
  return dispatch_once(cfg, x, k, d, Scheme::kMl);
}
StepRecord ml_step(const SchemeConfig& cfg, const Vector& x, long k, const StreamKey& s) {
  return ml_step(cfg, x, k, draw_step(cfg, k, s));
}

StepRecord pla_step(const SchemeConfig& cfg, const Vector& x, long k, const StepDraws& d) {
  return dispatch_once(cfg, x, k, d, Scheme::kPla);
}
StepRecord pla_step(const SchemeConfig& cfg, const Vector& x, long k, const StreamKey& s) {
  return pla_step(cfg, x, k, draw_step(cfg, k, s));
}

Vector ormm_initial_cache(const SchemeConfig& cfg, const StreamKey& stream) {
  Vector cache = cfg.model.grad_f(cfg.x0);
  if (!cfg.noise.is_zero()) {
    CounterRng rng(stream.with(Substream::kNoiseUPrime), 0);
    cache += cfg.noise.factor(cfg.x0) * rng.normals(cfg.x0.size());
  }
  return cache;
}

OrmmStep ormm_step(const SchemeConfig& cfg, const Vector& x, const Vector& cache, long k,
                   const StepDraws& d) {
  if (cfg.scheme != Scheme::kOrmm) throw ConfigError("scheme", "configuration is not ormm");
  OrmmStep out;
  out.cache = cache;
  StepScratch scratch;
  apply_step(cfg, x, k, d, out.cache, scratch, out.record);
  return out;
}

OrmmStep ormm_step(const SchemeConfig& cfg, const Vector& x, const Vector& cache, long k,
                   const StreamKey& s) {
  return ormm_step(cfg, x, cache, k, draw_step(cfg, k, s));
}

// ---------------------------------------------------------------------------
// Stepper and run

Stepper::Stepper(const SchemeConfig& cfg, const StreamKey& stream)
    : cfg_(cfg), stream_(stream), x_(cfg.x0) {
  validate_config(cfg_);
  if (cfg_.scheme == Scheme::kOrmm) {
    cache_ = ormm_initial_cache(cfg_, stream_);
    grad_calls_ = 1;
  }
}

const StepRecord& Stepper::advance() {
  draw_step(cfg_, k_, stream_, draws_);
  apply_step(cfg_, x_, k_, draws_, cache_, scratch_, record_);
  x_ = record_.x_next;
  grad_calls_ += record_.grad_calls;
  ++k_;
  return record_;
}

Trajectory run(const SchemeConfig& cfg, long iterations, const StreamKey& stream,
               const RunOptions& options) {
  if (iterations < 0) throw std::invalid_argument("run: negative iteration count");
  if (options.bias_every < 1) throw std::invalid_argument("run: bias_every must be positive");
  if (iterations > cfg.schedule.max_k()) {
    throw ConfigError("schedule.max_k", "smaller than the requested iteration count");
  }
  Trajectory traj;
  traj.replica_id = stream.replica;
  traj.stream = stream;

  std::vector<long> marks = options.checkpoints;
  if (options.checkpoint_every > 0) {
    for (long k = 0; k <= iterations; k += options.checkpoint_every) marks.push_back(k);
  }
  if (!marks.empty()) marks.push_back(iterations);
  std::sort(marks.begin(), marks.end());
  marks.erase(std::unique(marks.begin(), marks.end()), marks.end());
  marks.erase(std::remove_if(marks.begin(), marks.end(),
                             [iterations](long k) { return k < 0 || k > iterations; }),
              marks.end());
  auto mark = marks.begin();

  Stepper stepper(cfg, stream);
  traj.init_grad_calls = stepper.grad_calls();
  if (options.keep_states) {
    traj.states.reserve(static_cast<std::size_t>(iterations) + 1);
    traj.states.push_back(stepper.state());
  }
  if (options.keep_records) traj.records.reserve(static_cast<std::size_t>(iterations));
  if (options.collect_bias) {
    traj.bias.reserve(static_cast<std::size_t>(iterations / options.bias_every + 1));
  }

  auto snapshot = [&](long k) {
    if (mark != marks.end() && *mark == k) {
      traj.checkpoints.push_back({k, stepper.state()});
      ++mark;
    }
  };
  snapshot(0);
  for (long k = 0; k < iterations; ++k) {
    const StepRecord& rec = stepper.advance();
    if (options.keep_records) traj.records.push_back(rec);
    if (options.keep_states) traj.states.push_back(rec.x_next);
    if (options.collect_bias && k % options.bias_every == 0) {
      traj.bias.push_back({rec.k, rec.gamma, rec.bias_b.squaredNorm(), rec.drift.squaredNorm()});
    }
    snapshot(k + 1);
  }
  traj.final_state = stepper.state();
  traj.iterations = iterations;
  traj.total_grad_calls = stepper.grad_calls();
  return traj;
}

}  // namespace lrm
