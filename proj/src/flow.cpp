#include "lrm/flow.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include <Eigen/Cholesky>
#include <Eigen/Eigenvalues>

#include "lrm/errors.hpp"
#include "lrm/parallel.hpp"

namespace lrm {

// ---------------------------------------------------------------------------
// BrownianStore

BrownianStore::BrownianStore(const StepSchedule& schedule, int dim, StreamKey stream)
    : schedule_(schedule), dim_(dim), stream_(stream) {
  if (dim < 1) throw std::invalid_argument("BrownianStore: dimension must be positive");
}

void BrownianStore::coarse(long k, Vector& out) const {
  out.resize(dim_);
  CounterRng(stream_.with(Substream::kSchemeXi), static_cast<std::uint64_t>(k)).normals(out);
  out *= std::sqrt(2.0 * schedule_.gamma(k + 1));
}

Vector BrownianStore::coarse(long k) const {
  Vector out;
  coarse(k, out);
  return out;
}

void BrownianStore::refine(long k, int m, Matrix& out) const {
  if (m < 1) throw std::invalid_argument("BrownianStore::refine: m must be positive");
  Vector total;
  coarse(k, total);
  out.resize(dim_, m);
  if (m == 1) {
    out.col(0) = total;
    return;
  }
  // Conditional sampling by projection: iid N(0, 2γ/m) pieces minus their
  // mean deviation have exactly the bridge law given the sum; the last piece
  // absorbs the remainder so the partial sums end on the coarse value.
  const double sd = std::sqrt(2.0 * schedule_.gamma(k + 1) / m);
  CounterRng rng(stream_.with(Substream::kBridge), static_cast<std::uint64_t>(k));
  for (int i = 0; i < m; ++i) {
    for (int d = 0; d < dim_; ++d) out(d, i) = sd * rng.normal();
  }
  const Vector shift = (out.rowwise().sum() - total) / static_cast<double>(m);
  out.colwise() -= shift;
  out.col(m - 1) = total - out.leftCols(m - 1).rowwise().sum();
}

std::vector<Vector> refine_bridge(const BrownianStore& store, long k, int m) {
  Matrix fine;
  store.refine(k, m, fine);
  std::vector<Vector> out;
  out.reserve(static_cast<std::size_t>(m));
  for (int i = 0; i < m; ++i) out.emplace_back(fine.col(i));
  return out;
}

// ---------------------------------------------------------------------------
// Fields

FlowField FlowField::langevin(const PotentialModel& model, const DiffusionCoeff& diffusion) {
  FlowField field;
  field.dim = model.dim();
  field.velocity = [model](const Vector& x, Vector& out) {
    model.grad_f(x, out);
    out = -out;
  };
  if (!diffusion.is_identity()) {
    field.sigma = [diffusion](const Vector& x) { return diffusion.at(x); };
  }
  return field;
}

FlowField FlowField::mirror(const PotentialModel& model, const MirrorMap& mirror) {
  FlowField field;
  field.dim = model.dim();
  field.velocity = [model, mirror](const Vector& x, Vector& out) {
    model.grad_f(mirror.grad_phi_star(x), out);
    out = -out;
  };
  field.sigma = [mirror](const Vector& x) { return mirror.diffusion_factor(x); };
  return field;
}

FlowField FlowField::for_config(const SchemeConfig& cfg) {
  if (cfg.scheme == Scheme::kMl) {
    if (!cfg.mirror) throw ConfigError("mirror", "Mirror Langevin requires a mirror map");
    return mirror(cfg.model, *cfg.mirror);
  }
  return langevin(cfg.model, cfg.diffusion);
}

namespace {

void add_sigma_increment(const FlowField& field, const Vector& x,
                         const Eigen::Ref<const Vector>& dB, Vector& out) {
  if (field.identity_sigma()) {
    out += dB;
  } else {
    out.noalias() += field.sigma(x) * dB;
  }
}

FlowPath empty_path(const StepSchedule& schedule, long anchor_k, double horizon_T, int m) {
  FlowPath path;
  path.anchor_k = anchor_k;
  path.substeps = m;
  path.grid_k = horizon_grid(schedule, anchor_k, horizon_T);
  const double t0 = schedule.tau(anchor_k);
  for (long j : path.grid_k) path.grid_offsets.push_back(schedule.tau(j) - t0);
  const std::size_t fine = (path.grid_k.size() - 1) * static_cast<std::size_t>(m) + 1;
  path.fine_states.reserve(fine);
  path.fine_offsets.reserve(fine);
  return path;
}

// Symmetric matrix function via eigendecomposition.
template <typename F>
Matrix sym_apply(const Eigen::SelfAdjointEigenSolver<Matrix>& es, F f) {
  const Vector values = es.eigenvalues().unaryExpr(f);
  return es.eigenvectors() * values.asDiagonal() * es.eigenvectors().transpose();
}

}  // namespace

std::vector<long> horizon_grid(const StepSchedule& schedule, long anchor_k, double horizon_T) {
  if (anchor_k < 0 || anchor_k >= schedule.max_k()) {
    throw std::out_of_range("horizon_grid: anchor outside the schedule");
  }
  if (!(horizon_T >= 0.0)) throw std::invalid_argument("horizon_grid: negative horizon");
  const double end = schedule.tau(anchor_k) + horizon_T;
  std::vector<long> grid{anchor_k};
  // Small slack so that a horizon landing on a grid time (up to rounding of
  // the prefix sums) includes that point.
  const double slack = 1e-12 * std::max(1.0, end);
  for (long j = anchor_k + 1; j <= schedule.max_k() && schedule.tau(j) <= end + slack; ++j) {
    grid.push_back(j);
  }
  return grid;
}

FlowPath flow_oracle(const FlowField& field, const Vector& x_anchor, double horizon_T, int m,
                     const BrownianStore& store, long anchor_k) {
  if (m < 1) throw std::invalid_argument("flow_oracle: substeps must be positive");
  if (x_anchor.size() != field.dim || store.dim() != field.dim) {
    throw std::invalid_argument("flow_oracle: dimension mismatch");
  }
  FlowPath path = empty_path(store.schedule(), anchor_k, horizon_T, m);
  Vector phi = x_anchor;
  Vector v(field.dim);
  Matrix fine;
  double offset = 0.0;
  path.fine_states.push_back(phi);
  path.fine_offsets.push_back(offset);
  for (std::size_t j = 0; j + 1 < path.grid_k.size(); ++j) {
    const long k = path.grid_k[j];
    const double h = store.schedule().gamma(k + 1) / m;
    store.refine(k, m, fine);
    for (int i = 0; i < m; ++i) {
      field.velocity(phi, v);
      Vector next = phi + h * v;
      add_sigma_increment(field, phi, fine.col(i), next);
      if (!next.allFinite()) {
        throw SamplerFailure(FailureKind::kDiverged, k, phi, "flow oracle left finite range");
      }
      phi.swap(next);
      offset += h;
      path.fine_states.push_back(phi);
      path.fine_offsets.push_back(offset);
    }
    // Grid offsets come from the schedule's prefix sums.
    path.fine_offsets.back() = path.grid_offsets[j + 1];
    offset = path.grid_offsets[j + 1];
  }
  return path;
}

GaussianLaw ou_exact_transition(const Matrix& A, const Vector& mu, const Vector& x0, double s) {
  if (A.rows() != A.cols() || A.rows() != mu.size() || mu.size() != x0.size()) {
    throw std::invalid_argument("ou_exact_transition: dimension mismatch");
  }
  if (!(s >= 0.0)) throw std::invalid_argument("ou_exact_transition: negative time");
  Eigen::SelfAdjointEigenSolver<Matrix> es(A);
  if (es.eigenvalues().minCoeff() <= 0.0) {
    throw std::invalid_argument("ou_exact_transition: A must be positive definite");
  }
  GaussianLaw law;
  law.mean = mu + sym_apply(es, [s](double a) { return std::exp(-a * s); }) * (x0 - mu);
  law.covariance = sym_apply(es, [s](double a) { return -std::expm1(-2.0 * a * s) / a; });
  return law;
}

FlowPath ou_exact_path(const Matrix& A, const Vector& mu, const Vector& x_anchor,
                       double horizon_T, int m, const BrownianStore& store, long anchor_k) {
  if (m < 1) throw std::invalid_argument("ou_exact_path: substeps must be positive");
  if (A.rows() != store.dim() || mu.size() != store.dim() || x_anchor.size() != store.dim()) {
    throw std::invalid_argument("ou_exact_path: dimension mismatch");
  }
  Eigen::SelfAdjointEigenSolver<Matrix> es(A);
  FlowPath path = empty_path(store.schedule(), anchor_k, horizon_T, m);
  Vector x = x_anchor;
  Matrix fine;
  double offset = 0.0;
  double last_h = -1.0;
  Matrix decay, chol;
  path.fine_states.push_back(x);
  path.fine_offsets.push_back(offset);
  for (std::size_t j = 0; j + 1 < path.grid_k.size(); ++j) {
    const long k = path.grid_k[j];
    const double h = store.schedule().gamma(k + 1) / m;
    if (h != last_h) {
      decay = sym_apply(es, [h](double a) { return std::exp(-a * h); });
      const Matrix cov = sym_apply(es, [h](double a) { return -std::expm1(-2.0 * a * h) / a; });
      chol = Eigen::LLT<Matrix>(cov).matrixL();
      last_h = h;
    }
    store.refine(k, m, fine);
    const double scale = 1.0 / std::sqrt(2.0 * h);
    for (int i = 0; i < m; ++i) {
      x = mu + decay * (x - mu) + chol * (scale * fine.col(i));
      offset += h;
      path.fine_states.push_back(x);
      path.fine_offsets.push_back(offset);
    }
    path.fine_offsets.back() = path.grid_offsets[j + 1];
    offset = path.grid_offsets[j + 1];
  }
  return path;
}

// ---------------------------------------------------------------------------
// Coupled pairs and the Picard process

CoupledPair make_coupled_pair(const FlowField& field, const BrownianStore& store,
                              long anchor_k, double horizon_T, int m,
                              std::vector<Vector> lrm_states, std::vector<StepRecord> records) {
  if (lrm_states.empty()) throw std::invalid_argument("make_coupled_pair: no LRM states");
  CoupledPair pair;
  pair.anchor_k = anchor_k;
  pair.t_anchor = store.schedule().tau(anchor_k);
  pair.horizon_T = horizon_T;
  pair.substeps = m;
  pair.flow = flow_oracle(field, lrm_states.front(), horizon_T, m, store, anchor_k);
  if (lrm_states.size() != pair.flow.grid_k.size() ||
      records.size() + 1 != lrm_states.size()) {
    throw std::invalid_argument("make_coupled_pair: LRM window does not match the horizon grid");
  }
  pair.lrm_states = std::move(lrm_states);
  pair.records = std::move(records);
  return pair;
}

std::vector<Vector> interpolate_lrm(const CoupledPair& pair, const FlowField& field,
                                    const BrownianStore& store) {
  const int m = pair.substeps;
  std::vector<Vector> out;
  out.reserve(pair.records.size() * static_cast<std::size_t>(m) + 1);
  out.push_back(pair.lrm_states.front());
  Matrix fine;
  for (std::size_t j = 0; j < pair.records.size(); ++j) {
    const StepRecord& rec = pair.records[j];
    const Vector& x = pair.lrm_states[j];
    const Vector z = rec.drift + rec.noise_U + rec.bias_b;
    const double h = rec.gamma / m;
    store.refine(rec.k, m, fine);
    Matrix sigma;
    if (!field.identity_sigma()) sigma = field.sigma(x);
    Vector w = Vector::Zero(x.size());
    for (int i = 1; i < m; ++i) {
      w += fine.col(i - 1);
      Vector y = x - (i * h) * z;
      if (field.identity_sigma()) {
        y += w;
      } else {
        y.noalias() += sigma * w;
      }
      out.push_back(std::move(y));
    }
    // On the grid the interpolation is the iterate itself.
    out.push_back(pair.lrm_states[j + 1]);
  }
  return out;
}

std::vector<Vector> picard_process(const CoupledPair& pair, const FlowField& field,
                                   const BrownianStore& store) {
  const std::vector<Vector> interp = interpolate_lrm(pair, field, store);
  const int m = pair.substeps;
  std::vector<Vector> out;
  out.reserve(interp.size());
  Vector xp = pair.lrm_states.front();
  out.push_back(xp);
  Vector v(field.dim);
  Matrix fine;
  for (std::size_t j = 0; j < pair.records.size(); ++j) {
    const StepRecord& rec = pair.records[j];
    const double h = rec.gamma / m;
    store.refine(rec.k, m, fine);
    for (int i = 0; i < m; ++i) {
      const Vector& x = interp[j * m + i];
      field.velocity(x, v);
      xp += h * v;
      add_sigma_increment(field, x, fine.col(i), xp);
      out.push_back(xp);
    }
  }
  return out;
}

DecompositionTerms decomposition_report(const CoupledPair& pair,
                                        const std::vector<Vector>& picard_states) {
  DecompositionTerms out;
  const std::size_t m = static_cast<std::size_t>(pair.substeps);
  for (std::size_t j = 0; j < pair.grid_size(); ++j) {
    const Vector& x = pair.lrm_states[j];
    const Vector& phi = pair.flow.at_grid(j);
    const Vector& xp = picard_states[j * m];
    const double a = (x - phi).squaredNorm();
    const double b = (xp - phi).squaredNorm();
    const double c = (x - xp).squaredNorm();
    out.offsets.push_back(pair.flow.grid_offsets[j]);
    out.lrm_flow.push_back(a);
    out.picard_flow.push_back(b);
    out.lrm_picard.push_back(c);
    // Small absolute slack for rounding when all three terms vanish.
    if (0.5 * a > b + c + 1e-300) ++out.violations;
  }
  return out;
}

// ---------------------------------------------------------------------------
// WAPT statistic

bool monotone_trend(const std::vector<double>& values, double tolerance) {
  for (std::size_t i = 1; i < values.size(); ++i) {
    if (values[i] > values[i - 1] * tolerance) return false;
  }
  return true;
}

namespace {

struct ReplicaWapt {
  std::vector<std::vector<double>> dev, picard_flow, lrm_picard;  // per anchor, per offset
  std::vector<long> violations;
};

}  // namespace

WaptResult wapt_deviation(const SchemeConfig& cfg, const FlowField& field,
                          const WaptOptions& options, const StreamKey& base_stream) {
  const auto& anchors = options.anchors;
  if (anchors.empty()) throw ConfigError("wapt.anchors", "at least one anchor is required");
  for (std::size_t i = 0; i < anchors.size(); ++i) {
    if (anchors[i] < 0) throw ConfigError("wapt.anchors", "anchors must be nonnegative");
    if (i > 0 && anchors[i] <= anchors[i - 1]) {
      throw ConfigError("wapt.anchors", "anchors must be strictly increasing");
    }
  }
  if (!(options.horizon_T > 0.0)) throw ConfigError("wapt.horizon", "must be positive");
  if (options.replicas < 1) throw ConfigError("wapt.replicas", "must be positive");
  if (options.substeps < 1) throw ConfigError("wapt.substeps", "must be positive");
  if (anchors.back() >= cfg.schedule.max_k()) {
    throw ConfigError("wapt.anchors", "last anchor lies beyond schedule.max_k");
  }
  validate_config(cfg);

  std::vector<std::vector<long>> grids;
  long last_k = 0;
  for (long n : anchors) {
    grids.push_back(horizon_grid(cfg.schedule, n, options.horizon_T));
    last_k = std::max(last_k, grids.back().back());
  }

  const std::size_t A = anchors.size();
  const int m = options.substeps;
  std::vector<ReplicaWapt> slots(static_cast<std::size_t>(options.replicas));

  parallel_for(slots.size(), options.jobs, [&](std::size_t r) {
    const StreamKey stream = base_stream.for_replica(static_cast<std::uint32_t>(r));
    const BrownianStore store(cfg.schedule, cfg.model.dim(), stream);
    std::vector<std::vector<Vector>> states(A);
    std::vector<std::vector<StepRecord>> records(A);

    Stepper stepper(cfg, stream);
    auto keep_state = [&](long k) {
      for (std::size_t a = 0; a < A; ++a) {
        if (k >= anchors[a] && k <= grids[a].back()) states[a].push_back(stepper.state());
      }
    };
    keep_state(0);
    for (long k = 0; k < last_k; ++k) {
      const StepRecord& rec = stepper.advance();
      for (std::size_t a = 0; a < A; ++a) {
        if (k >= anchors[a] && k < grids[a].back()) records[a].push_back(rec);
      }
      keep_state(k + 1);
    }

    ReplicaWapt& out = slots[r];
    out.dev.resize(A);
    out.picard_flow.resize(A);
    out.lrm_picard.resize(A);
    out.violations.assign(A, 0);
    for (std::size_t a = 0; a < A; ++a) {
      const CoupledPair pair = make_coupled_pair(field, store, anchors[a], options.horizon_T, m,
                                                 std::move(states[a]), std::move(records[a]));
      if (options.decomposition) {
        const DecompositionTerms terms =
            decomposition_report(pair, picard_process(pair, field, store));
        out.dev[a] = terms.lrm_flow;
        out.picard_flow[a] = terms.picard_flow;
        out.lrm_picard[a] = terms.lrm_picard;
        out.violations[a] = terms.violations;
      } else {
        for (std::size_t j = 0; j < pair.grid_size(); ++j) {
          out.dev[a].push_back((pair.lrm_states[j] - pair.flow.at_grid(j)).squaredNorm());
        }
      }
    }
  });

  WaptResult result;
  result.replicas = options.replicas;
  const double inv_r = 1.0 / options.replicas;
  std::vector<double> D;
  for (std::size_t a = 0; a < A; ++a) {
    WaptAnchor anchor;
    anchor.anchor_k = anchors[a];
    anchor.tau = cfg.schedule.tau(anchors[a]);
    const std::size_t G = grids[a].size();
    for (long j : grids[a]) anchor.offsets.push_back(cfg.schedule.tau(j) - anchor.tau);
    anchor.mean_sq_dev.assign(G, 0.0);
    if (options.decomposition) {
      anchor.mean_picard_flow.assign(G, 0.0);
      anchor.mean_lrm_picard.assign(G, 0.0);
    }
    for (const ReplicaWapt& rep : slots) {  // replica order: deterministic sums
      for (std::size_t j = 0; j < G; ++j) {
        anchor.mean_sq_dev[j] += rep.dev[a][j] * inv_r;
        if (options.decomposition) {
          anchor.mean_picard_flow[j] += rep.picard_flow[a][j] * inv_r;
          anchor.mean_lrm_picard[j] += rep.lrm_picard[a][j] * inv_r;
        }
      }
      anchor.decomposition_violations += rep.violations[a];
    }
    anchor.D = *std::max_element(anchor.mean_sq_dev.begin(), anchor.mean_sq_dev.end());
    D.push_back(anchor.D);
    result.anchors.push_back(std::move(anchor));
  }
  result.monotone_trend = monotone_trend(D, options.trend_tolerance);
  result.first_last_ratio = D.back() > 0.0 ? D.front() / D.back()
                                           : (D.front() > 0.0 ? INFINITY : 0.0);
  return result;
}

}  // namespace lrm
