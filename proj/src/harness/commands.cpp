#include "lrm/harness/commands.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <ostream>
#include <sstream>
#include <string_view>

#include "lrm/errors.hpp"
#include "lrm/flow.hpp"
#include "lrm/harness/config.hpp"
#include "lrm/harness/ensemble.hpp"
#include "lrm/metric.hpp"
#include "lrm/noise.hpp"

#ifndef LRM_VERSION
#define LRM_VERSION "dev"
#endif

namespace lrm::harness {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

// Replica ids inside a seed's key space. Main replicas start at 0; the rest
// sit far above any configurable replica count.
constexpr std::uint32_t kPilotReplicaBase = 0x40000000u;
constexpr std::uint32_t kEstimatorReplica = 0xFFFFFF00u;
constexpr std::uint32_t kProjectionReplica = 0xFFFFFFFDu;
constexpr std::uint32_t kReferenceReplica = 0xFFFFFFFEu;

std::string format_double(double x, const char* spec) {
  if (std::isnan(x)) return "nan";
  if (std::isinf(x)) return x > 0 ? "inf" : "-inf";
  char buf[32];
  std::snprintf(buf, sizeof buf, spec, x);
  return buf;
}

// Round-trip precision for CSV cells; short form for verdict text.
std::string csv_num(double x) { return format_double(x, "%.17g"); }
std::string num(double x) { return format_double(x, "%.6g"); }

json finite_or_null(double x) { return std::isfinite(x) ? json(x) : json(nullptr); }

json vec_json(const Vector& v) {
  json out = json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) out.push_back(finite_or_null(v(i)));
  return out;
}

enum class Severity { kError, kWarning, kInfo };

const char* to_string(Severity s) {
  switch (s) {
    case Severity::kError: return "error";
    case Severity::kWarning: return "warning";
    case Severity::kInfo: return "info";
  }
  return "info";
}

struct Verdict {
  std::string name;
  bool pass = true;
  Severity severity = Severity::kInfo;
  std::string detail;
  json value = nullptr;

  json to_json() const {
    return {{"check", name},
            {"status", pass ? "pass" : (severity == Severity::kInfo ? "info" : "fail")},
            {"severity", lrm::harness::to_string(severity)},
            {"detail", detail},
            {"value", value}};
  }
};

// State shared by the four commands: config, run directory, verdicts and
// the manifest under construction.
class Session {
 public:
  Session(std::string command, const CliOptions& opts)
      : command_(std::move(command)), opts_(opts), start_(std::chrono::steady_clock::now()) {}

  // False (with result() filled in) on configuration errors.
  bool load() {
    try {
      cfg = load_config(opts_.config_path, opts_.overrides);
      if (opts_.seed) {
        cfg.seed = *opts_.seed;
        cfg.snapshot["seed"] = cfg.seed;
      }
    } catch (const ConfigError& e) {
      error_ = e.what();
      return false;
    }
    run_id = make_run_id(command_, cfg.snapshot, cfg.seed);
    dir = fs::path(resolve_out_root(opts_.out_dir)) / run_id;
    fs::create_directories(dir);
    manifest["run_id"] = run_id;
    manifest["command"] = command_;
    manifest["version"] = LRM_VERSION;
    manifest["seed"] = cfg.seed;
    manifest["config"] = cfg.snapshot;
    manifest["forced"] = opts_.force;
    manifest["jobs"] = opts_.jobs;
    return true;
  }

  CommandResult config_failure(const std::string& message) {
    error_ = message;
    return config_error_result();
  }

  CommandResult config_error_result() {
    if (opts_.log) *opts_.log << "config error: " << error_ << "\n";
    CommandResult r;
    r.exit_code = kExitConfigError;
    r.error = error_;
    return r;
  }

  void add(Verdict v) {
    if (opts_.log) {
      *opts_.log << std::left << std::setw(40) << v.name << " "
                 << (v.pass ? "pass" : (v.severity == Severity::kInfo ? "info" : "FAIL")) << "  ["
                 << lrm::harness::to_string(v.severity) << "] " << v.detail << "\n";
    }
    verdicts_.push_back(std::move(v));
  }

  bool error_failed() const {
    for (const auto& v : verdicts_) {
      if (!v.pass && v.severity == Severity::kError) return true;
    }
    return false;
  }

  void log(const std::string& line) const {
    if (opts_.log) *opts_.log << line << "\n";
  }

  void write_csv(const std::string& name, const std::string& header,
                 const std::vector<std::string>& rows) {
    const fs::path path = dir / name;
    fs::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary);
    out << "# run_id: " << run_id << "\n" << header << "\n";
    for (const auto& r : rows) out << r << "\n";
    if (!out) throw std::runtime_error("cannot write " + path.string());
    outputs_.push_back(name);
  }

  CommandResult finish(int exit_code, std::string_view status_view) {
    const std::string status(status_view);
    manifest["status"] = status;
    manifest["exit_code"] = exit_code;
    json v = json::array();
    for (const auto& x : verdicts_) v.push_back(x.to_json());
    manifest["verdicts"] = v;
    manifest["outputs"] = outputs_;
    manifest["wall_clock_seconds"] =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
    std::ofstream out(dir / "manifest.json", std::ios::binary);
    out << manifest.dump(2) << "\n";
    if (opts_.log) *opts_.log << "run " << run_id << " → " << dir.string() << " (" << status << ")\n";
    CommandResult r;
    r.exit_code = exit_code;
    r.manifest = manifest;
    r.run_dir = dir.string();
    return r;
  }

  const CliOptions& opts() const { return opts_; }

  ExperimentConfig cfg;
  std::string run_id;
  fs::path dir;
  json manifest = json::object();

 private:
  std::string command_;
  const CliOptions& opts_;
  std::chrono::steady_clock::time_point start_;
  std::string error_;
  std::vector<Verdict> verdicts_;
  std::vector<std::string> outputs_;
};

StreamKey base_stream(const ExperimentConfig& cfg) { return StreamKey{cfg.seed, 0, Substream::kSchemeXi}; }

StreamKey estimator_stream(const ExperimentConfig& cfg, std::uint32_t i) {
  return StreamKey{cfg.seed, kEstimatorReplica + i, Substream::kMetric};
}

// ---------------------------------------------------------------------------
// Constants and schedule validation

struct Constants {
  std::optional<double> L_model;
  double L_hat = 0.0;
  double L_used = 0.0;
  DissipativityEstimate diss;
  double C_b = 0.0;
  std::optional<BiasFit> pilot_fit;
  std::optional<ReplicaFailure> pilot_failure;
  double P = 0.0;
  EnsembleResult pilot;
};

Constants estimate_constants(Session& s, const SchemeConfig& sc, bool pilot_records,
                             bool always_pilot) {
  const ExperimentConfig& cfg = s.cfg;
  Constants c;
  c.L_model = cfg.model.lipschitz_L();
  c.L_hat = lipschitz_estimate(cfg.model, cfg.validate.lipschitz_pairs, estimator_stream(cfg, 0));
  c.L_used = c.L_model.value_or(c.L_hat);
  c.diss = dissipativity_estimate(cfg.model, default_radius_grid(cfg.model),
                                  cfg.validate.dissipativity_directions,
                                  estimator_stream(cfg, 1));

  // C_b from a short pilot run of a biased scheme; unbiased schemes have
  // b ≡ 0.
  if (is_biased(sc.scheme) || always_pilot) {
    EnsembleOptions eo;
    eo.replicas = cfg.pilot.replicas;
    eo.iterations = std::min(cfg.pilot.iterations, sc.schedule.max_k());
    eo.run.collect_bias = true;
    eo.run.keep_records = pilot_records;
    eo.jobs = s.opts().jobs;
    eo.replica_offset = kPilotReplicaBase;
    c.pilot = run_ensemble(sc, base_stream(cfg), eo);
    if (c.pilot.ok()) {
      c.pilot_fit = bias_scaling_fit(c.pilot.trajectories);
      if (is_biased(sc.scheme)) c.C_b = c.pilot_fit->c_hat;
    } else {
      c.pilot_failure = c.pilot.failure;
    }
  }
  c.P = compute_P(c.L_used, c.C_b);
  return c;
}

json constants_json(const Constants& c) {
  json out = {{"L_hat", finite_or_null(c.L_hat)},
              {"L_used", finite_or_null(c.L_used)},
              {"alpha_hat", finite_or_null(c.diss.alpha_hat)},
              {"beta_hat", finite_or_null(c.diss.beta_hat)},
              {"dissipative", c.diss.dissipative},
              {"dissipativity_probes", c.diss.probes},
              {"C_b", finite_or_null(c.C_b)},
              {"P", finite_or_null(c.P)}};
  out["L_model"] = c.L_model ? json(*c.L_model) : json(nullptr);
  if (c.pilot_fit) {
    out["pilot_c_hat"] = finite_or_null(c.pilot_fit->c_hat);
    out["pilot_trend_slope"] = finite_or_null(c.pilot_fit->trend_slope);
  }
  return out;
}

json report_json(const ScheduleReport& r) {
  json out = {{"rm_divergent", r.rm_divergent},
              {"rm_square_summable", r.rm_square_summable},
              {"checked_up_to", r.checked_up_to},
              {"P_used", finite_or_null(r.P_used)}};
  out["strange_condition_first_index"] =
      r.strange_condition_first_index ? json(*r.strange_condition_first_index) : json("NEVER");
  out["strange_condition_last_violation"] = r.strange_condition_last_violation
                                                ? json(*r.strange_condition_last_violation)
                                                : json(nullptr);
  return out;
}

void dissipativity_verdict(Session& s, const Constants& c, const std::string& prefix) {
  Verdict v{prefix + "dissipativity", c.diss.dissipative, Severity::kWarning, "", nullptr};
  std::ostringstream d;
  if (c.diss.dissipative) {
    d << "alpha_hat=" << num(c.diss.alpha_hat) << " beta_hat=" << num(c.diss.beta_hat);
  } else {
    d << "NOT_DISSIPATIVE (" << c.diss.violations << " violations)";
  }
  d << " over " << c.diss.probes << " probes";
  v.detail = d.str();
  v.value = {{"alpha_hat", finite_or_null(c.diss.alpha_hat)},
             {"beta_hat", finite_or_null(c.diss.beta_hat)},
             {"probes", c.diss.probes}};
  s.add(v);
}

// Adds the schedule verdicts; returns true when the validator rejects.
bool schedule_verdicts(Session& s, const ScheduleReport& r, const std::string& prefix) {
  s.add({prefix + "schedule.rm_divergent", r.rm_divergent, Severity::kError,
         r.rm_divergent ? "sum of step sizes diverges" : "RM divergence condition fails",
         r.rm_divergent});
  s.add({prefix + "schedule.rm_square_summable", r.rm_square_summable, Severity::kWarning,
         r.rm_square_summable ? "sum of squared step sizes converges"
                              : "not square-summable",
         r.rm_square_summable});
  const bool eventually = r.strange_condition_first_index.has_value();
  std::string detail = eventually
                           ? "holds from k0=" + std::to_string(*r.strange_condition_first_index)
                           : "NEVER (violated at k=" +
                                 std::to_string(r.strange_condition_last_violation.value_or(0)) +
                                 ")";
  detail += " with P=" + num(r.P_used) + ", checked to k=" + std::to_string(r.checked_up_to);
  s.add({prefix + "schedule.step_size_condition", eventually, Severity::kWarning, detail,
         eventually ? json(*r.strange_condition_first_index) : json("NEVER")});
  return !r.rm_divergent;
}

// ---------------------------------------------------------------------------
// Checkpoint metrics

struct Reference {
  bool available = false;
  Matrix samples;
};

Reference make_reference(const ExperimentConfig& cfg) {
  Reference ref;
  if (cfg.metric.method == "none" || !cfg.model.has_reference_sampler()) return ref;
  ref.samples = cfg.model.sample_reference(cfg.metric.reference_samples,
                                           StreamKey{cfg.seed, kReferenceReplica, Substream::kMetric});
  ref.available = true;
  return ref;
}

std::optional<W2Report> checkpoint_w2(const ExperimentConfig& cfg, const Matrix& samples,
                                      const Reference& ref) {
  const std::string& method = cfg.metric.method;
  const double p = cfg.metric.order;
  if (method == "none") return std::nullopt;
  if (method == "gaussian") {
    const auto& moments = cfg.model.reference_moments();
    if (!moments || samples.rows() < 2) return std::nullopt;
    W2Report r;
    r.method = W2Method::kGaussianClosedForm;
    r.n_used = samples.rows();
    try {
      const Ensemble e(samples);
      r.value = w2_gaussian(e.mean(), e.covariance(), moments->mean, moments->covariance);
    } catch (const std::invalid_argument&) {
      r.value = std::nan("");
    }
    return r;
  }
  if (!ref.available) return std::nullopt;
  if (method == "assignment") {
    const Eigen::Index n = samples.rows();
    return w2_assignment_report(samples, ref.samples.topRows(n), cfg.metric.assignment_cap, p);
  }
  if (method == "quantile_1d" || (method == "auto" && samples.cols() == 1)) {
    return w2_1d_report(samples, ref.samples, p);
  }
  return sliced_w2_report(samples, ref.samples, cfg.metric.projections,
                          StreamKey{cfg.seed, kProjectionReplica, Substream::kMetric}, p);
}

std::vector<long> checkpoint_plan(const RunSpec& run) {
  std::vector<long> ks = run.checkpoints;
  long every = run.checkpoint_every;
  if (every == 0 && ks.empty()) every = std::max(1L, run.iterations / 10);
  if (every > 0) {
    for (long k = 0; k <= run.iterations; k += every) ks.push_back(k);
  }
  ks.push_back(run.iterations);
  std::sort(ks.begin(), ks.end());
  ks.erase(std::unique(ks.begin(), ks.end()), ks.end());
  return ks;
}

void write_records(Session& s, const EnsembleResult& ens, const Vector& x0,
                   const std::string& prefix) {
  for (const auto& t : ens.trajectories) {
    std::vector<std::string> rows;
    rows.reserve(t.records.size());
    Vector x = x0;
    for (const auto& r : t.records) {
      rows.push_back(std::to_string(r.k) + "," + csv_num(r.gamma) + "," + std::to_string(r.grad_calls) +
                     "," + csv_num(x.norm()) + "," + csv_num(r.drift.norm()) + "," +
                     csv_num(r.noise_U.norm()) + "," + csv_num(r.bias_b.norm()));
      x = r.x_next;
    }
    s.write_csv(prefix + "records/" + std::to_string(t.replica_id) + ".csv",
                "k,gamma,grad_calls,norm_x,norm_v,norm_U,norm_b", rows);
  }
}

json failure_json(const ReplicaFailure& f) {
  return {{"kind", lrm::to_string(f.kind)},
          {"replica", f.replica},
          {"iteration", f.iteration},
          {"last_state", vec_json(f.last_state)},
          {"detail", f.detail}};
}

// One scheme's full sampling run.
struct SchemeOutcome {
  Scheme scheme = Scheme::kSgld;
  Constants constants;
  ScheduleReport report;
  bool rejected = false;
  EnsembleResult ensemble;
  std::vector<long> ks;
  std::vector<std::optional<W2Report>> w2;
  std::vector<double> mean_sq;
  std::optional<BiasFit> bias;
  std::optional<MomentTrack> moments;
  long grad_calls_per_replica = 0;
};

SchemeOutcome run_scheme(Session& s, Scheme scheme, const Reference& ref,
                         const std::string& prefix) {
  const ExperimentConfig& cfg = s.cfg;
  SchemeOutcome out;
  out.scheme = scheme;
  const SchemeConfig sc = cfg.scheme_config(scheme);
  validate_config(sc);

  out.constants = estimate_constants(s, sc, false, false);
  dissipativity_verdict(s, out.constants, prefix);
  if (out.constants.pilot_failure) {
    s.add({prefix + "pilot", false, Severity::kWarning,
           std::string("pilot run failed: ") + out.constants.pilot_failure->detail +
               "; C_b taken as 0",
           failure_json(*out.constants.pilot_failure)});
  }
  out.report = validate(sc.schedule, out.constants.P);
  out.rejected = schedule_verdicts(s, out.report, prefix);
  if (out.rejected && !s.opts().force) return out;

  EnsembleOptions eo;
  eo.replicas = cfg.run.replicas;
  eo.iterations = cfg.run.iterations;
  eo.jobs = s.opts().jobs;
  eo.run.checkpoints = checkpoint_plan(cfg.run);
  eo.run.keep_records = s.opts().records;
  eo.run.collect_bias = true;
  eo.run.bias_every = std::max(1L, cfg.run.iterations / 200);
  s.log("[" + to_string(scheme) + "] " + std::to_string(eo.replicas) + " replicas × " +
        std::to_string(eo.iterations) + " iterations");
  out.ensemble = run_ensemble(sc, base_stream(cfg), eo);
  if (!out.ensemble.ok()) return out;

  out.ks = out.ensemble.checkpoint_ks();
  for (std::size_t i = 0; i < out.ks.size(); ++i) {
    const Matrix samples = out.ensemble.checkpoint_matrix(i);
    out.mean_sq.push_back(samples.rowwise().squaredNorm().mean());
    out.w2.push_back(samples.rows() >= 2 ? checkpoint_w2(cfg, samples, ref) : std::nullopt);
  }
  out.grad_calls_per_replica = out.ensemble.trajectories.front().total_grad_calls;
  if (cfg.run.iterations > 0) out.bias = bias_scaling_fit(out.ensemble.trajectories);
  if (out.ks.size() >= 2) out.moments = moment_track(out.ks, out.mean_sq);
  return out;
}

std::string metric_row(const SchemeOutcome& o, const StepSchedule& schedule, std::size_t i) {
  const auto& w = o.w2[i];
  return std::to_string(o.ks[i]) + "," + csv_num(schedule.tau(o.ks[i])) + "," +
         (w ? w->method_name() : std::string("none")) + "," + (w ? csv_num(w->value) : std::string("")) +
         "," + csv_num(o.mean_sq[i]);
}

void outcome_verdicts(Session& s, const SchemeOutcome& o, const std::string& prefix) {
  if (o.moments) {
    s.add({prefix + "moments.stabilized", o.moments->stabilized, Severity::kWarning,
           "second-half max " + num(o.moments->second_half_max) + " vs first-half max " +
               num(o.moments->first_half_max),
           o.moments->stabilized});
  }
  if (o.bias) {
    s.add({prefix + "bias.c_hat", true, Severity::kInfo,
           "c_hat=" + num(o.bias->c_hat) + " trend_slope=" + num(o.bias->trend_slope) +
               " (se " + num(o.bias->slope_stderr) + ")",
           finite_or_null(o.bias->c_hat)});
  }
}

json outcome_json(const SchemeOutcome& o, const StepSchedule& schedule) {
  json out = {{"scheme", to_string(o.scheme)},
              {"constants", constants_json(o.constants)},
              {"schedule_report", report_json(o.report)},
              {"trajectories", o.ensemble.trajectories.size()},
              {"grad_calls_per_replica", o.grad_calls_per_replica},
              {"total_grad_calls", o.ensemble.ok() ? o.ensemble.total_grad_calls() : 0}};
  if (o.bias) {
    out["bias"] = {{"c_hat", finite_or_null(o.bias->c_hat)},
                   {"trend_slope", finite_or_null(o.bias->trend_slope)},
                   {"slope_stderr", finite_or_null(o.bias->slope_stderr)}};
  }
  if (!o.ks.empty()) {
    const auto& w = o.w2.back();
    out["final"] = {{"k", o.ks.back()},
                    {"tau", schedule.tau(o.ks.back())},
                    {"w2_method", w ? w->method_name() : "none"},
                    {"w2_value", w ? finite_or_null(w->value) : json(nullptr)},
                    {"w2_order", w ? json(w->order) : json(nullptr)},
                    {"mean_sq_norm", o.mean_sq.back()}};
  }
  if (o.ensemble.failure) out["failure"] = failure_json(*o.ensemble.failure);
  return out;
}

template <typename F>
CommandResult guarded(Session& s, F body) {
  if (!s.load()) return s.config_error_result();
  try {
    return body();
  } catch (const ConfigError& e) {
    return s.config_failure(e.what());
  } catch (const SamplerFailure& e) {
    s.manifest["failure"] = {{"kind", lrm::to_string(e.kind())},
                             {"iteration", e.iteration()},
                             {"last_state", vec_json(e.last_state())},
                             {"detail", e.what()}};
    return s.finish(kExitSamplerFailure, lrm::to_string(e.kind()));
  }
}

// Schedule long enough to cover the last WAPT anchor plus the horizon.
long wapt_length(const ExperimentConfig& cfg) {
  const long last = cfg.wapt.anchors.back();
  const StepSchedule probe = cfg.build_schedule(last + 1);
  const double end = probe.tau(last) + cfg.wapt.horizon;
  double t = probe.tau(last);
  long k = last;
  while (t <= end) {
    ++k;
    t += probe.formula(k);
    if (k > 100'000'000L) {
      throw ConfigError("wapt.horizon", "horizon needs more than 1e8 iterations of the schedule");
    }
  }
  return std::max(k + 1, probe.max_k());
}

}  // namespace

// ---------------------------------------------------------------------------

std::string make_run_id(const std::string& command, const json& snapshot, std::uint64_t seed) {
  const std::string text = command + "\n" + snapshot.dump() + "\n" + std::to_string(seed);
  std::uint64_t h = 1469598103934665603ull;  // FNV-1a
  for (unsigned char c : text) {
    h ^= c;
    h *= 1099511628211ull;
  }
  char buf[32];
  std::snprintf(buf, sizeof buf, "%s-%016llx", command.c_str(), static_cast<unsigned long long>(h));
  return buf;
}

std::string resolve_out_root(const std::optional<std::string>& explicit_dir) {
  if (explicit_dir && !explicit_dir->empty()) return *explicit_dir;
  if (const char* env = std::getenv("LRM_OUT_DIR"); env && *env) return env;
  return "runs";
}

CommandResult cli_run(const CliOptions& options) {
  Session s("run", options);
  return guarded(s, [&]() {
    const ExperimentConfig& cfg = s.cfg;
    if (cfg.schemes.size() != 1) {
      throw ConfigError("schemes", "run takes exactly one scheme; use compare for several");
    }
    if (cfg.metric.method == "assignment" && cfg.run.replicas > cfg.metric.assignment_cap) {
      throw ConfigError("metric.method", "assignment needs run.replicas ≤ metric.assignment_cap");
    }
    const Reference ref = make_reference(cfg);
    const StepSchedule schedule = cfg.build_schedule();
    SchemeOutcome o = run_scheme(s, cfg.schemes[0], ref, "");
    s.manifest["constants"] = constants_json(o.constants);
    s.manifest["schedule_report"] = report_json(o.report);
    if (o.rejected && !options.force) return s.finish(kExitValidatorRejected, "rejected");
    if (!o.ensemble.ok()) {
      s.manifest["failure"] = failure_json(*o.ensemble.failure);
      s.manifest["trajectories"] = o.ensemble.trajectories.size() - o.ensemble.failed_replicas;
      s.log("failure: " + o.ensemble.failure->detail + " at iteration " +
            std::to_string(o.ensemble.failure->iteration));
      return s.finish(kExitSamplerFailure, lrm::to_string(o.ensemble.failure->kind));
    }
    std::vector<std::string> rows;
    for (std::size_t i = 0; i < o.ks.size(); ++i) rows.push_back(metric_row(o, schedule, i));
    s.write_csv("metrics.csv", "k,tau,w2_method,w2_value,mean_sq_norm", rows);
    if (options.records) write_records(s, o.ensemble, cfg.run.x0, "");
    outcome_verdicts(s, o, "");
    s.manifest["trajectories"] = o.ensemble.trajectories.size();
    s.manifest["result"] = outcome_json(o, schedule);
    return s.finish(s.error_failed() && !options.force ? kExitCheckFailed : kExitOk, "ok");
  });
}

CommandResult cli_compare(const CliOptions& options) {
  Session s("compare", options);
  return guarded(s, [&]() {
    const ExperimentConfig& cfg = s.cfg;
    if (cfg.schemes.size() < 2) throw ConfigError("schemes", "compare needs at least two schemes");
    if (cfg.metric.method == "assignment" && cfg.run.replicas > cfg.metric.assignment_cap) {
      throw ConfigError("metric.method", "assignment needs run.replicas ≤ metric.assignment_cap");
    }
    for (Scheme sc : cfg.schemes) validate_config(cfg.scheme_config(sc));
    const Reference ref = make_reference(cfg);
    const StepSchedule schedule = cfg.build_schedule();

    std::vector<SchemeOutcome> outcomes;
    bool rejected = false;
    for (Scheme sc : cfg.schemes) {
      outcomes.push_back(run_scheme(s, sc, ref, to_string(sc) + "."));
      rejected = rejected || outcomes.back().rejected;
      if (outcomes.back().rejected && !options.force) break;
    }
    json per = json::array();
    for (const auto& o : outcomes) per.push_back(outcome_json(o, schedule));
    s.manifest["schemes"] = per;
    s.manifest["constants"] = constants_json(outcomes.front().constants);
    s.manifest["schedule_report"] = report_json(outcomes.front().report);
    if (rejected && !options.force) return s.finish(kExitValidatorRejected, "rejected");
    for (const auto& o : outcomes) {
      if (!o.ensemble.ok()) {
        s.manifest["failure"] = failure_json(*o.ensemble.failure);
        s.manifest["failure"]["scheme"] = to_string(o.scheme);
        return s.finish(kExitSamplerFailure, lrm::to_string(o.ensemble.failure->kind));
      }
    }

    std::vector<std::string> rows, summary;
    for (const auto& o : outcomes) {
      for (std::size_t i = 0; i < o.ks.size(); ++i) {
        rows.push_back(to_string(o.scheme) + "," + metric_row(o, schedule, i));
      }
      const auto& w = o.w2.back();
      summary.push_back(to_string(o.scheme) + "," + (w ? csv_num(w->value) : std::string("")) + "," +
                        std::to_string(o.grad_calls_per_replica) + "," +
                        std::to_string(o.ensemble.total_grad_calls()) + "," +
                        (o.bias ? csv_num(o.bias->c_hat) : std::string("")) + "," +
                        (o.bias ? csv_num(o.bias->trend_slope) : std::string("")) + "," +
                        csv_num(o.mean_sq.back()));
      outcome_verdicts(s, o, to_string(o.scheme) + ".");
      if (o.scheme == Scheme::kSgld && o.bias) {
        s.add({"sgld.bias_zero", o.bias->c_hat == 0.0, Severity::kError,
               "SGLD bias_c_hat=" + num(o.bias->c_hat), o.bias->c_hat});
      }
      if (cfg.model.reference_moments() && cfg.run.replicas >= 2) {
        // Final ensemble mean within 3 standard errors of the target mean.
        const Ensemble e(o.ensemble.final_matrix());
        const Vector se = (e.covariance().diagonal() / static_cast<double>(e.size())).cwiseSqrt();
        const Vector dev = (e.mean() - cfg.model.reference_moments()->mean).cwiseAbs();
        const bool ok = (dev.array() <= 3.0 * se.array() + 1e-300).all();
        s.add({to_string(o.scheme) + ".final_mean", ok, Severity::kWarning,
               "max |mean − target| / se = " + num((dev.array() / se.array()).maxCoeff()),
               vec_json(e.mean())});
      }
    }
    s.write_csv("metrics.csv", "scheme,k,tau,w2_method,w2_value,mean_sq_norm", rows);
    s.write_csv("summary.csv",
                "scheme,final_w2,grad_calls,total_grad_calls,bias_c_hat,bias_trend_slope,final_mean_sq_norm",
                summary);
    if (options.records) {
      for (const auto& o : outcomes) write_records(s, o.ensemble, cfg.run.x0, to_string(o.scheme) + "/");
    }
    return s.finish(s.error_failed() && !options.force ? kExitCheckFailed : kExitOk, "ok");
  });
}

CommandResult cli_wapt(const CliOptions& options) {
  Session s("wapt", options);
  return guarded(s, [&]() {
    ExperimentConfig& cfg = s.cfg;
    if (cfg.schemes.size() != 1) throw ConfigError("schemes", "wapt takes exactly one scheme");
    if (cfg.wapt.sanity) {
      // v = 0, σ = I: the coupling is exact and D must vanish.
      cfg.model = build_flat(cfg.model.dim());
      cfg.noise = NoiseModel::none();
      cfg.mirror.reset();
      cfg.diffusion_matrix.reset();
      if (cfg.schemes[0] == Scheme::kMl || cfg.schemes[0] == Scheme::kPla) cfg.schemes[0] = Scheme::kSgld;
    }
    const long length = wapt_length(cfg);
    if (cfg.schedule.max_k && *cfg.schedule.max_k < length) {
      throw ConfigError("schedule.max_k", "too short for the last anchor plus the horizon (needs " +
                                              std::to_string(length) + ")");
    }
    SchemeConfig sc = cfg.scheme_config(cfg.schemes[0], length);
    validate_config(sc);
    const Constants constants = estimate_constants(s, sc, false, false);
    const ScheduleReport report = validate(sc.schedule, constants.P);
    s.manifest["constants"] = constants_json(constants);
    s.manifest["schedule_report"] = report_json(report);
    const bool rejected = schedule_verdicts(s, report, "");
    if (rejected && !options.force) return s.finish(kExitValidatorRejected, "rejected");

    WaptOptions wo;
    wo.anchors = cfg.wapt.anchors;
    wo.horizon_T = cfg.wapt.horizon;
    wo.replicas = cfg.wapt.replicas;
    wo.substeps = cfg.wapt.substeps;
    wo.decomposition = cfg.wapt.decomposition;
    wo.trend_tolerance = cfg.wapt.trend_tolerance;
    wo.jobs = options.jobs;
    s.log("[wapt] " + std::to_string(wo.anchors.size()) + " anchors, " +
          std::to_string(wo.replicas) + " replicas, m=" + std::to_string(wo.substeps));
    const WaptResult res = wapt_deviation(sc, FlowField::for_config(sc), wo, base_stream(cfg));

    std::vector<std::string> rows, decomposition;
    json anchors = json::array();
    std::vector<double> D;
    long violations = 0;
    for (const auto& a : res.anchors) {
      for (std::size_t j = 0; j < a.offsets.size(); ++j) {
        rows.push_back(std::to_string(a.anchor_k) + "," + csv_num(a.tau) + "," + csv_num(a.offsets[j]) +
                       "," + csv_num(a.mean_sq_dev[j]) + "," + std::to_string(res.replicas));
        if (wo.decomposition) {
          decomposition.push_back(std::to_string(a.anchor_k) + "," + csv_num(a.offsets[j]) + "," +
                                  csv_num(a.mean_sq_dev[j]) + "," + csv_num(a.mean_picard_flow[j]) + "," +
                                  csv_num(a.mean_lrm_picard[j]));
        }
      }
      D.push_back(a.D);
      violations += a.decomposition_violations;
      anchors.push_back({{"anchor_k", a.anchor_k},
                         {"tau", a.tau},
                         {"D", a.D},
                         {"grid_points", a.offsets.size()},
                         {"decomposition_violations", a.decomposition_violations}});
    }
    s.write_csv("wapt.csv", "anchor_k,tau,offset_s,mean_sq_dev,replicas", rows);
    if (wo.decomposition) {
      s.write_csv("wapt_decomposition.csv", "anchor_k,offset_s,lrm_flow,picard_flow,lrm_picard",
                  decomposition);
    }
    s.manifest["wapt"] = {{"anchors", anchors},
                          {"monotone_trend", res.monotone_trend},
                          {"first_last_ratio", finite_or_null(res.first_last_ratio)},
                          {"replicas", res.replicas}};

    std::string series;
    for (double d : D) series += (series.empty() ? "" : ", ") + num(d);
    s.add({"wapt.monotone_trend", res.monotone_trend, Severity::kError,
           "D = [" + series + "], tolerance ×" + num(wo.trend_tolerance), res.monotone_trend});
    if (cfg.wapt.min_decay_ratio) {
      const bool ok = res.first_last_ratio >= *cfg.wapt.min_decay_ratio;
      s.add({"wapt.decay_ratio", ok, Severity::kError,
             "D(first)/D(last) = " + num(res.first_last_ratio) + " (need ≥ " +
                 num(*cfg.wapt.min_decay_ratio) + ")",
             finite_or_null(res.first_last_ratio)});
    }
    if (wo.decomposition) {
      s.add({"wapt.decomposition_inequality", violations == 0, Severity::kError,
             std::to_string(violations) + " path-wise violations", violations});
    }
    if (cfg.wapt.sanity) {
      const bool zero = std::all_of(D.begin(), D.end(), [](double d) { return d == 0.0; });
      s.add({"wapt.sanity_zero", zero, Severity::kError, "D ≡ 0 under v = 0, σ = I, m = 1", zero});
    }
    return s.finish(s.error_failed() ? kExitCheckFailed : kExitOk, "ok");
  });
}

CommandResult cli_validate(const CliOptions& options) {
  Session s("validate", options);
  return guarded(s, [&]() {
    const ExperimentConfig& cfg = s.cfg;
    const Scheme scheme = cfg.schemes.front();
    const SchemeConfig sc = cfg.scheme_config(scheme);
    validate_config(sc);

    const GradientCheck gc = gradient_check(cfg.model, cfg.validate.gradient_probes,
                                            estimator_stream(cfg, 2));
    s.add({"gradient_consistency", gc.pass, Severity::kError,
           "max relative error " + num(gc.max_relative_error) + " over " +
               std::to_string(gc.probes) + " probes",
           gc.max_relative_error});

    const Constants c = estimate_constants(s, sc, true, true);
    std::string ldetail = "L_hat=" + num(c.L_hat);
    if (c.L_model) ldetail += " (model L=" + num(*c.L_model) + ")";
    const bool l_ok = !c.L_model || c.L_hat <= *c.L_model * (1.0 + 1e-3) + 1e-9;
    s.add({"lipschitz", l_ok, Severity::kWarning, ldetail, c.L_hat});
    dissipativity_verdict(s, c, "");

    if (cfg.mirror) {
      const MirrorDiagnostics md = check_mirror(*cfg.mirror, 64,
                                                default_radius_grid(cfg.model).back(),
                                                estimator_stream(cfg, 3));
      s.add({"mirror.hessian_spd", md.spd_everywhere, Severity::kError,
             "min eigenvalue " + num(md.min_hessian_eigenvalue) + ", max ‖σ‖_HS " +
                 num(md.max_sigma_hs_norm),
             md.min_hessian_eigenvalue});
    }

    const ScheduleReport report = validate(sc.schedule, c.P);
    schedule_verdicts(s, report, "");

    if (c.pilot_failure) {
      s.add({"pilot", false, Severity::kWarning,
             std::string("pilot run failed: ") + c.pilot_failure->detail,
             failure_json(*c.pilot_failure)});
    } else {
      std::vector<Vector> noise;
      for (const auto& t : c.pilot.trajectories) {
        for (const auto& r : t.records) noise.push_back(r.noise_U);
      }
      const MdsCheck mds = mds_check(noise, cfg.validate.mds_window);
      s.add({"noise.martingale_difference", mds.pass, Severity::kWarning,
             "max window mean " + num(mds.max_abs_running_mean) + " vs threshold " +
                 num(mds.threshold) + " over " + std::to_string(mds.windows) + " windows",
             mds.max_abs_running_mean});
      if (c.pilot_fit) {
        s.add({"bias.pilot_c_hat", true, Severity::kInfo,
               "c_hat=" + num(c.pilot_fit->c_hat) + " trend_slope=" + num(c.pilot_fit->trend_slope),
               finite_or_null(c.pilot_fit->c_hat)});
      }
    }
    s.manifest["constants"] = constants_json(c);
    s.manifest["schedule_report"] = report_json(report);
    return s.finish(s.error_failed() ? kExitValidatorRejected : kExitOk, "ok");
  });
}

}  // namespace lrm::harness
