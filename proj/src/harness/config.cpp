#include "lrm/harness/config.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include <yaml-cpp/yaml.h>

#include "lrm/errors.hpp"

namespace lrm::harness {

using nlohmann::json;

namespace {

// ---------------------------------------------------------------------------
// YAML → JSON

json scalar_to_json(const YAML::Node& node) {
  const std::string& text = node.Scalar();
  if (node.Tag() == "!") return text;  // quoted
  if (text.empty() || text == "~" || text == "null" || text == "Null" || text == "NULL") {
    return nullptr;
  }
  if (text == "true" || text == "True" || text == "TRUE") return true;
  if (text == "false" || text == "False" || text == "FALSE") return false;

  const bool has_sign = text[0] == '-' || text[0] == '+';
  const bool digits_only = std::all_of(text.begin() + (has_sign ? 1 : 0), text.end(),
                                       [](char c) { return c >= '0' && c <= '9'; });
  if (digits_only && text.size() > (has_sign ? 1u : 0u)) {
    try {
      if (text[0] == '-') return std::stoll(text);
      return std::stoull(text);
    } catch (const std::out_of_range&) {
      // fall through to floating point
    }
  }
  try {
    std::size_t used = 0;
    const double value = std::stod(text, &used);
    if (used == text.size()) return value;
  } catch (const std::exception&) {
  }
  if (text == ".inf" || text == "+.inf") return INFINITY;
  if (text == "-.inf") return -INFINITY;
  return text;
}

json yaml_to_json(const YAML::Node& node) {
  switch (node.Type()) {
    case YAML::NodeType::Null:
    case YAML::NodeType::Undefined: return nullptr;
    case YAML::NodeType::Scalar: return scalar_to_json(node);
    case YAML::NodeType::Sequence: {
      json out = json::array();
      for (const auto& item : node) out.push_back(yaml_to_json(item));
      return out;
    }
    case YAML::NodeType::Map: {
      json out = json::object();
      for (const auto& kv : node) out[kv.first.as<std::string>()] = yaml_to_json(kv.second);
      return out;
    }
  }
  return nullptr;
}

// ---------------------------------------------------------------------------
// Typed access with key paths

std::string join(const std::string& path, const std::string& key) {
  return path.empty() ? key : path + "." + key;
}

class Section {
 public:
  Section(const json* node, std::string path, std::set<std::string> allowed)
      : node_(node), path_(std::move(path)) {
    if (node_ == nullptr || node_->is_null()) {
      node_ = nullptr;
      return;
    }
    if (!node_->is_object()) throw ConfigError(path_, "expected a mapping");
    for (const auto& [key, value] : node_->items()) {
      if (!allowed.count(key)) throw ConfigError(join(path_, key), "unknown key");
    }
  }

  bool present() const { return node_ != nullptr; }
  bool has(const std::string& key) const {
    return node_ && node_->contains(key) && !(*node_)[key].is_null();
  }
  const json* child(const std::string& key) const { return has(key) ? &(*node_)[key] : nullptr; }
  std::string path(const std::string& key) const { return join(path_, key); }

  double number(const std::string& key, double fallback) const {
    const json* v = child(key);
    if (!v) return fallback;
    if (!v->is_number()) throw ConfigError(path(key), "expected a number");
    const double x = v->get<double>();
    if (!std::isfinite(x)) throw ConfigError(path(key), "must be finite");
    return x;
  }

  long integer(const std::string& key, long fallback) const {
    const json* v = child(key);
    if (!v) return fallback;
    return as_integer(*v, path(key));
  }

  bool boolean(const std::string& key, bool fallback) const {
    const json* v = child(key);
    if (!v) return fallback;
    if (!v->is_boolean()) throw ConfigError(path(key), "expected true or false");
    return v->get<bool>();
  }

  std::string string(const std::string& key, const std::string& fallback) const {
    const json* v = child(key);
    if (!v) return fallback;
    if (!v->is_string()) throw ConfigError(path(key), "expected a string");
    return v->get<std::string>();
  }

  Vector vector(const std::string& key) const { return as_vector(*child(key), path(key)); }
  Matrix matrix(const std::string& key) const { return as_matrix(*child(key), path(key)); }

  std::vector<long> integers(const std::string& key) const {
    const json* v = child(key);
    if (!v) return {};
    if (!v->is_array()) throw ConfigError(path(key), "expected a list of integers");
    std::vector<long> out;
    for (std::size_t i = 0; i < v->size(); ++i) {
      out.push_back(as_integer((*v)[i], path(key) + "[" + std::to_string(i) + "]"));
    }
    return out;
  }

  static long as_integer(const json& v, const std::string& where) {
    if (v.is_number_integer()) return v.get<long>();
    if (v.is_number_float()) {
      const double x = v.get<double>();
      if (std::isfinite(x) && x == std::floor(x) && std::abs(x) < 9e15) {
        return static_cast<long>(x);
      }
    }
    throw ConfigError(where, "expected an integer");
  }

  static Vector as_vector(const json& v, const std::string& where) {
    if (v.is_number()) return Vector::Constant(1, v.get<double>());
    if (!v.is_array() || v.empty()) throw ConfigError(where, "expected a nonempty list of numbers");
    Vector out(static_cast<Eigen::Index>(v.size()));
    for (std::size_t i = 0; i < v.size(); ++i) {
      if (!v[i].is_number()) {
        throw ConfigError(where + "[" + std::to_string(i) + "]", "expected a number");
      }
      out(static_cast<Eigen::Index>(i)) = v[i].get<double>();
    }
    if (!out.allFinite()) throw ConfigError(where, "entries must be finite");
    return out;
  }

  static Matrix as_matrix(const json& v, const std::string& where) {
    if (!v.is_array() || v.empty()) throw ConfigError(where, "expected a list of rows");
    const auto rows = static_cast<Eigen::Index>(v.size());
    Matrix out;
    for (Eigen::Index r = 0; r < rows; ++r) {
      const Vector row = as_vector(v[static_cast<std::size_t>(r)],
                                   where + "[" + std::to_string(r) + "]");
      if (r == 0) out.resize(rows, row.size());
      if (row.size() != out.cols()) throw ConfigError(where, "rows differ in length");
      out.row(r) = row.transpose();
    }
    return out;
  }

 private:
  const json* node_;
  std::string path_;
};

json to_json(const Vector& v) {
  json out = json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) out.push_back(v(i));
  return out;
}

json to_json(const Matrix& m) {
  json out = json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r) out.push_back(to_json(Vector(m.row(r).transpose())));
  return out;
}

// Wraps model-construction errors with the key path.
template <typename F>
auto at_key(const std::string& key, F&& f) {
  try {
    return f();
  } catch (const ConfigError&) {
    throw;
  } catch (const std::invalid_argument& e) {
    throw ConfigError(key, e.what());
  }
}

// ---------------------------------------------------------------------------
// Sections

void parse_target(const Section& root, ExperimentConfig& cfg, json& snap) {
  const Section t(root.child("target"), "target",
                  {"name", "dim", "mean", "precision", "precision_diag", "variance", "weights",
                   "means"});
  const std::string name = t.string("name", "gaussian");
  cfg.target_name = name;
  json out = {{"name", name}};

  auto dim_or = [&](long fallback) {
    const long d = t.integer("dim", fallback);
    if (d < 1 || d > 4096) throw ConfigError(t.path("dim"), "must lie in [1, 4096]");
    return static_cast<int>(d);
  };

  if (name == "gaussian" || name == "gaussian_aniso") {
    Matrix precision;
    if (t.has("precision") + t.has("precision_diag") + t.has("variance") > 1) {
      throw ConfigError("target", "give only one of precision, precision_diag, variance");
    }
    if (t.has("precision")) {
      precision = t.matrix("precision");
    } else if (t.has("precision_diag")) {
      precision = Matrix(t.vector("precision_diag").asDiagonal());
    } else if (t.has("variance")) {
      const double var = t.number("variance", 1.0);
      if (!(var > 0.0)) throw ConfigError(t.path("variance"), "must be positive");
      const long d = t.has("mean") ? t.vector("mean").size() : dim_or(1);
      precision = Matrix::Identity(d, d) / var;
    } else if (name == "gaussian_aniso") {
      precision = Vector((Vector(2) << 4.0, 1.0).finished()).asDiagonal();
    } else {
      const long d = t.has("mean") ? t.vector("mean").size() : dim_or(1);
      precision = Matrix::Identity(d, d);
    }
    if (t.has("dim") && t.integer("dim", 0) != precision.rows()) {
      throw ConfigError(t.path("dim"), "does not match the precision matrix");
    }
    const Vector mean = t.has("mean") ? t.vector("mean") : Vector::Zero(precision.rows());
    if (mean.size() != precision.rows()) {
      throw ConfigError(t.path("mean"), "does not match the precision dimension");
    }
    cfg.model = at_key("target.precision", [&] { return build_gaussian(mean, precision); });
    out["mean"] = to_json(mean);
    out["precision"] = to_json(precision);
  } else if (name == "mixture2") {
    Vector weights = t.has("weights") ? t.vector("weights") : Vector::Constant(2, 0.5);
    std::vector<Vector> means;
    if (t.has("means")) {
      const Matrix m = t.matrix("means");
      for (Eigen::Index r = 0; r < m.rows(); ++r) means.emplace_back(m.row(r).transpose());
    } else {
      means = {(Vector(2) << 2.0, 0.0).finished(), (Vector(2) << -2.0, 0.0).finished()};
    }
    cfg.model = at_key("target", [&] { return build_gaussian_mixture(weights, means); });
    out["weights"] = to_json(weights);
    json mj = json::array();
    for (const auto& m : means) mj.push_back(to_json(m));
    out["means"] = mj;
  } else if (name == "repulsive") {
    cfg.model = build_repulsive(dim_or(1));
    out["dim"] = cfg.model.dim();
  } else if (name == "flat") {
    cfg.model = build_flat(dim_or(1));
    out["dim"] = cfg.model.dim();
  } else {
    std::string names;
    for (const auto& n : target_zoo()) names += (names.empty() ? "" : ", ") + n;
    throw ConfigError(t.path("name"), "unknown target '" + name + "' (known: " + names + ")");
  }
  snap["target"] = out;
}

void parse_schemes(const Section& root, ExperimentConfig& cfg, json& snap) {
  if (root.has("scheme") && root.has("schemes")) {
    throw ConfigError("schemes", "give either scheme or schemes, not both");
  }
  std::vector<std::pair<std::string, std::string>> names;  // (name, key path)
  if (const json* s = root.child("schemes")) {
    if (!s->is_array() || s->empty()) throw ConfigError("schemes", "expected a nonempty list");
    for (std::size_t i = 0; i < s->size(); ++i) {
      const std::string key = "schemes[" + std::to_string(i) + "]";
      if (!(*s)[i].is_string()) throw ConfigError(key, "expected a scheme name");
      names.emplace_back((*s)[i].get<std::string>(), key);
    }
  } else {
    names.emplace_back(root.string("scheme", "sgld"), "scheme");
  }
  json out = json::array();
  for (const auto& [name, key] : names) {
    std::string lower = name;
    std::transform(lower.begin(), lower.end(), lower.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    const auto scheme = parse_scheme(lower);
    if (!scheme) {
      throw ConfigError(key, "unknown scheme '" + name + "' (known: sgld, rmm, ormm, srk, ml, pla)");
    }
    if (std::find(cfg.schemes.begin(), cfg.schemes.end(), *scheme) != cfg.schemes.end()) {
      throw ConfigError(key, "scheme listed twice");
    }
    cfg.schemes.push_back(*scheme);
    out.push_back(to_string(*scheme));
  }
  snap["schemes"] = out;
}

void parse_schedule(const Section& root, ExperimentConfig& cfg, json& snap) {
  const Section s(root.child("schedule"), "schedule", {"kind", "c", "gamma", "p", "max_k"});
  const std::string kind = s.string("kind", "sqrtlog");
  ScheduleSpec& spec = cfg.schedule;
  if (kind == "constant") {
    spec.kind = ScheduleKind::kConstant;
    if (s.has("c") && s.has("gamma")) throw ConfigError("schedule", "give either c or gamma");
    spec.c = s.has("gamma") ? s.number("gamma", 0.1) : s.number("c", 0.1);
  } else if (kind == "poly") {
    spec.kind = ScheduleKind::kPoly;
    spec.c = s.number("c", 1.0);
    spec.p = s.number("p", 1.0);
    if (!(spec.p > 0.0)) throw ConfigError(s.path("p"), "must be positive");
  } else if (kind == "sqrtlog") {
    spec.kind = ScheduleKind::kSqrtLog;
    spec.c = s.number("c", 1.0);
  } else {
    throw ConfigError(s.path("kind"), "unknown schedule '" + kind + "' (known: constant, poly, sqrtlog)");
  }
  if (kind != "poly" && s.has("p")) throw ConfigError(s.path("p"), "only used by poly schedules");
  if (kind != "constant" && s.has("gamma")) {
    throw ConfigError(s.path("gamma"), "only used by constant schedules");
  }
  if (!(spec.c > 0.0)) throw ConfigError(s.path(s.has("gamma") ? "gamma" : "c"), "must be positive");
  if (s.has("max_k")) {
    spec.max_k = s.integer("max_k", 0);
    if (*spec.max_k < 10) throw ConfigError(s.path("max_k"), "must be at least 10");
  }
  json out = {{"kind", kind}, {"c", spec.c}};
  if (spec.kind == ScheduleKind::kPoly) out["p"] = spec.p;
  if (spec.max_k) out["max_k"] = *spec.max_k;
  snap["schedule"] = out;
}

void parse_noise(const Section& root, ExperimentConfig& cfg, json& snap) {
  const Section s(root.child("noise"), "noise", {"kind", "scale", "cap"});
  const std::string kind = s.string("kind", "none");
  const double scale = s.number("scale", kind == "none" ? 0.0 : 1.0);
  const double cap = s.number("cap", 1.0);
  if (kind == "none") {
    if (s.has("scale") || s.has("cap")) throw ConfigError("noise", "kind none takes no parameters");
    cfg.noise = NoiseModel::none();
  } else if (kind == "gaussian") {
    if (!(scale >= 0.0)) throw ConfigError(s.path("scale"), "must be nonnegative");
    cfg.noise = NoiseModel::gaussian(scale);
  } else if (kind == "state_scaled") {
    if (!(scale >= 0.0)) throw ConfigError(s.path("scale"), "must be nonnegative");
    if (!(cap > 0.0)) throw ConfigError(s.path("cap"), "must be positive");
    cfg.noise = NoiseModel::state_scaled(scale, cap);
  } else {
    throw ConfigError(s.path("kind"), "unknown noise '" + kind + "' (known: none, gaussian, state_scaled)");
  }
  json out = {{"kind", kind}};
  if (kind != "none") out["scale"] = scale;
  if (kind == "state_scaled") out["cap"] = cap;
  snap["noise"] = out;
}

void parse_mirror(const Section& root, ExperimentConfig& cfg, json& snap) {
  const Section s(root.child("mirror"), "mirror", {"kind", "A", "A_diag"});
  if (!s.present()) return;
  const std::string kind = s.string("kind", "quadratic");
  if (kind != "quadratic") throw ConfigError(s.path("kind"), "only quadratic mirror maps are configurable");
  Matrix A;
  if (s.has("A") && s.has("A_diag")) throw ConfigError("mirror", "give either A or A_diag");
  if (s.has("A")) {
    A = s.matrix("A");
  } else if (s.has("A_diag")) {
    A = Matrix(s.vector("A_diag").asDiagonal());
  } else {
    A = Matrix::Identity(cfg.model.dim(), cfg.model.dim());
  }
  if (A.rows() != cfg.model.dim()) throw ConfigError("mirror.A", "does not match the target dimension");
  cfg.mirror = at_key("mirror.A", [&] { return MirrorMap::quadratic(A); });
  snap["mirror"] = {{"kind", kind}, {"A", to_json(A)}};
}

void parse_diffusion(const Section& root, ExperimentConfig& cfg, json& snap) {
  const Section s(root.child("diffusion"), "diffusion", {"kind", "matrix", "diag", "allow_general"});
  if (!s.present()) return;
  const std::string kind = s.string("kind", "identity");
  cfg.allow_general_diffusion = s.boolean("allow_general", false);
  json out = {{"kind", kind}, {"allow_general", cfg.allow_general_diffusion}};
  if (kind == "constant") {
    Matrix M;
    if (s.has("matrix")) {
      M = s.matrix("matrix");
    } else if (s.has("diag")) {
      M = Matrix(s.vector("diag").asDiagonal());
    } else {
      throw ConfigError("diffusion.matrix", "constant diffusion needs matrix or diag");
    }
    if (M.rows() != cfg.model.dim() || M.cols() != cfg.model.dim()) {
      throw ConfigError("diffusion.matrix", "must be a d × d matrix");
    }
    cfg.diffusion_matrix = M;
    out["matrix"] = to_json(M);
  } else if (kind != "identity") {
    throw ConfigError(s.path("kind"), "unknown diffusion '" + kind + "' (known: identity, constant)");
  }
  snap["diffusion"] = out;
}

void parse_run(const Section& root, ExperimentConfig& cfg, json& snap) {
  const Section s(root.child("run"), "run",
                  {"iterations", "replicas", "checkpoint_every", "checkpoints", "x0"});
  RunSpec& r = cfg.run;
  r.iterations = s.integer("iterations", 1000);
  if (r.iterations < 0) throw ConfigError(s.path("iterations"), "must be nonnegative");
  const long replicas = s.integer("replicas", 64);
  if (replicas < 1 || replicas > (1L << 22)) throw ConfigError(s.path("replicas"), "must lie in [1, 4194304]");
  r.replicas = static_cast<int>(replicas);
  r.checkpoint_every = s.integer("checkpoint_every", 0);
  if (r.checkpoint_every < 0) throw ConfigError(s.path("checkpoint_every"), "must be nonnegative");
  r.checkpoints = s.integers("checkpoints");
  for (long k : r.checkpoints) {
    if (k < 0 || k > r.iterations) {
      throw ConfigError(s.path("checkpoints"), "entries must lie in [0, iterations]");
    }
  }
  const int dim = cfg.model.dim();
  if (s.has("x0")) {
    r.x0 = s.vector("x0");
    if (r.x0.size() == 1 && dim > 1) r.x0 = Vector::Constant(dim, r.x0(0));
    if (r.x0.size() != dim) throw ConfigError(s.path("x0"), "does not match the target dimension");
  } else {
    r.x0 = Vector::Zero(dim);
  }
  snap["run"] = {{"iterations", r.iterations},       {"replicas", r.replicas},
                 {"checkpoint_every", r.checkpoint_every}, {"checkpoints", r.checkpoints},
                 {"x0", to_json(r.x0)}};
}

void parse_metric(const Section& root, ExperimentConfig& cfg, json& snap) {
  const Section s(root.child("metric"), "metric",
                  {"method", "projections", "reference_samples", "order", "assignment_cap"});
  MetricSpec& m = cfg.metric;
  m.method = s.string("method", "auto");
  static const std::set<std::string> methods{"auto", "sliced", "assignment", "quantile_1d",
                                             "gaussian", "none"};
  if (!methods.count(m.method)) {
    throw ConfigError(s.path("method"),
                      "unknown method (known: auto, sliced, assignment, quantile_1d, gaussian, none)");
  }
  m.projections = static_cast<int>(s.integer("projections", 128));
  if (m.projections < 32) throw ConfigError(s.path("projections"), "must be at least 32");
  m.reference_samples = s.integer("reference_samples", 10000);
  if (m.reference_samples < 2) throw ConfigError(s.path("reference_samples"), "must be at least 2");
  m.order = s.number("order", 2.0);
  if (!(m.order > 1.0 && m.order <= 2.0)) throw ConfigError(s.path("order"), "must lie in (1, 2]");
  m.assignment_cap = s.integer("assignment_cap", 512);
  if (m.assignment_cap < 2) throw ConfigError(s.path("assignment_cap"), "must be at least 2");
  snap["metric"] = {{"method", m.method},
                    {"projections", m.projections},
                    {"reference_samples", m.reference_samples},
                    {"order", m.order},
                    {"assignment_cap", m.assignment_cap}};
}

void parse_wapt(const Section& root, ExperimentConfig& cfg, json& snap) {
  const Section s(root.child("wapt"), "wapt",
                  {"anchors", "horizon", "substeps", "replicas", "sanity", "decomposition",
                   "min_decay_ratio", "trend_tolerance"});
  WaptSpec& w = cfg.wapt;
  w.anchors = s.has("anchors") ? s.integers("anchors") : std::vector<long>{100, 1000, 10000};
  if (w.anchors.empty()) throw ConfigError(s.path("anchors"), "at least one anchor is required");
  for (std::size_t i = 0; i < w.anchors.size(); ++i) {
    if (w.anchors[i] < 0) throw ConfigError(s.path("anchors"), "anchors must be nonnegative");
    if (i > 0 && w.anchors[i] <= w.anchors[i - 1]) {
      throw ConfigError(s.path("anchors"), "anchors must be strictly increasing");
    }
  }
  w.horizon = s.number("horizon", 1.0);
  if (!(w.horizon > 0.0)) throw ConfigError(s.path("horizon"), "must be positive");
  w.sanity = s.boolean("sanity", false);
  w.substeps = static_cast<int>(s.integer("substeps", w.sanity ? 1 : 16));
  if (w.substeps < 1) throw ConfigError(s.path("substeps"), "must be positive");
  if (!w.sanity && w.substeps < 8) {
    throw ConfigError(s.path("substeps"), "the flow oracle needs at least 8 substeps (sanity mode allows 1)");
  }
  const long replicas = s.integer("replicas", 256);
  if (replicas < 1) throw ConfigError(s.path("replicas"), "must be positive");
  w.replicas = static_cast<int>(replicas);
  w.decomposition = s.boolean("decomposition", true);
  if (s.has("min_decay_ratio")) {
    w.min_decay_ratio = s.number("min_decay_ratio", 0.0);
    if (!(*w.min_decay_ratio > 0.0)) throw ConfigError(s.path("min_decay_ratio"), "must be positive");
  }
  w.trend_tolerance = s.number("trend_tolerance", 1.15);
  if (!(w.trend_tolerance >= 1.0)) throw ConfigError(s.path("trend_tolerance"), "must be at least 1");
  json out = {{"anchors", w.anchors},     {"horizon", w.horizon},
              {"substeps", w.substeps},   {"replicas", w.replicas},
              {"sanity", w.sanity},       {"decomposition", w.decomposition},
              {"trend_tolerance", w.trend_tolerance}};
  if (w.min_decay_ratio) out["min_decay_ratio"] = *w.min_decay_ratio;
  snap["wapt"] = out;
}

void parse_misc(const Section& root, ExperimentConfig& cfg, json& snap) {
  const Section pla(root.child("pla"), "pla", {"tol", "max_iter"});
  cfg.pla_tol = pla.number("tol", 1e-10);
  if (!(cfg.pla_tol > 0.0)) throw ConfigError(pla.path("tol"), "must be positive");
  cfg.pla_max_iter = static_cast<int>(pla.integer("max_iter", 200));
  if (cfg.pla_max_iter < 1) throw ConfigError(pla.path("max_iter"), "must be positive");
  snap["pla"] = {{"tol", cfg.pla_tol}, {"max_iter", cfg.pla_max_iter}};

  const Section pilot(root.child("pilot"), "pilot", {"iterations", "replicas"});
  cfg.pilot.iterations = pilot.integer("iterations", 200);
  if (cfg.pilot.iterations < 10) throw ConfigError(pilot.path("iterations"), "must be at least 10");
  cfg.pilot.replicas = static_cast<int>(pilot.integer("replicas", 32));
  if (cfg.pilot.replicas < 2) throw ConfigError(pilot.path("replicas"), "must be at least 2");
  snap["pilot"] = {{"iterations", cfg.pilot.iterations}, {"replicas", cfg.pilot.replicas}};

  const Section val(root.child("validate"), "validate",
                    {"gradient_probes", "lipschitz_pairs", "dissipativity_directions", "mds_window"});
  ValidateSpec& v = cfg.validate;
  v.gradient_probes = static_cast<int>(val.integer("gradient_probes", 32));
  v.lipschitz_pairs = static_cast<int>(val.integer("lipschitz_pairs", 200));
  v.dissipativity_directions = static_cast<int>(val.integer("dissipativity_directions", 64));
  v.mds_window = static_cast<int>(val.integer("mds_window", 50));
  if (v.gradient_probes < 1) throw ConfigError(val.path("gradient_probes"), "must be positive");
  if (v.lipschitz_pairs < 100) throw ConfigError(val.path("lipschitz_pairs"), "must be at least 100");
  if (v.dissipativity_directions < 1) {
    throw ConfigError(val.path("dissipativity_directions"), "must be positive");
  }
  if (v.mds_window < 1) throw ConfigError(val.path("mds_window"), "must be positive");
  snap["validate"] = {{"gradient_probes", v.gradient_probes},
                      {"lipschitz_pairs", v.lipschitz_pairs},
                      {"dissipativity_directions", v.dissipativity_directions},
                      {"mds_window", v.mds_window}};

  if (const json* seed = root.child("seed")) {
    if (seed->is_number_unsigned()) {
      cfg.seed = seed->get<std::uint64_t>();
    } else if (seed->is_number_integer() && seed->get<long long>() >= 0) {
      cfg.seed = static_cast<std::uint64_t>(seed->get<long long>());
    } else {
      throw ConfigError("seed", "expected a nonnegative 64-bit integer");
    }
  }
  snap["seed"] = cfg.seed;
}

json parse_scalar_text(const std::string& text) {
  try {
    return yaml_to_json(YAML::Load(text));
  } catch (const YAML::Exception& e) {
    throw ConfigError("", "cannot parse override value '" + text + "': " + e.what());
  }
}

}  // namespace

std::vector<std::string> target_zoo() {
  return {"gaussian", "gaussian_aniso", "mixture2", "repulsive", "flat"};
}

json read_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("", "cannot open config file '" + path + "'");
  std::stringstream buffer;
  buffer << in.rdbuf();
  const std::string text = buffer.str();
  const bool is_json = path.size() >= 5 && path.substr(path.size() - 5) == ".json";
  try {
    if (is_json) return json::parse(text);
    const json tree = yaml_to_json(YAML::Load(text));
    return tree.is_null() ? json::object() : tree;
  } catch (const json::exception& e) {
    throw ConfigError("", "invalid JSON in '" + path + "': " + e.what());
  } catch (const YAML::Exception& e) {
    throw ConfigError("", "invalid YAML in '" + path + "': " + e.what());
  }
}

void apply_overrides(json& tree, const std::vector<std::string>& overrides) {
  if (!tree.is_object()) throw ConfigError("", "configuration must be a mapping");
  for (const auto& item : overrides) {
    const auto eq = item.find('=');
    if (eq == std::string::npos || eq == 0) {
      throw ConfigError("", "override '" + item + "' is not of the form key=value");
    }
    const std::string key = item.substr(0, eq);
    json* node = &tree;
    std::size_t start = 0;
    for (;;) {
      const auto dot = key.find('.', start);
      const std::string part = key.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
      if (part.empty()) throw ConfigError(key, "empty key component in override");
      if (!node->is_object()) throw ConfigError(key, "override path crosses a non-mapping value");
      if (dot == std::string::npos) {
        (*node)[part] = parse_scalar_text(item.substr(eq + 1));
        break;
      }
      json& next = (*node)[part];
      if (next.is_null()) next = json::object();
      node = &next;
      start = dot + 1;
    }
  }
}

ExperimentConfig parse_config(const json& tree) {
  if (!tree.is_object()) throw ConfigError("", "configuration must be a mapping");
  const Section root(&tree, "",
                     {"scheme", "schemes", "target", "mirror", "diffusion", "noise", "schedule",
                      "run", "metric", "wapt", "pla", "pilot", "validate", "seed"});
  ExperimentConfig cfg;
  json snap = json::object();
  parse_schemes(root, cfg, snap);
  parse_target(root, cfg, snap);
  parse_mirror(root, cfg, snap);
  parse_diffusion(root, cfg, snap);
  parse_noise(root, cfg, snap);
  parse_schedule(root, cfg, snap);
  parse_run(root, cfg, snap);
  parse_metric(root, cfg, snap);
  parse_wapt(root, cfg, snap);
  parse_misc(root, cfg, snap);
  for (Scheme s : cfg.schemes) {
    if (s == Scheme::kMl && !cfg.mirror) throw ConfigError("mirror", "scheme ml requires a mirror map");
  }
  cfg.snapshot = std::move(snap);
  return cfg;
}

ExperimentConfig load_config(const std::string& path, const std::vector<std::string>& overrides) {
  json tree = read_config_file(path);
  apply_overrides(tree, overrides);
  return parse_config(tree);
}

StepSchedule ExperimentConfig::build_schedule(long min_length) const {
  const long length = schedule.max_k.value_or(
      std::max({run.iterations, pilot.iterations, min_length, 10L}));
  switch (schedule.kind) {
    case ScheduleKind::kConstant: return StepSchedule::constant(schedule.c, length);
    case ScheduleKind::kPoly: return StepSchedule::poly(schedule.c, schedule.p, length);
    case ScheduleKind::kSqrtLog: return StepSchedule::sqrt_log(schedule.c, length);
  }
  throw ConfigError("schedule.kind", "unknown schedule");
}

SchemeConfig ExperimentConfig::scheme_config(Scheme scheme, long min_length) const {
  SchemeConfig out(scheme, model, build_schedule(min_length), run.x0);
  out.mirror = mirror;
  if (diffusion_matrix) out.diffusion = DiffusionCoeff::constant(*diffusion_matrix);
  out.allow_general_diffusion = allow_general_diffusion;
  out.noise = noise;
  out.pla_tol = pla_tol;
  out.pla_max_iter = pla_max_iter;
  return out;
}

}  // namespace lrm::harness
