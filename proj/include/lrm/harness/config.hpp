#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "lrm/model.hpp"
#include "lrm/noise.hpp"
#include "lrm/sampler.hpp"
#include "lrm/schedule.hpp"

namespace lrm::harness {

struct ScheduleSpec {
  ScheduleKind kind = ScheduleKind::kSqrtLog;
  double c = 1.0;
  double p = 1.0;
  std::optional<long> max_k;
};

struct RunSpec {
  long iterations = 1000;
  int replicas = 64;
  long checkpoint_every = 0;
  std::vector<long> checkpoints;
  Vector x0;
};

struct MetricSpec {
  std::string method = "auto";  // auto | sliced | assignment | quantile_1d | gaussian | none
  int projections = 128;
  long reference_samples = 10000;
  double order = 2.0;
  long assignment_cap = 512;
};

struct WaptSpec {
  std::vector<long> anchors;
  double horizon = 1.0;
  int substeps = 16;
  int replicas = 256;
  bool sanity = false;
  bool decomposition = true;
  std::optional<double> min_decay_ratio;
  double trend_tolerance = 1.15;
};

struct PilotSpec {
  long iterations = 200;
  int replicas = 32;
};

struct ValidateSpec {
  int gradient_probes = 32;
  int lipschitz_pairs = 200;
  int dissipativity_directions = 64;
  int mds_window = 50;
};

// A parsed experiment with every default filled in. `snapshot` is the
// normalised configuration recorded in the manifest.
struct ExperimentConfig {
  nlohmann::json snapshot;
  std::vector<Scheme> schemes;
  std::string target_name;
  PotentialModel model = build_flat(1);
  std::optional<MirrorMap> mirror;
  std::optional<Matrix> diffusion_matrix;
  bool allow_general_diffusion = false;
  NoiseModel noise;
  ScheduleSpec schedule;
  RunSpec run;
  MetricSpec metric;
  WaptSpec wapt;
  PilotSpec pilot;
  ValidateSpec validate;
  double pla_tol = 1e-10;
  int pla_max_iter = 200;
  std::uint64_t seed = 0;

  // Schedule of length max_k (explicit, or large enough for every stage
  // that uses it).
  StepSchedule build_schedule(long min_length = 0) const;
  SchemeConfig scheme_config(Scheme scheme, long min_length = 0) const;
};

// Reads YAML (or JSON, by extension .json) into a JSON tree.
nlohmann::json read_config_file(const std::string& path);

// Applies `key.path=value` overrides; the value is parsed as a YAML scalar
// or flow sequence. Throws ConfigError on malformed input.
void apply_overrides(nlohmann::json& tree, const std::vector<std::string>& overrides);

// Validates and normalises a tree. Throws ConfigError with the offending key
// path.
ExperimentConfig parse_config(const nlohmann::json& tree);

ExperimentConfig load_config(const std::string& path,
                             const std::vector<std::string>& overrides = {});

// Names accepted under target.name.
std::vector<std::string> target_zoo();

}  // namespace lrm::harness
