#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

namespace lrm::harness {

enum ExitCode : int {
  kExitOk = 0,
  kExitConfigError = 1,
  kExitValidatorRejected = 2,
  kExitSamplerFailure = 3,
  kExitCheckFailed = 4,
};

struct CliOptions {
  std::string config_path;
  std::vector<std::string> overrides;  // key.path=value
  std::optional<std::uint64_t> seed;   // replaces the config's seed
  int jobs = 1;
  std::optional<std::string> out_dir;  // default: $LRM_OUT_DIR, then "runs"
  bool force = false;                  // run even when the schedule validator rejects
  bool records = false;                // write records/<replica>.csv
  std::ostream* log = nullptr;         // verdict table and progress; null for silence
};

struct CommandResult {
  int exit_code = kExitOk;
  nlohmann::json manifest;  // empty on configuration errors
  std::string run_dir;      // empty on configuration errors
  std::string error;        // configuration error message, if any
};

// Constant estimation → schedule validation → replica runs → checkpoint
// metrics → manifest, for the single configured scheme.
CommandResult cli_run(const CliOptions& options);
// Every configured scheme (≥ 2) on the same target, seed and replica streams.
CommandResult cli_compare(const CliOptions& options);
// WAPT deviation study with the decomposition report.
CommandResult cli_wapt(const CliOptions& options);
// Estimators and checkers only, no sampling run beyond the pilot.
CommandResult cli_validate(const CliOptions& options);

// Stable identifier of (command, normalised config, seed).
std::string make_run_id(const std::string& command, const nlohmann::json& snapshot,
                        std::uint64_t seed);

// Output root: explicit value, else $LRM_OUT_DIR, else "runs".
std::string resolve_out_root(const std::optional<std::string>& explicit_dir);

}  // namespace lrm::harness
