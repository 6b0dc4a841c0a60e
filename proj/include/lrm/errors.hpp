#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

#include <Eigen/Core>

namespace lrm {

enum class FailureKind {
  kDiverged,  // FAIL_DIVERGED
  kGeometry,  // FAIL_GEOMETRY
  kImplicit,  // FAIL_IMPLICIT
};

std::string_view to_string(FailureKind kind);

// A step that cannot produce a valid iterate. Carries the iteration index
// at which the failure happened and the last finite iterate.
class SamplerFailure : public std::runtime_error {
 public:
  SamplerFailure(FailureKind kind, long iteration, Eigen::VectorXd last_state,
                 const std::string& detail);

  FailureKind kind() const { return kind_; }
  long iteration() const { return iteration_; }
  const Eigen::VectorXd& last_state() const { return last_state_; }

 private:
  FailureKind kind_;
  long iteration_;
  Eigen::VectorXd last_state_;
};

// Invalid configuration. `key` is the dotted path of the offending entry.
class ConfigError : public std::invalid_argument {
 public:
  ConfigError(std::string key, const std::string& message)
      : std::invalid_argument(key.empty() ? message : key + ": " + message),
        key_(std::move(key)) {}

  const std::string& key() const { return key_; }

 private:
  std::string key_;
};

}  // namespace lrm
