#include "lrm/errors.hpp"

namespace lrm {

std::string_view to_string(FailureKind kind) {
  switch (kind) {
    case FailureKind::kDiverged: return "FAIL_DIVERGED";
    case FailureKind::kGeometry: return "FAIL_GEOMETRY";
    case FailureKind::kImplicit: return "FAIL_IMPLICIT";
  }
  return "FAIL_UNKNOWN";
}

SamplerFailure::SamplerFailure(FailureKind kind, long iteration,
                               Eigen::VectorXd last_state,
                               const std::string& detail)
    : std::runtime_error(std::string(to_string(kind)) + " at iteration " +
                         std::to_string(iteration) + ": " + detail),
      kind_(kind),
      iteration_(iteration),
      last_state_(std::move(last_state)) {}

}  // namespace lrm
