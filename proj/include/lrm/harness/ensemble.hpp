#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "lrm/errors.hpp"
#include "lrm/sampler.hpp"

namespace lrm::harness {

// Checkpoints only: no per-step states or records.
inline RunOptions lean_run_options() {
  RunOptions o;
  o.keep_states = false;
  o.keep_records = false;
  return o;
}

struct EnsembleOptions {
  int replicas = 1;
  long iterations = 0;
  RunOptions run = lean_run_options();
  int jobs = 1;
  // Replica r runs on base.for_replica(replica_offset + r).
  std::uint32_t replica_offset = 0;
};

struct ReplicaFailure {
  std::uint32_t replica = 0;
  FailureKind kind = FailureKind::kDiverged;
  long iteration = 0;
  Vector last_state;
  std::string detail;
};

// Per-replica trajectories in replica order, plus the first failure (lowest
// replica index) when any replica aborted. Trajectories of failed replicas
// are left empty.
struct EnsembleResult {
  std::vector<Trajectory> trajectories;
  std::optional<ReplicaFailure> failure;
  long failed_replicas = 0;

  bool ok() const { return !failure.has_value(); }
  // Replica states at the i-th checkpoint, one per row.
  Matrix checkpoint_matrix(std::size_t i) const;
  std::vector<long> checkpoint_ks() const;
  Matrix final_matrix() const;
  long total_grad_calls() const;
};

// Fans replicas out over `jobs` workers. Results do not depend on the
// number of workers.
EnsembleResult run_ensemble(const SchemeConfig& cfg, const StreamKey& base,
                            const EnsembleOptions& options);

}  // namespace lrm::harness
