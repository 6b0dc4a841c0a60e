#include "lrm/harness/ensemble.hpp"

#include <stdexcept>

#include "lrm/parallel.hpp"

namespace lrm::harness {

EnsembleResult run_ensemble(const SchemeConfig& cfg, const StreamKey& base,
                            const EnsembleOptions& options) {
  if (options.replicas < 1) throw std::invalid_argument("run_ensemble: need a replica");
  validate_config(cfg);
  EnsembleResult result;
  result.trajectories.resize(static_cast<std::size_t>(options.replicas));
  std::vector<std::optional<ReplicaFailure>> failures(result.trajectories.size());

  parallel_for(result.trajectories.size(), options.jobs, [&](std::size_t r) {
    const auto id = options.replica_offset + static_cast<std::uint32_t>(r);
    try {
      result.trajectories[r] = run(cfg, options.iterations, base.for_replica(id), options.run);
    } catch (const SamplerFailure& e) {
      failures[r] = ReplicaFailure{id, e.kind(), e.iteration(), e.last_state(), e.what()};
    }
  });

  for (const auto& f : failures) {
    if (!f) continue;
    ++result.failed_replicas;
    if (!result.failure) result.failure = f;
  }
  return result;
}

Matrix EnsembleResult::checkpoint_matrix(std::size_t i) const {
  const Trajectory& head = trajectories.front();
  Matrix out(static_cast<Eigen::Index>(trajectories.size()), head.final_state.size());
  for (std::size_t r = 0; r < trajectories.size(); ++r) {
    out.row(static_cast<Eigen::Index>(r)) = trajectories[r].checkpoints.at(i).state.transpose();
  }
  return out;
}

std::vector<long> EnsembleResult::checkpoint_ks() const {
  std::vector<long> out;
  for (const auto& c : trajectories.front().checkpoints) out.push_back(c.k);
  return out;
}

Matrix EnsembleResult::final_matrix() const {
  Matrix out(static_cast<Eigen::Index>(trajectories.size()),
             trajectories.front().final_state.size());
  for (std::size_t r = 0; r < trajectories.size(); ++r) {
    out.row(static_cast<Eigen::Index>(r)) = trajectories[r].final_state.transpose();
  }
  return out;
}

long EnsembleResult::total_grad_calls() const {
  long total = 0;
  for (const auto& t : trajectories) total += t.total_grad_calls;
  return total;
}

}  // namespace lrm::harness
