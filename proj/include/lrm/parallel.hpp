#pragma once

#include <cstddef>
#include <functional>

namespace lrm {

// Runs fn(0..n-1) on up to `jobs` worker threads (jobs ≤ 1 runs inline).
// Indices are handed out dynamically; callers write results into slots
// indexed by i so that reductions stay in index order. If any call throws,
// the exception from the lowest failing index is rethrown after all workers
// have stopped.
void parallel_for(std::size_t n, int jobs, const std::function<void(std::size_t)>& fn);

// Number of hardware threads, at least 1.
int hardware_jobs();

}  // namespace lrm
