#pragma once

#include <cstddef>
#include <functional>

namespace dblogit {

// Runs fn(i) for i in [0, count) on up to `threads` workers. Tasks are
// dispatched from an atomic counter; callers must write results into
// per-index slots so the outcome does not depend on scheduling. The first
// exception thrown by any task is rethrown after all workers join.
void parallel_for(std::size_t count, int threads,
                  const std::function<void(std::size_t)>& fn);

}  // namespace dblogit
