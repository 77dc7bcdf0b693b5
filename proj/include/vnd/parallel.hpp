#pragma once

#include <cstddef>
#include <functional>

namespace vnd {

/// Runs fn(0) .. fn(n_tasks - 1) on up to `workers` threads (inline when
/// workers <= 1). Tasks are claimed dynamically, so callers must make each
/// task's output independent of scheduling; every call site here writes to
/// per-task slots and reduces in fixed task order, which keeps results
/// identical for any worker count.
void parallel_tasks(int workers, std::size_t n_tasks, const std::function<void(std::size_t)>& fn);

} // namespace vnd
