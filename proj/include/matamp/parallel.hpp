#pragma once

#include <cstddef>
#include <functional>

namespace matamp {

/// Calls fn(i) for i in [0, count) on up to `threads` workers. Callers write
/// results into per-index slots, so the outcome never depends on scheduling.
/// The first exception thrown by any task is rethrown after all workers join.
void parallel_for(std::size_t count, int threads, const std::function<void(std::size_t)>& fn);

}  // namespace matamp
