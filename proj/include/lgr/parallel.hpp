#pragma once

#include <cstddef>
#include <functional>

namespace lgr {

/// Worker count from LGR_THREADS (positive integer), else the hardware concurrency.
std::size_t worker_count();

/// Calls fn(i) for i in [0, n) on up to worker_count() threads. Each index
/// runs exactly once; the first exception is rethrown after all workers stop.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn);

}  // namespace lgr
