#pragma once

#include <cstddef>
#include <functional>

namespace stict {

/// Worker cap: STICT_THREADS if set to a positive integer, else the hardware concurrency.
unsigned worker_count();

/// Runs body(i) for i in [0, n) across up to worker_count() threads. Items must be
/// independent; the exception from the lowest failing index is rethrown after all workers finish.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& body);

}  // namespace stict
