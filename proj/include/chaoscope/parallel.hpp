#pragma once

#include <cstddef>
#include <functional>

namespace chaoscope {

// Worker count: CHAOSCOPE_THREADS env var if set, else hardware concurrency.
std::size_t thread_count();

// Runs fn(i) for i in [0, n). Work items must be independent; each writes
// only its own output slot, so results are schedule-independent. Exceptions
// from workers are rethrown on the calling thread (first one wins).
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn);

} // namespace chaoscope
