#pragma once

#include <cstddef>
#include <functional>

namespace geocausal {

// Worker count used by parallel_for. Zero means "resolve from GEOCAUSAL_THREADS,
// falling back to 1".
void set_thread_count(unsigned n);
unsigned thread_count();

// Runs body(i) for i in [0, n). Each index must write only to its own output
// slot; reductions happen afterwards in index order, so results never depend
// on the number of workers.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& body);

}  // namespace geocausal
