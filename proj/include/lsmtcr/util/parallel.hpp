#pragma once

#include <cstddef>
#include <functional>

namespace lsmtcr {

/// Worker count for internal parallelism: LSMTCR_THREADS if set to a positive
/// integer, otherwise 1.
std::size_t thread_count();

/// Runs fn(i) for i in [0, n) over at most thread_count() threads. Each index
/// is handled exactly once; results must be written to disjoint slots.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& fn);

}  // namespace lsmtcr
