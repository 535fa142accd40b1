#pragma once

#include <cstddef>
#include <functional>

namespace chiefray {

// Worker count: CHIEFRAY_THREADS when set (>= 1), otherwise hardware concurrency.
int thread_count();

// Calls body(begin, end) over a static partition of [0, n). Chunk boundaries depend
// only on n and the worker count, so per-index results are schedule independent.
void parallel_for(std::size_t n, const std::function<void(std::size_t, std::size_t)>& body);

}  // namespace chiefray
