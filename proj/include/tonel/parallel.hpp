#pragma once

#include <cstddef>
#include <functional>

namespace tonel {

// Worker count. Honors the TONEL_THREADS environment variable (clamped to
// >= 1); defaults to the hardware concurrency. Read once per process.
int thread_count();

// Runs body(begin, end) over disjoint contiguous chunks of [0, n). Inner
// reductions stay in index order inside each chunk, and chunks never share
// output cells, so results are identical for any thread count.
void parallel_for(std::size_t n,
                  const std::function<void(std::size_t, std::size_t)>& body);

}  // namespace tonel
