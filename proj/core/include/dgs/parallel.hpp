#pragma once

#include <cstddef>

namespace dgs {

/// Runs f(i) for i in [0, n). Iterations must write disjoint outputs; any
/// reduction is done by the caller over per-index buffers in index order, so
/// results do not depend on the thread count.
template <class F>
void parallel_for(std::size_t n, F&& f) {
#if defined(_OPENMP)
#pragma omp parallel for schedule(static)
    for (long long i = 0; i < static_cast<long long>(n); ++i) {
        f(static_cast<std::size_t>(i));
    }
#else
    for (std::size_t i = 0; i < n; ++i) {
        f(i);
    }
#endif
}

} // namespace dgs
