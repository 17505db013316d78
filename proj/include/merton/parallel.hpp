#pragma once

#include <exception>
#include <limits>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace merton::detail {

/// Runs fn(p) for p in [0, n) across threads. An exception cannot leave an
/// OpenMP region, so the one from the lowest failing path is rethrown
/// after the loop (same error whatever the schedule).
template <class Fn>
void for_each_path(long n, Fn&& fn)
{
    long first_bad = std::numeric_limits<long>::max();
    std::exception_ptr error;
#pragma omp parallel for schedule(static)
    for (long p = 0; p < n; ++p) {
        try {
            fn(p);
        } catch (...) {
#pragma omp critical(merton_path_error)
            if (p < first_bad) {
                first_bad = p;
                error = std::current_exception();
            }
        }
    }
    if (error) std::rethrow_exception(error);
}

/// Worker count for the path loops (no-op without OpenMP).
inline void set_worker_count(int workers)
{
#ifdef _OPENMP
    if (workers > 0) omp_set_num_threads(workers);
#else
    (void)workers;
#endif
}

}  // namespace merton::detail
