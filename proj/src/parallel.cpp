#include "meshcal/parallel.hpp"

#include <algorithm>
#include <atomic>

#if defined(_OPENMP)
#include <omp.h>
#endif

namespace meshcal {

namespace {
std::atomic<int> g_max_jobs{0};  // 0 = not set yet, resolve lazily
}

void set_max_jobs(int jobs) {
    g_max_jobs.store(jobs < 1 ? 1 : jobs);
}

int max_jobs() {
    int j = g_max_jobs.load();
    if (j > 0) return j;
#if defined(_OPENMP)
    j = omp_get_max_threads();
#else
    j = 1;
#endif
    g_max_jobs.store(j);
    return j;
}

std::int64_t reduction_blocks(std::int64_t n) {
    if (n <= 1) return 1;
    // Enough blocks to balance load at small thread counts without
    // inflating the serial block-combine step.
    return std::min<std::int64_t>(n, 32);
}

namespace detail {

void run_blocks(std::int64_t n, std::int64_t nblocks, void* ctx, BlockFn fn) {
    if (n <= 0) return;
    nblocks = std::clamp<std::int64_t>(nblocks, 1, n);
    // Balanced partition: block b covers [b*n/nb, (b+1)*n/nb). Every
    // block is non-empty, so callers may rely on fn running exactly
    // once per block index.
    const auto begin_of = [n, nblocks](std::int64_t b) { return b * n / nblocks; };
    const int jobs = max_jobs();
    if (jobs <= 1 || nblocks == 1) {
        for (std::int64_t b = 0; b < nblocks; ++b) fn(ctx, b, begin_of(b), begin_of(b + 1));
        return;
    }
#if defined(_OPENMP)
#pragma omp parallel for schedule(dynamic, 1) num_threads(jobs)
    for (std::int64_t b = 0; b < nblocks; ++b) fn(ctx, b, begin_of(b), begin_of(b + 1));
#else
    for (std::int64_t b = 0; b < nblocks; ++b) fn(ctx, b, begin_of(b), begin_of(b + 1));
#endif
}

}  // namespace detail
}  // namespace meshcal
