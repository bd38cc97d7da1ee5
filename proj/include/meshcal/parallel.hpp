#pragma once

#include <cstdint>
#include <utility>

namespace meshcal {

/// Maximum number of worker threads used by the OpenMP kernels.
/// 1 selects the serial reference path (a plain loop, no OpenMP region).
void set_max_jobs(int jobs);
int max_jobs();

/// Number of blocks used to partition `n` items for deterministic
/// reductions. Depends only on `n`, never on the thread count, so
/// per-block partial results are identical for any schedule.
std::int64_t reduction_blocks(std::int64_t n);

namespace detail {
using BlockFn = void (*)(void* ctx, std::int64_t block, std::int64_t begin, std::int64_t end);
void run_blocks(std::int64_t n, std::int64_t nblocks, void* ctx, BlockFn fn);
}  // namespace detail

/// Runs f(block, begin, end) over a fixed block partition of [0, n).
/// Blocks execute in parallel when max_jobs() > 1; items within a block
/// always run in index order on one thread. Any result assembled by
/// summing per-block partials in block order is schedule-independent.
template <typename F>
void parallel_for_blocks(std::int64_t n, std::int64_t nblocks, F&& f) {
    detail::run_blocks(n, nblocks, &f, [](void* ctx, std::int64_t block, std::int64_t begin, std::int64_t end) {
        (*static_cast<F*>(ctx))(block, begin, end);
    });
}

/// Parallel loop over independent items (no shared accumulation).
template <typename F>
void parallel_for(std::int64_t n, F&& f) {
    parallel_for_blocks(n, reduction_blocks(n), [&](std::int64_t, std::int64_t begin, std::int64_t end) {
        for (std::int64_t i = begin; i < end; ++i) f(i);
    });
}

}  // namespace meshcal
