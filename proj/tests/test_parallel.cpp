#include <doctest.h>

#include <cstdint>
#include <vector>

#include "meshcal/parallel.hpp"
#include "meshcal/rng.hpp"

using namespace meshcal;

namespace {

// Block-partitioned sum with per-block partials, the pattern every
// parallel reduction in the library uses.
double block_sum(const std::vector<double>& v) {
    const auto n = static_cast<std::int64_t>(v.size());
    const std::int64_t nb = reduction_blocks(n);
    std::vector<double> partial(static_cast<std::size_t>(nb), 0.0);
    parallel_for_blocks(n, nb, [&](std::int64_t b, std::int64_t begin, std::int64_t end) {
        double s = 0.0;
        for (std::int64_t i = begin; i < end; ++i) s += v[static_cast<std::size_t>(i)];
        partial[static_cast<std::size_t>(b)] = s;
    });
    double total = 0.0;
    for (double p : partial) total += p;
    return total;
}

}  // namespace

TEST_CASE("parallel block reduction is bit-identical to the serial reference") {
    Rng rng(123);
    std::vector<double> v(10007);
    for (double& x : v) x = rng.uniform(-1.0, 1.0);

    const int saved = max_jobs();
    set_max_jobs(1);
    const double serial = block_sum(v);
    set_max_jobs(4);
    const double parallel = block_sum(v);
    set_max_jobs(saved);

    CHECK(serial == parallel);  // exact: same block partials, same combine order
}

TEST_CASE("parallel_for covers every index exactly once") {
    std::vector<int> hits(5000, 0);
    parallel_for(static_cast<std::int64_t>(hits.size()), [&](std::int64_t i) { hits[static_cast<std::size_t>(i)] += 1; });
    for (int h : hits) CHECK(h == 1);
}

TEST_CASE("rng streams are reproducible and order-independent") {
    Rng a(42, 7, 1000);
    Rng b(42, 7, 1000);
    for (int i = 0; i < 100; ++i) CHECK(a.next_u64() == b.next_u64());

    // Different indices decorrelate the streams.
    Rng c(42, 7, 1001);
    int same = 0;
    Rng a2(42, 7, 1000);
    for (int i = 0; i < 64; ++i) same += a2.next_u64() == c.next_u64();
    CHECK(same == 0);
}

TEST_CASE("rng normal moments") {
    Rng rng(7);
    const int n = 200000;
    double sum = 0.0, sq = 0.0;
    for (int i = 0; i < n; ++i) {
        const double x = rng.normal();
        sum += x;
        sq += x * x;
    }
    const double mean = sum / n;
    const double var = sq / n - mean * mean;
    CHECK(std::abs(mean) < 0.01);
    CHECK(std::abs(var - 1.0) < 0.02);
}
