#include <doctest.h>

#include <cmath>
#include <vector>

#include "meshcal/optimize.hpp"
#include "meshcal/rng.hpp"

using namespace meshcal;
using doctest::Approx;

namespace {

OptimizeProblem shifted_quadratic(const std::vector<double>& a) {
    OptimizeProblem p;
    p.dimension = static_cast<int>(a.size());
    p.x0.assign(a.size(), 0.0);
    p.objective = [a](std::span<const double> x, std::span<double> g) {
        double f = 0.0;
        for (std::size_t i = 0; i < a.size(); ++i) {
            const double d = x[i] - a[i];
            f += d * d;
            g[i] = 2.0 * d;
        }
        return f;
    };
    return p;
}

OptimizeProblem rosenbrock() {
    OptimizeProblem p;
    p.dimension = 2;
    p.x0 = {-1.2, 1.0};
    p.objective = [](std::span<const double> x, std::span<double> g) {
        const double a = x[1] - x[0] * x[0];
        const double b = 1.0 - x[0];
        g[0] = -400.0 * a * x[0] - 2.0 * b;
        g[1] = 200.0 * a;
        return 100.0 * a * a + b * b;
    };
    return p;
}

/// Ill-conditioned convex quadratic with fixed diagonal spectrum.
OptimizeProblem diag_quadratic(int n) {
    std::vector<double> d(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) d[static_cast<std::size_t>(i)] = 1.0 + 9.0 * i / (n - 1.0);
    OptimizeProblem p;
    p.dimension = n;
    p.x0.assign(static_cast<std::size_t>(n), 0.0);
    for (int i = 0; i < n; ++i) p.x0[static_cast<std::size_t>(i)] = 1.0 + 0.1 * i;
    p.objective = [d](std::span<const double> x, std::span<double> g) {
        double f = 0.0;
        for (std::size_t i = 0; i < d.size(); ++i) {
            f += 0.5 * d[i] * x[i] * x[i];
            g[i] = d[i] * x[i];
        }
        return f;
    };
    return p;
}

}  // namespace

TEST_CASE("BFGS solves a shifted quadratic in a handful of iterations") {
    const std::vector<double> a{1.5, -2.0, 0.25, 3.0};
    const OptimizeProblem p = shifted_quadratic(a);
    const OptimizeReport rep = bfgs_minimize(p, {.tol_grad = 1e-12});
    CHECK(rep.iterations <= 5);
    for (std::size_t i = 0; i < a.size(); ++i) CHECK(rep.x_final[i] == Approx(a[i]).epsilon(1e-10));
    CHECK(rep.f_final < 1e-18);
    CHECK(rep.termination == Termination::gradient_tolerance);
}

TEST_CASE("BFGS reaches the Rosenbrock minimum") {
    const OptimizeReport rep = bfgs_minimize(rosenbrock(), {.tol_grad = 1e-10, .max_iterations = 200});
    CHECK(std::abs(rep.x_final[0] - 1.0) < 1e-6);
    CHECK(std::abs(rep.x_final[1] - 1.0) < 1e-6);
    CHECK(rep.iterations <= 200);
}

TEST_CASE("BFGS finds a stationary point of sum of cosines") {
    const int n = 6;
    OptimizeProblem p;
    p.dimension = n;
    p.x0.assign(n, 1.5707963267948966);  // pi/2
    p.objective = [](std::span<const double> x, std::span<double> g) {
        double f = 0.0;
        for (std::size_t i = 0; i < x.size(); ++i) {
            f += std::cos(x[i]);
            g[i] = -std::sin(x[i]);
        }
        return f;
    };
    const OptimizeReport rep = bfgs_minimize(p, {.tol_grad = 1e-10});
    CHECK(rep.gradient_norm_final <= 1e-10);
    CHECK(rep.f_final == Approx(-static_cast<double>(n)).epsilon(1e-12));
}

TEST_CASE("objective sequence is monotone under line search") {
    // Track accepted objective values through the callback.
    std::vector<double> fs;
    OptimizeOptions opt;
    opt.on_iteration = [&](int, std::span<const double>, double f, double) {
        fs.push_back(f);
        return true;
    };
    const OptimizeReport rep = bfgs_minimize(rosenbrock(), opt);
    REQUIRE(!fs.empty());
    double prev = 1e300;
    for (double f : fs) {
        CHECK(f < prev);
        prev = f;
    }
    CHECK(rep.f_final <= fs.back());
}

TEST_CASE("L-BFGS matches BFGS on a 50-D quadratic") {
    const OptimizeProblem p = diag_quadratic(50);
    const OptimizeReport full = bfgs_minimize(p, {.tol_grad = 1e-10});
    const OptimizeReport lim = lbfgs_minimize(p, {.tol_grad = 1e-10, .memory = 10});
    CHECK(std::abs(full.f_final - lim.f_final) <= 1e-8);

    SUBCASE("full-memory L-BFGS with first-pair scaling reproduces the BFGS iterates") {
        std::vector<std::vector<double>> bfgs_xs, lbfgs_xs;
        OptimizeOptions ob;
        ob.tol_grad = 1e-10;
        ob.on_iteration = [&](int, std::span<const double> x, double, double) {
            bfgs_xs.emplace_back(x.begin(), x.end());
            return true;
        };
        bfgs_minimize(p, ob);
        OptimizeOptions ol = ob;
        ol.memory = p.dimension;
        ol.scaling = OptimizeOptions::Scaling::first_pair;
        ol.on_iteration = [&](int, std::span<const double> x, double, double) {
            lbfgs_xs.emplace_back(x.begin(), x.end());
            return true;
        };
        lbfgs_minimize(p, ol);
        REQUIRE(bfgs_xs.size() == lbfgs_xs.size());
        for (std::size_t k = 0; k < bfgs_xs.size(); ++k)
            for (std::size_t i = 0; i < bfgs_xs[k].size(); ++i)
                CHECK(bfgs_xs[k][i] == Approx(lbfgs_xs[k][i]).epsilon(1e-10).scale(1.0));
    }
}

TEST_CASE("zero-gradient start terminates immediately") {
    const std::vector<double> a{0.0, 0.0, 0.0};
    OptimizeProblem p = shifted_quadratic(a);
    const OptimizeReport rep = lbfgs_minimize(p);
    CHECK(rep.iterations == 0);
    CHECK(rep.termination == Termination::gradient_tolerance);
    CHECK(rep.x_final == p.x0);
}

TEST_CASE("non-finite objectives end with line-search failure and best-so-far") {
    OptimizeProblem p;
    p.dimension = 1;
    p.x0 = {1.0};
    // Objective falls off a cliff into NaN territory left of 0.25.
    p.objective = [](std::span<const double> x, std::span<double> g) {
        if (x[0] < 0.25) {
            g[0] = std::nan("");
            return std::nan("");
        }
        g[0] = 2.0 * x[0];
        return x[0] * x[0];
    };
    const OptimizeReport rep = bfgs_minimize(p);
    CHECK(std::isfinite(rep.f_final));
    CHECK(rep.f_final <= 1.0);
}

TEST_CASE("argmin is invariant to objective scaling") {
    const std::vector<double> a{0.4, -1.1};
    OptimizeProblem p = shifted_quadratic(a);
    OptimizeProblem scaled = p;
    auto base = p.objective;
    scaled.objective = [base](std::span<const double> x, std::span<double> g) {
        const double f = base(x, g);
        for (auto& gi : g) gi *= 37.0;
        return 37.0 * f;
    };
    const auto r1 = bfgs_minimize(p, {.tol_grad = 1e-12});
    const auto r2 = bfgs_minimize(scaled, {.tol_grad = 1e-11});
    for (std::size_t i = 0; i < a.size(); ++i) CHECK(r1.x_final[i] == Approx(r2.x_final[i]).epsilon(1e-8));
}

TEST_CASE("check_gradient flags exact and broken gradients") {
    SUBCASE("linear objective is exact") {
        OptimizeProblem p;
        p.dimension = 3;
        p.x0 = {0.1, 0.2, 0.3};
        p.objective = [](std::span<const double> x, std::span<double> g) {
            g[0] = 2.0;
            g[1] = -3.0;
            g[2] = 0.5;
            return 2.0 * x[0] - 3.0 * x[1] + 0.5 * x[2];
        };
        CHECK(check_gradient(p, p.x0) <= 1e-10);
    }
    SUBCASE("quadratic is exact for central differences") {
        const OptimizeProblem p = shifted_quadratic({1.0, -2.0});
        std::vector<double> x{0.7, 0.9};
        CHECK(check_gradient(p, x) <= 1e-9);
    }
    SUBCASE("a wrong gradient is caught") {
        OptimizeProblem p;
        p.dimension = 2;
        p.x0 = {1.0, 1.0};
        p.objective = [](std::span<const double> x, std::span<double> g) {
            g[0] = 2.0 * x[0];
            g[1] = 1.7 * x[1];  // wrong on purpose
            return x[0] * x[0] + x[1] * x[1];
        };
        CHECK(check_gradient(p, p.x0) > 1e-2);
    }
}
