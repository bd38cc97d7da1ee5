#include "meshcal/optimize.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <stdexcept>

#include "meshcal/io_util.hpp"

namespace meshcal {

namespace {

double inf_norm(std::span<const double> v) {
    double m = 0.0;
    for (double x : v) m = std::max(m, std::abs(x));
    return m;
}

double dot(std::span<const double> a, std::span<const double> b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

bool finite(double f, std::span<const double> g) {
    if (!std::isfinite(f)) return false;
    for (double x : g)
        if (!std::isfinite(x)) return false;
    return true;
}

struct Eval {
    double f = 0.0;
    std::vector<double> x;
    std::vector<double> g;
};

struct TraceRow {
    int iteration;
    double f;
    double gnorm;
};

/// Strong Wolfe line search (bracket + zoom with quadratic
/// interpolation). On success `out` holds the accepted point with its
/// gradient; returns the step length, or 0 on failure.
class WolfeSearch {
public:
    WolfeSearch(const OptimizeProblem& problem, double c1, double c2) : problem_(problem), c1_(c1), c2_(c2) {}

    double search(const Eval& at, std::span<const double> dir, Eval& out) {
        const int n = problem_.dimension;
        phi0_ = at.f;
        dphi0_ = dot(at.g, dir);
        if (!(dphi0_ < 0.0)) return 0.0;
        x0_ = at.x;
        dir_.assign(dir.begin(), dir.end());
        out.x.resize(static_cast<std::size_t>(n));
        out.g.resize(static_cast<std::size_t>(n));

        double alpha_prev = 0.0;
        double phi_prev = phi0_;
        double dphi_prev = dphi0_;
        double alpha = 1.0;
        constexpr int kMaxIters = 30;
        for (int it = 0; it < kMaxIters; ++it) {
            double phi, dphi;
            if (!eval(alpha, out, phi, dphi)) {
                // Non-finite trial: retreat toward the last good point.
                alpha = 0.5 * (alpha_prev + alpha);
                continue;
            }
            if (phi > phi0_ + c1_ * alpha * dphi0_ || (it > 0 && phi >= phi_prev))
                return zoom(alpha_prev, phi_prev, dphi_prev, alpha, phi, dphi, out);
            if (std::abs(dphi) <= -c2_ * dphi0_) return alpha;
            if (dphi >= 0.0) return zoom(alpha, phi, dphi, alpha_prev, phi_prev, dphi_prev, out);
            alpha_prev = alpha;
            phi_prev = phi;
            dphi_prev = dphi;
            alpha *= 2.0;
        }
        return 0.0;
    }

private:
    bool eval(double alpha, Eval& out, double& phi, double& dphi) {
        const int n = problem_.dimension;
        for (int i = 0; i < n; ++i)
            out.x[static_cast<std::size_t>(i)] = x0_[static_cast<std::size_t>(i)] + alpha * dir_[static_cast<std::size_t>(i)];
        out.f = problem_.objective(out.x, out.g);
        if (!finite(out.f, out.g)) return false;
        phi = out.f;
        dphi = dot(out.g, dir_);
        return true;
    }

    double zoom(double lo, double phi_lo, double dphi_lo, double hi, double phi_hi, double dphi_hi, Eval& out) {
        (void)dphi_hi;
        constexpr int kMaxIters = 40;
        for (int it = 0; it < kMaxIters; ++it) {
            // Quadratic interpolation from (lo, phi_lo, dphi_lo) and
            // (hi, phi_hi), safeguarded by bisection.
            double alpha;
            const double dx = hi - lo;
            const double denom = phi_hi - phi_lo - dphi_lo * dx;
            if (std::abs(denom) > 1e-300) {
                alpha = lo - 0.5 * dphi_lo * dx * dx / denom;
                const double lo_guard = std::min(lo, hi) + 0.1 * std::abs(dx);
                const double hi_guard = std::max(lo, hi) - 0.1 * std::abs(dx);
                if (!(alpha >= lo_guard && alpha <= hi_guard)) alpha = lo + 0.5 * dx;
            } else {
                alpha = lo + 0.5 * dx;
            }
            double phi, dphi;
            if (!eval(alpha, out, phi, dphi)) {
                hi = alpha;
                phi_hi = phi0_;  // treat as a bad upper end; keep shrinking
                continue;
            }
            if (phi > phi0_ + c1_ * alpha * dphi0_ || phi >= phi_lo) {
                hi = alpha;
                phi_hi = phi;
            } else {
                if (std::abs(dphi) <= -c2_ * dphi0_) return alpha;
                if (dphi * (hi - lo) >= 0.0) {
                    hi = lo;
                    phi_hi = phi_lo;
                }
                lo = alpha;
                phi_lo = phi;
                dphi_lo = dphi;
            }
            if (std::abs(hi - lo) < 1e-16 * std::max(1.0, std::abs(lo))) break;
        }
        // Fall back to the sufficient-decrease end if curvature never
        // tightened; a strict decrease still counts as progress.
        double phi, dphi;
        if (phi_lo < phi0_ && lo > 0.0 && eval(lo, out, phi, dphi)) return lo;
        return 0.0;
    }

    const OptimizeProblem& problem_;
    double c1_, c2_;
    double phi0_ = 0.0, dphi0_ = 0.0;
    std::vector<double> x0_, dir_;
};

void write_trace(const std::string& path, const std::vector<TraceRow>& rows) {
    if (path.empty()) return;
    CsvWriter csv(path, {"iteration", "f", "grad_norm"});
    for (const auto& r : rows) csv.row({std::to_string(r.iteration), CsvWriter::num(r.f), CsvWriter::num(r.gnorm)});
}

OptimizeReport make_report(const Eval& best, int iterations, Termination term) {
    OptimizeReport rep;
    rep.x_final = best.x;
    rep.f_final = best.f;
    rep.iterations = iterations;
    rep.gradient_norm_final = inf_norm(best.g);
    rep.termination = term;
    return rep;
}

template <typename DirectionFn, typename UpdateFn, typename ResetFn>
OptimizeReport minimize_loop(const OptimizeProblem& problem, const OptimizeOptions& opt, DirectionFn direction,
                             UpdateFn update, ResetFn reset) {
    const int n = problem.dimension;
    if (n <= 0 || static_cast<int>(problem.x0.size()) != n)
        throw std::invalid_argument("optimize: dimension and x0 size disagree");
    Eval cur;
    cur.x = problem.x0;
    cur.g.resize(static_cast<std::size_t>(n));
    cur.f = problem.objective(cur.x, cur.g);
    if (!finite(cur.f, cur.g)) throw std::invalid_argument("optimize: objective not finite at x0");

    std::vector<TraceRow> trace;
    trace.push_back({0, cur.f, inf_norm(cur.g)});
    Eval best = cur;
    WolfeSearch ls(problem, opt.wolfe_c1, opt.wolfe_c2);
    std::vector<double> dir(static_cast<std::size_t>(n));
    Eval next;
    Termination term = Termination::max_iterations;
    int it = 0;
    bool fresh_reset = false;  // one curvature reset per stall
    while (true) {
        if (inf_norm(cur.g) <= opt.tol_grad) {
            term = Termination::gradient_tolerance;
            break;
        }
        if (it >= opt.max_iterations) break;
        direction(cur.g, dir);
        if (!(dot(cur.g, dir) < 0.0)) {
            // Curvature breakdown: restart from steepest descent.
            for (int i = 0; i < n; ++i) dir[static_cast<std::size_t>(i)] = -cur.g[static_cast<std::size_t>(i)];
        }
        double alpha = ls.search(cur, dir, next);
        if (alpha <= 0.0 && !fresh_reset) {
            // Stale curvature commonly strands the search far from a
            // stationary point; drop it and retry along the gradient.
            reset();
            fresh_reset = true;
            for (int i = 0; i < n; ++i) dir[static_cast<std::size_t>(i)] = -cur.g[static_cast<std::size_t>(i)];
            alpha = ls.search(cur, dir, next);
        }
        if (alpha <= 0.0) {
            term = Termination::line_search_failure;
            break;
        }
        fresh_reset = false;
        ++it;
        const double decrease = cur.f - next.f;
        update(cur, next, alpha, dir);
        cur = next;
        if (cur.f < best.f) best = cur;
        trace.push_back({it, cur.f, inf_norm(cur.g)});
        if (opt.on_iteration && !opt.on_iteration(it, cur.x, cur.f, inf_norm(cur.g))) {
            term = Termination::callback_stop;
            break;
        }
        if (opt.tol_f > 0.0 && decrease <= opt.tol_f * (1.0 + std::abs(cur.f))) {
            term = Termination::function_tolerance;
            break;
        }
    }
    if (term == Termination::max_iterations && inf_norm(cur.g) <= opt.tol_grad)
        term = Termination::gradient_tolerance;
    write_trace(opt.trace_csv_path, trace);
    return make_report(best, it, term);
}

}  // namespace

const char* termination_name(Termination t) {
    switch (t) {
        case Termination::gradient_tolerance: return "gradient-tolerance";
        case Termination::max_iterations: return "max-iterations";
        case Termination::line_search_failure: return "line-search-failure";
        case Termination::function_tolerance: return "function-tolerance";
        case Termination::callback_stop: return "callback-stop";
    }
    return "unknown";
}

OptimizeReport bfgs_minimize(const OptimizeProblem& problem, const OptimizeOptions& options) {
    const int n = problem.dimension;
    const auto nn = static_cast<std::size_t>(n);
    // Dense inverse-Hessian approximation, identity start, rescaled by
    // s'y / y'y before the first update.
    std::vector<double> H(nn * nn, 0.0);
    for (int i = 0; i < n; ++i) H[static_cast<std::size_t>(i) * nn + static_cast<std::size_t>(i)] = 1.0;
    bool first_update = true;
    std::vector<double> s(nn), y(nn), Hy(nn);

    auto direction = [&](std::span<const double> g, std::span<double> dir) {
        for (int i = 0; i < n; ++i) {
            double acc = 0.0;
            const double* row = H.data() + static_cast<std::size_t>(i) * nn;
            for (int j = 0; j < n; ++j) acc += row[j] * g[static_cast<std::size_t>(j)];
            dir[static_cast<std::size_t>(i)] = -acc;
        }
    };
    auto update = [&](const Eval& prev, const Eval& cur, double, std::span<const double>) {
        for (int i = 0; i < n; ++i) {
            s[static_cast<std::size_t>(i)] = cur.x[static_cast<std::size_t>(i)] - prev.x[static_cast<std::size_t>(i)];
            y[static_cast<std::size_t>(i)] = cur.g[static_cast<std::size_t>(i)] - prev.g[static_cast<std::size_t>(i)];
        }
        const double sy = dot(s, y);
        if (!(sy > 1e-300)) return;  // curvature condition failed, skip update
        if (first_update) {
            const double gamma = sy / dot(y, y);
            for (std::size_t i = 0; i < nn; ++i)
                for (std::size_t j = 0; j < nn; ++j) H[i * nn + j] = i == j ? gamma : 0.0;
            first_update = false;
        }
        const double rho = 1.0 / sy;
        for (int i = 0; i < n; ++i) {
            double acc = 0.0;
            const double* row = H.data() + static_cast<std::size_t>(i) * nn;
            for (int j = 0; j < n; ++j) acc += row[j] * y[static_cast<std::size_t>(j)];
            Hy[static_cast<std::size_t>(i)] = acc;
        }
        const double yHy = dot(y, Hy);
        // H <- (I - rho s y')H(I - rho y s') + rho s s'
        for (int i = 0; i < n; ++i) {
            for (int j = 0; j < n; ++j) {
                const double si = s[static_cast<std::size_t>(i)];
                const double sj = s[static_cast<std::size_t>(j)];
                double v = H[static_cast<std::size_t>(i) * nn + static_cast<std::size_t>(j)];
                v -= rho * (si * Hy[static_cast<std::size_t>(j)] + Hy[static_cast<std::size_t>(i)] * sj);
                v += rho * rho * yHy * si * sj + rho * si * sj;
                H[static_cast<std::size_t>(i) * nn + static_cast<std::size_t>(j)] = v;
            }
        }
    };
    auto reset = [&] {
        for (std::size_t i = 0; i < nn; ++i)
            for (std::size_t j = 0; j < nn; ++j) H[i * nn + j] = i == j ? 1.0 : 0.0;
        first_update = true;
    };
    return minimize_loop(problem, options, direction, update, reset);
}

OptimizeReport lbfgs_minimize(const OptimizeProblem& problem, const OptimizeOptions& options) {
    const int n = problem.dimension;
    const auto nn = static_cast<std::size_t>(n);
    struct Pair {
        std::vector<double> s, y;
        double rho;
    };
    std::deque<Pair> pairs;
    double gamma = 1.0;
    bool have_gamma = false;

    auto direction = [&](std::span<const double> g, std::span<double> dir) {
        // Two-loop recursion.
        std::vector<double> q(g.begin(), g.end());
        std::vector<double> alpha(pairs.size());
        for (std::size_t i = pairs.size(); i-- > 0;) {
            const Pair& p = pairs[i];
            alpha[i] = p.rho * dot(p.s, q);
            for (std::size_t k = 0; k < nn; ++k) q[k] -= alpha[i] * p.y[k];
        }
        for (std::size_t k = 0; k < nn; ++k) q[k] *= gamma;
        for (std::size_t i = 0; i < pairs.size(); ++i) {
            const Pair& p = pairs[i];
            const double beta = p.rho * dot(p.y, q);
            for (std::size_t k = 0; k < nn; ++k) q[k] += (alpha[i] - beta) * p.s[k];
        }
        for (std::size_t k = 0; k < nn; ++k) dir[k] = -q[k];
    };
    auto update = [&](const Eval& prev, const Eval& cur, double, std::span<const double>) {
        Pair p;
        p.s.resize(nn);
        p.y.resize(nn);
        for (std::size_t i = 0; i < nn; ++i) {
            p.s[i] = cur.x[i] - prev.x[i];
            p.y[i] = cur.g[i] - prev.g[i];
        }
        const double sy = dot(p.s, p.y);
        if (!(sy > 1e-300)) return;
        p.rho = 1.0 / sy;
        const double g = sy / dot(p.y, p.y);
        if (options.scaling == OptimizeOptions::Scaling::current_pair || !have_gamma) {
            gamma = g;
            have_gamma = true;
        }
        pairs.push_back(std::move(p));
        if (static_cast<int>(pairs.size()) > std::max(1, options.memory)) pairs.pop_front();
    };
    auto reset = [&] {
        pairs.clear();
        gamma = 1.0;
        have_gamma = false;
    };
    return minimize_loop(problem, options, direction, update, reset);
}

double check_gradient(const OptimizeProblem& problem, std::span<const double> x, double step) {
    const int n = problem.dimension;
    std::vector<double> g(static_cast<std::size_t>(n));
    std::vector<double> xt(x.begin(), x.end());
    problem.objective(xt, g);
    std::vector<double> scratch(static_cast<std::size_t>(n));
    double worst = 0.0;
    for (int i = 0; i < n; ++i) {
        const double xi = xt[static_cast<std::size_t>(i)];
        xt[static_cast<std::size_t>(i)] = xi + step;
        const double fp = problem.objective(xt, scratch);
        xt[static_cast<std::size_t>(i)] = xi - step;
        const double fm = problem.objective(xt, scratch);
        xt[static_cast<std::size_t>(i)] = xi;
        const double fd = (fp - fm) / (2.0 * step);
        const double gi = g[static_cast<std::size_t>(i)];
        worst = std::max(worst, std::abs(fd - gi) / (std::abs(gi) + std::abs(fd) + 1e-12));
    }
    return worst;
}

}  // namespace meshcal
