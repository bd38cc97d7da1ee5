#pragma once

#include <functional>
#include <span>
#include <string>
#include <vector>

namespace meshcal {

/// Unconstrained minimization problem. The objective fills `grad` and
/// returns the function value; it must be deterministic for a fixed x.
struct OptimizeProblem {
    int dimension = 0;
    std::function<double(std::span<const double> x, std::span<double> grad)> objective;
    std::vector<double> x0;
};

enum class Termination { gradient_tolerance, max_iterations, line_search_failure, function_tolerance, callback_stop };

const char* termination_name(Termination t);

struct OptimizeReport {
    std::vector<double> x_final;
    double f_final = 0.0;
    int iterations = 0;
    double gradient_norm_final = 0.0;  // infinity norm
    Termination termination = Termination::max_iterations;
};

struct OptimizeOptions {
    double tol_grad = 1e-8;        // infinity-norm gradient tolerance
    double tol_f = 0.0;            // relative objective decrease; 0 disables
    int max_iterations = 2000;
    // Strong Wolfe constants.
    double wolfe_c1 = 1e-4;
    double wolfe_c2 = 0.9;
    int memory = 10;  // L-BFGS history length
    // L-BFGS initial-Hessian scaling: the standard choice rescales with
    // the most recent pair each iteration; the first-pair policy holds
    // it fixed, which makes full-memory L-BFGS coincide with BFGS.
    enum class Scaling { current_pair, first_pair } scaling = Scaling::current_pair;
    // Called after each accepted step; return false to stop (the best
    // iterate so far is returned with callback_stop).
    std::function<bool(int iteration, std::span<const double> x, double f, double grad_norm)> on_iteration;
    // Optional CSV trace (iteration, f, grad_norm) written on completion.
    std::string trace_csv_path;
};

OptimizeReport bfgs_minimize(const OptimizeProblem& problem, const OptimizeOptions& options = {});
OptimizeReport lbfgs_minimize(const OptimizeProblem& problem, const OptimizeOptions& options = {});

/// Max over coordinates of the relative disagreement between the
/// analytic gradient and central finite differences at x.
double check_gradient(const OptimizeProblem& problem, std::span<const double> x, double step = 1e-5);

}  // namespace meshcal
