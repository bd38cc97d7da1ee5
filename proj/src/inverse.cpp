#include "meshcal/inverse.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "meshcal/evaluation.hpp"
#include "meshcal/optimize.hpp"
#include "meshcal/rng.hpp"

namespace meshcal {

namespace {
constexpr std::uint64_t kTagStart = 0x7374617274ULL;
}

ProgramResult program_voltages(const ForwardModel& model, const ProgramRequest& request) {
    const int nl = model.n_lambda();
    std::vector<int> channels = request.channels;
    if (channels.empty()) {
        channels.resize(static_cast<std::size_t>(nl));
        for (int k = 0; k < nl; ++k) channels[static_cast<std::size_t>(k)] = k;
    }
    for (int k : channels)
        if (k < 0 || k >= nl) throw std::invalid_argument("program_voltages: channel index out of range");
    for (double t : request.target_weights_db)
        if (!(t >= kWeightFloorDb)) throw std::invalid_argument("program_voltages: target below the weight floor");
    if (request.multistart < 1) throw std::invalid_argument("program_voltages: multistart must be >= 1");

    const auto n_sel = static_cast<int>(channels.size());
    const double inv_count = 1.0 / (static_cast<double>(kNumWeights) * n_sel);

    // Objective over z with v = 1 + sin(z): mean squared dB residual on
    // the selected channels.
    std::vector<double> w, jac;
    OptimizeProblem prob;
    prob.dimension = kNumMzi;
    prob.objective = [&](std::span<const double> z, std::span<double> g) {
        std::array<double, kNumMzi> v{};
        std::array<double, kNumMzi> dv{};
        for (int n = 0; n < kNumMzi; ++n) {
            v[static_cast<std::size_t>(n)] = 1.0 + std::sin(z[static_cast<std::size_t>(n)]);
            // The box is closed: sin saturates at +-1, keeping v in [0, 2].
            v[static_cast<std::size_t>(n)] = std::clamp(v[static_cast<std::size_t>(n)], 0.0, 2.0);
            dv[static_cast<std::size_t>(n)] = std::cos(z[static_cast<std::size_t>(n)]);
        }
        model.predict_with_jacobian(v, w, jac);
        double loss = 0.0;
        std::fill(g.begin(), g.end(), 0.0);
        for (int p = 0; p < kNumWeights; ++p) {
            for (int c = 0; c < n_sel; ++c) {
                const int k = channels[static_cast<std::size_t>(c)];
                const double e = w[static_cast<std::size_t>(p * nl + k)] - request.target_weights_db[static_cast<std::size_t>(p)];
                loss += e * e * inv_count;
                const double scale = 2.0 * e * inv_count;
                for (int n = 0; n < kNumMzi; ++n)
                    g[static_cast<std::size_t>(n)] +=
                        scale * jac[static_cast<std::size_t>((p * nl + k) * kNumMzi + n)] * dv[static_cast<std::size_t>(n)];
            }
        }
        return loss;
    };

    ProgramResult best;
    best.residual_rmse_db = 1e300;
    OptimizeOptions oopt;
    oopt.max_iterations = request.max_iterations;
    oopt.tol_grad = 1e-10;
    for (int start = 0; start < request.multistart; ++start) {
        Rng rng(request.seed, kTagStart, static_cast<std::uint64_t>(start));
        prob.x0.assign(kNumMzi, 0.0);
        for (int n = 0; n < kNumMzi; ++n)
            prob.x0[static_cast<std::size_t>(n)] = std::asin(rng.uniform(0.0, 2.0) - 1.0);
        const OptimizeReport rep = bfgs_minimize(prob, oopt);
        const double rmse = std::sqrt(std::max(0.0, rep.f_final));
        if (rmse < best.residual_rmse_db) {
            best.residual_rmse_db = rmse;
            for (int n = 0; n < kNumMzi; ++n)
                best.voltages_v[static_cast<std::size_t>(n)] =
                    std::clamp(1.0 + std::sin(rep.x_final[static_cast<std::size_t>(n)]), 0.0, 2.0);
        }
    }
    best.starts_run = request.multistart;

    // Recompute the achieved weights and residual from scratch so the
    // reported numbers are independent of the optimizer bookkeeping.
    const std::vector<double> achieved = model.predict(best.voltages_v);
    best.achieved_db.resize(static_cast<std::size_t>(kNumWeights) * channels.size());
    std::vector<double> target_rep(best.achieved_db.size());
    for (int p = 0; p < kNumWeights; ++p) {
        for (std::size_t c = 0; c < channels.size(); ++c) {
            best.achieved_db[static_cast<std::size_t>(p) * channels.size() + c] =
                achieved[static_cast<std::size_t>(p * nl + channels[c])];
            target_rep[static_cast<std::size_t>(p) * channels.size() + c] =
                request.target_weights_db[static_cast<std::size_t>(p)];
        }
    }
    best.residual_rmse_db = rmse_db(best.achieved_db, target_rep);
    best.reachable = best.residual_rmse_db <= request.unreachable_threshold_db;
    return best;
}

}  // namespace meshcal
