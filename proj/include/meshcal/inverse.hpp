#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "meshcal/forward_model.hpp"

namespace meshcal {

/// Inverse-programming request: find heater voltages so the model
/// realizes the target 3x3 weight matrix on the selected channels.
struct ProgramRequest {
    std::array<double, kNumWeights> target_weights_db{};
    std::vector<int> channels;  // empty = every channel of the model
    int multistart = 8;
    std::uint64_t seed = 0;
    double unreachable_threshold_db = 1.0;
    int max_iterations = 300;
};

struct ProgramResult {
    std::array<double, kNumMzi> voltages_v{};
    std::vector<double> achieved_db;  // 9 x selected channels
    double residual_rmse_db = 0.0;
    bool reachable = true;
    int starts_run = 0;
};

/// Gradient-based programming with the box handled by the smooth
/// reparameterization v = 1 + sin(z); best of `multistart` seeded runs.
ProgramResult program_voltages(const ForwardModel& model, const ProgramRequest& request);

}  // namespace meshcal
