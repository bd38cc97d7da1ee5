#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>

#include "meshcal/dataset.hpp"
#include "meshcal/mesh.hpp"

namespace meshcal {

struct MeasurementNoiseSpec {
    double sigma_db = 0.2;  // additive dB noise per channel per repeat
    int n_repeats = 6;      // repeats averaged per record
    double drift_db = 0.0;  // per-record offset amplitude, 0 disables
    // Receiver dynamic-range floor: additive optical noise power at this
    // equivalent weight level, so measured weights bottom out near it
    // the way the physical read-out does. <= -200 disables.
    double floor_db = -200.0;

    bool floor_enabled() const { return floor_db > -200.0; }
    void validate() const;
};

/// Synthetic stand-in for the fabricated chip. Holds the full physical
/// parameter set the models are later asked to recover: per-MZI optical
/// path parameters (wavelength dependence), thermal crosstalk matrix,
/// per-path losses with optional spectral slope, extinction ratio,
/// heater nonlinearity and the measurement noise spec.
struct ChipGroundTruth {
    MeshTopology topology;
    OpticalPathParams opt_params;
    // Off-diagonal thermal coupling at the reference wavelength, rad/V^2.
    // Diagonal entries must be zero (self-heating comes from opt_params).
    std::array<double, kNumMzi * kNumMzi> crosstalk_rad_per_v2{};
    std::array<double, kNumWeights> loss_alpha_db{};        // per path, <= 0
    std::array<double, kNumWeights> loss_slope_db_per_nm{};  // per path, about the reference wavelength
    double er_db = 30.0;
    // Drive-to-heat deviation from the ideal quadratic law: the phase
    // terms use v^2 (1 + q v^2) instead of v^2. Zero restores the exact
    // analytic form.
    double heater_quartic_per_v2 = 0.0;
    bool dispersive = true;  // false freezes phase params at the reference wavelength
    double reference_wavelength_nm = 1550.0;
    MeasurementNoiseSpec noise;
    std::uint64_t seed = 0;

    double crosstalk(int m, int n) const { return crosstalk_rad_per_v2[static_cast<std::size_t>(m * kNumMzi + n)]; }
    double& crosstalk(int m, int n) { return crosstalk_rad_per_v2[static_cast<std::size_t>(m * kNumMzi + n)]; }

    /// Full phase parameter set at one wavelength (diagonal from
    /// opt_params, off-diagonals from the crosstalk matrix, both scaled
    /// by reference_wavelength / lambda unless the chip is flat).
    MziPhaseParams phase_params(double lambda_nm) const;
    LossMatrix losses_at(double lambda_nm) const;
    /// Effective heater drive q(v) = v^2 (1 + quartic v^2) per heater.
    std::array<double, kNumMzi> heater_drive(std::span<const double> v) const;

    /// Noise-free weights at one wavelength.
    WeightsDb clean_weights(std::span<const double> v, double lambda_nm) const;

    void validate() const;
    json to_json() const;
    static ChipGroundTruth from_json(const json& j);
    void save(const std::filesystem::path& path) const;
    static ChipGroundTruth load(const std::filesystem::path& path);
    /// Hash of the canonical JSON form, for provenance fields.
    std::string config_hash() const;

    /// Randomized chip with the documented fabrication statistics:
    /// phi0 uniform over a period plus one wrap, phi2(ref) in
    /// [0.9, 1.2] rad/V^2, path losses in [-11, -9] dB, nearest /
    /// next-nearest crosstalk at 8% / 3% of the diagonal.
    static ChipGroundTruth default_chip(std::uint64_t seed);
};

/// One synthetic measurement: weights in dB for every grid channel,
/// row-major 9 x n_channels, noise averaged over the spec'd repeats.
/// Deterministic in (chip.seed, record_id) so records can be produced
/// in any order or in parallel.
std::vector<double> emulate_measurement(const ChipGroundTruth& chip, std::span<const double> v,
                                        const WavelengthGrid& grid, std::int64_t record_id = 0);

/// Per-heater sweep protocol: each heater stepped 0.0-2.0 V in 0.1 V
/// steps while the others sit at constants that maximize the diagonal
/// weights (coordinate grid search on the noise-free chip).
WeightDataset generate_sweep_dataset(const ChipGroundTruth& chip, const WavelengthGrid& grid);

/// Baseline voltages used by the sweep protocol (exposed for tests).
std::array<double, kNumMzi> sweep_baseline_voltages(const ChipGroundTruth& chip);

/// Uniform random voltage protocol with a seeded shuffle split into
/// training / validation / testing. When merge_validation is set the
/// validation indices are appended to training instead.
WeightDataset generate_random_dataset(const ChipGroundTruth& chip, const WavelengthGrid& grid, int n = 5100,
                                      double train_frac = 0.70, double val_frac = 0.15, double test_frac = 0.15,
                                      bool merge_validation = false);

}  // namespace meshcal
