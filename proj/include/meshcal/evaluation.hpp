#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "meshcal/dataset.hpp"
#include "meshcal/forward_model.hpp"
#include "meshcal/neural.hpp"

namespace meshcal {

/// Root-mean-square dB error over all entries of two equally-shaped
/// weight tensors.
double rmse_db(std::span<const double> pred, std::span<const double> label);

/// Coefficient of determination over the flattened dB entries.
double r_squared(std::span<const double> pred, std::span<const double> label);

struct HistogramBin {
    double lo, hi;
    std::int64_t count;
    double density;  // count / (n * width)
};

/// Per-entry prediction errors of a model on one dataset split, with
/// the summary statistics the reports are built from.
struct ErrorDistribution {
    std::vector<double> samples;  // predicted - measured, dB
    double rmse = 0.0;
    double min = 0.0;
    double max = 0.0;

    static ErrorDistribution from_samples(std::vector<double> samples);
    std::vector<HistogramBin> histogram(double bin_width = 0.1) const;
};

/// Runs the model over every record of a dataset (records in split
/// order when `split` is non-empty) and collects per-entry errors.
/// The model's channels must match the dataset's.
ErrorDistribution evaluate_model(const ForwardModel& model, const WeightDataset& ds, const std::string& split = "");

/// Predictions and labels side by side (scatter-plot data).
struct PredictionTable {
    std::vector<double> predicted_db;
    std::vector<double> measured_db;
    double rmse = 0.0;
    double r2 = 0.0;
};
PredictionTable prediction_table(const ForwardModel& model, const WeightDataset& ds, const std::string& split = "");

/// Eq.-4 RMSE restricted to each spectral channel.
std::vector<std::pair<double, double>> per_wavelength_rmse(const ForwardModel& model, const WeightDataset& ds,
                                                           const std::string& split = "");

struct SizeSweepCell {
    int size = 0;
    std::uint64_t seed = 0;
    double train_rmse_db = 0.0;
    double val_rmse_db = 0.0;
    double test_rmse_db = 0.0;
};

struct SizeSweepReport {
    std::vector<SizeSweepCell> cells;
    struct SizeSummary {
        int size;
        double median, p25, p75;  // testing RMSE percentiles over seeds
    };
    std::vector<SizeSummary> summary;
    void write_csv(const std::filesystem::path& path) const;
};

/// Default training-set sizes: log-spaced 250..3570 with 3250 pinned.
std::vector<int> default_sweep_sizes(int max_available);

/// Re-trains one architecture over (size, seed) cells: the first `size`
/// records of the fixed training split, one model per seed. Cells run
/// in parallel; results are keyed so ordering is deterministic.
SizeSweepReport size_seed_sweep(const SurrogateArchitecture& arch, const WeightDataset& dataset,
                                const std::vector<int>& sizes, const std::vector<std::uint64_t>& seeds,
                                const TrainOptions& base_options = {});

/// Linear interpolation percentile (q in [0, 100]) of a sample set.
double percentile(std::vector<double> values, double q);

}  // namespace meshcal
