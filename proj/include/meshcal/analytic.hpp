#pragma once

#include <array>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "meshcal/dataset.hpp"
#include "meshcal/forward_model.hpp"
#include "meshcal/mesh.hpp"
#include "meshcal/optimize.hpp"

namespace meshcal {

/// Fitted analytic mesh model: per-MZI phase parameters, shared
/// extinction ratio and per-path losses, predicting through the
/// closed-form transfer product at one wavelength. kind() is "sam" when
/// the phase matrix is diagonal and "samxt" when crosstalk terms are
/// present.
class AnalyticMeshModel : public ForwardModel {
public:
    AnalyticMeshModel(MeshTopology topology, MziPhaseParams phases, std::array<double, kNumWeights> alpha_db,
                      WavelengthGrid grid, bool crosstalk);

    std::string kind() const override { return crosstalk_ ? "samxt" : "sam"; }
    const WavelengthGrid& grid() const override { return grid_; }
    std::vector<double> predict(std::span<const double> v) const override;
    void predict_with_jacobian(std::span<const double> v, std::vector<double>& weights_db,
                               std::vector<double>& jac) const override;
    json to_json() const override;
    static AnalyticMeshModel from_json(const json& j);

    const MziPhaseParams& phases() const { return phases_; }
    const std::array<double, kNumWeights>& alpha_db() const { return alpha_db_; }
    const MeshTopology& topology() const { return topology_; }

    json provenance = json::object();  // dataset hash, seed, stage RMSEs; carried into files

private:
    MeshTopology topology_;
    MziPhaseParams phases_;
    std::array<double, kNumWeights> alpha_db_{};
    WavelengthGrid grid_;
    bool crosstalk_ = false;
};

struct AnalyticFitOptions {
    int max_training_points = 1000;  // cap on D_training records used by the alpha / crosstalk stages
    MeshTopology topology;           // routing table assumed by the model
    OptimizeOptions stage1;          // sweep stage
    OptimizeOptions stage2;          // training stage
    // Optional phase warm start; when empty, a coarse per-MZI grid
    // alignment on the sweep curves picks the basin. Per-wavelength
    // fitting shares one alignment across channels so every channel
    // polishes the same solution branch.
    std::vector<double> init_phi0_rad;       // 9 entries when set
    std::vector<double> init_phi2_rad_per_v2;  // 9 entries when set
    // Labels at or below this level count as saturated (one-sided
    // penalty only). NaN = auto: 1 dB above the dataset's bottom. The
    // per-wavelength study raises it to fit only the well-measured part
    // of each fringe; deep noisy nulls otherwise pepper the objective
    // with spurious local minima.
    double censor_db = std::numeric_limits<double>::quiet_NaN();
    // Keep the phase offsets pinned at init_phi0_rad during the sweep
    // stage. Used by the per-wavelength refit: the offsets follow the
    // smooth a + b/lambda law, and pinning them removes the phi0/phi2
    // compensation ridge from the per-channel estimates.
    bool freeze_phi0 = false;
    AnalyticFitOptions();
};

struct AnalyticFitReport {
    double stage1_rmse_db = 0.0;  // on the sweep set (phase fit)
    double stage2_rmse_db = 0.0;  // on the training records used
    int stage1_iterations = 0;
    int stage2_iterations = 0;
    double stage1_grad_norm = 0.0;
    double stage2_grad_norm = 0.0;
    bool warning = false;  // optimizer stopped on failure; best-so-far returned
    std::string warning_message;
};

struct SamFitResult {
    AnalyticMeshModel model;
    AnalyticFitReport report;
};

/// Two-stage analytic fit: phase offsets, self-heating coefficients and
/// the shared ER from the per-heater sweep, then path losses from the
/// random training records with the phase parameters frozen. Both
/// datasets must be single-channel.
SamFitResult fit_sam(const WeightDataset& sweep, const WeightDataset& training,
                     const AnalyticFitOptions& options = {});

/// Crosstalk extension: warm start from the fitted simple model and
/// optimize losses plus the full power-to-phase matrix on the training
/// records (phi0 and ER stay frozen).
SamFitResult fit_samxt(const AnalyticMeshModel& sam, const WeightDataset& training,
                       const AnalyticFitOptions& options = {});

struct PerWavelengthFit {
    std::vector<AnalyticMeshModel> models;  // one per channel
    std::vector<double> wavelengths_nm;
    // phi2[k * 9 + m]: fitted self-heating coefficient of MZI m at channel k.
    std::vector<double> phi2_rad_per_v2;
    std::array<double, kNumMzi> slope_per_um_v2{};         // least-squares d phi2 / d lambda
    std::array<double, kNumMzi> slope_stderr_per_um_v2{};  // standard error of that slope
    std::array<double, kNumMzi> phi2_at_reference{};
};

/// Independent analytic fit at every channel of a multi-wavelength
/// dataset, with the per-MZI phi2-versus-wavelength table and its
/// least-squares slopes.
PerWavelengthFit fit_sam_per_wavelength(const WeightDataset& sweep, const WeightDataset& training,
                                        const AnalyticFitOptions& options = {});

}  // namespace meshcal
