#pragma once

#include <filesystem>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "meshcal/io_util.hpp"
#include "meshcal/mesh.hpp"

namespace meshcal {

/// Common surface of every fitted voltage -> weights model. Predictions
/// are 9 x n_lambda dB tensors (row-major over weight index, then
/// channel), matching the dataset layout. Implementations are immutable
/// after construction and safe for concurrent reads.
class ForwardModel {
public:
    virtual ~ForwardModel() = default;

    virtual std::string kind() const = 0;
    virtual const WavelengthGrid& grid() const = 0;
    int n_lambda() const { return grid().n_channels(); }

    /// Weights in dB for a drive vector (9 voltages in [0, 2] V).
    virtual std::vector<double> predict(std::span<const double> v) const = 0;

    /// Jacobian of every output entry with respect to the voltages:
    /// jac[(p * n_lambda + k) * 9 + n] = d w_db[p,k] / d v_n. Entries
    /// clamped at the weight floor carry zero gradient.
    virtual void predict_with_jacobian(std::span<const double> v, std::vector<double>& weights_db,
                                       std::vector<double>& jac) const = 0;

    virtual json to_json() const = 0;
    void save(const std::filesystem::path& path) const;

    static std::unique_ptr<ForwardModel> from_json(const json& j);
    static std::unique_ptr<ForwardModel> load(const std::filesystem::path& path);
};

/// Noise-free view of a chip ground truth as a ForwardModel, used to
/// program voltages against the emulator itself.
std::unique_ptr<ForwardModel> chip_forward_model(const struct ChipGroundTruth& chip, const WavelengthGrid& grid);

}  // namespace meshcal
