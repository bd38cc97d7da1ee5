#include "meshcal/forward_model.hpp"

#include <cmath>
#include <stdexcept>

#include "meshcal/analytic.hpp"
#include "meshcal/emulator.hpp"
#include "meshcal/neural.hpp"

namespace meshcal {

void ForwardModel::save(const std::filesystem::path& path) const {
    save_json(path, to_json());
}

std::unique_ptr<ForwardModel> ForwardModel::from_json(const json& j) {
    if (j.value("format", "") != "meshcal-model") throw std::invalid_argument("model file: wrong format tag");
    const std::string kind = j.at("kind").get<std::string>();
    if (kind == "sam" || kind == "samxt") return std::make_unique<AnalyticMeshModel>(AnalyticMeshModel::from_json(j));
    if (kind == "chip")
        return chip_forward_model(ChipGroundTruth::from_json(j.at("chip")), WavelengthGrid::from_json(j.at("grid")));
    return std::make_unique<NeuralSurrogate>(NeuralSurrogate::from_json(j));
}

std::unique_ptr<ForwardModel> ForwardModel::load(const std::filesystem::path& path) {
    return from_json(load_json(path));
}

namespace {

/// Noise-free chip response exposed through the model interface.
class ChipModel : public ForwardModel {
public:
    ChipModel(ChipGroundTruth chip, WavelengthGrid grid) : chip_(std::move(chip)), grid_(std::move(grid)) {
        chip_.validate();
    }

    std::string kind() const override { return "chip"; }
    const WavelengthGrid& grid() const override { return grid_; }

    std::vector<double> predict(std::span<const double> v) const override {
        const int nl = grid_.n_channels();
        std::vector<double> out(static_cast<std::size_t>(kNumWeights) * nl);
        for (int k = 0; k < nl; ++k) {
            const WeightsDb w = chip_.clean_weights(v, grid_.center_wavelengths_nm[static_cast<std::size_t>(k)]);
            for (int p = 0; p < kNumWeights; ++p) out[static_cast<std::size_t>(p * nl + k)] = w.w[static_cast<std::size_t>(p)];
        }
        return out;
    }

    void predict_with_jacobian(std::span<const double> v, std::vector<double>& weights_db,
                               std::vector<double>& jac) const override {
        const int nl = grid_.n_channels();
        weights_db = predict(v);
        jac.assign(static_cast<std::size_t>(kNumWeights) * nl * kNumMzi, 0.0);
        constexpr double kDbPerLn = 4.342944819032518;
        for (int k = 0; k < nl; ++k) {
            const double lambda = grid_.center_wavelengths_nm[static_cast<std::size_t>(k)];
            const MziPhaseParams phases = chip_.phase_params(lambda);
            const auto q = chip_.heater_drive(v);
            // d q_n / d v_n through the quartic heater term.
            std::array<double, kNumMzi> dq{};
            for (int n = 0; n < kNumMzi; ++n) {
                const double vn = v[static_cast<std::size_t>(n)];
                dq[static_cast<std::size_t>(n)] =
                    2.0 * vn + 4.0 * chip_.heater_quartic_per_v2 * vn * vn * vn;
            }
            const double er = std::pow(10.0, chip_.er_db / 10.0);
            const double sqrt_er = std::sqrt(er);
            const double r = (sqrt_er - 1.0) / (sqrt_er + 1.0);
            double f[kNumMzi][2], df[kNumMzi][2];
            for (int m = 0; m < kNumMzi; ++m) {
                double phi = phases.phi0_rad[static_cast<std::size_t>(m)];
                for (int n = 0; n < kNumMzi; ++n) phi += phases.phi2(m, n) * q[static_cast<std::size_t>(n)];
                const double c = std::cos(phi);
                const double s = std::sin(phi);
                f[m][0] = 0.25 * (r * r + 1.0 - 2.0 * r * c);
                f[m][1] = 0.25 * (r * r + 1.0 + 2.0 * r * c);
                df[m][0] = 0.5 * r * s;
                df[m][1] = -0.5 * r * s;
            }
            for (int p = 0; p < kNumWeights; ++p) {
                if (weights_db[static_cast<std::size_t>(p * nl + k)] <= kWeightFloorDb) continue;
                const auto& path = chip_.topology.paths[static_cast<std::size_t>(p)];
                for (const auto& e : path) {
                    const int m = e.mzi - 1;
                    const int side = e.state == MziState::cross ? 1 : 0;
                    const double term = kDbPerLn * df[m][side] / f[m][side];
                    for (int n = 0; n < kNumMzi; ++n) {
                        const double dphi = phases.phi2(m, n) * dq[static_cast<std::size_t>(n)];
                        if (dphi != 0.0)
                            jac[static_cast<std::size_t>((p * nl + k) * kNumMzi + n)] += term * dphi;
                    }
                }
            }
        }
    }

    json to_json() const override {
        return json{{"format", "meshcal-model"}, {"kind", "chip"}, {"chip", chip_.to_json()}, {"grid", grid_.to_json()}};
    }

private:
    ChipGroundTruth chip_;
    WavelengthGrid grid_;
};

}  // namespace

std::unique_ptr<ForwardModel> chip_forward_model(const ChipGroundTruth& chip, const WavelengthGrid& grid) {
    return std::make_unique<ChipModel>(chip, grid);
}

}  // namespace meshcal
