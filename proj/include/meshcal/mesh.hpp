#pragma once

#include <array>
#include <complex>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "meshcal/io_util.hpp"

namespace meshcal {

inline constexpr int kNumInputs = 3;
inline constexpr int kNumOutputs = 3;
inline constexpr int kNumMzi = 9;
inline constexpr int kNumWeights = kNumInputs * kNumOutputs;

/// Floor for weights expressed in dB. Power ratios below this are
/// clamped before and after the log conversion so downstream math
/// never sees -inf.
inline constexpr double kWeightFloorDb = -60.0;

enum class MziState : std::uint8_t { bar, cross };

struct PathElement {
    int mzi;  // 1-based MZI index
    MziState state;
};

/// Routing table for the 3x3 mesh: one entry per (output i, input j)
/// pair, each listing the three MZIs traversed (one per layer) and the
/// port state used at each. The mesh has three layers: MZIs 1-3 face
/// the inputs, 4-6 sit in the middle, 7-9 face the outputs.
struct MeshTopology {
    int n_inputs = kNumInputs;
    int n_outputs = kNumOutputs;
    int n_mzi = kNumMzi;
    // paths[3*(i-1) + (j-1)] is the route from input j to output i.
    std::vector<std::array<PathElement, 3>> paths;

    const std::array<PathElement, 3>& path(int out_i, int in_j) const {
        return paths[static_cast<std::size_t>(3 * (out_i - 1) + (in_j - 1))];
    }

    /// Default table. Only the route for weight (2,1) is pinned by
    /// measurement [MZIs 1 bar, 4 cross, 8 bar]; the rest is a
    /// configurable assumption (see docs), loadable from JSON.
    static MeshTopology default_topology();

    void validate() const;
    json to_json() const;
    static MeshTopology from_json(const json& j);
};

/// Per-MZI phase parameters. phi2 is the full power-to-phase matrix in
/// rad/V^2: the diagonal is the self-heating coefficient, off-diagonal
/// entry (m,n) is the phase picked up by MZI m per V^2 on heater n.
struct MziPhaseParams {
    std::array<double, kNumMzi> phi0_rad{};
    std::array<double, kNumMzi * kNumMzi> phi2_rad_per_v2{};
    double er_db = 30.0;

    double phi2(int m, int n) const { return phi2_rad_per_v2[static_cast<std::size_t>(m * kNumMzi + n)]; }
    double& phi2(int m, int n) { return phi2_rad_per_v2[static_cast<std::size_t>(m * kNumMzi + n)]; }

    static MziPhaseParams diagonal(const std::array<double, kNumMzi>& phi0,
                                   const std::array<double, kNumMzi>& phi2_diag, double er_db);
    bool is_diagonal(double tol = 0.0) const;
    void validate() const;
};

/// Linear power transmission per path, indexed like the weights
/// (row-major over outputs x inputs).
struct LossMatrix {
    std::array<double, kNumWeights> alpha{};  // linear, in (0, 1] for a passive chip

    double db(int p) const;
    static LossMatrix from_db(const std::array<double, kNumWeights>& alpha_db);
    void validate(bool passive = true) const;
};

/// Wavelength-independent description of each MZI: optical path
/// difference at zero drive and its power-to-path-difference ratio.
/// Phase coefficients at wavelength lambda follow as 2*pi*Lambda/lambda.
struct OpticalPathParams {
    std::array<double, kNumMzi> lambda0_um{};
    std::array<double, kNumMzi> lambda2_um_per_v2{};
};

struct WavelengthGrid {
    std::vector<double> center_wavelengths_nm;  // strictly increasing
    double channel_spacing_ghz = 0.0;
    int reference_index = 0;  // channel closest to the 1550 nm anchor

    int n_channels() const { return static_cast<int>(center_wavelengths_nm.size()); }
    double reference_nm() const { return center_wavelengths_nm[static_cast<std::size_t>(reference_index)]; }

    /// 100 channels on the 50 GHz ITU grid spanning the C-band
    /// (191.20-196.15 THz), listed in increasing wavelength.
    static WavelengthGrid itu_cband_100();
    /// Single-channel grid at the given wavelength.
    static WavelengthGrid single(double wavelength_nm);

    void validate() const;
    json to_json() const;
    static WavelengthGrid from_json(const json& j);
};

/// 3x3 weight matrix in dB, row-major, plus a bitmask of entries that
/// were clamped at the floor.
struct WeightsDb {
    std::array<double, kNumWeights> w{};
    unsigned floored = 0;

    double at(int i, int j) const { return w[static_cast<std::size_t>(3 * (i - 1) + (j - 1))]; }
};

double db_from_linear(double lin);

/// Phase of MZI m (0-based) under drive v: phi0_m + sum_n phi2(m,n) v_n^2.
double phase_from_voltage(const MziPhaseParams& params, int m, std::span<const double> v);

/// Ideal 2x2 MZI transfer matrix (row-major), unitary for all phases.
std::array<std::complex<double>, 4> ideal_mzi_transfer(double phi, double theta);

/// Single-MZI linear power factor with finite extinction ratio:
/// |(sqrt(ER)-1)/(sqrt(ER)+1) +- e^{i phi}|^2 / 4, '+' in the cross
/// state, '-' in the bar state. ER is passed in dB.
double mzi_power_term(double phi_rad, double er_db, MziState state);
/// d(mzi_power_term)/d(phi), same arguments.
double mzi_power_term_dphi(double phi_rad, double er_db, MziState state);

/// Analytic forward model of the mesh: per-path loss times the product
/// of the traversed MZI power factors, in dB. `phases` may carry a full
/// crosstalk matrix; with a diagonal matrix this is the simple
/// analytical model, with off-diagonal terms the crosstalk-aware one.
WeightsDb samxt_forward(const MeshTopology& topology, const MziPhaseParams& phases, const LossMatrix& losses,
                        std::span<const double> v);

/// Diagonal-only convenience wrapper; throws if `phases` has crosstalk terms.
WeightsDb sam_forward(const MeshTopology& topology, const MziPhaseParams& phases, const LossMatrix& losses,
                      std::span<const double> v);

/// Phase coefficients at a wavelength: phi0 = 2 pi Lambda0 / lambda,
/// phi2 = 2 pi Lambda2 / lambda (diagonal matrix, ER left at default).
MziPhaseParams phase_params_at_wavelength(const OpticalPathParams& opt, double lambda_nm);

}  // namespace meshcal
