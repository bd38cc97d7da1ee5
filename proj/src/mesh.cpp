#include "meshcal/mesh.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace meshcal {

namespace {

constexpr double kPi = 3.141592653589793238462643383279502884;
constexpr double kSpeedOfLightNmThz = 299792.458;  // c in nm * THz

const char* state_name(MziState s) {
    return s == MziState::bar ? "bar" : "cross";
}

MziState state_from_name(const std::string& s) {
    if (s == "bar") return MziState::bar;
    if (s == "cross") return MziState::cross;
    throw std::invalid_argument("unknown MZI state: " + s);
}

}  // namespace

MeshTopology MeshTopology::default_topology() {
    // Middle-layer assignment 4 + (i+j) mod 3 gives each input-layer and
    // middle-layer MZI exactly three paths. Route (2,1) and its states
    // are the measured ones; diagonal paths use all-cross states.
    MeshTopology t;
    t.paths.resize(kNumWeights);
    const auto set = [&](int i, int j, PathElement a, PathElement b, PathElement c) {
        t.paths[static_cast<std::size_t>(3 * (i - 1) + (j - 1))] = {a, b, c};
    };
    using S = MziState;
    set(1, 1, {1, S::cross}, {6, S::cross}, {7, S::cross});
    set(1, 2, {2, S::bar}, {4, S::cross}, {7, S::bar});
    set(1, 3, {3, S::cross}, {5, S::bar}, {7, S::bar});
    set(2, 1, {1, S::bar}, {4, S::cross}, {8, S::bar});
    set(2, 2, {2, S::cross}, {5, S::cross}, {8, S::cross});
    set(2, 3, {3, S::bar}, {6, S::bar}, {8, S::cross});
    set(3, 1, {1, S::cross}, {5, S::bar}, {9, S::bar});
    set(3, 2, {2, S::bar}, {6, S::bar}, {9, S::cross});
    set(3, 3, {3, S::cross}, {4, S::cross}, {9, S::cross});
    t.validate();
    return t;
}

void MeshTopology::validate() const {
    if (n_inputs != kNumInputs || n_outputs != kNumOutputs || n_mzi != kNumMzi)
        throw std::invalid_argument("topology: only the 3x3 mesh with 9 MZIs is supported");
    if (paths.size() != static_cast<std::size_t>(kNumWeights))
        throw std::invalid_argument("topology: expected one path per (output, input) pair");
    for (const auto& p : paths) {
        for (int layer = 0; layer < 3; ++layer) {
            const int m = p[static_cast<std::size_t>(layer)].mzi;
            if (m < 3 * layer + 1 || m > 3 * layer + 3)
                throw std::invalid_argument("topology: path element " + std::to_string(m) +
                                            " not in layer " + std::to_string(layer + 1));
        }
        if (!(p[0].mzi < p[1].mzi && p[1].mzi < p[2].mzi))
            throw std::invalid_argument("topology: path MZI indices must increase");
    }
}

json MeshTopology::to_json() const {
    json paths_j = json::array();
    for (int i = 1; i <= n_outputs; ++i) {
        for (int j = 1; j <= n_inputs; ++j) {
            const auto& p = path(i, j);
            json mzis = json::array();
            for (const auto& e : p) mzis.push_back({{"index", e.mzi}, {"state", state_name(e.state)}});
            paths_j.push_back({{"output", i}, {"input", j}, {"mzis", mzis}});
        }
    }
    return json{{"n_inputs", n_inputs}, {"n_outputs", n_outputs}, {"n_mzi", n_mzi}, {"paths", paths_j}};
}

MeshTopology MeshTopology::from_json(const json& j) {
    MeshTopology t;
    t.n_inputs = j.at("n_inputs").get<int>();
    t.n_outputs = j.at("n_outputs").get<int>();
    t.n_mzi = j.at("n_mzi").get<int>();
    t.paths.resize(kNumWeights);
    std::vector<bool> seen(kNumWeights, false);
    for (const auto& pj : j.at("paths")) {
        const int i = pj.at("output").get<int>();
        const int jj = pj.at("input").get<int>();
        if (i < 1 || i > 3 || jj < 1 || jj > 3) throw std::invalid_argument("topology: path index out of range");
        const auto& mzis = pj.at("mzis");
        if (mzis.size() != 3) throw std::invalid_argument("topology: each path must list 3 MZIs");
        std::array<PathElement, 3> p{};
        for (int k = 0; k < 3; ++k) {
            p[static_cast<std::size_t>(k)].mzi = mzis[static_cast<std::size_t>(k)].at("index").get<int>();
            p[static_cast<std::size_t>(k)].state =
                state_from_name(mzis[static_cast<std::size_t>(k)].at("state").get<std::string>());
        }
        const auto idx = static_cast<std::size_t>(3 * (i - 1) + (jj - 1));
        t.paths[idx] = p;
        seen[idx] = true;
    }
    if (std::find(seen.begin(), seen.end(), false) != seen.end())
        throw std::invalid_argument("topology: missing path entries");
    t.validate();
    return t;
}

MziPhaseParams MziPhaseParams::diagonal(const std::array<double, kNumMzi>& phi0,
                                        const std::array<double, kNumMzi>& phi2_diag, double er_db) {
    MziPhaseParams p;
    p.phi0_rad = phi0;
    p.er_db = er_db;
    for (int m = 0; m < kNumMzi; ++m) p.phi2(m, m) = phi2_diag[static_cast<std::size_t>(m)];
    return p;
}

bool MziPhaseParams::is_diagonal(double tol) const {
    for (int m = 0; m < kNumMzi; ++m)
        for (int n = 0; n < kNumMzi; ++n)
            if (m != n && std::abs(phi2(m, n)) > tol) return false;
    return true;
}

void MziPhaseParams::validate() const {
    if (!(er_db > 0.0)) throw std::invalid_argument("phase params: ER must be positive (dB)");
    for (int m = 0; m < kNumMzi; ++m)
        if (!(phi2(m, m) > 0.0)) throw std::invalid_argument("phase params: diagonal phi2 must be positive");
}

double LossMatrix::db(int p) const {
    return db_from_linear(alpha[static_cast<std::size_t>(p)]);
}

LossMatrix LossMatrix::from_db(const std::array<double, kNumWeights>& alpha_db) {
    LossMatrix l;
    for (int p = 0; p < kNumWeights; ++p)
        l.alpha[static_cast<std::size_t>(p)] = std::pow(10.0, alpha_db[static_cast<std::size_t>(p)] / 10.0);
    return l;
}

void LossMatrix::validate(bool passive) const {
    for (double a : alpha) {
        if (!(a > 0.0)) throw std::invalid_argument("loss matrix: entries must be strictly positive");
        if (passive && a > 1.0) throw std::invalid_argument("loss matrix: passive chip requires alpha <= 1");
    }
}

WavelengthGrid WavelengthGrid::itu_cband_100() {
    WavelengthGrid g;
    g.channel_spacing_ghz = 50.0;
    const int n = 100;
    g.center_wavelengths_nm.resize(n);
    const double f_hi_thz = 196.15;  // highest channel; wavelengths come out increasing
    for (int k = 0; k < n; ++k)
        g.center_wavelengths_nm[static_cast<std::size_t>(k)] = kSpeedOfLightNmThz / (f_hi_thz - 0.05 * k);
    double best = 1e300;
    for (int k = 0; k < n; ++k) {
        const double d = std::abs(g.center_wavelengths_nm[static_cast<std::size_t>(k)] - 1550.0);
        if (d < best) {
            best = d;
            g.reference_index = k;
        }
    }
    g.validate();
    return g;
}

WavelengthGrid WavelengthGrid::single(double wavelength_nm) {
    WavelengthGrid g;
    g.center_wavelengths_nm = {wavelength_nm};
    g.channel_spacing_ghz = 50.0;
    g.reference_index = 0;
    return g;
}

void WavelengthGrid::validate() const {
    if (center_wavelengths_nm.empty()) throw std::invalid_argument("wavelength grid: empty");
    for (std::size_t k = 1; k < center_wavelengths_nm.size(); ++k)
        if (!(center_wavelengths_nm[k] > center_wavelengths_nm[k - 1]))
            throw std::invalid_argument("wavelength grid: wavelengths must be strictly increasing");
    if (reference_index < 0 || reference_index >= n_channels())
        throw std::invalid_argument("wavelength grid: reference index out of range");
}

json WavelengthGrid::to_json() const {
    return json{{"center_wavelengths_nm", center_wavelengths_nm},
                {"channel_spacing_ghz", channel_spacing_ghz},
                {"reference_index", reference_index}};
}

WavelengthGrid WavelengthGrid::from_json(const json& j) {
    WavelengthGrid g;
    g.center_wavelengths_nm = j.at("center_wavelengths_nm").get<std::vector<double>>();
    g.channel_spacing_ghz = j.at("channel_spacing_ghz").get<double>();
    g.reference_index = j.at("reference_index").get<int>();
    g.validate();
    return g;
}

double db_from_linear(double lin) {
    const double floor_lin = std::pow(10.0, kWeightFloorDb / 10.0);
    if (!(lin > floor_lin)) return kWeightFloorDb;
    return 10.0 * std::log10(lin);
}

double phase_from_voltage(const MziPhaseParams& params, int m, std::span<const double> v) {
    if (v.size() != static_cast<std::size_t>(kNumMzi))
        throw std::invalid_argument("phase_from_voltage: voltage vector must have " + std::to_string(kNumMzi) +
                                    " entries");
    double phi = params.phi0_rad[static_cast<std::size_t>(m)];
    for (int n = 0; n < kNumMzi; ++n) {
        const double vn = v[static_cast<std::size_t>(n)];
        phi += params.phi2(m, n) * vn * vn;
    }
    return phi;
}

std::array<std::complex<double>, 4> ideal_mzi_transfer(double phi, double theta) {
    const std::complex<double> i1(0.0, 1.0);
    const std::complex<double> ephi = std::exp(i1 * phi);
    const std::complex<double> etheta = std::exp(i1 * theta);
    return {0.5 * etheta * (ephi - 1.0), 0.5 * i1 * etheta * (ephi + 1.0), 0.5 * i1 * (ephi + 1.0),
            -0.5 * (ephi - 1.0)};
}

double mzi_power_term(double phi_rad, double er_db, MziState state) {
    const double er = std::pow(10.0, er_db / 10.0);
    const double sq = std::sqrt(er);
    const double r = (sq - 1.0) / (sq + 1.0);
    const double sign = state == MziState::cross ? 1.0 : -1.0;
    // |r +- e^{i phi}|^2 = r^2 + 1 +- 2 r cos(phi)
    return 0.25 * (r * r + 1.0 + sign * 2.0 * r * std::cos(phi_rad));
}

double mzi_power_term_dphi(double phi_rad, double er_db, MziState state) {
    const double er = std::pow(10.0, er_db / 10.0);
    const double sq = std::sqrt(er);
    const double r = (sq - 1.0) / (sq + 1.0);
    const double sign = state == MziState::cross ? 1.0 : -1.0;
    return -0.5 * sign * r * std::sin(phi_rad);
}

WeightsDb samxt_forward(const MeshTopology& topology, const MziPhaseParams& phases, const LossMatrix& losses,
                        std::span<const double> v) {
    std::array<double, kNumMzi> phi{};
    for (int m = 0; m < kNumMzi; ++m) phi[static_cast<std::size_t>(m)] = phase_from_voltage(phases, m, v);
    std::array<double, kNumMzi> term_bar{};
    std::array<double, kNumMzi> term_cross{};
    for (int m = 0; m < kNumMzi; ++m) {
        term_bar[static_cast<std::size_t>(m)] = mzi_power_term(phi[static_cast<std::size_t>(m)], phases.er_db, MziState::bar);
        term_cross[static_cast<std::size_t>(m)] =
            mzi_power_term(phi[static_cast<std::size_t>(m)], phases.er_db, MziState::cross);
    }
    WeightsDb out;
    for (int p = 0; p < kNumWeights; ++p) {
        const auto& path = topology.paths[static_cast<std::size_t>(p)];
        double lin = losses.alpha[static_cast<std::size_t>(p)];
        for (const auto& e : path) {
            const auto m = static_cast<std::size_t>(e.mzi - 1);
            lin *= e.state == MziState::cross ? term_cross[m] : term_bar[m];
        }
        const double db = db_from_linear(lin);
        out.w[static_cast<std::size_t>(p)] = db;
        if (db == kWeightFloorDb) out.floored |= 1u << p;
    }
    return out;
}

WeightsDb sam_forward(const MeshTopology& topology, const MziPhaseParams& phases, const LossMatrix& losses,
                      std::span<const double> v) {
    if (!phases.is_diagonal())
        throw std::invalid_argument("sam_forward: phase matrix has crosstalk terms; use samxt_forward");
    return samxt_forward(topology, phases, losses, v);
}

MziPhaseParams phase_params_at_wavelength(const OpticalPathParams& opt, double lambda_nm) {
    if (!(lambda_nm > 0.0)) throw std::invalid_argument("phase_params_at_wavelength: wavelength must be positive");
    const double lambda_um = lambda_nm * 1e-3;
    MziPhaseParams p;
    for (int m = 0; m < kNumMzi; ++m) {
        p.phi0_rad[static_cast<std::size_t>(m)] = 2.0 * kPi * opt.lambda0_um[static_cast<std::size_t>(m)] / lambda_um;
        p.phi2(m, m) = 2.0 * kPi * opt.lambda2_um_per_v2[static_cast<std::size_t>(m)] / lambda_um;
    }
    return p;
}

}  // namespace meshcal
