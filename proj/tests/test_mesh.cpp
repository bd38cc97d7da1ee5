#include <doctest.h>

#include <cmath>
#include <complex>

#include "meshcal/mesh.hpp"
#include "meshcal/rng.hpp"

using namespace meshcal;
using doctest::Approx;

namespace {

constexpr double kPi = 3.14159265358979323846;

// Independent scalar oracle for the single-MZI power factor:
// |r +- e^{i phi}|^2 / 4 evaluated with complex arithmetic.
double power_term_oracle(double phi, double er_db, MziState state) {
    const double er = std::pow(10.0, er_db / 10.0);
    const double r = (std::sqrt(er) - 1.0) / (std::sqrt(er) + 1.0);
    const std::complex<double> e(std::cos(phi), std::sin(phi));
    const std::complex<double> z = state == MziState::cross ? r + e : r - e;
    return 0.25 * std::norm(z);
}

std::array<double, kNumMzi> zeros() {
    return {};
}

}  // namespace

TEST_CASE("phase_from_voltage evaluates the quadratic heater law") {
    std::array<double, kNumMzi> phi0 = zeros();
    std::array<double, kNumMzi> phi2 = {1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0};
    phi0[0] = 0.3;
    MziPhaseParams p = MziPhaseParams::diagonal(phi0, phi2, 30.0);

    std::array<double, kNumMzi> v = zeros();
    v[0] = 2.0;
    CHECK(phase_from_voltage(p, 0, v) == Approx(4.3).epsilon(1e-12));

    SUBCASE("zero drive returns the offset exactly") {
        const std::array<double, kNumMzi> v0 = zeros();
        for (int m = 0; m < kNumMzi; ++m)
            CHECK(phase_from_voltage(p, m, v0) == phi0[static_cast<std::size_t>(m)]);
    }

    SUBCASE("crosstalk term couples a neighboring heater") {
        p.phi2(0, 1) = 0.05;
        std::array<double, kNumMzi> vx = zeros();
        vx[1] = 2.0;
        CHECK(phase_from_voltage(p, 0, vx) == Approx(0.3 + 0.05 * 4.0).epsilon(1e-12));
    }

    SUBCASE("wrong vector length is a contract violation") {
        std::vector<double> bad(4, 0.0);
        CHECK_THROWS_AS(phase_from_voltage(p, 0, bad), std::invalid_argument);
    }
}

TEST_CASE("ideal MZI transfer: symmetry points and unitarity") {
    const auto power = [](const std::array<std::complex<double>, 4>& t) {
        return std::array<double, 4>{std::norm(t[0]), std::norm(t[1]), std::norm(t[2]), std::norm(t[3])};
    };

    // phi = 0: full cross.
    auto p0 = power(ideal_mzi_transfer(0.0, 0.7));
    CHECK(p0[0] < 1e-12);
    CHECK(p0[1] == Approx(1.0).epsilon(1e-12));
    CHECK(p0[2] == Approx(1.0).epsilon(1e-12));
    CHECK(p0[3] < 1e-12);

    // phi = pi: full bar.
    auto ppi = power(ideal_mzi_transfer(kPi, -1.3));
    CHECK(ppi[0] == Approx(1.0).epsilon(1e-12));
    CHECK(ppi[1] < 1e-12);
    CHECK(ppi[2] < 1e-12);
    CHECK(ppi[3] == Approx(1.0).epsilon(1e-12));

    // phi = pi/2: even split.
    auto ph = power(ideal_mzi_transfer(kPi / 2.0, 0.0));
    for (double x : ph) CHECK(x == Approx(0.5).epsilon(1e-12));

    // Unitarity and row power over random phases.
    Rng rng(99);
    for (int trial = 0; trial < 1000; ++trial) {
        const double phi = rng.uniform(-10.0, 10.0);
        const double theta = rng.uniform(-10.0, 10.0);
        const auto t = ideal_mzi_transfer(phi, theta);
        // T * T^H == I
        const std::complex<double> a = t[0] * std::conj(t[0]) + t[1] * std::conj(t[1]);
        const std::complex<double> b = t[0] * std::conj(t[2]) + t[1] * std::conj(t[3]);
        const std::complex<double> d = t[2] * std::conj(t[2]) + t[3] * std::conj(t[3]);
        CHECK(std::abs(a - 1.0) < 1e-12);
        CHECK(std::abs(b) < 1e-12);
        CHECK(std::abs(d - 1.0) < 1e-12);
        // Column power (energy conservation into port 1).
        CHECK(std::abs(std::norm(t[0]) + std::norm(t[2]) - 1.0) < 1e-12);
    }
}

TEST_CASE("mzi_power_term matches the complex oracle and its limits") {
    Rng rng(5);
    for (int i = 0; i < 200; ++i) {
        const double phi = rng.uniform(-8.0, 8.0);
        const double er = rng.uniform(10.0, 40.0);
        for (MziState s : {MziState::bar, MziState::cross}) {
            CHECK(mzi_power_term(phi, er, s) == Approx(power_term_oracle(phi, er, s)).epsilon(1e-12));
        }
    }

    SUBCASE("infinite-ER limit reduces to cos^2/sin^2 of the half phase") {
        // The gap to the ideal form closes as (1-r)(1+r+2cos phi)/4,
        // bounded by 2/sqrt(ER); with the finite-ER peak folded into the
        // loss prefactor the residual gap drops to 1/ER.
        const double er_db = 120.0;  // 1e12 linear
        const double sqrt_er = 1e6;
        const double peak = mzi_power_term(0.0, er_db, MziState::cross);
        for (int k = 0; k <= 1000; ++k) {
            const double phi = -2.0 * kPi + 4.0 * kPi * k / 1000.0;
            const double c2 = std::cos(0.5 * phi) * std::cos(0.5 * phi);
            const double s2 = std::sin(0.5 * phi) * std::sin(0.5 * phi);
            CHECK(std::abs(mzi_power_term(phi, er_db, MziState::cross) - c2) <= 2.0 / sqrt_er);
            CHECK(std::abs(mzi_power_term(phi, er_db, MziState::bar) - s2) <= 2.0 / sqrt_er);
            CHECK(std::abs(mzi_power_term(phi, er_db, MziState::cross) - peak * c2) < 1e-6);
            CHECK(std::abs(mzi_power_term(phi, er_db, MziState::bar) - peak * s2) < 1e-6);
        }
    }

    SUBCASE("30 dB extinction values") {
        const double peak = mzi_power_term(0.0, 30.0, MziState::cross);
        const double null = mzi_power_term(kPi, 30.0, MziState::cross);
        CHECK(peak == Approx(0.93963).epsilon(1e-4));
        CHECK(null == Approx(9.397e-4).epsilon(1e-3));
        CHECK(10.0 * std::log10(null) == Approx(-30.27).epsilon(1e-3));
        // max/min over phi equals the linear ER exactly.
        CHECK(peak / null == Approx(1000.0).epsilon(1e-9));
    }

    SUBCASE("periodicity") {
        for (int i = 0; i < 50; ++i) {
            const double phi = rng.uniform(-5.0, 5.0);
            CHECK(std::abs(mzi_power_term(phi, 27.0, MziState::bar) -
                           mzi_power_term(phi + 2.0 * kPi, 27.0, MziState::bar)) < 1e-12);
        }
    }
}

TEST_CASE("default topology is valid and pins the measured route") {
    const MeshTopology t = MeshTopology::default_topology();
    const auto& p21 = t.path(2, 1);
    CHECK(p21[0].mzi == 1);
    CHECK(p21[0].state == MziState::bar);
    CHECK(p21[1].mzi == 4);
    CHECK(p21[1].state == MziState::cross);
    CHECK(p21[2].mzi == 8);
    CHECK(p21[2].state == MziState::bar);

    SUBCASE("JSON round trip") {
        const MeshTopology t2 = MeshTopology::from_json(t.to_json());
        CHECK(t2.to_json() == t.to_json());
    }

    SUBCASE("bad layer ordering rejected") {
        MeshTopology bad = t;
        std::swap(bad.paths[0][0], bad.paths[0][2]);
        CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
    }
}

TEST_CASE("sam_forward composes path terms and losses") {
    const MeshTopology topo = MeshTopology::default_topology();
    std::array<double, kNumMzi> phi2;
    phi2.fill(1.0);

    SUBCASE("all-cross path at zero phase, unit loss") {
        // Path (1,1) is all cross; drive phases to zero via phi0 = 0.
        MziPhaseParams p = MziPhaseParams::diagonal(zeros(), phi2, 30.0);
        LossMatrix unit;
        unit.alpha.fill(1.0);
        const std::array<double, kNumMzi> v = zeros();
        const WeightsDb w = sam_forward(topo, p, unit, v);
        const double expect = 3.0 * 10.0 * std::log10(power_term_oracle(0.0, 30.0, MziState::cross));
        CHECK(w.at(1, 1) == Approx(expect).epsilon(1e-12));
        CHECK(w.at(1, 1) == Approx(-0.8117).epsilon(1e-3));
    }

    SUBCASE("loss-only case at ideal ER") {
        MziPhaseParams p = MziPhaseParams::diagonal(zeros(), phi2, 240.0);
        LossMatrix half;
        half.alpha.fill(0.5);
        const std::array<double, kNumMzi> v = zeros();
        const WeightsDb w = sam_forward(topo, p, half, v);
        // (1,1) is all cross, max transmission at phi = 0.
        CHECK(w.at(1, 1) == Approx(-3.0103).epsilon(1e-4));
    }

    SUBCASE("one bar-state MZI at zero phase dominates the path") {
        // Path (2,1): MZI 1 bar, 4 cross, 8 bar. phi = 0 on MZI 1 puts it
        // at its null; phi = pi on 4 and 8 puts both at full transmission
        // ... cross peaks at 0, bar peaks at pi.
        MziPhaseParams p = MziPhaseParams::diagonal(zeros(), phi2, 30.0);
        p.phi0_rad[3] = 0.0;      // MZI 4, cross: peak at 0
        p.phi0_rad[0] = 0.0;      // MZI 1, bar: null at 0
        p.phi0_rad[7] = kPi;      // MZI 8, bar: peak at pi
        LossMatrix unit;
        unit.alpha.fill(1.0);
        const std::array<double, kNumMzi> v = zeros();
        const WeightsDb w = sam_forward(topo, p, unit, v);
        const double term_null = 10.0 * std::log10(power_term_oracle(0.0, 30.0, MziState::bar));
        const double term_peak_cross = 10.0 * std::log10(power_term_oracle(0.0, 30.0, MziState::cross));
        const double term_peak_bar = 10.0 * std::log10(power_term_oracle(kPi, 30.0, MziState::bar));
        CHECK(w.at(2, 1) == Approx(term_null + term_peak_cross + term_peak_bar).epsilon(1e-12));
        CHECK(w.at(2, 1) == Approx(-30.81).epsilon(1e-2));
    }

    SUBCASE("weights below the floor are clamped and flagged") {
        MziPhaseParams p = MziPhaseParams::diagonal(zeros(), phi2, 240.0);
        LossMatrix unit;
        unit.alpha.fill(1.0);
        // phi0 = pi on every MZI nulls all cross paths far below -60 dB.
        p.phi0_rad.fill(kPi);
        const std::array<double, kNumMzi> v = zeros();
        const WeightsDb w = sam_forward(topo, p, unit, v);
        CHECK(w.at(1, 1) == kWeightFloorDb);
        CHECK((w.floored & 1u) != 0);
    }
}

TEST_CASE("samxt_forward reduces to sam_forward for diagonal phase matrices") {
    const MeshTopology topo = MeshTopology::default_topology();
    Rng rng(17);
    std::array<double, kNumMzi> phi0, phi2;
    for (int m = 0; m < kNumMzi; ++m) {
        phi0[static_cast<std::size_t>(m)] = rng.uniform(0.0, 2.0 * kPi);
        phi2[static_cast<std::size_t>(m)] = rng.uniform(0.9, 1.2);
    }
    MziPhaseParams diag = MziPhaseParams::diagonal(phi0, phi2, 30.0);
    LossMatrix loss;
    for (auto& a : loss.alpha) a = rng.uniform(0.05, 1.0);

    for (int trial = 0; trial < 50; ++trial) {
        std::array<double, kNumMzi> v;
        for (auto& x : v) x = rng.uniform(0.0, 2.0);
        const WeightsDb a = sam_forward(topo, diag, loss, v);
        const WeightsDb b = samxt_forward(topo, diag, loss, v);
        for (int p = 0; p < kNumWeights; ++p)
            CHECK(a.w[static_cast<std::size_t>(p)] == Approx(b.w[static_cast<std::size_t>(p)]).epsilon(1e-12));
    }

    SUBCASE("single off-diagonal term composes the two oracles") {
        MziPhaseParams xt = diag;
        xt.phi2(0, 1) = 0.05;
        std::array<double, kNumMzi> v = zeros();
        v[1] = 2.0;
        // Hand-build the expected phase of MZI 1 and push it through the
        // diagonal pipeline via phi0.
        MziPhaseParams shifted = diag;
        shifted.phi0_rad[0] += 0.05 * 4.0;
        const WeightsDb expect = sam_forward(topo, shifted, loss, v);
        const WeightsDb got = samxt_forward(topo, xt, loss, v);
        for (int p = 0; p < kNumWeights; ++p)
            CHECK(got.w[static_cast<std::size_t>(p)] == Approx(expect.w[static_cast<std::size_t>(p)]).epsilon(1e-12));
    }

    SUBCASE("sam_forward rejects crosstalk matrices") {
        MziPhaseParams xt = diag;
        xt.phi2(2, 5) = 0.01;
        std::array<double, kNumMzi> v = zeros();
        CHECK_THROWS_AS(sam_forward(topo, xt, loss, v), std::invalid_argument);
    }
}

TEST_CASE("phase coefficients scale as 1/wavelength") {
    OpticalPathParams opt;
    const double lambda_c_nm = 1550.0;
    // Lambda2 chosen so phi2(1550 nm) = 1 V^-2.
    for (int m = 0; m < kNumMzi; ++m) {
        opt.lambda2_um_per_v2[static_cast<std::size_t>(m)] = 1.0 * (lambda_c_nm * 1e-3) / (2.0 * kPi);
        opt.lambda0_um[static_cast<std::size_t>(m)] = 1.7;
    }

    const MziPhaseParams at_c = phase_params_at_wavelength(opt, lambda_c_nm);
    CHECK(at_c.phi2(0, 0) == Approx(1.0).epsilon(1e-12));

    SUBCASE("slope at the reference wavelength") {
        const double h = 0.01;  // nm
        const double up = phase_params_at_wavelength(opt, lambda_c_nm + h).phi2(0, 0);
        const double dn = phase_params_at_wavelength(opt, lambda_c_nm - h).phi2(0, 0);
        const double slope_per_um = (up - dn) / (2.0 * h) * 1e3;
        CHECK(slope_per_um == Approx(-1.0 / 1.55).epsilon(1e-6));  // -0.645 um^-1 V^-2
    }

    SUBCASE("band edge values") {
        CHECK(phase_params_at_wavelength(opt, 1535.0).phi2(0, 0) == Approx(1550.0 / 1535.0).epsilon(1e-12));
        CHECK(phase_params_at_wavelength(opt, 1565.0).phi2(0, 0) == Approx(1550.0 / 1565.0).epsilon(1e-12));
        CHECK(1550.0 / 1535.0 == Approx(1.00977).epsilon(1e-5));
        CHECK(1550.0 / 1565.0 == Approx(0.99042).epsilon(1e-5));
    }

    SUBCASE("doubling the wavelength halves both coefficients") {
        const MziPhaseParams twice = phase_params_at_wavelength(opt, 2.0 * lambda_c_nm);
        CHECK(twice.phi2(0, 0) == Approx(0.5 * at_c.phi2(0, 0)).epsilon(1e-12));
        CHECK(twice.phi0_rad[0] == Approx(0.5 * at_c.phi0_rad[0]).epsilon(1e-12));
    }

    SUBCASE("strictly decreasing in wavelength") {
        double prev = phase_params_at_wavelength(opt, 1520.0).phi2(0, 0);
        for (double nm = 1521.0; nm <= 1580.0; nm += 1.0) {
            const double cur = phase_params_at_wavelength(opt, nm).phi2(0, 0);
            CHECK(cur < prev);
            prev = cur;
        }
    }

    SUBCASE("representation consistency at the reference wavelength") {
        // phi0 = 2 pi Lambda0 / lambda must invert exactly.
        const double phi0 = at_c.phi0_rad[0];
        const double lambda0_um = phi0 * (lambda_c_nm * 1e-3) / (2.0 * kPi);
        CHECK(std::abs(lambda0_um - opt.lambda0_um[0]) < 1e-9);
    }
}

TEST_CASE("ITU C-band grid") {
    const WavelengthGrid g = WavelengthGrid::itu_cband_100();
    CHECK(g.n_channels() == 100);
    CHECK(g.center_wavelengths_nm.front() > 1528.0);
    CHECK(g.center_wavelengths_nm.back() < 1569.0);
    // Reference channel sits within half a channel spacing of 1550 nm.
    CHECK(std::abs(g.reference_nm() - 1550.0) < 0.45);
    g.validate();
}
