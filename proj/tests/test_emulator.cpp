#include <doctest.h>

#include <cmath>
#include <numeric>

#include "meshcal/emulator.hpp"
#include "meshcal/rng.hpp"

using namespace meshcal;
using doctest::Approx;

namespace {

/// Chip with no crosstalk, no noise, no heater nonlinearity and flat
/// dispersion: its reference-wavelength response must equal sam_forward.
ChipGroundTruth plain_chip(std::uint64_t seed) {
    ChipGroundTruth c = ChipGroundTruth::default_chip(seed);
    c.crosstalk_rad_per_v2.fill(0.0);
    c.heater_quartic_per_v2 = 0.0;
    c.noise.sigma_db = 0.0;
    c.noise.drift_db = 0.0;
    c.noise.floor_db = -200.0;
    return c;
}

}  // namespace

TEST_CASE("noise-free single-channel emulation equals sam_forward") {
    const ChipGroundTruth chip = plain_chip(11);
    const WavelengthGrid grid = WavelengthGrid::single(chip.reference_wavelength_nm);
    Rng rng(4);
    for (int trial = 0; trial < 20; ++trial) {
        std::array<double, kNumMzi> v;
        for (auto& x : v) x = rng.uniform(0.0, 2.0);
        const auto emulated = emulate_measurement(chip, v, grid, trial);
        const MziPhaseParams p = chip.phase_params(chip.reference_wavelength_nm);
        const WeightsDb direct = sam_forward(chip.topology, p, chip.losses_at(chip.reference_wavelength_nm), v);
        for (int q = 0; q < kNumWeights; ++q)
            CHECK(emulated[static_cast<std::size_t>(q)] == direct.w[static_cast<std::size_t>(q)]);
    }
}

TEST_CASE("emulation is deterministic in (seed, record id)") {
    ChipGroundTruth chip = ChipGroundTruth::default_chip(2);
    const WavelengthGrid grid = WavelengthGrid::single(1550.0);
    std::array<double, kNumMzi> v{0.3, 1.1, 0.2, 1.9, 0.5, 0.7, 1.3, 0.9, 1.5};
    const auto a = emulate_measurement(chip, v, grid, 77);
    const auto b = emulate_measurement(chip, v, grid, 77);
    CHECK(a == b);
    const auto c = emulate_measurement(chip, v, grid, 78);
    CHECK(a != c);
}

TEST_CASE("repeat averaging shrinks the noise as 1/sqrt(n)") {
    ChipGroundTruth chip = plain_chip(5);
    chip.noise.sigma_db = 0.2;
    chip.noise.n_repeats = 6;
    const WavelengthGrid grid = WavelengthGrid::single(1550.0);
    const std::array<double, kNumMzi> v{1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0};
    const WeightsDb clean = chip.clean_weights(v, 1550.0);

    const int draws = 20000;
    double sum = 0.0, sq = 0.0;
    for (int i = 0; i < draws; ++i) {
        const auto w = emulate_measurement(chip, v, grid, i);
        const double e = w[4] - clean.w[4];
        sum += e;
        sq += e * e;
    }
    const double mean = sum / draws;
    const double sd = std::sqrt(sq / draws - mean * mean);
    const double expect = 0.2 / std::sqrt(6.0);
    CHECK(sd == Approx(expect).epsilon(0.05));
    CHECK(std::abs(mean) < 0.005);

    SUBCASE("variance scales as 1/n_repeats") {
        chip.noise.n_repeats = 1;
        double sq1 = 0.0, s1 = 0.0;
        for (int i = 0; i < draws; ++i) {
            const auto w = emulate_measurement(chip, v, grid, i);
            const double e = w[4] - clean.w[4];
            s1 += e;
            sq1 += e * e;
        }
        const double var1 = sq1 / draws - (s1 / draws) * (s1 / draws);
        const double var6 = sd * sd;
        CHECK(var1 / var6 == Approx(6.0).epsilon(0.20));
    }
}

TEST_CASE("voltage bounds are enforced") {
    const ChipGroundTruth chip = plain_chip(1);
    const WavelengthGrid grid = WavelengthGrid::single(1550.0);
    std::array<double, kNumMzi> v{};
    v[3] = 2.4;
    CHECK_THROWS_AS(emulate_measurement(chip, v, grid, 0), std::invalid_argument);
    v[3] = -0.1;
    CHECK_THROWS_AS(emulate_measurement(chip, v, grid, 0), std::invalid_argument);
}

TEST_CASE("sweep dataset follows the one-heater-at-a-time protocol") {
    const ChipGroundTruth chip = ChipGroundTruth::default_chip(7);
    const WavelengthGrid grid = WavelengthGrid::single(1550.0);
    const WeightDataset ds = generate_sweep_dataset(chip, grid);
    CHECK(ds.size() == 189);
    CHECK(ds.split("sweep").size() == 189);

    const auto baseline = sweep_baseline_voltages(chip);
    for (const auto& r : ds.records) {
        int moved = 0;
        for (int m = 0; m < kNumMzi; ++m)
            if (r.voltages_v[static_cast<std::size_t>(m)] != baseline[static_cast<std::size_t>(m)]) ++moved;
        CHECK(moved <= 1);
    }

    SUBCASE("baseline is a local maximum of the diagonal sum on the 0.1 V grid") {
        const auto diag_sum = [&](const std::array<double, kNumMzi>& v) {
            const WeightsDb w = chip.clean_weights(v, chip.reference_wavelength_nm);
            return w.at(1, 1) + w.at(2, 2) + w.at(3, 3);
        };
        const double base_val = diag_sum(baseline);
        for (int m = 0; m < kNumMzi; ++m) {
            for (double d : {-0.1, 0.1}) {
                auto v = baseline;
                const double moved = v[static_cast<std::size_t>(m)] + d;
                if (moved < -1e-12 || moved > 2.0 + 1e-12) continue;
                v[static_cast<std::size_t>(m)] = std::clamp(moved, 0.0, 2.0);
                CHECK(diag_sum(v) <= base_val + 1e-9);
            }
        }
    }
}

TEST_CASE("random dataset: counts, split sizes, determinism, statistics") {
    const ChipGroundTruth chip = plain_chip(21);
    const WavelengthGrid grid = WavelengthGrid::single(1550.0);

    SUBCASE("paper-sized run splits 5100 into 3570/765/765") {
        const WeightDataset ds = generate_random_dataset(chip, grid, 5100);
        CHECK(ds.size() == 5100);
        CHECK(ds.split("training").size() == 3570);
        CHECK(ds.split("validation").size() == 765);
        CHECK(ds.split("testing").size() == 765);
        ds.validate();

        // Law of large numbers on the voltage draws.
        for (int m = 0; m < kNumMzi; ++m) {
            double mean = 0.0;
            for (const auto& r : ds.records) mean += r.voltages_v[static_cast<std::size_t>(m)];
            mean /= static_cast<double>(ds.size());
            CHECK(mean == Approx(1.0).epsilon(0.02));
        }
    }

    SUBCASE("same seed reproduces identical records and splits") {
        const WeightDataset a = generate_random_dataset(chip, grid, 100);
        const WeightDataset b = generate_random_dataset(chip, grid, 100);
        REQUIRE(a.size() == b.size());
        for (std::size_t i = 0; i < a.size(); ++i) {
            CHECK(a.records[i].voltages_v == b.records[i].voltages_v);
            CHECK(a.records[i].weights_db == b.records[i].weights_db);
        }
        CHECK(a.splits == b.splits);
    }

    SUBCASE("validation can be merged into training") {
        const WeightDataset ds = generate_random_dataset(chip, grid, 100, 0.70, 0.15, 0.15, true);
        CHECK(ds.split("training").size() == 85);
        CHECK(!ds.has_split("validation"));
    }

    SUBCASE("too-small requests are refused") {
        CHECK_THROWS_AS(generate_random_dataset(chip, grid, 9), std::invalid_argument);
    }
}

TEST_CASE("chip config JSON round trip preserves the hash") {
    const ChipGroundTruth chip = ChipGroundTruth::default_chip(3);
    const json j = chip.to_json();
    const ChipGroundTruth back = ChipGroundTruth::from_json(j);
    CHECK(back.config_hash() == chip.config_hash());
    CHECK(back.to_json() == j);
}

TEST_CASE("crosstalk must stay below self-heating") {
    ChipGroundTruth chip = ChipGroundTruth::default_chip(3);
    chip.crosstalk(0, 1) = 5.0;
    CHECK_THROWS_AS(chip.validate(), std::invalid_argument);
}
