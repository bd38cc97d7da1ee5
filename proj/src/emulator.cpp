#include "meshcal/emulator.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "meshcal/parallel.hpp"
#include "meshcal/rng.hpp"

namespace meshcal {

namespace {

constexpr double kPi = 3.141592653589793238462643383279502884;

// Stream tags for the per-purpose RNGs.
constexpr std::uint64_t kTagNoise = 0x6e6f697365ULL;     // record noise
constexpr std::uint64_t kTagVolts = 0x766f6c7473ULL;     // random voltages
constexpr std::uint64_t kTagSplit = 0x73706c6974ULL;     // split shuffle
constexpr std::uint64_t kTagFab = 0x666162ULL;           // fabrication draws

void check_voltages(std::span<const double> v) {
    if (v.size() != static_cast<std::size_t>(kNumMzi))
        throw std::invalid_argument("emulator: voltage vector must have 9 entries");
    for (double x : v)
        if (!(x >= 0.0 && x <= 2.0))
            throw std::invalid_argument("emulator: voltages must lie in [0, 2] V (measured half-period)");
}

}  // namespace

void MeasurementNoiseSpec::validate() const {
    if (!(sigma_db >= 0.0)) throw std::invalid_argument("noise spec: sigma_db must be >= 0");
    if (n_repeats < 1) throw std::invalid_argument("noise spec: n_repeats must be >= 1");
    if (!(drift_db >= 0.0)) throw std::invalid_argument("noise spec: drift_db must be >= 0");
}

MziPhaseParams ChipGroundTruth::phase_params(double lambda_nm) const {
    const double eff_lambda = dispersive ? lambda_nm : reference_wavelength_nm;
    MziPhaseParams p = phase_params_at_wavelength(opt_params, eff_lambda);
    p.er_db = er_db;
    const double scale = reference_wavelength_nm / eff_lambda;
    for (int m = 0; m < kNumMzi; ++m)
        for (int n = 0; n < kNumMzi; ++n)
            if (m != n) p.phi2(m, n) = crosstalk(m, n) * scale;
    return p;
}

LossMatrix ChipGroundTruth::losses_at(double lambda_nm) const {
    std::array<double, kNumWeights> db{};
    const double d = lambda_nm - reference_wavelength_nm;
    for (int p = 0; p < kNumWeights; ++p)
        db[static_cast<std::size_t>(p)] =
            loss_alpha_db[static_cast<std::size_t>(p)] + loss_slope_db_per_nm[static_cast<std::size_t>(p)] * d;
    return LossMatrix::from_db(db);
}

std::array<double, kNumMzi> ChipGroundTruth::heater_drive(std::span<const double> v) const {
    std::array<double, kNumMzi> q{};
    for (int n = 0; n < kNumMzi; ++n) {
        const double v2 = v[static_cast<std::size_t>(n)] * v[static_cast<std::size_t>(n)];
        q[static_cast<std::size_t>(n)] = v2 * (1.0 + heater_quartic_per_v2 * v2);
    }
    return q;
}

WeightsDb ChipGroundTruth::clean_weights(std::span<const double> v, double lambda_nm) const {
    const MziPhaseParams p = phase_params(lambda_nm);
    const auto q = heater_drive(v);
    // samxt_forward squares the voltages itself, so feed it sqrt(q);
    // q >= 0 for all physical drives.
    std::array<double, kNumMzi> veff{};
    for (int n = 0; n < kNumMzi; ++n) veff[static_cast<std::size_t>(n)] = std::sqrt(q[static_cast<std::size_t>(n)]);
    return samxt_forward(topology, p, losses_at(lambda_nm), veff);
}

void ChipGroundTruth::validate() const {
    topology.validate();
    noise.validate();
    if (!(er_db > 0.0)) throw std::invalid_argument("chip: ER must be positive");
    if (!(reference_wavelength_nm > 0.0)) throw std::invalid_argument("chip: reference wavelength must be positive");
    const MziPhaseParams ref = phase_params(reference_wavelength_nm);
    for (int m = 0; m < kNumMzi; ++m) {
        if (!(ref.phi2(m, m) > 0.0)) throw std::invalid_argument("chip: diagonal phi2 must be positive");
        if (crosstalk(m, m) != 0.0)
            throw std::invalid_argument("chip: crosstalk matrix diagonal must be zero (set via lambda2)");
        for (int n = 0; n < kNumMzi; ++n)
            if (m != n && !(std::abs(crosstalk(m, n)) < ref.phi2(m, m)))
                throw std::invalid_argument("chip: crosstalk must stay below the self-heating coefficient");
    }
    for (int p = 0; p < kNumWeights; ++p)
        if (!(loss_alpha_db[static_cast<std::size_t>(p)] <= 0.0))
            throw std::invalid_argument("chip: path losses must be <= 0 dB (passive)");
    if (!(heater_quartic_per_v2 >= 0.0 && heater_quartic_per_v2 < 0.25))
        throw std::invalid_argument("chip: heater quartic coefficient out of range [0, 0.25)");
}

json ChipGroundTruth::to_json() const {
    json xt = json::array();
    for (int m = 0; m < kNumMzi; ++m) {
        json row = json::array();
        for (int n = 0; n < kNumMzi; ++n) row.push_back(crosstalk(m, n));
        xt.push_back(std::move(row));
    }
    return json{{"format", "meshcal-chip"},
                {"topology", topology.to_json()},
                {"lambda0_um", opt_params.lambda0_um},
                {"lambda2_um_per_v2", opt_params.lambda2_um_per_v2},
                {"crosstalk_rad_per_v2", std::move(xt)},
                {"loss_alpha_db", loss_alpha_db},
                {"loss_slope_db_per_nm", loss_slope_db_per_nm},
                {"er_db", er_db},
                {"heater_quartic_per_v2", heater_quartic_per_v2},
                {"dispersive", dispersive},
                {"reference_wavelength_nm", reference_wavelength_nm},
                {"noise",
                 {{"sigma_db", noise.sigma_db},
                  {"n_repeats", noise.n_repeats},
                  {"drift_db", noise.drift_db},
                  {"floor_db", noise.floor_db}}},
                {"seed", seed}};
}

ChipGroundTruth ChipGroundTruth::from_json(const json& j) {
    if (j.value("format", "") != "meshcal-chip") throw std::invalid_argument("chip config: wrong format tag");
    ChipGroundTruth c;
    c.topology = MeshTopology::from_json(j.at("topology"));
    c.opt_params.lambda0_um = j.at("lambda0_um").get<std::array<double, kNumMzi>>();
    c.opt_params.lambda2_um_per_v2 = j.at("lambda2_um_per_v2").get<std::array<double, kNumMzi>>();
    const auto& xt = j.at("crosstalk_rad_per_v2");
    for (int m = 0; m < kNumMzi; ++m)
        for (int n = 0; n < kNumMzi; ++n)
            c.crosstalk(m, n) = xt.at(static_cast<std::size_t>(m)).at(static_cast<std::size_t>(n)).get<double>();
    c.loss_alpha_db = j.at("loss_alpha_db").get<std::array<double, kNumWeights>>();
    c.loss_slope_db_per_nm = j.at("loss_slope_db_per_nm").get<std::array<double, kNumWeights>>();
    c.er_db = j.at("er_db").get<double>();
    c.heater_quartic_per_v2 = j.value("heater_quartic_per_v2", 0.0);
    c.dispersive = j.value("dispersive", true);
    c.reference_wavelength_nm = j.value("reference_wavelength_nm", 1550.0);
    const auto& nj = j.at("noise");
    c.noise.sigma_db = nj.at("sigma_db").get<double>();
    c.noise.n_repeats = nj.at("n_repeats").get<int>();
    c.noise.drift_db = nj.value("drift_db", 0.0);
    c.noise.floor_db = nj.value("floor_db", -200.0);
    c.seed = j.at("seed").get<std::uint64_t>();
    c.validate();
    return c;
}

void ChipGroundTruth::save(const std::filesystem::path& path) const {
    save_json(path, to_json());
}

ChipGroundTruth ChipGroundTruth::load(const std::filesystem::path& path) {
    return from_json(load_json(path));
}

std::string ChipGroundTruth::config_hash() const {
    return hash_hex(fnv1a(to_json().dump()));
}

ChipGroundTruth ChipGroundTruth::default_chip(std::uint64_t seed) {
    ChipGroundTruth c;
    c.topology = MeshTopology::default_topology();
    c.seed = seed;
    Rng rng(seed, kTagFab, 0);
    const double lambda_ref_um = c.reference_wavelength_nm * 1e-3;
    for (int m = 0; m < kNumMzi; ++m) {
        // One full wrap plus a uniform remainder keeps the zero-drive
        // phase uniform over the period while giving the optical path
        // difference a realistic magnitude (and thus dispersion).
        const double wraps = 1.0 + rng.uniform01();
        c.opt_params.lambda0_um[static_cast<std::size_t>(m)] = wraps * lambda_ref_um;
        const double phi2_ref = rng.uniform(0.9, 1.2);
        c.opt_params.lambda2_um_per_v2[static_cast<std::size_t>(m)] = phi2_ref * lambda_ref_um / (2.0 * kPi);
    }
    const MziPhaseParams ref = c.phase_params(c.reference_wavelength_nm);
    for (int m = 0; m < kNumMzi; ++m) {
        for (int n = 0; n < kNumMzi; ++n) {
            const int d = std::abs(m - n);
            double frac = 0.0;
            if (d == 1) frac = 0.08;
            else if (d == 2) frac = 0.03;
            if (frac > 0.0) c.crosstalk(m, n) = frac * ref.phi2(m, m);
        }
    }
    for (int p = 0; p < kNumWeights; ++p) {
        // On-chip excess loss per path. The 9-11 dB lab insertion loss
        // is dominated by the couplers, which cancel in the weight
        // referencing; measured weights peak near 0 dB.
        c.loss_alpha_db[static_cast<std::size_t>(p)] = -rng.uniform(1.0, 3.0);
        c.loss_slope_db_per_nm[static_cast<std::size_t>(p)] = rng.uniform(-0.02, 0.02);
    }
    c.er_db = 30.0;
    c.noise.sigma_db = 0.2;
    c.noise.n_repeats = 6;
    c.noise.drift_db = 0.0;
    c.noise.floor_db = -42.0;
    c.validate();
    return c;
}

std::vector<double> emulate_measurement(const ChipGroundTruth& chip, std::span<const double> v,
                                        const WavelengthGrid& grid, std::int64_t record_id) {
    check_voltages(v);
    const int nl = grid.n_channels();
    std::vector<double> out(static_cast<std::size_t>(kNumWeights * nl));
    for (int k = 0; k < nl; ++k) {
        const WeightsDb w = chip.clean_weights(v, grid.center_wavelengths_nm[static_cast<std::size_t>(k)]);
        for (int p = 0; p < kNumWeights; ++p) out[static_cast<std::size_t>(p * nl + k)] = w.w[static_cast<std::size_t>(p)];
    }
    if (chip.noise.floor_enabled()) {
        // Additive receiver noise power: deep transmission nulls read
        // back as the dynamic-range floor, not as their true depth.
        const double floor_lin = std::pow(10.0, chip.noise.floor_db / 10.0);
        for (double& w : out) w = 10.0 * std::log10(std::pow(10.0, w / 10.0) + floor_lin);
    }
    // Noise stream keyed by (seed, record id): identical records no
    // matter the generation order. Draw order is fixed: repeats x
    // channels x entries, then the drift offset.
    Rng rng(chip.seed, kTagNoise, static_cast<std::uint64_t>(record_id));
    if (chip.noise.sigma_db > 0.0) {
        const double scale = 1.0 / chip.noise.n_repeats;
        for (int rep = 0; rep < chip.noise.n_repeats; ++rep)
            for (std::size_t i = 0; i < out.size(); ++i) out[i] += scale * rng.normal(0.0, chip.noise.sigma_db);
    }
    if (chip.noise.drift_db > 0.0) {
        const double drift = rng.uniform(-0.5 * chip.noise.drift_db, 0.5 * chip.noise.drift_db);
        for (double& w : out) w += drift;
    }
    for (double& w : out) w = std::max(w, kWeightFloorDb);
    return out;
}

std::array<double, kNumMzi> sweep_baseline_voltages(const ChipGroundTruth& chip) {
    // Coordinate grid search for the constants that maximize the sum of
    // diagonal weights on the noise-free chip, matching the lab
    // procedure of tuning each heater individually. 0.1 V grid, passes
    // repeated until no single-heater move helps.
    const double lambda = chip.reference_wavelength_nm;
    std::array<double, kNumMzi> best{};
    const auto diag_sum = [&](const std::array<double, kNumMzi>& v) {
        const WeightsDb w = chip.clean_weights(v, lambda);
        return w.at(1, 1) + w.at(2, 2) + w.at(3, 3);
    };
    double best_val = diag_sum(best);
    for (int pass = 0; pass < 16; ++pass) {
        bool improved = false;
        for (int m = 0; m < kNumMzi; ++m) {
            std::array<double, kNumMzi> trial = best;
            double local_best = best_val;
            double local_v = best[static_cast<std::size_t>(m)];
            for (int step = 0; step <= 20; ++step) {
                trial[static_cast<std::size_t>(m)] = 0.1 * step;
                const double val = diag_sum(trial);
                if (val > local_best + 1e-12) {
                    local_best = val;
                    local_v = 0.1 * step;
                }
            }
            if (local_v != best[static_cast<std::size_t>(m)]) {
                best[static_cast<std::size_t>(m)] = local_v;
                best_val = local_best;
                improved = true;
            }
        }
        if (!improved) break;
    }
    return best;
}

WeightDataset generate_sweep_dataset(const ChipGroundTruth& chip, const WavelengthGrid& grid) {
    chip.validate();
    const auto baseline = sweep_baseline_voltages(chip);
    WeightDataset ds;
    ds.grid = grid;
    ds.seed = chip.seed;
    ds.chip_hash = chip.config_hash();
    const int levels = 21;
    ds.records.resize(static_cast<std::size_t>(kNumMzi * levels));
    parallel_for(static_cast<std::int64_t>(ds.records.size()), [&](std::int64_t idx) {
        const int m = static_cast<int>(idx) / levels;
        const int step = static_cast<int>(idx) % levels;
        WeightRecord& r = ds.records[static_cast<std::size_t>(idx)];
        r.id = idx;
        r.voltages_v = baseline;
        r.voltages_v[static_cast<std::size_t>(m)] = 0.1 * step;
        r.weights_db = emulate_measurement(chip, r.voltages_v, grid, r.id);
    });
    std::vector<int> all(ds.records.size());
    std::iota(all.begin(), all.end(), 0);
    ds.splits["sweep"] = std::move(all);
    return ds;
}

WeightDataset generate_random_dataset(const ChipGroundTruth& chip, const WavelengthGrid& grid, int n,
                                      double train_frac, double val_frac, double test_frac, bool merge_validation) {
    chip.validate();
    if (n < 10) throw std::invalid_argument("random dataset: need at least 10 records to split");
    if (std::abs(train_frac + val_frac + test_frac - 1.0) > 1e-9)
        throw std::invalid_argument("random dataset: split fractions must sum to 1");
    WeightDataset ds;
    ds.grid = grid;
    ds.seed = chip.seed;
    ds.chip_hash = chip.config_hash();
    ds.records.resize(static_cast<std::size_t>(n));
    parallel_for(n, [&](std::int64_t idx) {
        WeightRecord& r = ds.records[static_cast<std::size_t>(idx)];
        r.id = idx;
        Rng vr(chip.seed, kTagVolts, static_cast<std::uint64_t>(idx));
        for (int m = 0; m < kNumMzi; ++m) r.voltages_v[static_cast<std::size_t>(m)] = vr.uniform(0.0, 2.0);
        r.weights_db = emulate_measurement(chip, r.voltages_v, grid, r.id);
    });

    std::vector<int> order(static_cast<std::size_t>(n));
    std::iota(order.begin(), order.end(), 0);
    Rng sr(chip.seed, kTagSplit, 0);
    sr.shuffle(order);
    const int n_train = static_cast<int>(std::llround(train_frac * n));
    const int n_val = static_cast<int>(std::llround(val_frac * n));
    std::vector<int> train(order.begin(), order.begin() + n_train);
    std::vector<int> val(order.begin() + n_train, order.begin() + n_train + n_val);
    std::vector<int> test(order.begin() + n_train + n_val, order.end());
    if (merge_validation) {
        train.insert(train.end(), val.begin(), val.end());
        val.clear();
    }
    std::sort(train.begin(), train.end());
    std::sort(val.begin(), val.end());
    std::sort(test.begin(), test.end());
    ds.splits["training"] = std::move(train);
    if (!val.empty()) ds.splits["validation"] = std::move(val);
    ds.splits["testing"] = std::move(test);
    return ds;
}

}  // namespace meshcal
