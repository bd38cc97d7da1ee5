#include "meshcal/analytic.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "meshcal/parallel.hpp"

namespace meshcal {

namespace {

constexpr double kDbPerLn = 4.342944819032518;  // 10 / ln(10)
constexpr double kCensorSoftDb = 0.5;           // softplus width of the saturation penalty

/// Dataset flattened for the fit loops: squared voltages and labels.
struct FlatData {
    int n = 0;
    std::vector<double> q;       // n x 9, squared voltages
    std::vector<double> labels;  // n x 9, dB (already floored by the dataset contract)
    // Labels at or below this level are treated as saturated readings:
    // the read-out bottoms out, so they only say "the true weight is
    // somewhere below". The fit loss turns into a one-sided hinge there.
    double censor_db = kWeightFloorDb;
};

FlatData flatten(const WeightDataset& ds, const std::vector<int>& indices, int max_points,
                 double censor_override = std::numeric_limits<double>::quiet_NaN()) {
    if (ds.n_lambda() != 1)
        throw std::invalid_argument("analytic fit: expected a single-channel dataset (select a channel first)");
    FlatData f;
    const int take = max_points > 0 ? std::min<int>(max_points, static_cast<int>(indices.size()))
                                    : static_cast<int>(indices.size());
    f.n = take;
    f.q.resize(static_cast<std::size_t>(take) * kNumMzi);
    f.labels.resize(static_cast<std::size_t>(take) * kNumWeights);
    double bottom = 0.0;
    for (int i = 0; i < take; ++i) {
        const WeightRecord& r = ds.records[static_cast<std::size_t>(indices[static_cast<std::size_t>(i)])];
        for (int m = 0; m < kNumMzi; ++m) {
            const double v = r.voltages_v[static_cast<std::size_t>(m)];
            f.q[static_cast<std::size_t>(i * kNumMzi + m)] = v * v;
        }
        for (int p = 0; p < kNumWeights; ++p) {
            const double w = r.weights_db[static_cast<std::size_t>(p)];
            f.labels[static_cast<std::size_t>(i * kNumWeights + p)] = w;
            bottom = std::min(bottom, w);
        }
    }
    f.censor_db = std::isnan(censor_override) ? bottom + 1.0 : censor_override;
    return f;
}

std::vector<int> whole_split(const WeightDataset& ds, const std::string& name) {
    if (ds.has_split(name)) return ds.split(name);
    std::vector<int> all(ds.size());
    std::iota(all.begin(), all.end(), 0);
    return all;
}

/// Which parameters an evaluation differentiates.
struct GradMask {
    bool phi0 = false;
    bool phi2_diag = false;
    bool phi2_full = false;
    bool er = false;
    bool alpha = false;
};

struct ModelState {
    std::array<double, kNumMzi> phi0{};
    std::array<double, kNumMzi * kNumMzi> phi2{};
    double er_db = 30.0;
    std::array<double, kNumWeights> alpha_db{};
    double phi2v(int m, int n) const { return phi2[static_cast<std::size_t>(m * kNumMzi + n)]; }
};

struct Gradients {
    std::array<double, kNumMzi> phi0{};
    std::array<double, kNumMzi * kNumMzi> phi2{};
    double er_db = 0.0;
    std::array<double, kNumWeights> alpha_db{};
};

/// Mean squared dB error over all entries plus analytic gradients.
/// Predictions below the floor are clamped with zero gradient.
double mse_and_grad(const MeshTopology& topo, const ModelState& st, const FlatData& data, const GradMask& mask,
                    Gradients* grad) {
    const double er = std::pow(10.0, st.er_db / 10.0);
    const double sqrt_er = std::sqrt(er);
    const double r = (sqrt_er - 1.0) / (sqrt_er + 1.0);
    // d r / d ER_db, through r(ER) and ER(ER_db).
    const double dr_der = 1.0 / (sqrt_er * (sqrt_er + 1.0) * (sqrt_er + 1.0));
    const double der_derdb = er * std::log(10.0) / 10.0;
    const double dr_derdb = dr_der * der_derdb;

    const std::int64_t n = data.n;
    const std::int64_t nb = reduction_blocks(n);
    struct Partial {
        double loss = 0.0;
        Gradients g;
    };
    std::vector<Partial> partials(static_cast<std::size_t>(nb));
    const double inv_count = 1.0 / (static_cast<double>(n) * kNumWeights);

    parallel_for_blocks(n, nb, [&](std::int64_t block, std::int64_t begin, std::int64_t end) {
        Partial& part = partials[static_cast<std::size_t>(block)];
        for (std::int64_t i = begin; i < end; ++i) {
            const double* q = data.q.data() + i * kNumMzi;
            const double* label = data.labels.data() + i * kNumWeights;
            // Phases and per-MZI factors for both port states.
            double phi[kNumMzi], fbar[kNumMzi], fcross[kNumMzi], dbar[kNumMzi], dcross[kNumMzi];
            for (int m = 0; m < kNumMzi; ++m) {
                double acc = st.phi0[static_cast<std::size_t>(m)];
                const double* row = st.phi2.data() + static_cast<std::size_t>(m) * kNumMzi;
                for (int nn = 0; nn < kNumMzi; ++nn) acc += row[nn] * q[nn];
                phi[m] = acc;
                const double c = std::cos(acc);
                const double s = std::sin(acc);
                fcross[m] = 0.25 * (r * r + 1.0 + 2.0 * r * c);
                fbar[m] = 0.25 * (r * r + 1.0 - 2.0 * r * c);
                dcross[m] = -0.5 * r * s;
                dbar[m] = 0.5 * r * s;
            }
            double gphi[kNumMzi] = {};
            for (int p = 0; p < kNumWeights; ++p) {
                const auto& path = topo.paths[static_cast<std::size_t>(p)];
                double pred = st.alpha_db[static_cast<std::size_t>(p)];
                for (const auto& e : path) {
                    const int m = e.mzi - 1;
                    pred += kDbPerLn * std::log(e.state == MziState::cross ? fcross[m] : fbar[m]);
                }
                double err;
                double derr = 1.0;  // d err / d pred
                if (label[p] <= data.censor_db) {
                    // Saturated reading: penalize only predictions above
                    // the saturation level. Softplus keeps the penalty
                    // smooth so the quasi-Newton stages do not stall on
                    // the hinge kink.
                    const double z = (pred - data.censor_db) / kCensorSoftDb;
                    if (z < -30.0) continue;
                    err = kCensorSoftDb * (z > 30.0 ? z : std::log1p(std::exp(z)));
                    derr = 1.0 / (1.0 + std::exp(-z));
                } else if (pred <= kWeightFloorDb) {
                    part.loss += (kWeightFloorDb - label[p]) * (kWeightFloorDb - label[p]);
                    continue;  // prediction clamped: zero gradient
                } else {
                    err = pred - label[p];
                }
                part.loss += err * err;
                if (!grad) continue;
                const double w = 2.0 * err * derr * inv_count;
                if (mask.alpha) part.g.alpha_db[static_cast<std::size_t>(p)] += w;
                for (const auto& e : path) {
                    const int m = e.mzi - 1;
                    const bool cross = e.state == MziState::cross;
                    const double f = cross ? fcross[m] : fbar[m];
                    const double df = cross ? dcross[m] : dbar[m];
                    gphi[m] += w * kDbPerLn * df / f;
                    if (mask.er) {
                        // d f / d r = (r +- cos) / 2; cos recovered from f.
                        const double cosphi = (4.0 * f - r * r - 1.0) / (2.0 * r) * (cross ? 1.0 : -1.0);
                        const double df_dr = 0.5 * (r + (cross ? cosphi : -cosphi));
                        part.g.er_db += w * kDbPerLn * df_dr * dr_derdb / f;
                    }
                }
            }
            if (grad && (mask.phi0 || mask.phi2_diag || mask.phi2_full)) {
                for (int m = 0; m < kNumMzi; ++m) {
                    if (gphi[m] == 0.0) continue;
                    if (mask.phi0) part.g.phi0[static_cast<std::size_t>(m)] += gphi[m];
                    if (mask.phi2_full) {
                        double* row = part.g.phi2.data() + static_cast<std::size_t>(m) * kNumMzi;
                        for (int nn = 0; nn < kNumMzi; ++nn) row[nn] += gphi[m] * q[nn];
                    } else if (mask.phi2_diag) {
                        part.g.phi2[static_cast<std::size_t>(m * kNumMzi + m)] += gphi[m] * q[m];
                    }
                }
            }
        }
    });

    double loss = 0.0;
    if (grad) *grad = Gradients{};
    for (const auto& part : partials) {
        loss += part.loss;
        if (!grad) continue;
        for (int m = 0; m < kNumMzi; ++m) grad->phi0[static_cast<std::size_t>(m)] += part.g.phi0[static_cast<std::size_t>(m)];
        for (std::size_t k = 0; k < grad->phi2.size(); ++k) grad->phi2[k] += part.g.phi2[k];
        grad->er_db += part.g.er_db;
        for (int p = 0; p < kNumWeights; ++p)
            grad->alpha_db[static_cast<std::size_t>(p)] += part.g.alpha_db[static_cast<std::size_t>(p)];
    }
    return loss * inv_count;
}

/// Closed-form optimal per-path dB offsets for the current phases: the
/// mean residual between labels and the summed MZI terms (non-floored
/// entries only).
std::array<double, kNumWeights> profile_alpha(const MeshTopology& topo, const ModelState& st, const FlatData& data) {
    const double er = std::pow(10.0, st.er_db / 10.0);
    const double sqrt_er = std::sqrt(er);
    const double r = (sqrt_er - 1.0) / (sqrt_er + 1.0);
    std::array<double, kNumWeights> sum{};
    std::array<std::int64_t, kNumWeights> count{};
    for (std::int64_t i = 0; i < data.n; ++i) {
        const double* q = data.q.data() + i * kNumMzi;
        const double* label = data.labels.data() + i * kNumWeights;
        double terms[kNumMzi][2];
        for (int m = 0; m < kNumMzi; ++m) {
            double acc = st.phi0[static_cast<std::size_t>(m)];
            const double* row = st.phi2.data() + static_cast<std::size_t>(m) * kNumMzi;
            for (int nn = 0; nn < kNumMzi; ++nn) acc += row[nn] * q[nn];
            const double c = std::cos(acc);
            terms[m][0] = kDbPerLn * std::log(0.25 * (r * r + 1.0 - 2.0 * r * c));  // bar
            terms[m][1] = kDbPerLn * std::log(0.25 * (r * r + 1.0 + 2.0 * r * c));  // cross
        }
        for (int p = 0; p < kNumWeights; ++p) {
            const auto& path = topo.paths[static_cast<std::size_t>(p)];
            double t = 0.0;
            for (const auto& e : path) t += terms[e.mzi - 1][e.state == MziState::cross ? 1 : 0];
            if (label[p] > data.censor_db) {
                sum[static_cast<std::size_t>(p)] += label[p] - t;
                count[static_cast<std::size_t>(p)] += 1;
            }
        }
    }
    std::array<double, kNumWeights> alpha{};
    for (int p = 0; p < kNumWeights; ++p)
        alpha[static_cast<std::size_t>(p)] =
            count[static_cast<std::size_t>(p)] > 0 ? sum[static_cast<std::size_t>(p)] / count[static_cast<std::size_t>(p)]
                                                   : 0.0;
    return alpha;
}

/// Flip sign conventions so diagonal phi2 ends positive: the transfer
/// terms only see cos(phi), so negating a whole row of phi2 together
/// with phi0 leaves every prediction unchanged.
void canonicalize(ModelState& st) {
    for (int m = 0; m < kNumMzi; ++m) {
        if (st.phi2[static_cast<std::size_t>(m * kNumMzi + m)] < 0.0) {
            st.phi0[static_cast<std::size_t>(m)] = -st.phi0[static_cast<std::size_t>(m)];
            for (int nn = 0; nn < kNumMzi; ++nn)
                st.phi2[static_cast<std::size_t>(m * kNumMzi + nn)] = -st.phi2[static_cast<std::size_t>(m * kNumMzi + nn)];
        }
        // Keep phi0 in a tidy principal range (predictions are 2 pi periodic).
        st.phi0[static_cast<std::size_t>(m)] = std::remainder(st.phi0[static_cast<std::size_t>(m)], 2.0 * 3.141592653589793238462643383279502884);
    }
}

std::array<double, kNumMzi> sweep_baseline(const WeightDataset& sweep) {
    // Baseline = per-heater modal voltage across the sweep records.
    const auto& idx = whole_split(sweep, "sweep");
    if (idx.empty()) throw std::invalid_argument("fit_sam: sweep dataset is empty");
    std::array<double, kNumMzi> baseline{};
    for (int m = 0; m < kNumMzi; ++m) {
        std::map<double, int> counts;
        for (int i : idx) counts[sweep.records[static_cast<std::size_t>(i)].voltages_v[static_cast<std::size_t>(m)]] += 1;
        int best = -1;
        for (const auto& [value, c] : counts)
            if (c > best) {
                best = c;
                baseline[static_cast<std::size_t>(m)] = value;
            }
    }
    return baseline;
}

void check_sweep_protocol(const WeightDataset& sweep, const std::array<double, kNumMzi>& baseline) {
    for (int i : whole_split(sweep, "sweep")) {
        int moved = 0;
        for (int m = 0; m < kNumMzi; ++m)
            if (sweep.records[static_cast<std::size_t>(i)].voltages_v[static_cast<std::size_t>(m)] !=
                baseline[static_cast<std::size_t>(m)])
                ++moved;
        if (moved > 1)
            throw std::invalid_argument("fit_sam: sweep dataset does not follow the one-voltage-at-a-time protocol");
    }
}

/// Coarse per-MZI phase alignment from the sweep curves. While heater m
/// sweeps, every other term of a path through m is constant and can be
/// profiled out, leaving a 2-parameter curve fit per MZI; a small
/// (phi0, phi2) grid picks the basin for the quasi-Newton stage. The
/// flat mid-range start is not enough here: the cos(phi0 + phi2 v^2)
/// family aliases badly and fixed starts land in local minima.
void align_phases_on_sweep(const MeshTopology& topo, const WeightDataset& sweep,
                           const std::array<double, kNumMzi>& baseline, double er_db, double censor_override,
                           std::array<double, kNumMzi>& phi0_out, std::array<double, kNumMzi>& phi2_out) {
    const double er = std::pow(10.0, er_db / 10.0);
    const double sqrt_er = std::sqrt(er);
    const double r = (sqrt_er - 1.0) / (sqrt_er + 1.0);
    const auto& idx = whole_split(sweep, "sweep");
    // Readings at the measurement bottom are saturated and carry no
    // curve-shape information; keep them out of the alignment.
    double bottom = 0.0;
    for (int i : idx)
        for (int p = 0; p < kNumWeights; ++p)
            bottom = std::min(bottom, sweep.records[static_cast<std::size_t>(i)].weights_db[static_cast<std::size_t>(p)]);
    const double usable = std::isnan(censor_override) ? bottom + 1.0 : censor_override;
    for (int m = 0; m < kNumMzi; ++m) {
        // Records where only heater m (possibly) moved.
        std::vector<int> recs;
        for (int i : idx) {
            const auto& v = sweep.records[static_cast<std::size_t>(i)].voltages_v;
            bool only_m = true;
            for (int n = 0; n < kNumMzi; ++n)
                if (n != m && v[static_cast<std::size_t>(n)] != baseline[static_cast<std::size_t>(n)]) only_m = false;
            if (only_m) recs.push_back(i);
        }
        double best_sse = 1e300, best_phi0 = 3.141592653589793, best_phi2 = 1.0;
        for (int pi = 0; pi < 32; ++pi) {
            const double phi0 = -3.141592653589793 + 2.0 * 3.141592653589793 * pi / 32.0;
            for (double phi2 = 0.80; phi2 <= 1.301; phi2 += 0.05) {
                double sse = 0.0;
                for (int p = 0; p < kNumWeights; ++p) {
                    const auto& path = topo.paths[static_cast<std::size_t>(p)];
                    MziState state{};
                    bool on_path = false;
                    for (const auto& e : path)
                        if (e.mzi - 1 == m) {
                            state = e.state;
                            on_path = true;
                        }
                    if (!on_path) continue;
                    double sum = 0.0, sum_sq = 0.0;
                    int count = 0;
                    for (int i : recs) {
                        const WeightRecord& rec = sweep.records[static_cast<std::size_t>(i)];
                        const double label = rec.weights_db[static_cast<std::size_t>(p)];
                        if (label <= usable) continue;
                        const double vm = rec.voltages_v[static_cast<std::size_t>(m)];
                        const double phi = phi0 + phi2 * vm * vm;
                        const double c = std::cos(phi);
                        const double f = 0.25 * (r * r + 1.0 + (state == MziState::cross ? 2.0 : -2.0) * r * c);
                        const double resid = label - kDbPerLn * std::log(f);
                        sum += resid;
                        sum_sq += resid * resid;
                        ++count;
                    }
                    if (count > 0) sse += sum_sq - sum * sum / count;  // constant profiled out per path
                }
                if (sse < best_sse) {
                    best_sse = sse;
                    best_phi0 = phi0;
                    best_phi2 = phi2;
                }
            }
        }
        phi0_out[static_cast<std::size_t>(m)] = best_phi0;
        phi2_out[static_cast<std::size_t>(m)] = best_phi2;
    }
}

double rmse_of(double mse) {
    return std::sqrt(std::max(0.0, mse));
}

}  // namespace

AnalyticFitOptions::AnalyticFitOptions() : topology(MeshTopology::default_topology()) {
    stage1.tol_grad = 1e-9;
    stage1.max_iterations = 4000;
    stage2.tol_grad = 1e-9;
    stage2.max_iterations = 4000;
}

AnalyticMeshModel::AnalyticMeshModel(MeshTopology topology, MziPhaseParams phases,
                                     std::array<double, kNumWeights> alpha_db, WavelengthGrid grid, bool crosstalk)
    : topology_(std::move(topology)), phases_(phases), alpha_db_(alpha_db), grid_(std::move(grid)),
      crosstalk_(crosstalk) {
    if (grid_.n_channels() != 1) throw std::invalid_argument("analytic model: single-channel grids only");
    if (!crosstalk_ && !phases_.is_diagonal())
        throw std::invalid_argument("analytic model: sam kind requires a diagonal phase matrix");
}

std::vector<double> AnalyticMeshModel::predict(std::span<const double> v) const {
    const WeightsDb w = samxt_forward(topology_, phases_, LossMatrix::from_db(alpha_db_), v);
    return std::vector<double>(w.w.begin(), w.w.end());
}

void AnalyticMeshModel::predict_with_jacobian(std::span<const double> v, std::vector<double>& weights_db,
                                              std::vector<double>& jac) const {
    weights_db.assign(kNumWeights, 0.0);
    jac.assign(static_cast<std::size_t>(kNumWeights) * kNumMzi, 0.0);
    const double er = std::pow(10.0, phases_.er_db / 10.0);
    const double sqrt_er = std::sqrt(er);
    const double r = (sqrt_er - 1.0) / (sqrt_er + 1.0);
    double f[kNumMzi][2], df[kNumMzi][2];
    for (int m = 0; m < kNumMzi; ++m) {
        const double phi = phase_from_voltage(phases_, m, v);
        const double c = std::cos(phi);
        const double s = std::sin(phi);
        f[m][0] = 0.25 * (r * r + 1.0 - 2.0 * r * c);
        f[m][1] = 0.25 * (r * r + 1.0 + 2.0 * r * c);
        df[m][0] = 0.5 * r * s;
        df[m][1] = -0.5 * r * s;
    }
    for (int p = 0; p < kNumWeights; ++p) {
        const auto& path = topology_.paths[static_cast<std::size_t>(p)];
        double pred = alpha_db_[static_cast<std::size_t>(p)];
        for (const auto& e : path) pred += kDbPerLn * std::log(f[e.mzi - 1][e.state == MziState::cross ? 1 : 0]);
        if (pred <= kWeightFloorDb) {
            weights_db[static_cast<std::size_t>(p)] = kWeightFloorDb;
            continue;  // zero jacobian row at the floor
        }
        weights_db[static_cast<std::size_t>(p)] = pred;
        for (const auto& e : path) {
            const int m = e.mzi - 1;
            const int side = e.state == MziState::cross ? 1 : 0;
            const double dphi_term = kDbPerLn * df[m][side] / f[m][side];
            for (int n = 0; n < kNumMzi; ++n) {
                const double dphi_dv = 2.0 * phases_.phi2(m, n) * v[static_cast<std::size_t>(n)];
                if (dphi_dv != 0.0) jac[static_cast<std::size_t>(p * kNumMzi + n)] += dphi_term * dphi_dv;
            }
        }
    }
}

json AnalyticMeshModel::to_json() const {
    json phi2 = json::array();
    for (int m = 0; m < kNumMzi; ++m) {
        json row = json::array();
        for (int n = 0; n < kNumMzi; ++n) row.push_back(phases_.phi2(m, n));
        phi2.push_back(std::move(row));
    }
    return json{{"format", "meshcal-model"},
                {"kind", kind()},
                {"topology", topology_.to_json()},
                {"phi0_rad", phases_.phi0_rad},
                {"phi2_rad_per_v2", std::move(phi2)},
                {"er_db", phases_.er_db},
                {"alpha_db", alpha_db_},
                {"grid", grid_.to_json()},
                {"provenance", provenance.is_null() ? json::object() : provenance}};
}

AnalyticMeshModel AnalyticMeshModel::from_json(const json& j) {
    const std::string kind = j.at("kind").get<std::string>();
    if (kind != "sam" && kind != "samxt") throw std::invalid_argument("analytic model: unexpected kind " + kind);
    MziPhaseParams p;
    p.phi0_rad = j.at("phi0_rad").get<std::array<double, kNumMzi>>();
    const auto& phi2 = j.at("phi2_rad_per_v2");
    for (int m = 0; m < kNumMzi; ++m)
        for (int n = 0; n < kNumMzi; ++n)
            p.phi2(m, n) = phi2.at(static_cast<std::size_t>(m)).at(static_cast<std::size_t>(n)).get<double>();
    p.er_db = j.at("er_db").get<double>();
    AnalyticMeshModel model(MeshTopology::from_json(j.at("topology")), p,
                            j.at("alpha_db").get<std::array<double, kNumWeights>>(),
                            WavelengthGrid::from_json(j.at("grid")), kind == "samxt");
    model.provenance = j.value("provenance", json::object());
    return model;
}

SamFitResult fit_sam(const WeightDataset& sweep, const WeightDataset& training, const AnalyticFitOptions& options) {
    const std::array<double, kNumMzi> baseline = sweep_baseline(sweep);
    check_sweep_protocol(sweep, baseline);
    const FlatData sweep_data = flatten(sweep, whole_split(sweep, "sweep"), 0, options.censor_db);
    const FlatData train_data =
        flatten(training, whole_split(training, "training"), options.max_training_points, options.censor_db);
    const MeshTopology& topo = options.topology;

    ModelState st;
    st.er_db = 30.0;
    std::array<double, kNumMzi> phi0_init{}, phi2_init{};
    if (options.init_phi0_rad.size() == kNumMzi && options.init_phi2_rad_per_v2.size() == kNumMzi) {
        std::copy(options.init_phi0_rad.begin(), options.init_phi0_rad.end(), phi0_init.begin());
        std::copy(options.init_phi2_rad_per_v2.begin(), options.init_phi2_rad_per_v2.end(), phi2_init.begin());
    } else {
        align_phases_on_sweep(topo, sweep, baseline, st.er_db, options.censor_db, phi0_init, phi2_init);
    }
    st.phi0 = phi0_init;
    for (int m = 0; m < kNumMzi; ++m) st.phi2[static_cast<std::size_t>(m * kNumMzi + m)] = phi2_init[static_cast<std::size_t>(m)];
    // Initial per-path level: best transmission seen during the sweep.
    st.alpha_db.fill(kWeightFloorDb);
    for (std::int64_t i = 0; i < sweep_data.n; ++i)
        for (int p = 0; p < kNumWeights; ++p)
            st.alpha_db[static_cast<std::size_t>(p)] = std::max(st.alpha_db[static_cast<std::size_t>(p)],
                                                                sweep_data.labels[static_cast<std::size_t>(i * kNumWeights + p)]);

    AnalyticFitReport report;

    // Stage 1: phases and ER on the sweep. The per-path levels ride
    // along as nuisance parameters (they are refit from the training
    // set in stage 2); co-fitting keeps the gradient exact through the
    // weight floor, where a closed-form profile would not be.
    st.alpha_db = profile_alpha(topo, st, sweep_data);
    OptimizeProblem stage1;
    stage1.dimension = 2 * kNumMzi + 1 + kNumWeights;
    stage1.x0.resize(static_cast<std::size_t>(stage1.dimension));
    for (int m = 0; m < kNumMzi; ++m) {
        stage1.x0[static_cast<std::size_t>(m)] = st.phi0[static_cast<std::size_t>(m)];
        stage1.x0[static_cast<std::size_t>(kNumMzi + m)] = st.phi2[static_cast<std::size_t>(m * kNumMzi + m)];
    }
    stage1.x0[static_cast<std::size_t>(2 * kNumMzi)] = st.er_db;
    for (int p = 0; p < kNumWeights; ++p)
        stage1.x0[static_cast<std::size_t>(2 * kNumMzi + 1 + p)] = st.alpha_db[static_cast<std::size_t>(p)];
    GradMask mask1;
    mask1.phi0 = !options.freeze_phi0;
    mask1.phi2_diag = mask1.er = mask1.alpha = true;
    stage1.objective = [&](std::span<const double> x, std::span<double> g) {
        ModelState s = st;
        for (int m = 0; m < kNumMzi; ++m) {
            s.phi0[static_cast<std::size_t>(m)] = x[static_cast<std::size_t>(m)];
            s.phi2[static_cast<std::size_t>(m * kNumMzi + m)] = x[static_cast<std::size_t>(kNumMzi + m)];
        }
        s.er_db = x[static_cast<std::size_t>(2 * kNumMzi)];
        for (int p = 0; p < kNumWeights; ++p)
            s.alpha_db[static_cast<std::size_t>(p)] = x[static_cast<std::size_t>(2 * kNumMzi + 1 + p)];
        Gradients grads;
        const double mse = mse_and_grad(topo, s, sweep_data, mask1, &grads);
        for (int m = 0; m < kNumMzi; ++m) {
            g[static_cast<std::size_t>(m)] = grads.phi0[static_cast<std::size_t>(m)];
            g[static_cast<std::size_t>(kNumMzi + m)] = grads.phi2[static_cast<std::size_t>(m * kNumMzi + m)];
        }
        g[static_cast<std::size_t>(2 * kNumMzi)] = grads.er_db;
        for (int p = 0; p < kNumWeights; ++p)
            g[static_cast<std::size_t>(2 * kNumMzi + 1 + p)] = grads.alpha_db[static_cast<std::size_t>(p)];
        return mse;
    };
    const OptimizeReport rep1 = bfgs_minimize(stage1, options.stage1);
    for (int m = 0; m < kNumMzi; ++m) {
        st.phi0[static_cast<std::size_t>(m)] = rep1.x_final[static_cast<std::size_t>(m)];
        st.phi2[static_cast<std::size_t>(m * kNumMzi + m)] = rep1.x_final[static_cast<std::size_t>(kNumMzi + m)];
    }
    st.er_db = rep1.x_final[static_cast<std::size_t>(2 * kNumMzi)];
    for (int p = 0; p < kNumWeights; ++p)
        st.alpha_db[static_cast<std::size_t>(p)] = rep1.x_final[static_cast<std::size_t>(2 * kNumMzi + 1 + p)];
    if (!options.freeze_phi0) canonicalize(st);
    report.stage1_rmse_db = rmse_of(rep1.f_final);
    report.stage1_iterations = rep1.iterations;
    report.stage1_grad_norm = rep1.gradient_norm_final;
    if (rep1.termination == Termination::line_search_failure) {
        report.warning = true;
        report.warning_message = "stage 1 line search failed; best-so-far parameters kept";
    }

    // Stage 2: per-path losses on the training records, phases frozen.
    OptimizeProblem stage2;
    stage2.dimension = kNumWeights;
    stage2.x0.assign(st.alpha_db.begin(), st.alpha_db.end());
    GradMask mask2;
    mask2.alpha = true;
    stage2.objective = [&](std::span<const double> x, std::span<double> g) {
        ModelState s = st;
        for (int p = 0; p < kNumWeights; ++p) s.alpha_db[static_cast<std::size_t>(p)] = x[static_cast<std::size_t>(p)];
        Gradients grads;
        const double mse = mse_and_grad(topo, s, train_data, mask2, &grads);
        for (int p = 0; p < kNumWeights; ++p) g[static_cast<std::size_t>(p)] = grads.alpha_db[static_cast<std::size_t>(p)];
        return mse;
    };
    const OptimizeReport rep2 = bfgs_minimize(stage2, options.stage2);
    for (int p = 0; p < kNumWeights; ++p) st.alpha_db[static_cast<std::size_t>(p)] = rep2.x_final[static_cast<std::size_t>(p)];
    report.stage2_rmse_db = rmse_of(rep2.f_final);
    report.stage2_iterations = rep2.iterations;
    report.stage2_grad_norm = rep2.gradient_norm_final;
    if (rep2.termination == Termination::line_search_failure) {
        report.warning = true;
        report.warning_message += std::string(report.warning_message.empty() ? "" : "; ") +
                                  "stage 2 line search failed; best-so-far parameters kept";
    }

    MziPhaseParams phases;
    phases.phi0_rad = st.phi0;
    for (int m = 0; m < kNumMzi; ++m) phases.phi2(m, m) = st.phi2v(m, m);
    phases.er_db = st.er_db;
    AnalyticMeshModel model(topo, phases, st.alpha_db, sweep.grid, false);
    model.provenance = json{{"stage1_rmse_db", report.stage1_rmse_db},
                            {"stage2_rmse_db", report.stage2_rmse_db},
                            {"sweep_records", sweep_data.n},
                            {"training_records", train_data.n},
                            {"seed", training.seed},
                            {"chip_hash", training.chip_hash}};
    return SamFitResult{std::move(model), report};
}

SamFitResult fit_samxt(const AnalyticMeshModel& sam, const WeightDataset& training, const AnalyticFitOptions& options) {
    const FlatData train_data =
        flatten(training, whole_split(training, "training"), options.max_training_points, options.censor_db);
    const MeshTopology topo = sam.topology();

    ModelState st;
    st.phi0 = sam.phases().phi0_rad;
    st.phi2 = sam.phases().phi2_rad_per_v2;
    st.er_db = sam.phases().er_db;
    st.alpha_db = sam.alpha_db();

    // The simple-model fit is the initial point; the training records
    // then refine the whole parameter set with the crosstalk terms
    // switched on (the phase offsets must stay free here: the sweep
    // stage absorbs the baseline crosstalk into them, and a quadratic-
    // only correction cannot undo that constant bias).
    constexpr int kXtDim = kNumWeights + kNumMzi * kNumMzi + kNumMzi + 1;
    OptimizeProblem prob;
    prob.dimension = kXtDim;
    prob.x0.resize(static_cast<std::size_t>(prob.dimension));
    for (int p = 0; p < kNumWeights; ++p) prob.x0[static_cast<std::size_t>(p)] = st.alpha_db[static_cast<std::size_t>(p)];
    for (int k = 0; k < kNumMzi * kNumMzi; ++k)
        prob.x0[static_cast<std::size_t>(kNumWeights + k)] = st.phi2[static_cast<std::size_t>(k)];
    for (int m = 0; m < kNumMzi; ++m)
        prob.x0[static_cast<std::size_t>(kNumWeights + kNumMzi * kNumMzi + m)] = st.phi0[static_cast<std::size_t>(m)];
    prob.x0[static_cast<std::size_t>(kXtDim - 1)] = st.er_db;
    GradMask mask;
    mask.alpha = true;
    mask.phi2_full = true;
    mask.phi0 = true;
    mask.er = true;
    const auto unpack = [&](std::span<const double> x, ModelState& s) {
        for (int p = 0; p < kNumWeights; ++p) s.alpha_db[static_cast<std::size_t>(p)] = x[static_cast<std::size_t>(p)];
        for (int k = 0; k < kNumMzi * kNumMzi; ++k) s.phi2[static_cast<std::size_t>(k)] = x[static_cast<std::size_t>(kNumWeights + k)];
        for (int m = 0; m < kNumMzi; ++m)
            s.phi0[static_cast<std::size_t>(m)] = x[static_cast<std::size_t>(kNumWeights + kNumMzi * kNumMzi + m)];
        s.er_db = x[static_cast<std::size_t>(kXtDim - 1)];
    };
    prob.objective = [&](std::span<const double> x, std::span<double> g) {
        ModelState s = st;
        unpack(x, s);
        Gradients grads;
        const double mse = mse_and_grad(topo, s, train_data, mask, &grads);
        for (int p = 0; p < kNumWeights; ++p) g[static_cast<std::size_t>(p)] = grads.alpha_db[static_cast<std::size_t>(p)];
        for (int k = 0; k < kNumMzi * kNumMzi; ++k) g[static_cast<std::size_t>(kNumWeights + k)] = grads.phi2[static_cast<std::size_t>(k)];
        for (int m = 0; m < kNumMzi; ++m)
            g[static_cast<std::size_t>(kNumWeights + kNumMzi * kNumMzi + m)] = grads.phi0[static_cast<std::size_t>(m)];
        g[static_cast<std::size_t>(kXtDim - 1)] = grads.er_db;
        return mse;
    };
    const OptimizeReport rep = bfgs_minimize(prob, options.stage2);
    unpack(rep.x_final, st);
    canonicalize(st);

    AnalyticFitReport report;
    report.stage2_rmse_db = rmse_of(rep.f_final);
    report.stage2_iterations = rep.iterations;
    report.stage1_rmse_db = sam.provenance.value("stage1_rmse_db", 0.0);
    if (rep.termination == Termination::line_search_failure) {
        report.warning = true;
        report.warning_message = "crosstalk stage line search failed; best-so-far parameters kept";
    }

    MziPhaseParams phases;
    phases.phi0_rad = st.phi0;
    phases.phi2_rad_per_v2 = st.phi2;
    phases.er_db = st.er_db;
    AnalyticMeshModel model(topo, phases, st.alpha_db, sam.grid(), true);
    model.provenance = json{{"stage2_rmse_db", report.stage2_rmse_db},
                            {"training_records", train_data.n},
                            {"warm_start", "sam"},
                            {"seed", training.seed},
                            {"chip_hash", training.chip_hash}};
    return SamFitResult{std::move(model), report};
}

PerWavelengthFit fit_sam_per_wavelength(const WeightDataset& sweep, const WeightDataset& training,
                                        const AnalyticFitOptions& options) {
    const int nl = sweep.n_lambda();
    if (nl < 2) throw std::invalid_argument("per-wavelength fit: dataset must carry at least 2 channels");
    if (training.n_lambda() != nl) throw std::invalid_argument("per-wavelength fit: channel counts disagree");

    PerWavelengthFit out;
    out.wavelengths_nm = sweep.grid.center_wavelengths_nm;
    out.phi2_rad_per_v2.resize(static_cast<std::size_t>(nl) * kNumMzi);
    // All channels share the reference-channel alignment, so every
    // independent fit polishes the same solution branch; the channel-to-
    // channel phi2 differences are then the dispersion, not basin hops.
    AnalyticFitOptions shared = options;
    if (std::isnan(shared.censor_db)) shared.censor_db = -22.0;
    if (shared.init_phi0_rad.size() != kNumMzi) {
        const WeightDataset ref_sweep = sweep.select_channels({sweep.grid.reference_index});
        const WeightDataset ref_train = training.select_channels({training.grid.reference_index});
        const SamFitResult ref_fit = fit_sam(ref_sweep, ref_train, options);
        shared.init_phi0_rad.assign(ref_fit.model.phases().phi0_rad.begin(), ref_fit.model.phases().phi0_rad.end());
        shared.init_phi2_rad_per_v2.resize(kNumMzi);
        for (int m = 0; m < kNumMzi; ++m) shared.init_phi2_rad_per_v2[static_cast<std::size_t>(m)] = ref_fit.model.phases().phi2(m, m);
    }
    // Pass 1: chained fits, walking outward from the reference channel
    // with each channel warm-started from its neighbor. Adjacent
    // channels differ by a few mrad of phase; the chain keeps every fit
    // in the same basin, where one shared starting point drifts into
    // neighboring local minima toward the band edges.
    std::vector<std::optional<AnalyticMeshModel>> fitted(static_cast<std::size_t>(nl));
    const int ref = sweep.grid.reference_index;
    const auto fit_channel = [&](int k, const AnalyticFitOptions& opts) {
        const WeightDataset sw = sweep.select_channels({k});
        const WeightDataset tr = training.select_channels({k});
        fitted[static_cast<std::size_t>(k)] = fit_sam(sw, tr, opts).model;
        for (int m = 0; m < kNumMzi; ++m)
            out.phi2_rad_per_v2[static_cast<std::size_t>(k) * kNumMzi + static_cast<std::size_t>(m)] =
                fitted[static_cast<std::size_t>(k)]->phases().phi2(m, m);
    };
    const auto warmed = [&](int from) {
        AnalyticFitOptions o = shared;
        const MziPhaseParams& p = fitted[static_cast<std::size_t>(from)]->phases();
        o.init_phi0_rad.assign(p.phi0_rad.begin(), p.phi0_rad.end());
        o.init_phi2_rad_per_v2.resize(kNumMzi);
        for (int m = 0; m < kNumMzi; ++m) o.init_phi2_rad_per_v2[static_cast<std::size_t>(m)] = p.phi2(m, m);
        return o;
    };
    fit_channel(ref, shared);
    for (int k = ref + 1; k < nl; ++k) fit_channel(k, warmed(k - 1));
    for (int k = ref - 1; k >= 0; --k) fit_channel(k, warmed(k + 1));

    out.models.reserve(static_cast<std::size_t>(nl));
    for (auto& m : fitted) out.models.push_back(std::move(*m));

    // Least-squares line per MZI: phi2 versus wavelength (in um), with
    // the usual residual-based standard error of the slope.
    const double lambda_ref = sweep.grid.reference_nm();
    double mean_l = 0.0;
    for (double w : out.wavelengths_nm) mean_l += w * 1e-3;
    mean_l /= nl;
    for (int m = 0; m < kNumMzi; ++m) {
        double sxx = 0.0, sxy = 0.0, mean_y = 0.0;
        for (int k = 0; k < nl; ++k) mean_y += out.phi2_rad_per_v2[static_cast<std::size_t>(k) * kNumMzi + m];
        mean_y /= nl;
        for (int k = 0; k < nl; ++k) {
            const double dx = out.wavelengths_nm[static_cast<std::size_t>(k)] * 1e-3 - mean_l;
            const double dy = out.phi2_rad_per_v2[static_cast<std::size_t>(k) * kNumMzi + m] - mean_y;
            sxx += dx * dx;
            sxy += dx * dy;
        }
        const double slope = sxy / sxx;
        double rss = 0.0;
        for (int k = 0; k < nl; ++k) {
            const double dx = out.wavelengths_nm[static_cast<std::size_t>(k)] * 1e-3 - mean_l;
            const double fitv = mean_y + slope * dx;
            const double res = out.phi2_rad_per_v2[static_cast<std::size_t>(k) * kNumMzi + m] - fitv;
            rss += res * res;
        }
        out.slope_per_um_v2[static_cast<std::size_t>(m)] = slope;
        out.slope_stderr_per_um_v2[static_cast<std::size_t>(m)] = std::sqrt(rss / (nl - 2) / sxx);
    }
    int ref_k = 0;
    double best = 1e300;
    for (int k = 0; k < nl; ++k) {
        const double d = std::abs(out.wavelengths_nm[static_cast<std::size_t>(k)] - lambda_ref);
        if (d < best) {
            best = d;
            ref_k = k;
        }
    }
    for (int m = 0; m < kNumMzi; ++m)
        out.phi2_at_reference[static_cast<std::size_t>(m)] =
            out.phi2_rad_per_v2[static_cast<std::size_t>(ref_k) * kNumMzi + m];
    return out;
}

}  // namespace meshcal
