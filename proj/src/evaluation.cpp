#include "meshcal/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "meshcal/io_util.hpp"
#include "meshcal/parallel.hpp"

namespace meshcal {

namespace {

std::vector<int> split_or_all(const WeightDataset& ds, const std::string& split) {
    if (!split.empty()) return ds.split(split);
    std::vector<int> all(ds.size());
    std::iota(all.begin(), all.end(), 0);
    return all;
}

void check_model_grid(const ForwardModel& model, const WeightDataset& ds) {
    if (model.n_lambda() != ds.n_lambda())
        throw std::invalid_argument("evaluate: model has " + std::to_string(model.n_lambda()) +
                                    " channels but dataset has " + std::to_string(ds.n_lambda()));
}

}  // namespace

double rmse_db(std::span<const double> pred, std::span<const double> label) {
    if (pred.size() != label.size() || pred.empty())
        throw std::invalid_argument("rmse_db: shape mismatch or empty input");
    double acc = 0.0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        const double e = pred[i] - label[i];
        acc += e * e;
    }
    return std::sqrt(acc / static_cast<double>(pred.size()));
}

double r_squared(std::span<const double> pred, std::span<const double> label) {
    if (pred.size() != label.size() || pred.size() < 2)
        throw std::invalid_argument("r_squared: need at least two entries of equal shape");
    double mean = 0.0;
    for (double y : label) mean += y;
    mean /= static_cast<double>(label.size());
    double ss_res = 0.0, ss_tot = 0.0;
    for (std::size_t i = 0; i < label.size(); ++i) {
        ss_res += (label[i] - pred[i]) * (label[i] - pred[i]);
        ss_tot += (label[i] - mean) * (label[i] - mean);
    }
    if (ss_tot <= 0.0) throw std::invalid_argument("r_squared: label variance is zero");
    return 1.0 - ss_res / ss_tot;
}

ErrorDistribution ErrorDistribution::from_samples(std::vector<double> samples) {
    if (samples.empty()) throw std::invalid_argument("error distribution: no samples");
    ErrorDistribution d;
    d.samples = std::move(samples);
    double acc = 0.0;
    d.min = d.samples.front();
    d.max = d.samples.front();
    for (double e : d.samples) {
        acc += e * e;
        d.min = std::min(d.min, e);
        d.max = std::max(d.max, e);
    }
    d.rmse = std::sqrt(acc / static_cast<double>(d.samples.size()));
    return d;
}

std::vector<HistogramBin> ErrorDistribution::histogram(double bin_width) const {
    if (!(bin_width > 0.0)) throw std::invalid_argument("histogram: bin width must be positive");
    const auto lo_bin = static_cast<std::int64_t>(std::floor(min / bin_width));
    const auto hi_bin = static_cast<std::int64_t>(std::floor(max / bin_width));
    std::vector<HistogramBin> bins;
    bins.reserve(static_cast<std::size_t>(hi_bin - lo_bin + 1));
    for (std::int64_t b = lo_bin; b <= hi_bin; ++b)
        bins.push_back({static_cast<double>(b) * bin_width, static_cast<double>(b + 1) * bin_width, 0, 0.0});
    for (double e : samples) {
        auto b = static_cast<std::int64_t>(std::floor(e / bin_width)) - lo_bin;
        b = std::clamp<std::int64_t>(b, 0, static_cast<std::int64_t>(bins.size()) - 1);
        bins[static_cast<std::size_t>(b)].count += 1;
    }
    const double n = static_cast<double>(samples.size());
    for (auto& b : bins) b.density = static_cast<double>(b.count) / (n * bin_width);
    return bins;
}

ErrorDistribution evaluate_model(const ForwardModel& model, const WeightDataset& ds, const std::string& split) {
    check_model_grid(model, ds);
    const std::vector<int> idx = split_or_all(ds, split);
    const int nl = ds.n_lambda();
    const auto per_record = static_cast<std::size_t>(kNumWeights) * static_cast<std::size_t>(nl);
    std::vector<double> samples(per_record * idx.size());
    parallel_for(static_cast<std::int64_t>(idx.size()), [&](std::int64_t i) {
        const WeightRecord& r = ds.records[static_cast<std::size_t>(idx[static_cast<std::size_t>(i)])];
        const std::vector<double> pred = model.predict(r.voltages_v);
        double* out = samples.data() + static_cast<std::size_t>(i) * per_record;
        for (std::size_t e = 0; e < per_record; ++e) out[e] = pred[e] - r.weights_db[e];
    });
    return ErrorDistribution::from_samples(std::move(samples));
}

PredictionTable prediction_table(const ForwardModel& model, const WeightDataset& ds, const std::string& split) {
    check_model_grid(model, ds);
    const std::vector<int> idx = split_or_all(ds, split);
    const int nl = ds.n_lambda();
    const auto per_record = static_cast<std::size_t>(kNumWeights) * static_cast<std::size_t>(nl);
    PredictionTable t;
    t.predicted_db.resize(per_record * idx.size());
    t.measured_db.resize(per_record * idx.size());
    parallel_for(static_cast<std::int64_t>(idx.size()), [&](std::int64_t i) {
        const WeightRecord& r = ds.records[static_cast<std::size_t>(idx[static_cast<std::size_t>(i)])];
        const std::vector<double> pred = model.predict(r.voltages_v);
        std::copy(pred.begin(), pred.end(), t.predicted_db.begin() + static_cast<std::ptrdiff_t>(i * per_record));
        std::copy(r.weights_db.begin(), r.weights_db.end(),
                  t.measured_db.begin() + static_cast<std::ptrdiff_t>(i * per_record));
    });
    t.rmse = rmse_db(t.predicted_db, t.measured_db);
    t.r2 = r_squared(t.predicted_db, t.measured_db);
    return t;
}

std::vector<std::pair<double, double>> per_wavelength_rmse(const ForwardModel& model, const WeightDataset& ds,
                                                           const std::string& split) {
    check_model_grid(model, ds);
    const std::vector<int> idx = split_or_all(ds, split);
    const int nl = ds.n_lambda();
    std::vector<double> acc(static_cast<std::size_t>(nl), 0.0);
    for (int i : idx) {
        const WeightRecord& r = ds.records[static_cast<std::size_t>(i)];
        const std::vector<double> pred = model.predict(r.voltages_v);
        for (int p = 0; p < kNumWeights; ++p)
            for (int k = 0; k < nl; ++k) {
                const double e = pred[static_cast<std::size_t>(p * nl + k)] - r.weight(p, k, nl);
                acc[static_cast<std::size_t>(k)] += e * e;
            }
    }
    std::vector<std::pair<double, double>> out;
    out.reserve(static_cast<std::size_t>(nl));
    for (int k = 0; k < nl; ++k)
        out.emplace_back(ds.grid.center_wavelengths_nm[static_cast<std::size_t>(k)],
                         std::sqrt(acc[static_cast<std::size_t>(k)] / (static_cast<double>(idx.size()) * kNumWeights)));
    return out;
}

double percentile(std::vector<double> values, double q) {
    if (values.empty()) throw std::invalid_argument("percentile: empty sample");
    std::sort(values.begin(), values.end());
    const double pos = q / 100.0 * (static_cast<double>(values.size()) - 1.0);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const auto hi = static_cast<std::size_t>(std::ceil(pos));
    const double frac = pos - static_cast<double>(lo);
    return values[lo] * (1.0 - frac) + values[hi] * frac;
}

std::vector<int> default_sweep_sizes(int max_available) {
    std::vector<int> sizes{250, 318, 405, 516, 657, 837, 1066, 1357, 1728, 2201, 3250, 3570};
    for (int& s : sizes) s = std::min(s, max_available);
    sizes.erase(std::unique(sizes.begin(), sizes.end()), sizes.end());
    return sizes;
}

SizeSweepReport size_seed_sweep(const SurrogateArchitecture& arch, const WeightDataset& dataset,
                                const std::vector<int>& sizes, const std::vector<std::uint64_t>& seeds,
                                const TrainOptions& base_options) {
    const auto& train_idx = dataset.split("training");
    for (int s : sizes) {
        if (s <= 0) throw std::invalid_argument("size sweep: sizes must be positive");
        if (static_cast<std::size_t>(s) > train_idx.size())
            throw std::invalid_argument("size sweep: size exceeds available training records");
    }
    // The split is fixed; only the leading `size` records and the seed
    // change per cell.
    const WeightDataset training_full = dataset.subset("training");
    const WeightDataset validation = dataset.subset(dataset.has_split("validation") ? "validation" : "testing");
    const WeightDataset testing = dataset.subset("testing");

    SizeSweepReport report;
    report.cells.resize(sizes.size() * seeds.size());
    parallel_for(static_cast<std::int64_t>(report.cells.size()), [&](std::int64_t cell) {
        const std::size_t si = static_cast<std::size_t>(cell) / seeds.size();
        const std::size_t gi = static_cast<std::size_t>(cell) % seeds.size();
        WeightDataset train = training_full;
        train.records.resize(static_cast<std::size_t>(sizes[si]));
        std::vector<int> all(train.records.size());
        std::iota(all.begin(), all.end(), 0);
        train.splits.clear();
        train.splits["training"] = std::move(all);

        TrainOptions opts = base_options;
        opts.seed = seeds[gi];
        TrainResult res = train_surrogate(arch, train, validation, opts);
        SizeSweepCell& c = report.cells[static_cast<std::size_t>(cell)];
        c.size = sizes[si];
        c.seed = seeds[gi];
        c.train_rmse_db = evaluate_model(*res.model, train).rmse;
        c.val_rmse_db = evaluate_model(*res.model, validation).rmse;
        c.test_rmse_db = evaluate_model(*res.model, testing).rmse;
    });

    for (std::size_t si = 0; si < sizes.size(); ++si) {
        std::vector<double> tests;
        for (std::size_t gi = 0; gi < seeds.size(); ++gi)
            tests.push_back(report.cells[si * seeds.size() + gi].test_rmse_db);
        report.summary.push_back({sizes[si], percentile(tests, 50.0), percentile(tests, 25.0), percentile(tests, 75.0)});
    }
    return report;
}

void SizeSweepReport::write_csv(const std::filesystem::path& path) const {
    CsvWriter csv(path, {"size", "seed", "train_rmse_db", "val_rmse_db", "test_rmse_db"});
    for (const auto& c : cells)
        csv.row({std::to_string(c.size), std::to_string(c.seed), CsvWriter::num(c.train_rmse_db),
                 CsvWriter::num(c.val_rmse_db), CsvWriter::num(c.test_rmse_db)});
    auto spath = path;
    spath.replace_extension(".summary.csv");
    CsvWriter scsv(spath, {"size", "test_rmse_db_median", "test_rmse_db_p25", "test_rmse_db_p75"});
    for (const auto& s : summary)
        scsv.row({std::to_string(s.size), CsvWriter::num(s.median), CsvWriter::num(s.p25), CsvWriter::num(s.p75)});
}

}  // namespace meshcal
