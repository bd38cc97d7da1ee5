#include "meshcal/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>

#include "meshcal/io_util.hpp"

namespace meshcal {

const std::vector<int>& WeightDataset::split(const std::string& name) const {
    const auto it = splits.find(name);
    if (it == splits.end()) throw std::invalid_argument("dataset has no split named '" + name + "'");
    return it->second;
}

WeightDataset WeightDataset::subset(const std::string& split_name) const {
    const auto& idx = split(split_name);
    WeightDataset out;
    out.grid = grid;
    out.seed = seed;
    out.chip_hash = chip_hash;
    out.records.reserve(idx.size());
    std::vector<int> all(idx.size());
    for (std::size_t i = 0; i < idx.size(); ++i) {
        out.records.push_back(records[static_cast<std::size_t>(idx[i])]);
        all[i] = static_cast<int>(i);
    }
    out.splits[split_name] = all;
    return out;
}

WeightDataset WeightDataset::select_channels(const std::vector<int>& channels) const {
    if (channels.empty()) throw std::invalid_argument("select_channels: no channels given");
    WeightDataset out;
    out.seed = seed;
    out.chip_hash = chip_hash;
    out.splits = splits;
    out.grid.channel_spacing_ghz = grid.channel_spacing_ghz;
    for (int k : channels) {
        if (k < 0 || k >= n_lambda()) throw std::invalid_argument("select_channels: channel index out of range");
        out.grid.center_wavelengths_nm.push_back(grid.center_wavelengths_nm[static_cast<std::size_t>(k)]);
    }
    out.grid.reference_index = 0;
    double best = 1e300;
    for (std::size_t k = 0; k < channels.size(); ++k) {
        const double d = std::abs(out.grid.center_wavelengths_nm[k] - grid.reference_nm());
        if (d < best) {
            best = d;
            out.grid.reference_index = static_cast<int>(k);
        }
    }
    out.grid.validate();
    const int nl = n_lambda();
    out.records.reserve(records.size());
    for (const auto& r : records) {
        WeightRecord nr;
        nr.id = r.id;
        nr.voltages_v = r.voltages_v;
        nr.weights_db.reserve(static_cast<std::size_t>(kNumWeights) * channels.size());
        for (int p = 0; p < kNumWeights; ++p)
            for (int k : channels) nr.weights_db.push_back(r.weight(p, k, nl));
        out.records.push_back(std::move(nr));
    }
    return out;
}

void WeightDataset::validate() const {
    grid.validate();
    const auto expected = static_cast<std::size_t>(kNumWeights) * static_cast<std::size_t>(n_lambda());
    for (const auto& r : records) {
        if (r.weights_db.size() != expected)
            throw std::invalid_argument("dataset record " + std::to_string(r.id) + ": wrong weight tensor size");
        for (double v : r.voltages_v)
            if (!(v >= 0.0 && v <= 2.0))
                throw std::invalid_argument("dataset record " + std::to_string(r.id) + ": voltage outside [0, 2] V");
        for (double w : r.weights_db)
            if (!(w >= kWeightFloorDb))
                throw std::invalid_argument("dataset record " + std::to_string(r.id) + ": weight below floor");
    }
    std::set<int> used;
    for (const auto& [name, idx] : splits) {
        for (int i : idx) {
            if (i < 0 || static_cast<std::size_t>(i) >= records.size())
                throw std::invalid_argument("split '" + name + "': index out of range");
            if (!used.insert(i).second)
                throw std::invalid_argument("split '" + name + "': index " + std::to_string(i) +
                                            " appears in more than one split");
        }
    }
}

void WeightDataset::save_jsonl(const std::filesystem::path& records_path) const {
    if (records_path.has_parent_path()) std::filesystem::create_directories(records_path.parent_path());
    std::ofstream out(records_path, std::ios::binary);
    if (!out) throw IoError("cannot open for writing: " + records_path.string());
    const int nl = n_lambda();
    for (const auto& r : records) {
        json rows = json::array();
        for (int p = 0; p < kNumWeights; ++p) {
            json row = json::array();
            for (int k = 0; k < nl; ++k) row.push_back(r.weight(p, k, nl));
            rows.push_back(std::move(row));
        }
        json line{{"id", r.id}, {"voltages_v", r.voltages_v}, {"weights_db", std::move(rows)}};
        out << line.dump() << '\n';
    }
    out.flush();
    if (!out) throw IoError("write failed: " + records_path.string());

    json meta{{"format", "meshcal-dataset"},
              {"units", {{"voltages_v", "V"}, {"weights_db", "dB"}, {"wavelength", "nm"}}},
              {"grid", grid.to_json()},
              {"n_records", records.size()},
              {"seed", seed},
              {"chip_hash", chip_hash},
              {"splits", splits}};
    auto meta_path = records_path;
    meta_path.replace_extension(".meta.json");
    save_json(meta_path, meta);
}

WeightDataset WeightDataset::load_jsonl(const std::filesystem::path& records_path) {
    auto meta_path = records_path;
    meta_path.replace_extension(".meta.json");
    const json meta = load_json(meta_path);
    WeightDataset ds;
    ds.grid = WavelengthGrid::from_json(meta.at("grid"));
    ds.seed = meta.at("seed").get<std::uint64_t>();
    ds.chip_hash = meta.value("chip_hash", "");
    ds.splits = meta.at("splits").get<std::map<std::string, std::vector<int>>>();

    std::ifstream in(records_path, std::ios::binary);
    if (!in) throw IoError("cannot open for reading: " + records_path.string());
    const int nl = ds.n_lambda();
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        const json j = json::parse(line);
        WeightRecord r;
        r.id = j.at("id").get<std::int64_t>();
        const auto& volts = j.at("voltages_v");
        if (volts.size() != kNumMzi) throw std::runtime_error("dataset record: expected 9 voltages");
        for (int m = 0; m < kNumMzi; ++m) r.voltages_v[static_cast<std::size_t>(m)] = volts[static_cast<std::size_t>(m)].get<double>();
        const auto& rows = j.at("weights_db");
        if (rows.size() != kNumWeights) throw std::runtime_error("dataset record: expected 9 weight rows");
        r.weights_db.reserve(static_cast<std::size_t>(kNumWeights * nl));
        for (int p = 0; p < kNumWeights; ++p) {
            const auto& row = rows[static_cast<std::size_t>(p)];
            if (static_cast<int>(row.size()) != nl) throw std::runtime_error("dataset record: wrong channel count");
            for (int k = 0; k < nl; ++k) r.weights_db.push_back(row[static_cast<std::size_t>(k)].get<double>());
        }
        ds.records.push_back(std::move(r));
    }
    ds.validate();
    return ds;
}

void WeightDataset::export_csv(const std::filesystem::path& path) const {
    CsvWriter csv(path, {"record_id", "output_i", "input_j", "channel", "wavelength_nm", "weight_db", "v1", "v2",
                         "v3", "v4", "v5", "v6", "v7", "v8", "v9"});
    const int nl = n_lambda();
    for (const auto& r : records) {
        for (int p = 0; p < kNumWeights; ++p) {
            for (int k = 0; k < nl; ++k) {
                std::vector<std::string> row{std::to_string(r.id),
                                             std::to_string(p / 3 + 1),
                                             std::to_string(p % 3 + 1),
                                             std::to_string(k),
                                             CsvWriter::num(grid.center_wavelengths_nm[static_cast<std::size_t>(k)]),
                                             CsvWriter::num(r.weight(p, k, nl))};
                for (double v : r.voltages_v) row.push_back(CsvWriter::num(v));
                csv.row(row);
            }
        }
    }
}

WeightDataset downsample_bands(const WeightDataset& ds, int factor, const std::vector<double>& input_psd) {
    const int nl = ds.n_lambda();
    if (factor <= 0 || nl % factor != 0)
        throw std::invalid_argument("downsample_bands: channel count " + std::to_string(nl) +
                                    " not divisible by factor " + std::to_string(factor));
    if (!input_psd.empty() && static_cast<int>(input_psd.size()) != nl)
        throw std::invalid_argument("downsample_bands: input PSD length must match channel count");
    const int nb = nl / factor;

    WeightDataset out;
    out.seed = ds.seed;
    out.chip_hash = ds.chip_hash;
    out.splits = ds.splits;
    out.grid.channel_spacing_ghz = ds.grid.channel_spacing_ghz * factor;
    out.grid.center_wavelengths_nm.resize(static_cast<std::size_t>(nb));
    for (int b = 0; b < nb; ++b) {
        double sum = 0.0;
        for (int k = 0; k < factor; ++k)
            sum += ds.grid.center_wavelengths_nm[static_cast<std::size_t>(b * factor + k)];
        out.grid.center_wavelengths_nm[static_cast<std::size_t>(b)] = sum / factor;
    }
    double best = 1e300;
    for (int b = 0; b < nb; ++b) {
        const double d = std::abs(out.grid.center_wavelengths_nm[static_cast<std::size_t>(b)] - ds.grid.reference_nm());
        if (d < best) {
            best = d;
            out.grid.reference_index = b;
        }
    }
    out.grid.validate();

    out.records.reserve(ds.records.size());
    for (const auto& r : ds.records) {
        WeightRecord nr;
        nr.id = r.id;
        nr.voltages_v = r.voltages_v;
        nr.weights_db.resize(static_cast<std::size_t>(kNumWeights * nb));
        for (int p = 0; p < kNumWeights; ++p) {
            for (int b = 0; b < nb; ++b) {
                // Ratio of band-integrated output to band-integrated input
                // power; with a flat PSD this is the mean linear weight.
                double num = 0.0;
                double den = 0.0;
                for (int k = 0; k < factor; ++k) {
                    const int ch = b * factor + k;
                    const double pin = input_psd.empty() ? 1.0 : input_psd[static_cast<std::size_t>(ch)];
                    num += pin * std::pow(10.0, r.weight(p, ch, nl) / 10.0);
                    den += pin;
                }
                nr.weights_db[static_cast<std::size_t>(p * nb + b)] = db_from_linear(num / den);
            }
        }
        out.records.push_back(std::move(nr));
    }
    return out;
}

}  // namespace meshcal
