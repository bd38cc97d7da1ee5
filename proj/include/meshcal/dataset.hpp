#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "meshcal/mesh.hpp"

namespace meshcal {

struct WeightRecord {
    std::int64_t id = 0;
    std::array<double, kNumMzi> voltages_v{};
    // Row-major 9 x n_lambda: weights_db[9*k0 .. ] hold row p over channels.
    std::vector<double> weights_db;

    double weight(int p, int k, int n_lambda) const {
        return weights_db[static_cast<std::size_t>(p * n_lambda + k)];
    }
};

/// Measurement dataset: voltage vectors with the resulting 9 x N_lambda
/// weight tensors in dB, plus named split index sets.
struct WeightDataset {
    WavelengthGrid grid;
    std::vector<WeightRecord> records;
    std::map<std::string, std::vector<int>> splits;
    std::uint64_t seed = 0;
    std::string chip_hash;  // provenance: hash of the generating chip config

    int n_lambda() const { return grid.n_channels(); }
    std::size_t size() const { return records.size(); }

    const std::vector<int>& split(const std::string& name) const;
    bool has_split(const std::string& name) const { return splits.count(name) > 0; }

    /// New dataset containing the records of one split (ids preserved,
    /// the chosen split covering everything).
    WeightDataset subset(const std::string& split_name) const;
    /// New dataset keeping only the given channel indices.
    WeightDataset select_channels(const std::vector<int>& channels) const;

    void validate() const;

    /// JSON Lines records plus a `<stem>.meta.json` sidecar carrying the
    /// grid, units, seed, chip hash and split index lists.
    void save_jsonl(const std::filesystem::path& records_path) const;
    static WeightDataset load_jsonl(const std::filesystem::path& records_path);

    /// Long-format CSV for plotting: one row per (record, weight, channel).
    void export_csv(const std::filesystem::path& path) const;
};

/// Band integration: groups of `factor` adjacent channels are merged by
/// averaging linear input and output power (flat input PSD by default)
/// and re-expressing the ratio in dB. The new grid holds band-center
/// wavelengths.
WeightDataset downsample_bands(const WeightDataset& ds, int factor, const std::vector<double>& input_psd = {});

}  // namespace meshcal
