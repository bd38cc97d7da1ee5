#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "meshcal/io_util.hpp"

namespace meshcal {

/// Flat key/value run configuration. Files use TOML-style sections and
/// assignments:
///
///   seed = 7
///   [dataset]
///   n_random = 5100
///   sizes = [250, 500, 1000]
///
/// Section headers prefix the keys ("dataset.n_random"). Values are
/// numbers, booleans, quoted strings or arrays of numbers. `--set
/// key=value` overrides take the same right-hand sides.
class RunConfig {
public:
    static RunConfig parse_file(const std::filesystem::path& path);
    static RunConfig parse_text(const std::string& text, const std::string& origin = "<config>");

    void set(const std::string& key, const std::string& raw_value);
    /// Applies a "key=value" override string.
    void set_override(const std::string& assignment);

    bool has(const std::string& key) const;
    std::string get_string(const std::string& key, const std::string& fallback) const;
    double get_double(const std::string& key, double fallback) const;
    int get_int(const std::string& key, int fallback) const;
    std::uint64_t get_u64(const std::string& key, std::uint64_t fallback) const;
    bool get_bool(const std::string& key, bool fallback) const;
    std::vector<double> get_doubles(const std::string& key, const std::vector<double>& fallback) const;
    std::vector<int> get_ints(const std::string& key, const std::vector<int>& fallback) const;

    /// Raw key/value map, for manifests.
    json to_json() const;
    std::string canonical_text() const;

private:
    std::map<std::string, std::string> values_;
};

}  // namespace meshcal
