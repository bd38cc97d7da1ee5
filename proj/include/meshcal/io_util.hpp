#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include <stdexcept>

namespace meshcal {

using json = nlohmann::json;

/// Filesystem-level failure (open/read/write/parse); mapped to its own
/// process exit code by the CLI.
struct IoError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

json load_json(const std::filesystem::path& path);
void save_json(const std::filesystem::path& path, const json& j, int indent = 2);

std::string read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, const std::string& text);

/// FNV-1a over bytes; used for provenance hashes in manifests and
/// dataset/model sidecars.
std::uint64_t fnv1a(const void* data, std::size_t n);
std::uint64_t fnv1a(const std::string& s);
std::string hash_hex(std::uint64_t h);
std::string file_hash_hex(const std::filesystem::path& path);

/// Minimal CSV writer: quotes nothing, callers pass clean fields.
class CsvWriter {
public:
    CsvWriter(const std::filesystem::path& path, const std::vector<std::string>& header);
    ~CsvWriter();
    void row(const std::vector<std::string>& fields);
    static std::string num(double v);

private:
    struct Impl;
    Impl* impl_;
};

}  // namespace meshcal
