#include "meshcal/run_config.hpp"

#include <cctype>
#include <cstdlib>
#include <sstream>

namespace meshcal {

namespace {

std::string trim(const std::string& s) {
    std::size_t b = 0, e = s.size();
    while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
    while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
    return s.substr(b, e - b);
}

std::string strip_quotes(const std::string& s) {
    if (s.size() >= 2 && ((s.front() == '"' && s.back() == '"') || (s.front() == '\'' && s.back() == '\'')))
        return s.substr(1, s.size() - 2);
    return s;
}

double parse_number(const std::string& key, const std::string& raw) {
    const std::string v = strip_quotes(trim(raw));
    char* end = nullptr;
    const double x = std::strtod(v.c_str(), &end);
    if (end == v.c_str() || *end != '\0')
        throw std::invalid_argument("config: key '" + key + "' is not a number: " + raw);
    return x;
}

std::vector<std::string> split_array(const std::string& key, const std::string& raw) {
    const std::string v = trim(raw);
    if (v.size() < 2 || v.front() != '[' || v.back() != ']')
        throw std::invalid_argument("config: key '" + key + "' is not an array: " + raw);
    std::vector<std::string> items;
    std::string cur;
    for (std::size_t i = 1; i + 1 < v.size(); ++i) {
        if (v[i] == ',') {
            if (!trim(cur).empty()) items.push_back(trim(cur));
            cur.clear();
        } else {
            cur += v[i];
        }
    }
    if (!trim(cur).empty()) items.push_back(trim(cur));
    return items;
}

}  // namespace

RunConfig RunConfig::parse_file(const std::filesystem::path& path) {
    return parse_text(read_file(path), path.string());
}

RunConfig RunConfig::parse_text(const std::string& text, const std::string& origin) {
    RunConfig cfg;
    std::istringstream in(text);
    std::string line;
    std::string section;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = trim(line);
        if (line.empty()) continue;
        if (line.front() == '[') {
            if (line.back() != ']')
                throw std::invalid_argument("config " + origin + ":" + std::to_string(lineno) + ": bad section header");
            section = trim(line.substr(1, line.size() - 2));
            continue;
        }
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw std::invalid_argument("config " + origin + ":" + std::to_string(lineno) + ": expected key = value");
        std::string key = trim(line.substr(0, eq));
        if (!section.empty()) key = section + "." + key;
        cfg.values_[key] = trim(line.substr(eq + 1));
    }
    return cfg;
}

void RunConfig::set(const std::string& key, const std::string& raw_value) {
    values_[key] = trim(raw_value);
}

void RunConfig::set_override(const std::string& assignment) {
    const auto eq = assignment.find('=');
    if (eq == std::string::npos) throw std::invalid_argument("--set expects key=value, got: " + assignment);
    set(trim(assignment.substr(0, eq)), assignment.substr(eq + 1));
}

bool RunConfig::has(const std::string& key) const {
    return values_.count(key) > 0;
}

std::string RunConfig::get_string(const std::string& key, const std::string& fallback) const {
    const auto it = values_.find(key);
    return it == values_.end() ? fallback : strip_quotes(it->second);
}

double RunConfig::get_double(const std::string& key, double fallback) const {
    const auto it = values_.find(key);
    return it == values_.end() ? fallback : parse_number(key, it->second);
}

int RunConfig::get_int(const std::string& key, int fallback) const {
    const auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    const double x = parse_number(key, it->second);
    return static_cast<int>(std::llround(x));
}

std::uint64_t RunConfig::get_u64(const std::string& key, std::uint64_t fallback) const {
    const auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    const double x = parse_number(key, it->second);
    if (x < 0) throw std::invalid_argument("config: key '" + key + "' must be non-negative");
    return static_cast<std::uint64_t>(std::llround(x));
}

bool RunConfig::get_bool(const std::string& key, bool fallback) const {
    const auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    const std::string v = strip_quotes(it->second);
    if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
    if (v == "false" || v == "0" || v == "no" || v == "off") return false;
    throw std::invalid_argument("config: key '" + key + "' is not a boolean: " + v);
}

std::vector<double> RunConfig::get_doubles(const std::string& key, const std::vector<double>& fallback) const {
    const auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    std::vector<double> out;
    for (const auto& item : split_array(key, it->second)) out.push_back(parse_number(key, item));
    return out;
}

std::vector<int> RunConfig::get_ints(const std::string& key, const std::vector<int>& fallback) const {
    const auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    std::vector<int> out;
    for (const auto& item : split_array(key, it->second)) out.push_back(static_cast<int>(std::llround(parse_number(key, item))));
    return out;
}

json RunConfig::to_json() const {
    json j = json::object();
    for (const auto& [k, v] : values_) j[k] = v;
    return j;
}

std::string RunConfig::canonical_text() const {
    std::string out;
    for (const auto& [k, v] : values_) out += k + " = " + v + "\n";
    return out;
}

}  // namespace meshcal
