#pragma once

#include <cstdint>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

namespace enclab {

// Bad or missing configuration; the CLI maps it to its own exit code.
struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Flat key=value store. In files, `[section]` headers prefix the following
// keys as "section.key"; '#' starts a comment. Environment variables named
// PREFIX_SECTION_KEY override file values.
class KvConfig {
  public:
    static KvConfig parse_file(const std::string& path);
    static KvConfig parse_string(const std::string& text);

    bool has(const std::string& key) const { return values_.count(key) > 0; }
    void set(const std::string& key, const std::string& value) { values_[key] = value; }

    std::string get_str(const std::string& key) const;
    std::string get_str(const std::string& key, const std::string& fallback) const;
    long long get_int(const std::string& key, long long fallback) const;
    double get_double(const std::string& key, double fallback) const;
    bool get_bool(const std::string& key, bool fallback) const;
    std::uint64_t get_u64(const std::string& key, std::uint64_t fallback) const;

    // Scans the process environment for PREFIX_SECTION_KEY variables
    // (uppercased, '.' -> '_') and overrides matching keys.
    void apply_env_overrides(const std::string& prefix);

    std::string serialize() const;  // regroups keys under [section] headers
    const std::map<std::string, std::string>& values() const { return values_; }

  private:
    std::map<std::string, std::string> values_;
};

}  // namespace enclab
