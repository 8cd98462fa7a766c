#pragma once

#include <cstdint>
#include <fstream>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace enclab {

// One JSON-lines record. Core fields are explicit; kind-specific extras go
// into `extra` (flat string->double map keeps serialization deterministic).
struct RunRecord {
    std::int64_t t = 0;
    std::string kind;  // "train" | "eval" | "dormant"
    std::string env;
    std::int64_t seed = 0;
    std::optional<double> ret;         // "return"
    std::optional<double> norm_score;  // "norm_score"
    std::optional<std::string> split;  // "train" | "test"
    std::map<std::string, double> extra;

    std::string to_json() const;
    static RunRecord from_json(const std::string& line);
};

class RunLogWriter {
  public:
    explicit RunLogWriter(const std::string& path, bool append = false);
    RunLogWriter(const RunLogWriter&) = delete;
    RunLogWriter& operator=(const RunLogWriter&) = delete;

    void append(const RunRecord& rec);
    void flush() { out_.flush(); }
    const std::string& path() const { return path_; }

  private:
    std::string path_;
    std::ofstream out_;
};

std::vector<RunRecord> read_runlog(const std::string& path);

}  // namespace enclab
