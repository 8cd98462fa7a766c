#include "enclab/runlog.hpp"

#include <json.hpp>
#include <stdexcept>

namespace enclab {

using nlohmann::json;

std::string RunRecord::to_json() const {
    json j;  // nlohmann's default object keeps keys sorted -> byte-stable output
    j["t"] = t;
    j["kind"] = kind;
    j["env"] = env;
    j["seed"] = seed;
    if (ret) j["return"] = *ret;
    if (norm_score) j["norm_score"] = *norm_score;
    if (split) j["split"] = *split;
    for (const auto& [k, v] : extra) j[k] = v;
    return j.dump();
}

RunRecord RunRecord::from_json(const std::string& line) {
    const json j = json::parse(line);
    RunRecord r;
    r.t = j.at("t").get<std::int64_t>();
    r.kind = j.at("kind").get<std::string>();
    r.env = j.at("env").get<std::string>();
    r.seed = j.at("seed").get<std::int64_t>();
    if (j.contains("return")) r.ret = j["return"].get<double>();
    if (j.contains("norm_score")) r.norm_score = j["norm_score"].get<double>();
    if (j.contains("split")) r.split = j["split"].get<std::string>();
    for (auto it = j.begin(); it != j.end(); ++it) {
        const std::string& k = it.key();
        if (k == "t" || k == "kind" || k == "env" || k == "seed" || k == "return" || k == "norm_score" ||
            k == "split")
            continue;
        r.extra[k] = it.value().get<double>();
    }
    return r;
}

RunLogWriter::RunLogWriter(const std::string& path, bool append)
    : path_(path), out_(path, append ? std::ios::binary | std::ios::app : std::ios::binary) {
    if (!out_) throw std::runtime_error("RunLogWriter: cannot open " + path);
}

void RunLogWriter::append(const RunRecord& rec) { out_ << rec.to_json() << '\n'; }

std::vector<RunRecord> read_runlog(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("read_runlog: cannot open " + path);
    std::vector<RunRecord> out;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        out.push_back(RunRecord::from_json(line));
    }
    return out;
}

}  // namespace enclab
