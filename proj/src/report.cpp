#include "enclab/report.hpp"

#include <algorithm>
#include <filesystem>
#include <optional>
#include <sstream>
#include <stdexcept>

#include "enclab/config.hpp"

namespace enclab {

namespace fs = std::filesystem;

RunData load_run_dir(const std::string& dir) {
    if (!fs::exists(fs::path(dir) / "manifest.json"))
        throw std::runtime_error("run directory missing manifest.json: " + dir);
    const fs::path cfg_path = fs::path(dir) / "config.ini";
    const fs::path log_path = fs::path(dir) / "runlog.jsonl";
    if (!fs::exists(cfg_path)) throw std::runtime_error("run directory missing config.ini: " + dir);
    if (!fs::exists(log_path)) throw std::runtime_error("run directory missing runlog.jsonl: " + dir);

    RunData run;
    run.dir = dir;
    const KvConfig cfg = KvConfig::parse_file(cfg_path.string());
    run.label = cfg.get_str("run.algo", "ppo") + "/" + cfg.get_str("run.encoder", "?") + "-tau" +
                cfg.get_str("run.tau", "?");
    run.records = read_runlog(log_path.string());
    if (run.records.empty()) throw std::runtime_error("empty RunLog in " + dir);
    run.env = run.records.front().env;
    run.seed = run.records.front().seed;
    return run;
}

namespace {

std::optional<double> final_eval_score(const RunData& run, const std::string& split) {
    std::optional<double> score;
    for (const RunRecord& r : run.records)
        if (r.kind == "eval" && r.split && *r.split == split && r.norm_score) score = *r.norm_score;
    return score;
}

std::string fmt(double v) {
    std::ostringstream s;
    s.precision(6);
    s << v;
    return s.str();
}

}  // namespace

Report build_report(const std::vector<RunData>& runs, int n_resamples, double level, std::uint64_t seed) {
    if (runs.empty()) throw std::invalid_argument("build_report: no runs");

    // label -> env -> split -> scores
    std::map<std::string, std::map<std::string, std::map<std::string, std::vector<double>>>> table;
    for (const RunData& run : runs)
        for (const std::string split : {"train", "test"})
            if (auto s = final_eval_score(run, split)) table[run.label][run.env][split].push_back(*s);

    Report rep;
    std::ostringstream sum;
    sum << "algo,env,split,iqm,ci_lo,ci_hi\n";
    std::mt19937_64 rng(seed);
    for (const auto& [label, envs] : table)
        for (const auto& [env, splits] : envs)
            for (const auto& [split, scores] : splits) {
                ScoreMatrix m{{env}, {scores}};
                const double point = iqm(m);
                const auto [lo, hi] =
                    stratified_bootstrap_ci(m, [](const ScoreMatrix& x) { return iqm(x); }, n_resamples, level, rng);
                sum << label << ',' << env << ',' << split << ',' << fmt(point) << ',' << fmt(lo) << ','
                    << fmt(hi) << '\n';
            }
    rep.summary_csv = sum.str();

    // probability-of-improvement matrix over test-split scores, pooled envs
    std::vector<std::string> labels;
    for (const auto& [label, envs] : table) labels.push_back(label);
    std::ostringstream poi;
    poi << "label";
    for (const std::string& l : labels) poi << ',' << l;
    poi << '\n';
    auto matrix_for = [&](const std::string& label) -> std::optional<ScoreMatrix> {
        ScoreMatrix m;
        for (const auto& [env, splits] : table.at(label)) {
            auto it = splits.find("test");
            if (it == splits.end()) continue;
            m.envs.push_back(env);
            m.runs.push_back(it->second);
        }
        if (m.envs.empty()) return std::nullopt;
        return m;
    };
    for (const std::string& row : labels) {
        poi << row;
        for (const std::string& col : labels) {
            if (row == col) {
                poi << ",0.5";
                continue;
            }
            const auto x = matrix_for(row);
            const auto y = matrix_for(col);
            if (x && y && x->envs == y->envs)
                poi << ',' << fmt(probability_of_improvement_point(*x, *y));
            else
                poi << ",";
        }
        poi << '\n';
    }
    rep.poi_csv = poi.str();

    // simple SVG: eval norm_score (train split) vs step per run
    constexpr int W = 640, H = 360, ML = 50, MB = 30, MT = 10, MR = 10;
    double max_t = 1.0, lo_s = 0.0, hi_s = 1.0;
    for (const RunData& run : runs)
        for (const RunRecord& r : run.records)
            if (r.kind == "eval" && r.split && *r.split == "train" && r.norm_score) {
                max_t = std::max(max_t, static_cast<double>(r.t));
                lo_s = std::min(lo_s, *r.norm_score);
                hi_s = std::max(hi_s, *r.norm_score);
            }
    std::ostringstream svg;
    svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H << "\">\n";
    svg << "<rect width=\"" << W << "\" height=\"" << H << "\" fill=\"white\"/>\n";
    svg << "<line x1=\"" << ML << "\" y1=\"" << H - MB << "\" x2=\"" << W - MR << "\" y2=\"" << H - MB
        << "\" stroke=\"black\"/>\n";
    svg << "<line x1=\"" << ML << "\" y1=\"" << MT << "\" x2=\"" << ML << "\" y2=\"" << H - MB
        << "\" stroke=\"black\"/>\n";
    const char* colors[] = {"#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b"};
    int ci = 0;
    for (const RunData& run : runs) {
        std::ostringstream pts;
        for (const RunRecord& r : run.records)
            if (r.kind == "eval" && r.split && *r.split == "train" && r.norm_score) {
                const double px = ML + (static_cast<double>(r.t) / max_t) * (W - ML - MR);
                const double py = (H - MB) - (*r.norm_score - lo_s) / (hi_s - lo_s + 1e-12) * (H - MB - MT);
                pts << px << ',' << py << ' ';
            }
        svg << "<polyline fill=\"none\" stroke=\"" << colors[ci % 6] << "\" stroke-width=\"1.5\" points=\""
            << pts.str() << "\"/>\n";
        ++ci;
    }
    svg << "</svg>\n";
    rep.curves_svg = svg.str();
    return rep;
}

}  // namespace enclab
