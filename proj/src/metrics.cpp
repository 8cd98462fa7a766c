#include "enclab/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>
#include <stdexcept>

namespace enclab {

void ScoreMatrix::validate() const {
    if (envs.size() != runs.size()) throw std::invalid_argument("ScoreMatrix: envs/runs size mismatch");
    if (envs.empty()) throw std::invalid_argument("ScoreMatrix: empty");
    for (size_t i = 0; i < runs.size(); ++i) {
        if (runs[i].empty()) throw std::invalid_argument("ScoreMatrix: env '" + envs[i] + "' has no runs");
        for (double v : runs[i])
            if (!std::isfinite(v)) throw std::invalid_argument("ScoreMatrix: non-finite score in '" + envs[i] + "'");
    }
}

void NormConstants::set(const std::string& env, double r_min, double r_max) {
    if (!(r_max > r_min)) throw std::invalid_argument("NormConstants: R_max must exceed R_min for " + env);
    table_[env] = {r_min, r_max};
}

std::pair<double, double> NormConstants::get(const std::string& env) const {
    auto it = table_.find(env);
    if (it == table_.end()) throw std::out_of_range("NormConstants: no constants for env '" + env + "'");
    return it->second;
}

NormConstants NormConstants::from_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("NormConstants: cannot open " + path);
    NormConstants out;
    std::string line;
    bool first = true;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::stringstream ss(line);
        std::string env, lo, hi;
        if (!std::getline(ss, env, ',') || !std::getline(ss, lo, ',') || !std::getline(ss, hi))
            throw std::runtime_error("NormConstants: malformed row in " + path + ": " + line);
        if (first && env == "env") {  // header
            first = false;
            continue;
        }
        first = false;
        out.set(env, std::stod(lo), std::stod(hi));
    }
    return out;
}

std::string NormConstants::to_csv() const {
    std::ostringstream out;
    out << "env,r_min,r_max\n";
    for (const auto& [env, mm] : table_) out << env << ',' << mm.first << ',' << mm.second << '\n';
    return out.str();
}

double normalize_score(double raw_return, const std::string& env, const NormConstants& constants) {
    auto [lo, hi] = constants.get(env);
    return (raw_return - lo) / (hi - lo);
}

double iqm(std::vector<double> scores) {
    if (scores.empty()) throw std::invalid_argument("iqm: empty sample");
    std::sort(scores.begin(), scores.end());
    const size_t trim = scores.size() / 4;
    double sum = 0.0;
    for (size_t i = trim; i < scores.size() - trim; ++i) sum += scores[i];
    return sum / static_cast<double>(scores.size() - 2 * trim);
}

double iqm(const ScoreMatrix& matrix) {
    matrix.validate();
    std::vector<double> pooled;
    for (const auto& row : matrix.runs) pooled.insert(pooled.end(), row.begin(), row.end());
    return iqm(std::move(pooled));
}

namespace {

// Type-7 (linear interpolation) quantile of a sorted sample.
double quantile_sorted(const std::vector<double>& sorted, double q) {
    if (sorted.empty()) throw std::invalid_argument("quantile: empty sample");
    const double pos = q * static_cast<double>(sorted.size() - 1);
    const size_t lo = static_cast<size_t>(std::floor(pos));
    const size_t hi = static_cast<size_t>(std::ceil(pos));
    const double frac = pos - static_cast<double>(lo);
    return sorted[lo] * (1.0 - frac) + sorted[hi] * frac;
}

ScoreMatrix resample_within_strata(const ScoreMatrix& matrix, std::mt19937_64& rng) {
    ScoreMatrix out;
    out.envs = matrix.envs;
    out.runs.resize(matrix.runs.size());
    for (size_t i = 0; i < matrix.runs.size(); ++i) {
        const auto& src = matrix.runs[i];
        std::uniform_int_distribution<size_t> pick(0, src.size() - 1);
        out.runs[i].reserve(src.size());
        for (size_t j = 0; j < src.size(); ++j) out.runs[i].push_back(src[pick(rng)]);
    }
    return out;
}

std::pair<double, double> percentile_interval(std::vector<double>& stats, double level) {
    std::sort(stats.begin(), stats.end());
    const double alpha = (1.0 - level) / 2.0;
    return {quantile_sorted(stats, alpha), quantile_sorted(stats, 1.0 - alpha)};
}

}  // namespace

std::pair<double, double> stratified_bootstrap_ci(const ScoreMatrix& matrix, const Statistic& statistic,
                                                  int n_resamples, double level, std::mt19937_64& rng) {
    matrix.validate();
    if (n_resamples < 2) throw std::invalid_argument("stratified_bootstrap_ci: n_resamples < 2");
    if (!(level > 0.0 && level < 1.0)) throw std::invalid_argument("stratified_bootstrap_ci: bad level");
    std::vector<double> stats;
    stats.reserve(static_cast<size_t>(n_resamples));
    for (int r = 0; r < n_resamples; ++r) stats.push_back(statistic(resample_within_strata(matrix, rng)));
    return percentile_interval(stats, level);
}

double probability_of_improvement_point(const ScoreMatrix& x, const ScoreMatrix& y) {
    x.validate();
    y.validate();
    if (x.envs != y.envs) throw std::invalid_argument("probability_of_improvement: env sets differ");
    double total = 0.0;
    for (size_t e = 0; e < x.envs.size(); ++e) {
        double wins = 0.0;
        for (double xv : x.runs[e])
            for (double yv : y.runs[e]) wins += xv > yv ? 1.0 : (xv == yv ? 0.5 : 0.0);
        total += wins / (static_cast<double>(x.runs[e].size()) * static_cast<double>(y.runs[e].size()));
    }
    return total / static_cast<double>(x.envs.size());
}

ImprovementEstimate probability_of_improvement(const ScoreMatrix& x, const ScoreMatrix& y,
                                               int n_resamples, double level, std::mt19937_64& rng) {
    ImprovementEstimate out;
    out.point = probability_of_improvement_point(x, y);
    std::vector<double> stats;
    stats.reserve(static_cast<size_t>(n_resamples));
    for (int r = 0; r < n_resamples; ++r) {
        ScoreMatrix rx = resample_within_strata(x, rng);
        ScoreMatrix ry = resample_within_strata(y, rng);
        stats.push_back(probability_of_improvement_point(rx, ry));
    }
    out.ci = percentile_interval(stats, level);
    return out;
}

}  // namespace enclab
