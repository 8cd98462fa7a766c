#pragma once

#include <functional>
#include <map>
#include <random>
#include <string>
#include <vector>

namespace enclab {

// envs x runs table of normalized scores, one run per seed.
struct ScoreMatrix {
    std::vector<std::string> envs;
    std::vector<std::vector<double>> runs;  // runs[i] are the scores for envs[i]

    void validate() const;  // finite scores, >= 1 run per env
};

// Per-env (R_min, R_max) normalization constants.
class NormConstants {
  public:
    void set(const std::string& env, double r_min, double r_max);
    bool has(const std::string& env) const { return table_.count(env) > 0; }
    std::pair<double, double> get(const std::string& env) const;  // throws on unknown env

    static NormConstants from_csv(const std::string& path);  // columns env,r_min,r_max
    std::string to_csv() const;

  private:
    std::map<std::string, std::pair<double, double>> table_;
};

// S = (R - R_min) / (R_max - R_min); deliberately not clamped.
double normalize_score(double raw_return, const std::string& env, const NormConstants& constants);

// Mean of the middle half: floor(n/4) values trimmed per side after sorting.
double iqm(std::vector<double> scores);

// Pooled over all (env, run) cells.
double iqm(const ScoreMatrix& matrix);

using Statistic = std::function<double(const ScoreMatrix&)>;

// Percentile bootstrap interval; runs are resampled with replacement
// independently within each env stratum.
std::pair<double, double> stratified_bootstrap_ci(const ScoreMatrix& matrix, const Statistic& statistic,
                                                  int n_resamples, double level, std::mt19937_64& rng);

struct ImprovementEstimate {
    double point;
    std::pair<double, double> ci;
};

// P(X > Y) with ties counted as 1/2, averaged per env over all run pairs and
// then across envs; CI via the stratified bootstrap over both matrices.
ImprovementEstimate probability_of_improvement(const ScoreMatrix& x, const ScoreMatrix& y,
                                               int n_resamples, double level, std::mt19937_64& rng);

// Point estimate only.
double probability_of_improvement_point(const ScoreMatrix& x, const ScoreMatrix& y);

}  // namespace enclab
