#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <random>
#include <vector>

#include "enclab/metrics.hpp"
#include "enclab/runlog.hpp"

using namespace enclab;

namespace {

// Test-side percentile oracle (linear interpolation between order statistics),
// written independently of the library implementation.
double quantile_oracle(std::vector<double> v, double q) {
    std::sort(v.begin(), v.end());
    const double pos = q * (static_cast<double>(v.size()) - 1.0);
    const size_t lo = static_cast<size_t>(std::floor(pos));
    const size_t hi = static_cast<size_t>(std::ceil(pos));
    const double frac = pos - static_cast<double>(lo);
    return v[lo] * (1.0 - frac) + v[hi] * frac;
}

double iqm_oracle(std::vector<double> v) {
    std::sort(v.begin(), v.end());
    const size_t trim = v.size() / 4;
    double sum = 0.0;
    size_t n = 0;
    for (size_t i = trim; i + trim < v.size(); ++i) {
        sum += v[i];
        ++n;
    }
    return sum / static_cast<double>(n);
}

ScoreMatrix matrix2x5(const std::vector<double>& a, const std::vector<double>& b) {
    ScoreMatrix m;
    m.envs = {"enva", "envb"};
    m.runs = {a, b};
    return m;
}

}  // namespace

TEST_CASE("iqm: middle-half examples") {
    CHECK(iqm({0.0, 1.0, 2.0, 3.0}) == doctest::Approx(1.5).epsilon(1e-12));
    CHECK(iqm({7.25, 7.25, 7.25, 7.25, 7.25}) == doctest::Approx(7.25).epsilon(1e-12));
    CHECK(iqm({5.0}) == doctest::Approx(5.0));
    CHECK(iqm({2.0, 4.0}) == doctest::Approx(3.0));
}

TEST_CASE("iqm: matches sort-and-slice oracle on random inputs") {
    std::mt19937_64 rng(11);
    std::uniform_real_distribution<double> u(-3.0, 3.0);
    for (int trial = 0; trial < 50; ++trial) {
        const int n = 1 + static_cast<int>(rng() % 40);
        std::vector<double> v(static_cast<size_t>(n));
        for (double& x : v) x = u(rng);
        CHECK(iqm(v) == doctest::Approx(iqm_oracle(v)).epsilon(1e-12));
    }
}

TEST_CASE("iqm: permutation-invariant and monotone under pointwise increase") {
    std::mt19937_64 rng(12);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::vector<double> v(17);
    for (double& x : v) x = u(rng);
    const double base = iqm(v);

    std::vector<double> perm = v;
    std::shuffle(perm.begin(), perm.end(), rng);
    CHECK(iqm(perm) == doctest::Approx(base).epsilon(1e-12));

    std::vector<double> bumped = v;
    for (double& x : bumped) x += 0.25 + u(rng);
    CHECK(iqm(bumped) > base);
}

TEST_CASE("iqm: ScoreMatrix form pools all cells") {
    const ScoreMatrix m = matrix2x5({0.0, 1.0}, {2.0, 3.0});
    CHECK(iqm(m) == doctest::Approx(1.5).epsilon(1e-12));
    ScoreMatrix bad;
    bad.envs = {"enva"};
    bad.runs = {{1.0, std::nan("")}};
    CHECK_THROWS(bad.validate());
    ScoreMatrix empty_run;
    empty_run.envs = {"enva"};
    empty_run.runs = {{}};
    CHECK_THROWS(empty_run.validate());
}

TEST_CASE("normalize_score: bundled procgen constants") {
    const NormConstants easy = NormConstants::from_csv(std::string(ENCLAB_DATA_DIR) + "/procgen_constants_easy.csv");
    CHECK(normalize_score(40.0, "bigfish", easy) == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(normalize_score(1.0, "bigfish", easy) == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(normalize_score(15.45, "fruitbot", easy) == doctest::Approx(0.5).epsilon(1e-12));

    const NormConstants hard = NormConstants::from_csv(std::string(ENCLAB_DATA_DIR) + "/procgen_constants_hard.csv");
    CHECK(normalize_score(40.0, "bigfish", hard) == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(normalize_score(27.2, "fruitbot", hard) == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(normalize_score(10.0, "coinrun", hard) == doctest::Approx(1.0).epsilon(1e-12));

    CHECK_THROWS(normalize_score(1.0, "no-such-env", easy));
}

TEST_CASE("normalize_score: affine property and unclamped tails") {
    NormConstants c;
    c.set("g", -1.5, 32.4);
    std::mt19937_64 rng(7);
    std::uniform_real_distribution<double> u(-0.5, 1.5);
    for (int i = 0; i < 30; ++i) {
        const double a = u(rng);
        const double r = a * 32.4 + (1.0 - a) * (-1.5);
        CHECK(normalize_score(r, "g", c) == doctest::Approx(a).epsilon(1e-10));
    }
    CHECK(normalize_score(-10.0, "g", c) < 0.0);
    CHECK(normalize_score(100.0, "g", c) > 1.0);
    CHECK_THROWS(c.set("bad", 5.0, 5.0));
}

TEST_CASE("NormConstants: csv round trip") {
    NormConstants c;
    c.set("shoal", 1.325, 10.0);
    c.set("corridor", 0.0, 10.0);
    const std::string path = "/tmp/enclab_test_constants.csv";
    {
        std::FILE* f = std::fopen(path.c_str(), "w");
        const std::string body = c.to_csv();
        std::fwrite(body.data(), 1, body.size(), f);
        std::fclose(f);
    }
    const NormConstants back = NormConstants::from_csv(path);
    CHECK(back.get("shoal").first == doctest::Approx(1.325));
    CHECK(back.get("shoal").second == doctest::Approx(10.0));
    CHECK(back.get("corridor").first == doctest::Approx(0.0));
    std::remove(path.c_str());
}

TEST_CASE("bootstrap: degenerate distribution collapses to a point") {
    const ScoreMatrix m = matrix2x5({0.3, 0.3, 0.3}, {0.3, 0.3, 0.3});
    std::mt19937_64 rng(1);
    const auto [lo, hi] = stratified_bootstrap_ci(m, [](const ScoreMatrix& s) { return iqm(s); }, 1000, 0.95, rng);
    CHECK(lo == doctest::Approx(0.3).epsilon(1e-12));
    CHECK(hi == doctest::Approx(0.3).epsilon(1e-12));
}

TEST_CASE("bootstrap: interval contains the point statistic in >= 95 of 100 trials") {
    std::mt19937_64 rng(42);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    int contained = 0;
    for (int trial = 0; trial < 100; ++trial) {
        ScoreMatrix m;
        m.envs = {"a", "b", "c"};
        m.runs.assign(3, {});
        for (auto& row : m.runs) {
            row.resize(5);
            for (double& x : row) x = u(rng);
        }
        const Statistic stat = [](const ScoreMatrix& s) { return iqm(s); };
        const double point = stat(m);
        const auto [lo, hi] = stratified_bootstrap_ci(m, stat, 1000, 0.95, rng);
        if (lo <= point && point <= hi) ++contained;
    }
    CHECK(contained >= 95);
}

TEST_CASE("bootstrap: matches exhaustive resample enumeration on a 2x5 matrix") {
    const std::vector<double> a = {0.12, 0.48, 0.33, 0.71, 0.25};
    const std::vector<double> b = {0.90, 0.42, 0.58, 0.61, 0.15};
    const ScoreMatrix m = matrix2x5(a, b);
    const Statistic stat = [](const ScoreMatrix& s) { return iqm(s); };

    // exhaustive distribution over all 5^5 x 5^5 equally likely resamples
    std::vector<std::vector<double>> resamples_a, resamples_b;
    std::vector<size_t> idx(5);
    for (int code = 0; code < 3125; ++code) {
        int c = code;
        std::vector<double> ra(5), rb(5);
        for (int k = 0; k < 5; ++k) {
            ra[static_cast<size_t>(k)] = a[static_cast<size_t>(c % 5)];
            rb[static_cast<size_t>(k)] = b[static_cast<size_t>(c % 5)];
            c /= 5;
        }
        resamples_a.push_back(ra);
        resamples_b.push_back(rb);
    }
    std::vector<double> stats;
    stats.reserve(3125ull * 3125ull);
    for (const auto& ra : resamples_a)
        for (const auto& rb : resamples_b) stats.push_back(stat(matrix2x5(ra, rb)));
    const double lo_oracle = quantile_oracle(stats, 0.025);
    const double hi_oracle = quantile_oracle(stats, 0.975);

    std::mt19937_64 rng(2024);
    const auto [lo, hi] = stratified_bootstrap_ci(m, stat, 20000, 0.95, rng);
    CHECK(std::abs(lo - lo_oracle) < 0.01);
    CHECK(std::abs(hi - hi_oracle) < 0.01);
}

TEST_CASE("probability of improvement: tie and dominance examples") {
    const ScoreMatrix x = matrix2x5({0.2, 0.4, 0.6}, {0.1, 0.3, 0.5});
    CHECK(probability_of_improvement_point(x, x) == doctest::Approx(0.5).epsilon(1e-12));

    const ScoreMatrix hi = matrix2x5({0.9, 0.8, 0.7}, {0.95, 0.85, 0.75});
    const ScoreMatrix lo = matrix2x5({0.1, 0.2, 0.3}, {0.15, 0.25, 0.35});
    CHECK(probability_of_improvement_point(hi, lo) == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(probability_of_improvement_point(lo, hi) == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("probability of improvement: hand-enumerated 2x3 pair counts") {
    // env a: x = {1, 2, 3}, y = {2, 2, 0}
    //   pairs (x, y): 1v2 L, 1v2 L, 1v0 W, 2v2 T, 2v2 T, 2v0 W, 3v2 W, 3v2 W, 3v0 W
    //   -> (5 wins + 2 * 0.5 ties) / 9 = 6/9
    // env b: x = {0, 0, 1}, y = {1, 1, 1}
    //   pairs: 6 losses, 3 ties -> 1.5/9
    // average = (6/9 + 1.5/9) / 2 = 7.5/18
    const ScoreMatrix x = matrix2x5({1, 2, 3}, {0, 0, 1});
    const ScoreMatrix y = matrix2x5({2, 2, 0}, {1, 1, 1});
    CHECK(probability_of_improvement_point(x, y) == doctest::Approx(7.5 / 18.0).epsilon(1e-12));

    const ImprovementEstimate est = [&] {
        std::mt19937_64 rng(3);
        return probability_of_improvement(x, y, 1000, 0.95, rng);
    }();
    CHECK(est.point == doctest::Approx(7.5 / 18.0).epsilon(1e-12));
    CHECK(est.ci.first <= est.point);
    CHECK(est.point <= est.ci.second);
    CHECK(est.ci.first >= 0.0);
    CHECK(est.ci.second <= 1.0);
}

TEST_CASE("probability of improvement: env set mismatch is an error") {
    ScoreMatrix x;
    x.envs = {"a"};
    x.runs = {{0.5}};
    ScoreMatrix y;
    y.envs = {"b"};
    y.runs = {{0.5}};
    CHECK_THROWS(probability_of_improvement_point(x, y));
}

TEST_CASE("bootstrap: single-run stratum resamples trivially") {
    ScoreMatrix m;
    m.envs = {"solo", "multi"};
    m.runs = {{0.7}, {0.1, 0.9, 0.5}};
    std::mt19937_64 rng(5);
    const auto [lo, hi] = stratified_bootstrap_ci(m, [](const ScoreMatrix& s) { return iqm(s); }, 1000, 0.95, rng);
    CHECK(lo <= hi);
    CHECK(std::isfinite(lo));
    CHECK(std::isfinite(hi));
}

TEST_CASE("run record: json line round trip preserves every field") {
    RunRecord r;
    r.t = 123456;
    r.kind = "eval";
    r.env = "shoal";
    r.seed = 42;
    r.ret = 7.25;
    r.norm_score = 0.68299;
    r.split = "test";
    r.extra["loss"] = -0.03125;
    r.extra["entropy"] = 2.19722;

    const std::string line = r.to_json();
    const RunRecord back = RunRecord::from_json(line);
    CHECK(back.t == r.t);
    CHECK(back.kind == r.kind);
    CHECK(back.env == r.env);
    CHECK(back.seed == r.seed);
    CHECK(back.ret.value() == r.ret.value());
    CHECK(back.norm_score.value() == r.norm_score.value());
    CHECK(back.split.value() == "test");
    CHECK(back.extra == r.extra);
    CHECK(back.to_json() == line);

    RunRecord sparse;
    sparse.t = 0;
    sparse.kind = "train";
    sparse.env = "corridor";
    sparse.seed = 1;
    const RunRecord sparse_back = RunRecord::from_json(sparse.to_json());
    CHECK_FALSE(sparse_back.ret.has_value());
    CHECK_FALSE(sparse_back.split.has_value());
}

TEST_CASE("run log: writer and reader round trip a multi-record file") {
    const std::string path = "/tmp/enclab_test_runlog.jsonl";
    {
        RunLogWriter w(path);
        for (int i = 0; i < 5; ++i) {
            RunRecord r;
            r.t = i * 1000;
            r.kind = i % 2 == 0 ? "train" : "eval";
            r.env = "shoal";
            r.seed = 9;
            r.ret = 0.5 * i;
            if (i % 2 == 1) r.split = "train";
            w.append(r);
        }
        w.flush();
    }
    const auto recs = read_runlog(path);
    REQUIRE(recs.size() == 5);
    CHECK(recs[4].t == 4000);
    CHECK(recs[3].split.value() == "train");
    {
        RunLogWriter w(path, /*append=*/true);
        RunRecord r;
        r.t = 5000;
        r.kind = "eval";
        r.env = "shoal";
        r.seed = 9;
        w.append(r);
    }
    CHECK(read_runlog(path).size() == 6);
    std::remove(path.c_str());
}
