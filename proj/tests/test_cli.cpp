#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "enclab/metrics.hpp"
#include "enclab/runlog.hpp"

using namespace enclab;
namespace fs = std::filesystem;

namespace {

const std::string kCli = ENCLAB_CLI_PATH;

int run_cmd(const std::string& cmd, std::string* stdout_capture = nullptr) {
    const std::string out_file = "/tmp/enclab_cli_stdout.txt";
    const int rc = std::system((cmd + " > " + out_file + " 2>/dev/null").c_str());
    if (stdout_capture) {
        std::ifstream in(out_file);
        std::stringstream ss;
        ss << in.rdbuf();
        *stdout_capture = ss.str();
    }
    return WEXITSTATUS(rc);
}

fs::path fresh_dir(const std::string& name) {
    const fs::path dir = fs::temp_directory_path() / name;
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

std::string tiny_train_cmd(const fs::path& out, const std::string& extra_sets = "") {
    return kCli +
           " train --out " + out.string() +
           " --set run.total_steps=128 --set run.eval_interval=64 --set run.eval_episodes=2" +
           " --set run.levels=10 --set ppo.num_envs=2 --set ppo.rollout_len=32" +
           " --set ppo.batch_size=64 --set ppo.micro_batch=64 --set ppo.epochs=1 " + extra_sets;
}

// parses "a,b,c,..." into fields
std::vector<std::string> split_csv(const std::string& line) {
    std::vector<std::string> out;
    std::stringstream ss(line);
    std::string f;
    while (std::getline(ss, f, ',')) out.push_back(f);
    return out;
}

}  // namespace

TEST_CASE("cli: train writes a complete run directory") {
    const fs::path dir = fresh_dir("enclab_cli_train");
    std::string out;
    const int rc = run_cmd(tiny_train_cmd(dir), &out);
    CHECK(rc == 0);
    CHECK(fs::exists(dir / "config.ini"));
    CHECK(fs::exists(dir / "checkpoint.impk"));
    CHECK(fs::exists(dir / "runlog.jsonl"));
    CHECK(fs::exists(dir / "manifest.json"));
    CHECK(out.find("trained") != std::string::npos);

    const auto recs = read_runlog((dir / "runlog.jsonl").string());
    CHECK_FALSE(recs.empty());
    bool saw_eval_test = false;
    for (const RunRecord& r : recs)
        if (r.kind == "eval" && r.split.value_or("") == "test") saw_eval_test = true;
    CHECK(saw_eval_test);
}

TEST_CASE("cli: evaluate reproduces the final in-training eval record bitwise") {
    const fs::path dir = fresh_dir("enclab_cli_eval");
    REQUIRE(run_cmd(tiny_train_cmd(dir)) == 0);

    // the final test-split eval record from training
    std::string final_line;
    {
        std::ifstream in(dir / "runlog.jsonl");
        std::string line;
        while (std::getline(in, line))
            if (line.find("\"kind\":\"eval\"") != std::string::npos &&
                line.find("\"split\":\"test\"") != std::string::npos)
                final_line = line;
    }
    REQUIRE_FALSE(final_line.empty());

    std::string out;
    CHECK(run_cmd(kCli + " evaluate " + dir.string() + " --split test", &out) == 0);
    REQUIRE_FALSE(out.empty());
    if (!out.empty() && out.back() == '\n') out.pop_back();
    CHECK(out == final_line);
    CHECK(fs::exists(dir / "eval.jsonl"));
}

TEST_CASE("cli: analyze sensitivity emits a valid map with a zero center cell") {
    const fs::path dir = fresh_dir("enclab_cli_analyze");
    REQUIRE(run_cmd(tiny_train_cmd(dir)) == 0);

    std::string out;
    const int rc = run_cmd(kCli + " analyze " + dir.string() + " --probe sensitivity --states 2 --max-shift 2",
                           &out);
    CHECK(rc == 0);
    CHECK(fs::exists(dir / "sensitivity.csv"));
    CHECK(fs::exists(dir / "sensitivity.pgm"));
    CHECK(out.find("sensitivity map mean") != std::string::npos);

    std::ifstream csv(dir / "sensitivity.csv");
    std::string line;
    std::getline(csv, line);
    CHECK(line == "dx,dy,score");
    bool center_zero = false;
    size_t cells = 0;
    while (std::getline(csv, line)) {
        const auto f = split_csv(line);
        REQUIRE(f.size() == 3);
        const double score = std::stod(f[2]);
        CHECK(score >= 0.0);
        CHECK(score <= 2.0);
        if (f[0] == "0" && f[1] == "0") {
            center_zero = score == 0.0;
        }
        ++cells;
    }
    CHECK(cells == 25);
    CHECK(center_zero);
}

TEST_CASE("cli: analyze dormant appends a dormant record to the run log") {
    const fs::path dir = fresh_dir("enclab_cli_dormant");
    REQUIRE(run_cmd(tiny_train_cmd(dir)) == 0);
    const size_t before = read_runlog((dir / "runlog.jsonl").string()).size();

    std::string out;
    const int rc = run_cmd(kCli + " analyze " + dir.string() + " --probe dormant --probe-batch 32", &out);
    CHECK(rc == 0);
    const auto recs = read_runlog((dir / "runlog.jsonl").string());
    REQUIRE(recs.size() == before + 1);
    const RunRecord& last = recs.back();
    CHECK(last.kind == "dormant");
    CHECK(last.extra.count("total_fraction") == 1);
    CHECK(last.extra.at("total_fraction") >= 0.0);
    CHECK(last.extra.at("total_fraction") <= 1.0);
    bool per_layer = false;
    for (const auto& [k, v] : last.extra)
        if (k.rfind("frac.", 0) == 0) per_layer = true;
    CHECK(per_layer);
}

TEST_CASE("cli: report over fixture run directories reproduces the metrics oracles") {
    // two labels x two seeds, fixed final eval scores
    const fs::path base = fresh_dir("enclab_cli_report");
    struct Fixture {
        std::string name, algo, encoder;
        int seed;
        double train_score, test_score;
    };
    const std::vector<Fixture> fixtures = {
        {"a1", "ppo", "impala", 1, 0.50, 0.40},  {"a2", "ppo", "impala", 2, 0.60, 0.50},
        {"a3", "ppo", "impala", 3, 0.70, 0.45},  {"b1", "ppo", "impoola", 1, 0.55, 0.52},
        {"b2", "ppo", "impoola", 2, 0.65, 0.58}, {"b3", "ppo", "impoola", 3, 0.75, 0.44},
    };
    std::string dirs;
    for (const Fixture& fx : fixtures) {
        const fs::path d = base / fx.name;
        fs::create_directories(d);
        std::ofstream(d / "config.ini") << "[run]\nalgo=" << fx.algo << "\nencoder=" << fx.encoder
                                        << "\ntau=1\n";
        std::ofstream(d / "manifest.json") << "{\"steps\": 1000}\n";
        RunLogWriter log((d / "runlog.jsonl").string());
        for (int t : {500, 1000})
            for (const std::string split : {"train", "test"}) {
                RunRecord r;
                r.t = t;
                r.kind = "eval";
                r.env = "shoal";
                r.seed = fx.seed;
                r.split = split;
                r.norm_score = (split == "train" ? fx.train_score : fx.test_score) * (t == 500 ? 0.5 : 1.0);
                r.ret = *r.norm_score * 10.0;
                log.append(r);
            }
        dirs += " " + d.string();
    }

    const fs::path out = base / "report";
    std::string csv_out;
    CHECK(run_cmd(kCli + " report" + dirs + " --out " + out.string() + " --resamples 1000", &csv_out) == 0);
    CHECK(fs::exists(out / "report.csv"));
    CHECK(fs::exists(out / "poi.csv"));
    CHECK(fs::exists(out / "curves.svg"));

    // golden values from the metrics library on the same score sets
    const double impala_test_iqm = iqm({0.40, 0.50, 0.45});
    const double impoola_train_iqm = iqm({0.55, 0.65, 0.75});
    std::ifstream csv(out / "report.csv");
    std::string line;
    std::getline(csv, line);
    CHECK(line == "algo,env,split,iqm,ci_lo,ci_hi");
    int rows = 0;
    while (std::getline(csv, line)) {
        const auto f = split_csv(line);
        REQUIRE(f.size() == 6);
        ++rows;
        const double point = std::stod(f[3]);
        const double lo = std::stod(f[4]);
        const double hi = std::stod(f[5]);
        CHECK(lo <= point + 1e-9);
        CHECK(point <= hi + 1e-9);
        if (f[0] == "ppo/impala-tau1" && f[2] == "test")
            CHECK(point == doctest::Approx(impala_test_iqm).epsilon(1e-5));
        if (f[0] == "ppo/impoola-tau1" && f[2] == "train")
            CHECK(point == doctest::Approx(impoola_train_iqm).epsilon(1e-5));
    }
    CHECK(rows == 4);  // 2 labels x 1 env x 2 splits

    // probability-of-improvement matrix: diagonal 0.5, off-diagonal matches the oracle
    std::ifstream poi(out / "poi.csv");
    std::getline(poi, line);
    CHECK(line == "label,ppo/impala-tau1,ppo/impoola-tau1");
    std::getline(poi, line);
    auto f = split_csv(line);
    REQUIRE(f.size() == 3);
    CHECK(f[1] == "0.5");
    const double want_poi = probability_of_improvement_point(ScoreMatrix{{"shoal"}, {{0.40, 0.50, 0.45}}},
                                                             ScoreMatrix{{"shoal"}, {{0.52, 0.58, 0.44}}});
    CHECK(std::stod(f[2]) == doctest::Approx(want_poi).epsilon(1e-5));
}

TEST_CASE("cli: report refuses a run directory without a manifest") {
    const fs::path dir = fresh_dir("enclab_cli_nomanifest");
    std::ofstream(dir / "config.ini") << "[run]\nalgo=ppo\n";
    std::ofstream(dir / "runlog.jsonl") << "";
    CHECK(run_cmd(kCli + " report " + dir.string()) != 0);
}

TEST_CASE("cli: config errors exit with code 2") {
    CHECK(run_cmd(kCli + " train --config /nonexistent/enclab.ini") == 2);
    const fs::path dir = fresh_dir("enclab_cli_badalgo");
    CHECK(run_cmd(kCli + " train --out " + dir.string() + " --set run.algo=sarsa") == 2);
    CHECK(run_cmd(kCli + " train --set oops") == 2);       // malformed --set
    CHECK(run_cmd(kCli + " bogus-subcommand") == 2);       // parse error
}

TEST_CASE("cli: environment variables override config keys") {
    const fs::path dir = fresh_dir("enclab_cli_envvar");
    REQUIRE(run_cmd("ENCLAB_RUN_SEED=5 " + tiny_train_cmd(dir)) == 0);
    std::ifstream in(dir / "manifest.json");
    std::stringstream ss;
    ss << in.rdbuf();
    CHECK(ss.str().find("\"seeds\": [\n    5\n  ]") != std::string::npos);
    // the serialized config captured the override too
    std::ifstream cfg(dir / "config.ini");
    std::stringstream cs;
    cs << cfg.rdbuf();
    CHECK(cs.str().find("seed=5") != std::string::npos);
}
