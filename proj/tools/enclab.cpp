// Command-line front end: train / evaluate / analyze / report.
//
// Exit codes: 0 success, 2 configuration error, 3 numerical abort.

#include <CLI11.hpp>
#include <chrono>
#include <filesystem>
#include <iostream>
#include <json.hpp>

#include "enclab/agents.hpp"
#include "enclab/config.hpp"
#include "enclab/distributions.hpp"
#include "enclab/envs.hpp"
#include "enclab/probes.hpp"
#include "enclab/report.hpp"

namespace fs = std::filesystem;
using namespace enclab;

namespace {

KvConfig default_config() {
    KvConfig c = KvConfig::parse_string(R"(
[run]
algo=ppo
encoder=impoola
tau=1
env=shoal
track=generalization   # generalization: fixed train level set; efficiency: full distribution
levels=200
level_seed=77
total_steps=200000
seed=1
eval_interval=10000
eval_episodes=100
out=runs/latest

[ppo]
num_envs=16
rollout_len=128
lr=3.5e-4
batch_size=512
epochs=3
gamma=0.99
gae_lambda=0.95
clip_eps=0.2
vf_coef=0.5
ent_coef=0.01
max_grad_norm=0.5
normalize_advantages=true
lr_anneal=false
micro_batch=128

[dqn]
num_envs=128
lr=1e-4
batch_size=512
gamma=0.99
max_grad_norm=10.0
target_update_interval=64000
learning_starts=250000
buffer_size=1000000
train_frequency=1
eps_initial=1.0
eps_final=0.025
eps_decay_fraction=0.1
n_step=3
per_alpha=0.6
per_beta0=0.4
priority_eps=1e-6
huber_loss=true
)");
    return c;
}

TrainConfig to_train_config(const KvConfig& c) {
    const std::string algo = c.get_str("run.algo", "ppo");
    if (algo != "ppo" && algo != "dqn") throw ConfigError("run.algo must be 'ppo' or 'dqn'");
    TrainConfig t = algo == "ppo" ? TrainConfig::ppo_defaults() : TrainConfig::dqn_defaults();
    t.algo = algo;
    t.total_steps = c.get_int("run.total_steps", t.total_steps);
    t.seed = c.get_u64("run.seed", t.seed);
    t.eval_interval = c.get_int("run.eval_interval", t.eval_interval);
    t.eval_episodes = static_cast<int>(c.get_int("run.eval_episodes", t.eval_episodes));
    const std::string s = algo;  // section name matches algo
    t.num_envs = static_cast<int>(c.get_int(s + ".num_envs", t.num_envs));
    t.lr = c.get_double(s + ".lr", t.lr);
    t.batch_size = static_cast<int>(c.get_int(s + ".batch_size", t.batch_size));
    t.gamma = c.get_double(s + ".gamma", t.gamma);
    t.max_grad_norm = c.get_double(s + ".max_grad_norm", t.max_grad_norm);
    if (algo == "ppo") {
        t.rollout_len = static_cast<int>(c.get_int("ppo.rollout_len", t.rollout_len));
        t.epochs = static_cast<int>(c.get_int("ppo.epochs", t.epochs));
        t.gae_lambda = c.get_double("ppo.gae_lambda", t.gae_lambda);
        t.clip_eps = c.get_double("ppo.clip_eps", t.clip_eps);
        t.vf_coef = c.get_double("ppo.vf_coef", t.vf_coef);
        t.ent_coef = c.get_double("ppo.ent_coef", t.ent_coef);
        t.normalize_advantages = c.get_bool("ppo.normalize_advantages", t.normalize_advantages);
        t.lr_anneal = c.get_bool("ppo.lr_anneal", t.lr_anneal);
        t.micro_batch = static_cast<int>(c.get_int("ppo.micro_batch", t.micro_batch));
    } else {
        t.target_update_interval = c.get_int("dqn.target_update_interval", t.target_update_interval);
        t.learning_starts = c.get_int("dqn.learning_starts", t.learning_starts);
        t.buffer_size = c.get_int("dqn.buffer_size", t.buffer_size);
        t.train_frequency = static_cast<int>(c.get_int("dqn.train_frequency", t.train_frequency));
        t.eps_initial = c.get_double("dqn.eps_initial", t.eps_initial);
        t.eps_final = c.get_double("dqn.eps_final", t.eps_final);
        t.eps_decay_fraction = c.get_double("dqn.eps_decay_fraction", t.eps_decay_fraction);
        t.n_step = static_cast<int>(c.get_int("dqn.n_step", t.n_step));
        t.per_alpha = c.get_double("dqn.per_alpha", t.per_alpha);
        t.per_beta0 = c.get_double("dqn.per_beta0", t.per_beta0);
        t.priority_eps = c.get_double("dqn.priority_eps", t.priority_eps);
        t.huber_loss = c.get_bool("dqn.huber_loss", t.huber_loss);
    }
    return t;
}

LevelSet to_levels(const KvConfig& c) {
    const std::string track = c.get_str("run.track", "generalization");
    const std::uint64_t base = c.get_u64("run.level_seed", 77);
    if (track == "generalization") return LevelSet::restricted(static_cast<int>(c.get_int("run.levels", 200)), base);
    if (track == "efficiency") return LevelSet::full(base);
    throw ConfigError("run.track must be 'generalization' or 'efficiency'");
}

NormConstants load_constants(const KvConfig& c) {
    const std::string path = c.get_str("run.constants", "");
    return path.empty() ? builtin_toy_constants() : NormConstants::from_csv(path);
}

ActorCritic build_net(const KvConfig& c) {
    const EncoderSpec spec =
        parse_encoder_spec(c.get_str("run.encoder", "impoola"), static_cast<int>(c.get_int("run.tau", 1)));
    return ActorCritic(spec, kNumActions, c.get_u64("run.seed", 1));
}

RunRecord eval_record(long long t, const KvConfig& c, const std::string& split, const EvalResult& r) {
    RunRecord rec;
    rec.t = t;
    rec.kind = "eval";
    rec.env = c.get_str("run.env", "shoal");
    rec.seed = static_cast<std::int64_t>(c.get_u64("run.seed", 1));
    rec.ret = r.mean_return;
    rec.norm_score = r.mean_norm_score;
    rec.split = split;
    rec.extra["episodes"] = static_cast<double>(r.episode_returns.size());
    return rec;
}

Policy make_policy(ActorCritic& net) {
    return [&net](const Observation& obs, std::mt19937_64& rng) {
        Graph g;
        const ActorCritic::Out out = net.forward(g, g.input(obs_to_input(obs)));
        return Categorical::from_logits(g.value(out.logits)).sample(0, rng);
    };
}

int cmd_train(const KvConfig& cfg) {
    const fs::path out = cfg.get_str("run.out", "runs/latest");
    fs::create_directories(out);
    {
        std::ofstream f(out / "config.ini");
        f << cfg.serialize();
    }
    const TrainConfig tc = to_train_config(cfg);
    ActorCritic net = build_net(cfg);
    RunLogWriter log((out / "runlog.jsonl").string());
    TrainContext ctx;
    ctx.game = cfg.get_str("run.env", "shoal");
    ctx.levels = to_levels(cfg);
    ctx.constants = load_constants(cfg);
    ctx.log = &log;

    const auto t0 = std::chrono::steady_clock::now();
    const long long steps = tc.algo == "ppo" ? ppo_train(net, tc, ctx) : dqn_train(net, tc, ctx);
    const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

    save_checkpoint(net.to_checkpoint(), (out / "checkpoint.impk").string());
    nlohmann::json manifest;
    manifest["algo"] = tc.algo;
    manifest["env"] = ctx.game;
    manifest["encoder"] = cfg.get_str("run.encoder", "impoola");
    manifest["tau"] = cfg.get_int("run.tau", 1);
    manifest["seeds"] = {static_cast<std::int64_t>(tc.seed)};
    manifest["steps"] = steps;
    manifest["wall_clock_seconds"] = wall;
    std::ofstream(out / "manifest.json") << manifest.dump(2) << '\n';
    std::cout << "trained " << steps << " steps in " << wall << " s; run dir: " << out.string() << '\n';
    return 0;
}

int cmd_evaluate(const std::string& run_dir, const std::string& split, int episodes_override) {
    KvConfig cfg = default_config();
    const KvConfig saved = KvConfig::parse_file((fs::path(run_dir) / "config.ini").string());
    for (const auto& [k, v] : saved.values()) cfg.set(k, v);
    const nlohmann::json manifest = nlohmann::json::parse(std::ifstream(fs::path(run_dir) / "manifest.json"));
    const long long steps = manifest.at("steps").get<long long>();

    ActorCritic net = build_net(cfg);
    net.load(load_checkpoint((fs::path(run_dir) / "checkpoint.impk").string()));
    const TrainConfig tc = to_train_config(cfg);
    const int episodes = episodes_override > 0 ? episodes_override : tc.eval_episodes;
    const bool test = split == "test";
    // mirrors the seed derivation of the in-training evaluator, so evaluating
    // a finished run reproduces its final eval record
    const std::uint64_t eval_seed = mix64(tc.seed, static_cast<std::uint64_t>(steps) * 2 + (test ? 2 : 1));
    const EvalResult r = evaluate_policy(net, cfg.get_str("run.env", "shoal"), to_levels(cfg), test, episodes,
                                         eval_seed, load_constants(cfg), tc.algo == "ppo");
    const RunRecord rec = eval_record(steps, cfg, split, r);
    std::cout << rec.to_json() << '\n';
    RunLogWriter log((fs::path(run_dir) / "eval.jsonl").string(), /*append=*/true);
    log.append(rec);
    return 0;
}

int cmd_analyze(const std::string& run_dir, const std::string& probe, int n_states, int max_shift,
                double threshold, int probe_batch_size) {
    KvConfig cfg = default_config();
    const KvConfig saved = KvConfig::parse_file((fs::path(run_dir) / "config.ini").string());
    for (const auto& [k, v] : saved.values()) cfg.set(k, v);
    ActorCritic net = build_net(cfg);
    net.load(load_checkpoint((fs::path(run_dir) / "checkpoint.impk").string()));
    const std::string env = cfg.get_str("run.env", "shoal");
    auto game = make_game(env);
    Policy policy = make_policy(net);
    std::mt19937_64 rng(mix64(cfg.get_u64("run.seed", 1), 0xA9A1ull));

    const nlohmann::json manifest = nlohmann::json::parse(std::ifstream(fs::path(run_dir) / "manifest.json"));
    const long long steps = manifest.at("steps").get<long long>();

    if (probe == "sensitivity") {
        const SensitivityMap map = sensitivity_map(net, *game, policy, n_states, max_shift, rng);
        std::ofstream(fs::path(run_dir) / "sensitivity.csv") << map.to_csv();
        map.write_pgm((fs::path(run_dir) / "sensitivity.pgm").string());
        std::cout << "sensitivity map mean " << map.mean() << " over " << map.sample_count << " states\n";
        return 0;
    }
    if (probe == "dormant") {
        std::vector<Observation> batch;
        while (static_cast<int>(batch.size()) < probe_batch_size) {
            game->reset(rng());
            Observation obs = game->render();
            while (!game->state().done && static_cast<int>(batch.size()) < probe_batch_size) {
                batch.push_back(obs);
                StepResult sr = game->step(policy(obs, rng));
                obs = std::move(sr.obs);
            }
        }
        const DormantReport rep = dormant_fractions(net, batch, threshold);
        RunRecord rec;
        rec.t = steps;
        rec.kind = "dormant";
        rec.env = env;
        rec.seed = static_cast<std::int64_t>(cfg.get_u64("run.seed", 1));
        rec.extra["total_fraction"] = rep.total_fraction;
        rec.extra["threshold"] = rep.threshold;
        for (const DormantLayerReport& lr : rep.layers) rec.extra["frac." + lr.layer] = lr.fraction;
        RunLogWriter log((fs::path(run_dir) / "runlog.jsonl").string(), /*append=*/true);
        log.append(rec);
        std::cout << rec.to_json() << '\n';
        return 0;
    }
    throw ConfigError("probe must be 'sensitivity' or 'dormant'");
}

int cmd_report(const std::vector<std::string>& run_dirs, const std::string& out_dir, int n_resamples) {
    std::vector<RunData> runs;
    for (const std::string& d : run_dirs) runs.push_back(load_run_dir(d));
    const Report rep = build_report(runs, n_resamples, 0.95, 7);
    fs::create_directories(out_dir);
    std::ofstream(fs::path(out_dir) / "report.csv") << rep.summary_csv;
    std::ofstream(fs::path(out_dir) / "poi.csv") << rep.poi_csv;
    std::ofstream(fs::path(out_dir) / "curves.svg") << rep.curves_svg;
    std::cout << rep.summary_csv;
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    init_runtime(argc, argv);
    CLI::App app{"encoder laboratory: train/evaluate/analyze/report over the toy game suite"};
    app.require_subcommand(1);

    std::string config_path, out_override, run_dir, split = "test", probe = "sensitivity", report_out = ".";
    std::vector<std::string> sets, run_dirs;
    int episodes = 0, n_states = 64, max_shift = 8, probe_batch = 512, n_resamples = 2000;
    double threshold = 0.025;

    CLI::App* train = app.add_subcommand("train", "train one (env, encoder, seed) cell");
    train->add_option("--config", config_path, "config file (key=value with [sections])");
    train->add_option("--set", sets, "override a config key, e.g. --set run.seed=3")->take_all();
    train->add_option("--out", out_override, "run directory");

    CLI::App* eval = app.add_subcommand("evaluate", "evaluate a finished run's checkpoint");
    eval->add_option("run_dir", run_dir)->required();
    eval->add_option("--split", split, "train|test")->check(CLI::IsMember({"train", "test"}));
    eval->add_option("--episodes", episodes, "episode count (default: run config)");

    CLI::App* analyze = app.add_subcommand("analyze", "sensitivity / dormant probes on a checkpoint");
    analyze->add_option("run_dir", run_dir)->required();
    analyze->add_option("--probe", probe)->check(CLI::IsMember({"sensitivity", "dormant"}));
    analyze->add_option("--states", n_states, "states per sensitivity map");
    analyze->add_option("--max-shift", max_shift, "map half-width M");
    analyze->add_option("--threshold", threshold, "dormant score threshold");
    analyze->add_option("--probe-batch", probe_batch, "observations for the dormant probe");

    CLI::App* report = app.add_subcommand("report", "aggregate run directories");
    report->add_option("run_dirs", run_dirs)->required();
    report->add_option("--out", report_out, "output directory");
    report->add_option("--resamples", n_resamples, "bootstrap resample count");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : 2;
    }

    try {
        if (train->parsed()) {
            KvConfig cfg = default_config();
            if (!config_path.empty()) {
                const KvConfig from_file = KvConfig::parse_file(config_path);
                for (const auto& [k, v] : from_file.values()) cfg.set(k, v);
            }
            cfg.apply_env_overrides("ENCLAB");
            for (const std::string& s : sets) {
                const size_t eq = s.find('=');
                if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + s + "'");
                cfg.set(s.substr(0, eq), s.substr(eq + 1));
            }
            if (!out_override.empty()) cfg.set("run.out", out_override);
            return cmd_train(cfg);
        }
        if (eval->parsed()) return cmd_evaluate(run_dir, split, episodes);
        if (analyze->parsed()) return cmd_analyze(run_dir, probe, n_states, max_shift, threshold, probe_batch);
        if (report->parsed()) return cmd_report(run_dirs, report_out, n_resamples);
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return 2;
    } catch (const NumericalError& e) {
        std::cerr << "numerical abort: " << e.what() << '\n';
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 0;
}
