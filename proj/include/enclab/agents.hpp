#pragma once

#include <cstdint>
#include <deque>
#include <functional>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "enclab/encoder.hpp"
#include "enclab/envs.hpp"
#include "enclab/metrics.hpp"
#include "enclab/runlog.hpp"

namespace enclab {

// Raised when training hits NaN/Inf; the CLI maps it to its own exit code.
struct NumericalError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct TrainConfig {
    std::string algo = "ppo";

    // shared
    int num_envs = 64;
    double lr = 3.5e-4;  // at tau=2; scaled via lr_for_tau
    int batch_size = 2048;
    double gamma = 0.99;
    double max_grad_norm = 0.5;
    long long total_steps = 200000;
    std::uint64_t seed = 1;

    // PPO
    int rollout_len = 256;
    int epochs = 3;
    double gae_lambda = 0.95;
    double clip_eps = 0.2;
    double vf_coef = 0.5;
    double ent_coef = 0.01;
    bool normalize_advantages = true;
    bool lr_anneal = false;
    int micro_batch = 256;  // forward/backward chunk inside a minibatch

    // DQN
    long long target_update_interval = 64000;
    long long learning_starts = 250000;
    long long buffer_size = 1000000;
    int train_frequency = 1;
    double eps_initial = 1.0;
    double eps_final = 0.025;
    double eps_decay_fraction = 0.1;
    int n_step = 3;
    double per_alpha = 0.6;
    double per_beta0 = 0.4;
    double priority_eps = 1e-6;
    bool huber_loss = true;  // false: plain squared error

    // evaluation cadence
    long long eval_interval = 10000;
    int eval_episodes = 100;

    static TrainConfig ppo_defaults();
    static TrainConfig dqn_defaults();
};

// Linear epsilon-greedy schedule: eps_initial -> eps_final over the first
// eps_decay_fraction of total_steps, constant afterwards.
double epsilon_at(long long step, long long total_steps, const TrainConfig& cfg);

// Backward GAE recursion; returns (advantages, returns = advantages + values).
// dones[t] marks that the step at t ended its episode (values beyond it are
// not bootstrapped through).
std::pair<std::vector<float>, std::vector<float>> compute_gae(const std::vector<float>& rewards,
                                                              const std::vector<float>& values,
                                                              const std::vector<std::uint8_t>& dones,
                                                              float last_value, double gamma, double lambda);

struct PpoLossStats {
    double loss = 0.0;
    double policy_loss = 0.0;
    double value_loss = 0.0;
    double entropy = 0.0;
    double clip_fraction = 0.0;
};

// Scalar PPO objective over an already-normalized advantage batch:
// -mean(min(r*A, clip(r)*A)) + vf_coef*mean((v - ret)^2) - ent_coef*mean(H).
PpoLossStats ppo_loss(const std::vector<float>& advantages, const std::vector<float>& returns,
                      const std::vector<float>& old_log_probs, const std::vector<float>& new_log_probs,
                      const std::vector<float>& new_values, const std::vector<float>& entropies,
                      double clip_eps, double vf_coef, double ent_coef);

struct EvalResult {
    std::vector<double> episode_returns;
    double mean_return = 0.0;
    double mean_norm_score = 0.0;
};

// Plays one episode per parallel instance. PPO policies act stochastically,
// DQN greedily (stochastic=false).
EvalResult evaluate_policy(ActorCritic& net, const std::string& game, const LevelSet& levels, bool test_split,
                           int episodes, std::uint64_t seed, const NormConstants& constants, bool stochastic);

struct TrainContext {
    std::string game = "shoal";
    LevelSet levels = LevelSet::full(0);
    NormConstants constants;
    RunLogWriter* log = nullptr;
    // Optional early stop, polled after each evaluation with the train-split
    // mean normalized score.
    std::function<bool(long long step, double mean_norm_score)> should_stop;
    bool eval_test_split = true;
};

// Trains in place; emits train/eval records; returns steps actually run.
long long ppo_train(ActorCritic& net, const TrainConfig& cfg, const TrainContext& ctx);
long long dqn_train(ActorCritic& online, const TrainConfig& cfg, const TrainContext& ctx);

// --- DQN machinery, exposed for direct testing -----------------------------

// Fixed-capacity binary sum tree over leaf weights.
class SumTree {
  public:
    explicit SumTree(int capacity);
    void set(int i, double weight);
    double get(int i) const;
    double total() const { return tree_[1]; }
    int capacity() const { return cap_; }
    // Index of the leaf whose cumulative range contains prefix in [0, total).
    int find_prefix(double prefix) const;

  private:
    int cap_;
    std::vector<double> tree_;  // 1-based heap layout, leaves at [cap_, 2*cap_)
};

struct Transition {
    Observation obs;
    int action = 0;
    float n_step_return = 0.0f;  // sum of discounted rewards over the aggregated span
    float gamma_n = 0.0f;        // gamma^k for the realized span k
    Observation next_obs;        // observation after the span
    std::uint8_t done = 0;
};

class ReplayBuffer {
  public:
    ReplayBuffer(long long capacity, double alpha, double priority_eps);

    void add(Transition tr);  // enters with max priority seen so far
    long long size() const { return static_cast<long long>(storage_.size()); }

    struct Sample {
        std::vector<int> indices;
        std::vector<float> is_weights;  // normalized to max 1
        std::vector<const Transition*> items;
    };
    Sample sample(int batch, double beta, std::mt19937_64& rng) const;
    void update_priorities(const std::vector<int>& indices, const std::vector<float>& td_errors);

    double priority_mass(int i) const { return tree_.get(i); }  // p_i^alpha
    double total_mass() const { return tree_.total(); }

  private:
    long long capacity_;
    double alpha_, priority_eps_;
    double max_priority_ = 1.0;
    long long next_ = 0;
    std::vector<Transition> storage_;
    SumTree tree_;
};

// y_i = R_i + gamma_n_i * (1 - done_i) * Q_target(s'_i, argmax_a Q_online(s'_i, a)).
std::vector<float> double_q_targets(ActorCritic& online, ActorCritic& target,
                                    const std::vector<const Transition*>& batch);

// Builds n-step transitions from a per-env stream; emits one aggregated
// transition per input once the window fills, and flushes on episode end.
class NStepAccumulator {
  public:
    NStepAccumulator(int n, double gamma) : n_(n), gamma_(gamma) {}
    std::vector<Transition> push(const Observation& obs, int action, float reward, const Observation& next_obs,
                                 bool done);

  private:
    struct Pending {
        Observation obs;
        int action;
        float reward;
    };
    int n_;
    double gamma_;
    std::deque<Pending> window_;
};

}  // namespace enclab
