#include "enclab/agents.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <numeric>

#include "enclab/distributions.hpp"
#include "enclab/optim.hpp"

namespace enclab {

TrainConfig TrainConfig::ppo_defaults() { return TrainConfig{}; }

TrainConfig TrainConfig::dqn_defaults() {
    TrainConfig c;
    c.algo = "dqn";
    c.num_envs = 128;
    c.lr = 1e-4;
    c.batch_size = 512;
    c.max_grad_norm = 10.0;
    return c;
}

double epsilon_at(long long step, long long total_steps, const TrainConfig& cfg) {
    if (step < 0 || step > total_steps) throw std::invalid_argument("epsilon_at: step outside [0, total_steps]");
    const double decay_steps = cfg.eps_decay_fraction * static_cast<double>(total_steps);
    if (decay_steps <= 0.0 || static_cast<double>(step) >= decay_steps) return cfg.eps_final;
    const double frac = static_cast<double>(step) / decay_steps;
    return cfg.eps_initial + frac * (cfg.eps_final - cfg.eps_initial);
}

std::pair<std::vector<float>, std::vector<float>> compute_gae(const std::vector<float>& rewards,
                                                              const std::vector<float>& values,
                                                              const std::vector<std::uint8_t>& dones,
                                                              float last_value, double gamma, double lambda) {
    const size_t T = rewards.size();
    if (values.size() != T || dones.size() != T) throw std::invalid_argument("compute_gae: length mismatch");
    std::vector<float> adv(T), ret(T);
    double gae = 0.0;
    for (size_t i = T; i-- > 0;) {
        const double not_done = dones[i] ? 0.0 : 1.0;
        const double next_v = (i + 1 < T) ? values[i + 1] : last_value;
        const double delta = rewards[i] + gamma * next_v * not_done - values[i];
        gae = delta + gamma * lambda * not_done * gae;
        adv[i] = static_cast<float>(gae);
        ret[i] = static_cast<float>(gae + values[i]);
    }
    return {std::move(adv), std::move(ret)};
}

PpoLossStats ppo_loss(const std::vector<float>& advantages, const std::vector<float>& returns,
                      const std::vector<float>& old_log_probs, const std::vector<float>& new_log_probs,
                      const std::vector<float>& new_values, const std::vector<float>& entropies,
                      double clip_eps, double vf_coef, double ent_coef) {
    const size_t n = advantages.size();
    if (returns.size() != n || old_log_probs.size() != n || new_log_probs.size() != n || new_values.size() != n ||
        entropies.size() != n)
        throw std::invalid_argument("ppo_loss: length mismatch");
    if (n == 0) throw std::invalid_argument("ppo_loss: empty batch");
    PpoLossStats s;
    for (size_t i = 0; i < n; ++i) {
        const double ratio = std::exp(static_cast<double>(new_log_probs[i]) - old_log_probs[i]);
        if (!std::isfinite(ratio)) throw NumericalError("ppo_loss: non-finite probability ratio");
        const double a = advantages[i];
        const double clipped = std::clamp(ratio, 1.0 - clip_eps, 1.0 + clip_eps);
        s.policy_loss -= std::min(ratio * a, clipped * a);
        if (ratio * a > clipped * a) s.clip_fraction += 1.0;
        const double verr = static_cast<double>(new_values[i]) - returns[i];
        s.value_loss += verr * verr;
        s.entropy += entropies[i];
    }
    const double dn = static_cast<double>(n);
    s.policy_loss /= dn;
    s.value_loss /= dn;
    s.entropy /= dn;
    s.clip_fraction /= dn;
    s.loss = s.policy_loss + vf_coef * s.value_loss - ent_coef * s.entropy;
    return s;
}

namespace {

// Batched no-grad policy evaluation.
struct PolicyOut {
    Tensor logits;
    std::vector<float> values;
};

PolicyOut policy_forward(ActorCritic& net, const std::vector<Observation>& obs) {
    Graph g;
    const Graph::Id x = g.input(obs_to_input(obs));
    const ActorCritic::Out out = net.forward(g, x);
    PolicyOut po;
    po.logits = g.value(out.logits);
    if (!po.logits.all_finite()) throw NumericalError("policy_forward: non-finite logits");
    const Tensor& v = g.value(out.value);
    po.values.assign(v.data.begin(), v.data.end());
    return po;
}

int argmax_row(const Tensor& logits, int row) {
    const int a = logits.dim(logits.ndim() - 1);
    const float* p = logits.ptr() + static_cast<size_t>(row) * a;
    return static_cast<int>(std::max_element(p, p + a) - p);
}

}  // namespace

EvalResult evaluate_policy(ActorCritic& net, const std::string& game, const LevelSet& levels, bool test_split,
                           int episodes, std::uint64_t seed, const NormConstants& constants, bool stochastic) {
    if (episodes <= 0) throw std::invalid_argument("evaluate_policy: episodes must be positive");
    std::mt19937_64 rng(mix64(seed, 0xE7A1ull));
    std::vector<std::unique_ptr<Game>> games;
    std::vector<Observation> obs;
    for (int i = 0; i < episodes; ++i) {
        games.push_back(make_game(game));
        const std::uint64_t ls = test_split ? levels.draw_test_seed(rng) : levels.draw_train_seed(rng);
        games.back()->reset(ls);
        obs.push_back(games.back()->render());
    }
    std::vector<int> active(static_cast<size_t>(episodes));
    std::iota(active.begin(), active.end(), 0);
    EvalResult res;
    res.episode_returns.assign(static_cast<size_t>(episodes), 0.0);
    while (!active.empty()) {
        std::vector<Observation> batch;
        batch.reserve(active.size());
        for (int i : active) batch.push_back(obs[static_cast<size_t>(i)]);
        PolicyOut po = policy_forward(net, batch);
        Categorical dist = Categorical::from_logits(po.logits);
        std::vector<int> still;
        for (size_t r = 0; r < active.size(); ++r) {
            const int i = active[r];
            const int a = stochastic ? dist.sample(static_cast<int>(r), rng) : argmax_row(po.logits, static_cast<int>(r));
            StepResult sr = games[static_cast<size_t>(i)]->step(a);
            if (sr.done) {
                res.episode_returns[static_cast<size_t>(i)] = games[static_cast<size_t>(i)]->state().episode_return;
            } else {
                obs[static_cast<size_t>(i)] = std::move(sr.obs);
                still.push_back(i);
            }
        }
        active = std::move(still);
    }
    for (double r : res.episode_returns) res.mean_return += r;
    res.mean_return /= static_cast<double>(episodes);
    res.mean_norm_score = normalize_score(res.mean_return, game, constants);
    return res;
}

namespace {

struct EvalEmitter {
    ActorCritic& net;
    const TrainConfig& cfg;
    const TrainContext& ctx;
    bool stochastic;

    // returns train-split mean normalized score
    double emit(long long step) {
        EvalResult tr = evaluate_policy(net, ctx.game, ctx.levels, /*test_split=*/false, cfg.eval_episodes,
                                        mix64(cfg.seed, static_cast<std::uint64_t>(step) * 2 + 1), ctx.constants,
                                        stochastic);
        write(step, "train", tr);
        if (ctx.eval_test_split) {
            EvalResult te = evaluate_policy(net, ctx.game, ctx.levels, /*test_split=*/true, cfg.eval_episodes,
                                            mix64(cfg.seed, static_cast<std::uint64_t>(step) * 2 + 2), ctx.constants,
                                            stochastic);
            write(step, "test", te);
        }
        return tr.mean_norm_score;
    }

    void write(long long step, const std::string& split, const EvalResult& r) {
        if (!ctx.log) return;
        RunRecord rec;
        rec.t = step;
        rec.kind = "eval";
        rec.env = ctx.game;
        rec.seed = static_cast<std::int64_t>(cfg.seed);
        rec.ret = r.mean_return;
        rec.norm_score = r.mean_norm_score;
        rec.split = split;
        rec.extra["episodes"] = static_cast<double>(r.episode_returns.size());
        ctx.log->append(rec);
    }
};

}  // namespace

long long ppo_train(ActorCritic& net, const TrainConfig& cfg, const TrainContext& ctx) {
    const int N = cfg.num_envs, T = cfg.rollout_len;
    const long long rollout_size = static_cast<long long>(N) * T;
    const int tau = net.encoder().spec().width_scale;
    const float lr0 = lr_for_tau(static_cast<float>(cfg.lr), tau);

    VectorEnv envs(ctx.game, N, ctx.levels, mix64(cfg.seed, 0x40110ull));
    std::mt19937_64 action_rng(mix64(cfg.seed, 0xAC710ull));
    std::mt19937_64 shuffle_rng(mix64(cfg.seed, 0x5F0FFull));
    auto params = net.parameters();
    EvalEmitter evals{net, cfg, ctx, /*stochastic=*/true};

    std::vector<Observation> obs = envs.reset();
    const size_t S = static_cast<size_t>(rollout_size);
    std::vector<Observation> roll_obs(S);
    std::vector<int> roll_act(S);
    std::vector<float> roll_logp(S), roll_val(S), roll_rew(S);
    std::vector<std::uint8_t> roll_done(S);
    std::deque<double> recent_returns;

    long long step = 0;
    long long next_eval = 0;
    bool stop = false;
    while (step < cfg.total_steps && !stop) {
        if (step >= next_eval) {
            const double score = evals.emit(step);
            next_eval += cfg.eval_interval;
            if (ctx.should_stop && ctx.should_stop(step, score)) break;
        }

        for (int t = 0; t < T; ++t) {
            PolicyOut po = policy_forward(net, obs);
            Categorical dist = Categorical::from_logits(po.logits);
            std::vector<int> acts(static_cast<size_t>(N));
            for (int i = 0; i < N; ++i) {
                const size_t k = static_cast<size_t>(t) * N + static_cast<size_t>(i);
                const int a = dist.sample(i, action_rng);
                acts[static_cast<size_t>(i)] = a;
                roll_obs[k] = obs[static_cast<size_t>(i)];
                roll_act[k] = a;
                roll_logp[k] = dist.log_prob(i, a);
                roll_val[k] = po.values[static_cast<size_t>(i)];
            }
            VectorEnv::Step sr = envs.step(acts);
            for (int i = 0; i < N; ++i) {
                const size_t k = static_cast<size_t>(t) * N + static_cast<size_t>(i);
                roll_rew[k] = sr.reward[static_cast<size_t>(i)];
                roll_done[k] = sr.done[static_cast<size_t>(i)];
                if (sr.done[static_cast<size_t>(i)]) {
                    recent_returns.push_back(sr.episode_return[static_cast<size_t>(i)]);
                    if (recent_returns.size() > 100) recent_returns.pop_front();
                }
            }
            obs = std::move(sr.obs);
        }

        PolicyOut last = policy_forward(net, obs);
        std::vector<float> adv(S), ret(S);
        std::vector<float> col_r(static_cast<size_t>(T)), col_v(static_cast<size_t>(T));
        std::vector<std::uint8_t> col_d(static_cast<size_t>(T));
        for (int i = 0; i < N; ++i) {
            for (int t = 0; t < T; ++t) {
                const size_t k = static_cast<size_t>(t) * N + static_cast<size_t>(i);
                col_r[static_cast<size_t>(t)] = roll_rew[k];
                col_v[static_cast<size_t>(t)] = roll_val[k];
                col_d[static_cast<size_t>(t)] = roll_done[k];
            }
            auto [a, r] = compute_gae(col_r, col_v, col_d, last.values[static_cast<size_t>(i)], cfg.gamma,
                                      cfg.gae_lambda);
            for (int t = 0; t < T; ++t) {
                const size_t k = static_cast<size_t>(t) * N + static_cast<size_t>(i);
                adv[k] = a[static_cast<size_t>(t)];
                ret[k] = r[static_cast<size_t>(t)];
            }
        }
        step += rollout_size;

        const float lr = cfg.lr_anneal
                             ? lr0 * static_cast<float>(1.0 - static_cast<double>(step) / cfg.total_steps)
                             : lr0;
        const int n_actions = net.n_actions();
        std::vector<size_t> order(S);
        std::iota(order.begin(), order.end(), size_t{0});
        PpoLossStats stats;
        int n_minibatches = 0;
        for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
            std::shuffle(order.begin(), order.end(), shuffle_rng);
            for (size_t mb0 = 0; mb0 < S; mb0 += static_cast<size_t>(cfg.batch_size)) {
                const size_t mb1 = std::min(S, mb0 + static_cast<size_t>(cfg.batch_size));
                const size_t B = mb1 - mb0;
                double a_mean = 0.0, a_sq = 0.0;
                for (size_t j = mb0; j < mb1; ++j) a_mean += adv[order[j]];
                a_mean /= static_cast<double>(B);
                for (size_t j = mb0; j < mb1; ++j) {
                    const double d = adv[order[j]] - a_mean;
                    a_sq += d * d;
                }
                const double a_std = std::sqrt(a_sq / static_cast<double>(B)) + 1e-8;

                std::vector<float> mb_adv(B), mb_ret(B), mb_oldlp(B), mb_newlp(B), mb_val(B), mb_ent(B);
                zero_grads(params);
                for (size_t c0 = 0; c0 < B; c0 += static_cast<size_t>(cfg.micro_batch)) {
                    const size_t c1 = std::min(B, c0 + static_cast<size_t>(cfg.micro_batch));
                    const size_t C = c1 - c0;
                    std::vector<Observation> batch(C);
                    for (size_t j = 0; j < C; ++j) batch[j] = roll_obs[order[mb0 + c0 + j]];
                    Graph g;
                    const Graph::Id x = g.input(obs_to_input(batch));
                    const ActorCritic::Out out = net.forward(g, x);
                    const Tensor& logits = g.value(out.logits);
                    const Tensor& value = g.value(out.value);
                    if (!logits.all_finite() || !value.all_finite())
                        throw NumericalError("ppo_train: non-finite network output at step " + std::to_string(step));
                    Categorical dist = Categorical::from_logits(logits);

                    Tensor dlogits = Tensor::zeros(logits.shape);
                    Tensor dvalue = Tensor::zeros(value.shape);
                    for (size_t j = 0; j < C; ++j) {
                        const size_t k = order[mb0 + c0 + j];
                        const int row = static_cast<int>(j);
                        const float a_norm = cfg.normalize_advantages
                                                 ? static_cast<float>((adv[k] - a_mean) / a_std)
                                                 : adv[k];
                        const float newlp = dist.log_prob(row, roll_act[k]);
                        const double ratio = std::exp(static_cast<double>(newlp) - roll_logp[k]);
                        if (!std::isfinite(ratio)) throw NumericalError("ppo_train: non-finite probability ratio");
                        const double clipped = std::clamp(ratio, 1.0 - cfg.clip_eps, 1.0 + cfg.clip_eps);
                        // min(r*A, clip(r)*A): gradient flows through r only
                        // when the unclipped arm is active
                        if (ratio * a_norm <= clipped * a_norm) {
                            const float scale = static_cast<float>(-a_norm * ratio / static_cast<double>(B));
                            dist.log_prob_grad(row, roll_act[k], scale,
                                               dlogits.ptr() + static_cast<size_t>(row) * n_actions);
                        }
                        dist.entropy_grad(row, static_cast<float>(-cfg.ent_coef / static_cast<double>(B)),
                                          dlogits.ptr() + static_cast<size_t>(row) * n_actions);
                        const float v = value.data[j];
                        dvalue.data[j] =
                            static_cast<float>(cfg.vf_coef * 2.0 * (v - ret[k]) / static_cast<double>(B));
                        mb_adv[c0 + j] = a_norm;
                        mb_ret[c0 + j] = ret[k];
                        mb_oldlp[c0 + j] = roll_logp[k];
                        mb_newlp[c0 + j] = newlp;
                        mb_val[c0 + j] = v;
                        mb_ent[c0 + j] = dist.entropy(row);
                    }
                    g.backward({{out.logits, std::move(dlogits)}, {out.value, std::move(dvalue)}});
                }
                clip_grad_global_norm(params, static_cast<float>(cfg.max_grad_norm));
                adam_step(params, lr);
                stats = ppo_loss(mb_adv, mb_ret, mb_oldlp, mb_newlp, mb_val, mb_ent, cfg.clip_eps, cfg.vf_coef,
                                 cfg.ent_coef);
                ++n_minibatches;
            }
        }

        if (ctx.log) {
            RunRecord rec;
            rec.t = step;
            rec.kind = "train";
            rec.env = ctx.game;
            rec.seed = static_cast<std::int64_t>(cfg.seed);
            rec.split = "train";
            if (!recent_returns.empty()) {
                double m = 0.0;
                for (double r : recent_returns) m += r;
                m /= static_cast<double>(recent_returns.size());
                rec.ret = m;
                rec.norm_score = normalize_score(m, ctx.game, ctx.constants);
            }
            rec.extra["loss"] = stats.loss;
            rec.extra["policy_loss"] = stats.policy_loss;
            rec.extra["value_loss"] = stats.value_loss;
            rec.extra["entropy"] = stats.entropy;
            rec.extra["clip_fraction"] = stats.clip_fraction;
            rec.extra["lr"] = lr;
            rec.extra["minibatches"] = n_minibatches;
            ctx.log->append(rec);
        }
    }
    if (!stop) evals.emit(step);
    if (ctx.log) ctx.log->flush();
    return step;
}

// --- DQN -------------------------------------------------------------------

SumTree::SumTree(int capacity) : cap_(1) {
    if (capacity <= 0) throw std::invalid_argument("SumTree: capacity must be positive");
    while (cap_ < capacity) cap_ *= 2;
    tree_.assign(static_cast<size_t>(2 * cap_), 0.0);
}

void SumTree::set(int i, double weight) {
    if (i < 0 || i >= cap_) throw std::out_of_range("SumTree::set: index out of range");
    if (!(weight >= 0.0)) throw std::invalid_argument("SumTree::set: weight must be non-negative");
    size_t node = static_cast<size_t>(cap_ + i);
    tree_[node] = weight;
    for (node /= 2; node >= 1; node /= 2) tree_[node] = tree_[2 * node] + tree_[2 * node + 1];
}

double SumTree::get(int i) const {
    if (i < 0 || i >= cap_) throw std::out_of_range("SumTree::get: index out of range");
    return tree_[static_cast<size_t>(cap_ + i)];
}

int SumTree::find_prefix(double prefix) const {
    if (total() <= 0.0) throw std::logic_error("SumTree::find_prefix: empty tree");
    prefix = std::clamp(prefix, 0.0, std::nexttoward(total(), 0.0));
    size_t node = 1;
    while (node < static_cast<size_t>(cap_)) {
        const double left = tree_[2 * node];
        if (prefix < left) {
            node = 2 * node;
        } else {
            prefix -= left;
            node = 2 * node + 1;
        }
    }
    return static_cast<int>(node) - cap_;
}

ReplayBuffer::ReplayBuffer(long long capacity, double alpha, double priority_eps)
    : capacity_(capacity), alpha_(alpha), priority_eps_(priority_eps), tree_(static_cast<int>(capacity)) {
    if (capacity <= 0) throw std::invalid_argument("ReplayBuffer: capacity must be positive");
}

void ReplayBuffer::add(Transition tr) {
    const int slot = static_cast<int>(next_ % capacity_);
    if (static_cast<long long>(storage_.size()) < capacity_)
        storage_.push_back(std::move(tr));
    else
        storage_[static_cast<size_t>(slot)] = std::move(tr);
    tree_.set(slot, std::pow(max_priority_, alpha_));
    next_ += 1;
}

ReplayBuffer::Sample ReplayBuffer::sample(int batch, double beta, std::mt19937_64& rng) const {
    if (storage_.empty()) throw std::logic_error("ReplayBuffer::sample: buffer is empty");
    if (batch <= 0) throw std::invalid_argument("ReplayBuffer::sample: batch must be positive");
    Sample s;
    s.indices.reserve(static_cast<size_t>(batch));
    s.is_weights.reserve(static_cast<size_t>(batch));
    s.items.reserve(static_cast<size_t>(batch));
    const double total = tree_.total();
    const double seg = total / batch;
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    const double n = static_cast<double>(storage_.size());
    double max_w = 0.0;
    for (int k = 0; k < batch; ++k) {
        const double prefix = (k + unit(rng)) * seg;
        int idx = tree_.find_prefix(prefix);
        idx = std::min(idx, static_cast<int>(storage_.size()) - 1);
        const double p = tree_.get(idx) / total;
        const double w = std::pow(n * p, -beta);
        s.indices.push_back(idx);
        s.is_weights.push_back(static_cast<float>(w));
        s.items.push_back(&storage_[static_cast<size_t>(idx)]);
        max_w = std::max(max_w, w);
    }
    for (float& w : s.is_weights) w = static_cast<float>(w / max_w);
    return s;
}

void ReplayBuffer::update_priorities(const std::vector<int>& indices, const std::vector<float>& td_errors) {
    if (indices.size() != td_errors.size())
        throw std::invalid_argument("ReplayBuffer::update_priorities: length mismatch");
    for (size_t k = 0; k < indices.size(); ++k) {
        const double p = std::abs(static_cast<double>(td_errors[k])) + priority_eps_;
        max_priority_ = std::max(max_priority_, p);
        tree_.set(indices[k], std::pow(p, alpha_));
    }
}

std::vector<Transition> NStepAccumulator::push(const Observation& obs, int action, float reward,
                                               const Observation& next_obs, bool done) {
    // the entry at the front has already absorbed (window size) rewards, so
    // this reward enters its return with exponent equal to that count
    {
        int k = static_cast<int>(window_.size());
        for (Pending& p : window_) {
            p.reward += static_cast<float>(std::pow(gamma_, static_cast<double>(k)) * reward);
            --k;
        }
    }
    window_.push_back(Pending{obs, action, reward});

    std::vector<Transition> out;
    if (done) {
        int span = static_cast<int>(window_.size());
        while (!window_.empty()) {
            Pending& p = window_.front();
            Transition tr;
            tr.obs = std::move(p.obs);
            tr.action = p.action;
            tr.n_step_return = p.reward;
            tr.gamma_n = static_cast<float>(std::pow(gamma_, static_cast<double>(span)));
            tr.next_obs = next_obs;
            tr.done = 1;
            out.push_back(std::move(tr));
            window_.pop_front();
            --span;
        }
    } else if (static_cast<int>(window_.size()) == n_) {
        Pending& p = window_.front();
        Transition tr;
        tr.obs = std::move(p.obs);
        tr.action = p.action;
        tr.n_step_return = p.reward;
        tr.gamma_n = static_cast<float>(std::pow(gamma_, static_cast<double>(n_)));
        tr.next_obs = next_obs;
        tr.done = 0;
        out.push_back(std::move(tr));
        window_.pop_front();
    }
    return out;
}

std::vector<float> double_q_targets(ActorCritic& online, ActorCritic& target,
                                    const std::vector<const Transition*>& batch) {
    std::vector<Observation> next_obs;
    next_obs.reserve(batch.size());
    for (const Transition* tr : batch) next_obs.push_back(tr->next_obs);
    PolicyOut qo = policy_forward(online, next_obs);
    PolicyOut qt = policy_forward(target, next_obs);
    const int a = qo.logits.dim(qo.logits.ndim() - 1);
    std::vector<float> y(batch.size());
    for (size_t i = 0; i < batch.size(); ++i) {
        const int best = argmax_row(qo.logits, static_cast<int>(i));
        const float qnext = qt.logits.data[i * static_cast<size_t>(a) + static_cast<size_t>(best)];
        const Transition& tr = *batch[i];
        y[i] = tr.n_step_return + tr.gamma_n * (tr.done ? 0.0f : 1.0f) * qnext;
    }
    return y;
}

long long dqn_train(ActorCritic& online, const TrainConfig& cfg, const TrainContext& ctx) {
    const int N = cfg.num_envs;
    const int tau = online.encoder().spec().width_scale;
    const float lr = lr_for_tau(static_cast<float>(cfg.lr), tau);

    ActorCritic target(online.encoder().spec(), online.n_actions(), /*init_seed=*/1);
    target.copy_from(online);

    VectorEnv envs(ctx.game, N, ctx.levels, mix64(cfg.seed, 0xD07Aull));
    std::mt19937_64 act_rng(mix64(cfg.seed, 0xD0A2ull));
    std::mt19937_64 sample_rng(mix64(cfg.seed, 0xD0B3ull));
    auto params = online.parameters();
    EvalEmitter evals{online, cfg, ctx, /*stochastic=*/false};

    ReplayBuffer buffer(cfg.buffer_size, cfg.per_alpha, cfg.priority_eps);
    std::vector<NStepAccumulator> nstep(static_cast<size_t>(N), NStepAccumulator(cfg.n_step, cfg.gamma));

    std::vector<Observation> obs = envs.reset();
    long long step = 0, next_eval = 0, last_target_sync = 0;
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    std::deque<double> recent_returns;

    while (step < cfg.total_steps) {
        if (step >= next_eval) {
            const double score = evals.emit(step);
            next_eval += cfg.eval_interval;
            if (ctx.should_stop && ctx.should_stop(step, score)) break;
        }

        const double eps = epsilon_at(std::min(step, cfg.total_steps), cfg.total_steps, cfg);
        PolicyOut po = policy_forward(online, obs);
        std::vector<int> acts(static_cast<size_t>(N));
        for (int i = 0; i < N; ++i)
            acts[static_cast<size_t>(i)] = unit(act_rng) < eps
                                               ? static_cast<int>(act_rng() % static_cast<std::uint64_t>(online.n_actions()))
                                               : argmax_row(po.logits, i);
        VectorEnv::Step sr = envs.step(acts);
        for (int i = 0; i < N; ++i) {
            const bool done = sr.done[static_cast<size_t>(i)] != 0;
            const Observation& next = done ? sr.terminal_obs[static_cast<size_t>(i)] : sr.obs[static_cast<size_t>(i)];
            for (Transition& tr :
                 nstep[static_cast<size_t>(i)].push(obs[static_cast<size_t>(i)], acts[static_cast<size_t>(i)],
                                                    sr.reward[static_cast<size_t>(i)], next, done))
                buffer.add(std::move(tr));
            if (done) {
                recent_returns.push_back(sr.episode_return[static_cast<size_t>(i)]);
                if (recent_returns.size() > 100) recent_returns.pop_front();
            }
        }
        obs = std::move(sr.obs);
        step += N;

        if (step >= cfg.learning_starts && (step / N) % cfg.train_frequency == 0) {
            const double beta =
                cfg.per_beta0 + (1.0 - cfg.per_beta0) * std::min(1.0, static_cast<double>(step) / cfg.total_steps);
            ReplayBuffer::Sample smp = buffer.sample(cfg.batch_size, beta, sample_rng);
            const std::vector<float> y = double_q_targets(online, target, smp.items);

            std::vector<Observation> batch;
            batch.reserve(smp.items.size());
            for (const Transition* tr : smp.items) batch.push_back(tr->obs);
            Graph g;
            const Graph::Id x = g.input(obs_to_input(batch));
            const ActorCritic::Out out = online.forward(g, x);
            const Tensor& q = g.value(out.logits);
            if (!q.all_finite()) throw NumericalError("dqn_train: non-finite Q-values at step " + std::to_string(step));
            const int A = online.n_actions();
            Tensor dq = Tensor::zeros(q.shape);
            std::vector<float> td(smp.items.size());
            const double B = static_cast<double>(smp.items.size());
            for (size_t i = 0; i < smp.items.size(); ++i) {
                const float qa = q.data[i * static_cast<size_t>(A) + static_cast<size_t>(smp.items[i]->action)];
                const float err = qa - y[i];
                td[i] = err;
                const double dloss = cfg.huber_loss ? std::clamp(static_cast<double>(err), -1.0, 1.0)
                                                    : 2.0 * static_cast<double>(err);
                dq.data[i * static_cast<size_t>(A) + static_cast<size_t>(smp.items[i]->action)] =
                    static_cast<float>(smp.is_weights[i] * dloss / B);
            }
            zero_grads(params);
            g.backward(out.logits, std::move(dq));
            clip_grad_global_norm(params, static_cast<float>(cfg.max_grad_norm));
            adam_step(params, lr);
            buffer.update_priorities(smp.indices, td);

            if (ctx.log && (step / N) % 64 == 0) {
                RunRecord rec;
                rec.t = step;
                rec.kind = "train";
                rec.env = ctx.game;
                rec.seed = static_cast<std::int64_t>(cfg.seed);
                rec.split = "train";
                if (!recent_returns.empty()) {
                    double m = 0.0;
                    for (double r : recent_returns) m += r;
                    m /= static_cast<double>(recent_returns.size());
                    rec.ret = m;
                    rec.norm_score = normalize_score(m, ctx.game, ctx.constants);
                }
                double huber = 0.0;
                for (size_t i = 0; i < td.size(); ++i) {
                    const double e = std::abs(static_cast<double>(td[i]));
                    huber += smp.is_weights[i] * (cfg.huber_loss ? (e <= 1.0 ? 0.5 * e * e : e - 0.5) : e * e);
                }
                rec.extra["loss"] = huber / B;
                rec.extra["epsilon"] = eps;
                rec.extra["beta"] = beta;
                ctx.log->append(rec);
            }
        }

        if (step - last_target_sync >= cfg.target_update_interval) {
            target.copy_from(online);
            last_target_sync = step;
        }
    }
    evals.emit(step);
    if (ctx.log) ctx.log->flush();
    return step;
}

}  // namespace enclab
