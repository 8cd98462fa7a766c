#include "enclab/envs.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <stdexcept>

namespace enclab {

std::uint64_t mix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ull;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
    return x ^ (x >> 31);
}

namespace {

constexpr int kAgentSpeed = 4;  // Shoal px per step
// action -> unit direction; 0 is noop, then N/NE/E/.../NW order is irrelevant
// as long as it is fixed.
constexpr int kDX[kNumActions] = {0, -1, 0, 1, -1, 1, -1, 0, 1};
constexpr int kDY[kNumActions] = {0, -1, -1, -1, 0, 0, 1, 1, 1};

struct Rgb {
    std::uint8_t r, g, b;
};

inline void put_px(Observation& o, int x, int y, Rgb c) {
    if (x < 0 || x >= kObsW || y < 0 || y >= kObsH) return;
    const int i = y * kObsW + x;
    o[0 * kObsH * kObsW + i] = c.r;
    o[1 * kObsH * kObsW + i] = c.g;
    o[2 * kObsH * kObsW + i] = c.b;
}

void fill_box(Observation& o, int cx, int cy, int hw, int hh, Rgb fill, Rgb border) {
    for (int y = cy - hh; y <= cy + hh; ++y)
        for (int x = cx - hw; x <= cx + hw; ++x) {
            const bool edge = (x == cx - hw || x == cx + hw || y == cy - hh || y == cy + hh);
            put_px(o, x, y, edge ? border : fill);
        }
}

inline std::uint8_t clamp_u8(int v) { return static_cast<std::uint8_t>(std::clamp(v, 0, 255)); }

// Per-level smooth gradient plus sparse texture dots; stationary within a
// level so absolute screen position is visually decodable.
void paint_gradient(Observation& o, std::uint32_t bg, int y0, int y1, int base_lo, int base_span) {
    int base[3], sx[3], sy[3];
    for (int c = 0; c < 3; ++c) {
        const std::uint64_t h = mix64(bg, 11u + static_cast<std::uint32_t>(c));
        base[c] = base_lo + static_cast<int>(h % static_cast<std::uint64_t>(base_span));
        sx[c] = static_cast<int>(mix64(bg, 29u + static_cast<std::uint32_t>(c)) % 121) - 60;
        sy[c] = static_cast<int>(mix64(bg, 47u + static_cast<std::uint32_t>(c)) % 121) - 60;
    }
    for (int y = y0; y <= y1; ++y)
        for (int x = 0; x < kObsW; ++x) {
            Rgb c;
            c.r = clamp_u8(base[0] + sx[0] * x / 63 + sy[0] * y / 63);
            c.g = clamp_u8(base[1] + sx[1] * x / 63 + sy[1] * y / 63);
            c.b = clamp_u8(base[2] + sx[2] * x / 63 + sy[2] * y / 63);
            put_px(o, x, y, c);
        }
}

void paint_dots(Observation& o, std::uint32_t bg, int y0, int y1, int n_dots) {
    for (int d = 0; d < n_dots; ++d) {
        const std::uint64_t h = mix64(bg, 1000u + static_cast<std::uint32_t>(d));
        const int x = static_cast<int>(h % kObsW);
        const int y = y0 + static_cast<int>((h >> 16) % static_cast<std::uint64_t>(y1 - y0 + 1));
        const int lum = 120 + static_cast<int>((h >> 32) % 80);
        const Rgb c{clamp_u8(lum - 90), clamp_u8(lum - 60), clamp_u8(lum)};
        put_px(o, x, y, c);
        put_px(o, x + 1, y, c);
        put_px(o, x, y + 1, c);
        put_px(o, x + 1, y + 1, c);
    }
}

constexpr Rgb kAgentFill{40, 200, 80}, kAgentEdge{18, 110, 40}, kEye{250, 250, 250};
constexpr Rgb kFoodFill{245, 214, 60}, kFoodEdge{170, 140, 20};
constexpr Rgb kPredFill{222, 58, 48}, kPredEdge{130, 24, 20};
constexpr Rgb kWallFill{152, 152, 164}, kWallEdge{88, 88, 100};
constexpr Rgb kGoalFill{252, 200, 40}, kGoalEdge{140, 100, 12};

void draw_entity(Observation& o, const Entity& e, int sx, int sy) {
    switch (e.kind) {
        case EntityKind::Food: fill_box(o, sx, sy, e.hw, e.hh, kFoodFill, kFoodEdge); break;
        case EntityKind::Predator: fill_box(o, sx, sy, e.hw, e.hh, kPredFill, kPredEdge); break;
        case EntityKind::Wall: fill_box(o, sx, sy, e.hw, e.hh, kWallFill, kWallEdge); break;
        case EntityKind::Goal:
            fill_box(o, sx, sy, e.hw, e.hh, kGoalFill, kGoalEdge);
            for (int y = sy - e.hh; y <= sy + e.hh; ++y) put_px(o, sx, y, Rgb{96, 64, 28});
            break;
    }
}

void draw_agent(Observation& o, int sx, int sy, int hw, int hh) {
    fill_box(o, sx, sy, hw, hh, kAgentFill, kAgentEdge);
    put_px(o, sx + 1, sy - 1, kEye);
    put_px(o, sx + 2, sy - 1, kEye);
}

inline bool overlap(int ax, int ay, int ahw, int ahh, const Entity& e) {
    return std::abs(ax - e.x) <= ahw + e.hw && std::abs(ay - e.y) <= ahh + e.hh;
}

void check_action(int a) {
    if (a < 0 || a >= kNumActions) throw std::invalid_argument("step: action out of range");
}

// ---------------------------------------------------------------------------
// Shoal: free x/y movement, eat 10 small fish, avoid 2 predators.
// ---------------------------------------------------------------------------

class Shoal final : public Game {
  public:
    static constexpr int kFoodBudget = 10;
    static constexpr int kVisibleFood = 8;
    // entities are confined to this inner box so analysis translations never
    // push them against frame edges
    static constexpr int kInnerLo = 14, kInnerHi = 49;

    std::string name() const override { return "shoal"; }
    double reward_budget() const override { return static_cast<double>(kFoodBudget); }

    void reset(std::uint64_t level_seed) override {
        st_ = GameState{};
        st_.level_seed = level_seed;
        st_.background_id = static_cast<std::uint32_t>(mix64(level_seed, 0xBAC6));
        std::uint64_t ctr = 0;
        auto h = [&] { return mix64(level_seed, 0xA11CEull + ctr++); };

        st_.agent_hw = st_.agent_hh = 3;
        st_.agent_x = 16 + static_cast<int>(h() % 32);
        st_.agent_y = 16 + static_cast<int>(h() % 32);

        for (int p = 0; p < 1; ++p) {
            Entity e;
            e.kind = EntityKind::Predator;
            e.hw = e.hh = 4;
            for (int attempt = 0; attempt < 64; ++attempt) {
                e.x = kInnerLo + static_cast<int>(h() % (kInnerHi - kInnerLo + 1));
                e.y = kInnerLo + static_cast<int>(h() % (kInnerHi - kInnerLo + 1));
                if (std::max(std::abs(e.x - st_.agent_x), std::abs(e.y - st_.agent_y)) >= 20) break;
            }
            e.vx = (h() & 1) ? 1 : -1;
            e.vy = (h() & 1) ? 1 : -1;
            st_.entities.push_back(e);
        }
        for (int f = 0; f < kVisibleFood; ++f) spawn_food();
    }

    StepResult step(int action) override {
        if (st_.done) throw std::logic_error("step: episode already done");
        check_action(action);

        st_.agent_x = std::clamp(st_.agent_x + kAgentSpeed * kDX[action], st_.agent_hw, kObsW - 1 - st_.agent_hw);
        st_.agent_y = std::clamp(st_.agent_y + kAgentSpeed * kDY[action], st_.agent_hh, kObsH - 1 - st_.agent_hh);

        for (Entity& e : st_.entities) {
            if (e.kind != EntityKind::Predator) continue;
            if (st_.step_count % 2 == 0) continue;  // predators move at half rate
            e.x += e.vx;
            e.y += e.vy;
            if (e.x < kInnerLo || e.x > kInnerHi) {
                e.vx = -e.vx;
                e.x += 2 * e.vx;
            }
            if (e.y < kInnerLo || e.y > kInnerHi) {
                e.vy = -e.vy;
                e.y += 2 * e.vy;
            }
        }

        double reward = 0.0;
        bool caught = false;
        for (const Entity& e : st_.entities)
            if (e.kind == EntityKind::Predator && overlap(st_.agent_x, st_.agent_y, st_.agent_hw, st_.agent_hh, e))
                caught = true;

        if (!caught) {
            for (size_t i = 0; i < st_.entities.size();) {
                Entity& e = st_.entities[i];
                if (e.kind == EntityKind::Food && overlap(st_.agent_x, st_.agent_y, st_.agent_hw, st_.agent_hh, e)) {
                    reward += 1.0;
                    st_.food_eaten += 1;
                    st_.entities.erase(st_.entities.begin() + static_cast<long>(i));
                    if (st_.food_spawned < kFoodBudget) spawn_food();
                } else {
                    ++i;
                }
            }
        }

        st_.step_count += 1;
        bool done = caught || st_.food_eaten >= kFoodBudget;
        const bool truncated = !done && st_.step_count >= kHorizon;
        done = done || truncated;
        st_.done = done;
        st_.episode_return += reward;
        return {render(), reward, done, truncated};
    }

    Observation render_translated(int dx, int dy) const override {
        Observation o(kObsSize);
        paint_gradient(o, st_.background_id, 0, kObsH - 1, 30, 81);
        paint_dots(o, st_.background_id, 0, kObsH - 2, 50);
        for (const Entity& e : st_.entities)
            if (e.kind == EntityKind::Predator) draw_entity(o, e, e.x + dx, e.y + dy);
        for (const Entity& e : st_.entities)
            if (e.kind == EntityKind::Food) draw_entity(o, e, e.x + dx, e.y + dy);
        draw_agent(o, st_.agent_x + dx, st_.agent_y + dy, st_.agent_hw, st_.agent_hh);
        return o;
    }

    bool analysis_ok() const override {
        if (st_.done || st_.entities.empty()) return false;
        if (std::abs(st_.agent_x - 32) > 11 || std::abs(st_.agent_y - 32) > 11) return false;
        auto inside = [](int c, int half) { return c - half >= 10 && c + half <= 53; };
        if (!inside(st_.agent_x, st_.agent_hw) || !inside(st_.agent_y, st_.agent_hh)) return false;
        for (const Entity& e : st_.entities)
            if (!inside(e.x, e.hw) || !inside(e.y, e.hh)) return false;
        return true;
    }

  private:
    void spawn_food() {
        Entity e;
        e.kind = EntityKind::Food;
        e.hw = e.hh = 2;
        const int idx = st_.food_spawned;
        for (int attempt = 0; attempt < 200; ++attempt) {
            const std::uint64_t h = mix64(st_.level_seed, 0xF00Dull * 1000003ull +
                                                              static_cast<std::uint64_t>(idx) * 512ull +
                                                              static_cast<std::uint64_t>(attempt));
            e.x = kInnerLo + static_cast<int>(h % (kInnerHi - kInnerLo + 1));
            e.y = kInnerLo + static_cast<int>((h >> 24) % (kInnerHi - kInnerLo + 1));
            const bool near_agent =
                std::abs(e.x - st_.agent_x) <= st_.agent_hw + e.hw + 4 && std::abs(e.y - st_.agent_y) <= st_.agent_hh + e.hh + 4;
            bool clash = near_agent;
            for (const Entity& other : st_.entities)
                if (overlap(other.x, other.y, other.hw + 2, other.hh + 2, e)) clash = true;
            if (!clash) break;
        }
        st_.entities.push_back(e);
        st_.food_spawned += 1;
    }
};

// ---------------------------------------------------------------------------
// Corridor: agent-centered side view; run right and jump walls to the flag.
// ---------------------------------------------------------------------------

class Corridor final : public Game {
  public:
    static constexpr int kGroundTop = 45;  // first ground pixel row
    static constexpr int kStandY = 41;     // agent center when standing
    static constexpr int kWorldLo = 10, kWorldHi = 150;
    static constexpr int kRunSpeed = 2;
    static constexpr int kJumpVel = -5;

    std::string name() const override { return "corridor"; }
    double reward_budget() const override { return 10.0; }

    void reset(std::uint64_t level_seed) override {
        st_ = GameState{};
        st_.level_seed = level_seed;
        st_.background_id = static_cast<std::uint32_t>(mix64(level_seed, 0xC03D));
        std::uint64_t ctr = 0;
        auto h = [&] { return mix64(level_seed, 0x5EA5ull + ctr++); };

        st_.agent_hw = st_.agent_hh = 3;
        st_.agent_x = 20;
        st_.agent_y = kStandY;

        Entity goal;
        goal.kind = EntityKind::Goal;
        goal.hw = 2;
        goal.hh = 5;
        goal.x = 116 + static_cast<int>(h() % 24);
        goal.y = kGroundTop - 1 - goal.hh;

        const int n_walls = 2 + static_cast<int>(h() % 2);
        for (int i = 0; i < n_walls; ++i) {
            Entity w;
            w.kind = EntityKind::Wall;
            w.hw = 2;
            w.hh = 4;
            const int span = goal.x - 20 - 44;
            w.x = 44 + i * span / n_walls + static_cast<int>(h() % 10);
            w.y = kGroundTop - 1 - w.hh;
            st_.entities.push_back(w);
        }
        st_.entities.push_back(goal);
    }

    StepResult step(int action) override {
        if (st_.done) throw std::logic_error("step: episode already done");
        check_action(action);

        const bool on_ground = st_.agent_y == kStandY;
        const bool jump = kDY[action] == -1;
        if (on_ground)
            st_.agent_vy = jump ? kJumpVel : 0;
        else
            st_.agent_vy = std::min(st_.agent_vy + 1, 4);

        int ny = std::min(st_.agent_y + st_.agent_vy, kStandY);
        int nx = std::clamp(st_.agent_x + kRunSpeed * kDX[action], kWorldLo, kWorldHi);
        auto blocked = [&](int x, int y) {
            for (const Entity& e : st_.entities)
                if (e.kind == EntityKind::Wall && overlap(x, y, st_.agent_hw, st_.agent_hh, e)) return true;
            return false;
        };
        if (blocked(nx, ny)) nx = st_.agent_x;
        if (blocked(nx, ny)) {
            ny = st_.agent_y;
            st_.agent_vy = 0;
        }
        st_.agent_x = nx;
        st_.agent_y = ny;

        double reward = 0.0;
        bool done = false;
        for (const Entity& e : st_.entities)
            if (e.kind == EntityKind::Goal && overlap(st_.agent_x, st_.agent_y, st_.agent_hw, st_.agent_hh, e)) {
                reward = 10.0;
                done = true;
            }

        st_.step_count += 1;
        const bool truncated = !done && st_.step_count >= kHorizon;
        done = done || truncated;
        st_.done = done;
        st_.episode_return += reward;
        return {render(), reward, done, truncated};
    }

    Observation render_translated(int dx, int dy) const override {
        Observation o(kObsSize);
        // screen-fixed sky + ground; only the foreground scrolls/shifts
        paint_gradient(o, st_.background_id, 0, kGroundTop - 1, 70, 110);
        paint_dots(o, st_.background_id, 0, kGroundTop - 4, 24);
        paint_gradient(o, st_.background_id ^ 0x5157u, kGroundTop, kObsH - 1, 40, 50);
        const int cam = st_.agent_x - 32;
        for (const Entity& e : st_.entities) draw_entity(o, e, e.x - cam + dx, e.y + dy);
        draw_agent(o, 32 + dx, st_.agent_y + dy, st_.agent_hw, st_.agent_hh);
        return o;
    }

    bool analysis_ok() const override {
        if (st_.done) return false;
        // agent screen x is always 32; require the whole arc inside the
        // center square and border in y
        if (std::abs(st_.agent_y - 32) > 11) return false;
        if (st_.agent_y - st_.agent_hh < 10 || st_.agent_y + st_.agent_hh > 53) return false;
        const int cam = st_.agent_x - 32;
        bool company = false;
        for (const Entity& e : st_.entities) {
            const int sx = e.x - cam;
            if (sx + e.hw < -9 || sx - e.hw > kObsW + 8) continue;  // far off-screen: shifts cannot reveal it
            if (sx - e.hw < 10 || sx + e.hw > 53) return false;
            if (e.y - e.hh < 10 || e.y + e.hh > 53) return false;
            company = true;
        }
        return company;
    }
};

}  // namespace

std::unique_ptr<Game> make_game(const std::string& name) {
    if (name == "shoal") return std::make_unique<Shoal>();
    if (name == "corridor") return std::make_unique<Corridor>();
    throw std::invalid_argument("make_game: unknown game '" + name + "'");
}

LevelSet LevelSet::restricted(int n_levels, std::uint64_t base_seed) {
    if (n_levels <= 0) throw std::invalid_argument("LevelSet: n_levels must be positive");
    return {Mode::Restricted, n_levels, base_seed};
}

LevelSet LevelSet::full(std::uint64_t base_seed) { return {Mode::FullDistribution, 0, base_seed}; }

std::uint64_t LevelSet::train_seed(int index) const {
    if (mode != Mode::Restricted) throw std::logic_error("LevelSet: train_seed only for Restricted mode");
    return mix64(base_seed, 0x7E57Aull + static_cast<std::uint64_t>(index % n_levels));
}

bool LevelSet::in_train_set(std::uint64_t level_seed) const {
    if (mode != Mode::Restricted) return false;
    for (int i = 0; i < n_levels; ++i)
        if (train_seed(i) == level_seed) return true;
    return false;
}

std::uint64_t LevelSet::draw_train_seed(std::mt19937_64& rng) const {
    if (mode == Mode::Restricted) return train_seed(static_cast<int>(rng() % static_cast<std::uint64_t>(n_levels)));
    return rng();
}

std::uint64_t LevelSet::draw_test_seed(std::mt19937_64& rng) const {
    for (;;) {
        const std::uint64_t s = rng();
        if (!in_train_set(s)) return s;
    }
}

VectorEnv::VectorEnv(const std::string& game_name, int n, const LevelSet& levels, std::uint64_t run_seed)
    : game_name_(game_name), levels_(levels) {
    if (n <= 0) throw std::invalid_argument("VectorEnv: n must be positive");
    for (int i = 0; i < n; ++i) {
        games_.push_back(make_game(game_name));
        rngs_.emplace_back(mix64(run_seed, 0xE27ull + static_cast<std::uint64_t>(i)));
    }
}

std::uint64_t VectorEnv::next_level_seed(int i) { return levels_.draw_train_seed(rngs_[static_cast<size_t>(i)]); }

std::vector<Observation> VectorEnv::reset() {
    std::vector<Observation> obs;
    obs.reserve(games_.size());
    for (int i = 0; i < size(); ++i) {
        games_[static_cast<size_t>(i)]->reset(next_level_seed(i));
        obs.push_back(games_[static_cast<size_t>(i)]->render());
    }
    return obs;
}

VectorEnv::Step VectorEnv::step(const std::vector<int>& actions) {
    if (static_cast<int>(actions.size()) != size()) throw std::invalid_argument("VectorEnv::step: action count mismatch");
    Step out;
    out.obs.resize(games_.size());
    out.reward.assign(games_.size(), 0.0f);
    out.done.assign(games_.size(), 0);
    out.terminal_obs.resize(games_.size());
    out.episode_return.assign(games_.size(), 0.0);
    out.episode_len.assign(games_.size(), 0);
    for (int i = 0; i < size(); ++i) {
        Game& g = *games_[static_cast<size_t>(i)];
        StepResult r = g.step(actions[static_cast<size_t>(i)]);
        out.reward[static_cast<size_t>(i)] = static_cast<float>(r.reward);
        if (r.done) {
            out.done[static_cast<size_t>(i)] = 1;
            out.terminal_obs[static_cast<size_t>(i)] = std::move(r.obs);
            out.episode_return[static_cast<size_t>(i)] = g.state().episode_return;
            out.episode_len[static_cast<size_t>(i)] = g.state().step_count;
            g.reset(next_level_seed(i));
            out.obs[static_cast<size_t>(i)] = g.render();
        } else {
            out.obs[static_cast<size_t>(i)] = std::move(r.obs);
        }
    }
    return out;
}

GameState sample_analysis_state(Game& game, const Policy& policy, std::mt19937_64& rng, int max_episodes) {
    for (int ep = 0; ep < max_episodes; ++ep) {
        game.reset(rng());
        const int warmup = static_cast<int>(rng() % 16);
        // abandon episodes whose policy drifts out of the valid region; this
        // bounds the cost against near-deterministic wall-hugging policies
        const int give_up = warmup + 48;
        Observation obs = game.render();
        for (int t = 0; t <= give_up; ++t) {
            if (t >= warmup && game.analysis_ok()) return game.state();
            if (game.state().done) break;
            StepResult r = game.step(policy(obs, rng));
            obs = std::move(r.obs);
            if (r.done) break;
        }
    }
    throw std::runtime_error("sample_analysis_state: no valid state found in " + std::to_string(max_episodes) +
                             " episodes");
}

Tensor obs_to_input(const std::vector<Observation>& batch) {
    if (batch.empty()) throw std::invalid_argument("obs_to_input: empty batch");
    Tensor t = Tensor::uninit({static_cast<int>(batch.size()), kObsC, kObsH, kObsW});
    for (size_t n = 0; n < batch.size(); ++n) {
        if (batch[n].size() != static_cast<size_t>(kObsSize)) throw std::invalid_argument("obs_to_input: bad obs size");
        float* dst = t.data.data() + n * static_cast<size_t>(kObsSize);
        for (int i = 0; i < kObsSize; ++i) dst[i] = static_cast<float>(batch[n][static_cast<size_t>(i)]) / 255.0f;
    }
    return t;
}

Tensor obs_to_input(const Observation& obs) { return obs_to_input(std::vector<Observation>{obs}); }

NormConstants builtin_toy_constants() {
    NormConstants c;
    // R_min pinned from the random-policy oracle (1000 episodes, base seed 9001)
    c.set("shoal", 2.916, 10.0);
    c.set("corridor", 0.0, 10.0);
    return c;
}

void write_ppm(const std::string& path, const Observation& obs) {
    if (obs.size() != static_cast<size_t>(kObsSize)) throw std::invalid_argument("write_ppm: bad obs size");
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("write_ppm: cannot open " + path);
    out << "P6\n" << kObsW << ' ' << kObsH << "\n255\n";
    for (int i = 0; i < kObsH * kObsW; ++i) {
        const char px[3] = {static_cast<char>(obs[static_cast<size_t>(i)]),
                            static_cast<char>(obs[static_cast<size_t>(kObsH * kObsW + i)]),
                            static_cast<char>(obs[static_cast<size_t>(2 * kObsH * kObsW + i)])};
        out.write(px, 3);
    }
}

}  // namespace enclab
