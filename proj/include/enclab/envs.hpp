#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "enclab/metrics.hpp"
#include "enclab/tensor.hpp"

namespace enclab {

inline constexpr int kObsC = 3;
inline constexpr int kObsH = 64;
inline constexpr int kObsW = 64;
inline constexpr int kObsSize = kObsC * kObsH * kObsW;
inline constexpr int kNumActions = 9;  // 8-neighborhood moves + noop
inline constexpr int kHorizon = 200;

using Observation = std::vector<std::uint8_t>;  // CHW, kObsSize bytes

// splitmix64; the only hash used for level generation, so streams are
// reproducible across platforms.
std::uint64_t mix64(std::uint64_t x);
inline std::uint64_t mix64(std::uint64_t a, std::uint64_t b) { return mix64(a ^ mix64(b)); }

enum class EntityKind : int { Food = 0, Predator = 1, Wall = 2, Goal = 3 };

struct Entity {
    int x = 0, y = 0;      // center, world coordinates
    int hw = 0, hh = 0;    // half extents; drawn box is (2h+1) wide
    EntityKind kind = EntityKind::Food;
    int vx = 0, vy = 0;
};

struct GameState {
    int agent_x = 0, agent_y = 0;
    int agent_vx = 0, agent_vy = 0;
    int agent_hw = 0, agent_hh = 0;
    std::vector<Entity> entities;
    std::uint64_t level_seed = 0;
    int step_count = 0;
    std::uint32_t background_id = 0;
    bool done = false;
    double episode_return = 0.0;
    // Shoal bookkeeping (unused by Corridor)
    int food_spawned = 0;
    int food_eaten = 0;
};

struct StepResult {
    Observation obs;
    double reward = 0.0;
    bool done = false;
    bool truncated = false;  // horizon hit (subset of done)
};

class Game {
  public:
    virtual ~Game() = default;
    virtual std::string name() const = 0;
    virtual void reset(std::uint64_t level_seed) = 0;
    virtual StepResult step(int action) = 0;  // throws if already done or action out of range
    // Foreground (agent + entities) redrawn shifted by (dx, dy) in screen
    // space over the unchanged background; (0, 0) is the standard render.
    virtual Observation render_translated(int dx, int dy) const = 0;
    Observation render() const { return render_translated(0, 0); }
    // True iff the current state is usable for translation analysis: agent
    // centered in the middle 22x22 square, every visible foreground box at
    // least 10 px from the frame edge, and at least one non-agent entity
    // in view.
    virtual bool analysis_ok() const = 0;
    virtual double reward_budget() const = 0;  // R_max

    const GameState& state() const { return st_; }
    void set_state(const GameState& s) { st_ = s; }

  protected:
    GameState st_{};
};

std::unique_ptr<Game> make_game(const std::string& name);  // "shoal" | "corridor"

struct LevelSet {
    enum class Mode { Restricted, FullDistribution };
    Mode mode = Mode::FullDistribution;
    int n_levels = 0;
    std::uint64_t base_seed = 0;

    static LevelSet restricted(int n_levels, std::uint64_t base_seed);
    static LevelSet full(std::uint64_t base_seed);

    std::uint64_t train_seed(int index) const;               // Restricted: index mod n_levels
    std::uint64_t draw_train_seed(std::mt19937_64& rng) const;
    std::uint64_t draw_test_seed(std::mt19937_64& rng) const;  // never in the restricted set
    bool in_train_set(std::uint64_t level_seed) const;
};

// Batched env with auto-reset. When instance i finishes an episode, obs[i]
// already belongs to the next episode; the terminal observation and the
// finished episode's return are surfaced separately.
class VectorEnv {
  public:
    VectorEnv(const std::string& game_name, int n, const LevelSet& levels, std::uint64_t run_seed);

    int size() const { return static_cast<int>(games_.size()); }
    const std::string& game_name() const { return game_name_; }

    std::vector<Observation> reset();

    struct Step {
        std::vector<Observation> obs;
        std::vector<float> reward;
        std::vector<std::uint8_t> done;
        // valid only where done[i] != 0
        std::vector<Observation> terminal_obs;
        std::vector<double> episode_return;
        std::vector<int> episode_len;
    };
    Step step(const std::vector<int>& actions);

    Game& instance(int i) { return *games_.at(static_cast<size_t>(i)); }

  private:
    std::uint64_t next_level_seed(int i);
    std::string game_name_;
    LevelSet levels_;
    std::vector<std::unique_ptr<Game>> games_;
    std::vector<std::mt19937_64> rngs_;  // per-instance level-draw streams
};

using Policy = std::function<int(const Observation&, std::mt19937_64&)>;

// Rolls fresh episodes (full level distribution from rng) until a state
// passing Game::analysis_ok is hit; each returned state comes from a
// distinct episode. Throws after max_episodes failures.
GameState sample_analysis_state(Game& game, const Policy& policy, std::mt19937_64& rng,
                                int max_episodes = 256);

// [N,3,64,64] float tensor in [0,1].
Tensor obs_to_input(const std::vector<Observation>& batch);
Tensor obs_to_input(const Observation& obs);

void write_ppm(const std::string& path, const Observation& obs);

// Normalization constants for the two games: R_max is each game's reward
// budget; R_min is the random-policy mean return over 1000 full-distribution
// episodes, measured once and pinned here (data/toyenv_constants.csv carries
// the same values for external consumers).
NormConstants builtin_toy_constants();

}  // namespace enclab
