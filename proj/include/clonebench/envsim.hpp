#pragma once

#include <algorithm>
#include <cstdint>
#include <deque>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include "clonebench/core.hpp"
#include "clonebench/prng.hpp"

namespace clonebench {

struct EnvConfig {
  std::string game_id = "dodger";
  uint64_t seed = 0;
  double tick_rate = 17.5; // ticks per second when served in real time
  int max_ticks = 0;       // 0 picks the game default (dodger 1000, collector 500)
  double obstacle_density = 0.3; // dodger: per-column spawn probability
  int pellet_count = 15;         // collector
};

struct StepResult {
  double score_delta = 0.0;
  bool done = false;
};

// Deterministic toy game behind a uniform interface: (seed, action
// sequence) fixes the whole trajectory bit for bit. reset() rebuilds the
// initial state from config().seed; render() is a pure function of state
// and is separate from stepping so score-only rollouts skip the raster.
class GameEnv {
public:
  virtual ~GameEnv() = default;
  virtual const EnvConfig& config() const = 0;
  virtual ActionSpace action_space() const = 0;
  virtual void reset() = 0;
  virtual StepResult step(const Action& action) = 0;
  virtual Observation render() const = 0;
  virtual double score() const = 0;
  virtual bool done() const = 0;
  virtual int tick() const = 0;
  // Greedy-safe action computed from the true state; the demonstrator.
  virtual Action expert_action() const = 0;
  virtual Action noop_action() const = 0;
};

namespace envdetail {

inline void fill_cell(Observation& obs, int cell_x, int cell_y, int px_per_cell, uint8_t r,
                      uint8_t g, uint8_t b) {
  for (int dy = 0; dy < px_per_cell; ++dy) {
    uint8_t* row = obs.at(cell_x * px_per_cell, cell_y * px_per_cell + dy);
    for (int dx = 0; dx < px_per_cell; ++dx) {
      row[dx * 3 + 0] = r;
      row[dx * 3 + 1] = g;
      row[dx * 3 + 2] = b;
    }
  }
}

} // namespace envdetail

// ---------------------------------------------------------------------------
// Dodger: 21x21 cells at 4 px/cell (84x84 RGB). One action variable
// {left, stay, right}. Obstacles spawn on the top row with the configured
// per-column probability and fall one cell per tick; reaching the agent's
// cell ends the episode. +1 per tick survived.
// ---------------------------------------------------------------------------

class DodgerEnv final : public GameEnv {
public:
  static constexpr int GRID = 21;
  static constexpr int CELL = 4;
  static constexpr int NOOP = 1; // stay

  explicit DodgerEnv(EnvConfig cfg) : cfg_(std::move(cfg)) {
    if (cfg_.max_ticks <= 0) cfg_.max_ticks = 1000;
    reset_state();
  }

  const EnvConfig& config() const override { return cfg_; }
  ActionSpace action_space() const override {
    return ActionSpace{{{"move", 3}}};
  }

  void reset() override { reset_state(); }

  StepResult step(const Action& action) override {
    if (action.indices.size() != 1 || action.indices[0] < 0 || action.indices[0] > 2)
      throw std::invalid_argument("dodger: action must be one index in [0, 3)");
    StepResult r;
    if (done_) {
      r.done = true;
      return r;
    }
    // 1. agent moves
    agent_col_ += action.indices[0] - 1;
    agent_col_ = std::clamp(agent_col_, 0, GRID - 1);
    // 2. obstacles fall one row
    for (int row = GRID - 1; row > 0; --row) grid_[row] = grid_[row - 1];
    grid_[0].assign(GRID, 0);
    // 3. fresh spawns on the top row
    for (int col = 0; col < GRID; ++col)
      if (rng_.next_bernoulli(cfg_.obstacle_density)) grid_[0][col] = 1;
    // 4. collision / survival
    ++tick_;
    if (grid_[GRID - 1][agent_col_]) {
      done_ = true;
      r.score_delta = 0.0;
    } else {
      r.score_delta = 1.0;
      score_ += 1.0;
      if (tick_ >= cfg_.max_ticks) done_ = true;
    }
    r.done = done_;
    return r;
  }

  Observation render() const override {
    Observation obs(GRID * CELL, GRID * CELL);
    for (size_t i = 0; i < obs.pixels.size(); i += 3) {
      obs.pixels[i] = 12;
      obs.pixels[i + 1] = 12;
      obs.pixels[i + 2] = 16;
    }
    for (int row = 0; row < GRID; ++row)
      for (int col = 0; col < GRID; ++col)
        if (grid_[row][col]) envdetail::fill_cell(obs, col, row, CELL, 220, 60, 60);
    envdetail::fill_cell(obs, agent_col_, GRID - 1, CELL, 60, 220, 90);
    return obs;
  }

  double score() const override { return score_; }
  bool done() const override { return done_; }
  int tick() const override { return tick_; }
  Action noop_action() const override { return Action({NOOP}); }

  // Plans over the fully visible obstacle field: an obstacle now on row r
  // reaches the bottom row in (GRID-1-r) ticks, so everything that can hit
  // within the next GRID-1 ticks is already on screen. Picks the first
  // move of a path that survives the longest; among those, the move whose
  // five-tick escape room is largest, then staying put, then left. One
  // consistent, margin-seeking habit clones far better than an erratic
  // optimum: its choices are functions of the nearby obstacle field.
  Action expert_action() const override {
    constexpr int H = GRID - 1; // plannable horizon
    // hazard[k][c]: an obstacle occupies the bottom cell c at step k
    bool hazard[H + 1][GRID] = {};
    for (int k = 1; k <= H; ++k) {
      const int row = GRID - 1 - k;
      for (int c = 0; c < GRID; ++c) hazard[k][c] = grid_[row][c] != 0;
    }
    int best_move = 0, best_horizon = -1, best_room = -1;
    for (const int m : {0, -1, 1}) { // iteration order settles exact ties
      const int c1 = agent_col_ + m;
      if (c1 < 0 || c1 >= GRID) continue;
      int horizon = 0, room = 0;
      if (!hazard[1][c1]) {
        bool reach[GRID] = {};
        reach[c1] = true;
        horizon = 1;
        room = 1;
        for (int k = 2; k <= H; ++k) {
          bool next[GRID] = {};
          int alive = 0;
          for (int c = 0; c < GRID; ++c) {
            if (hazard[k][c]) continue;
            const bool from = reach[c] || (c > 0 && reach[c - 1]) || (c + 1 < GRID && reach[c + 1]);
            if (from) {
              next[c] = true;
              ++alive;
            }
          }
          if (!alive) break;
          std::copy(next, next + GRID, reach);
          horizon = k;
          if (k <= 5) room += alive; // escape cells within five ticks
        }
      }
      if (horizon > best_horizon || (horizon == best_horizon && room > best_room)) {
        best_horizon = horizon;
        best_move = m;
        best_room = room;
      }
    }
    return Action({best_move + 1});
  }

private:

  void reset_state() {
    rng_.reseed(cfg_.seed);
    grid_.assign(GRID, std::vector<uint8_t>(GRID, 0));
    agent_col_ = GRID / 2;
    score_ = 0.0;
    tick_ = 0;
    done_ = false;
  }

  EnvConfig cfg_;
  Rng64 rng_;
  std::vector<std::vector<uint8_t>> grid_; // [row][col], row 0 on top
  int agent_col_ = GRID / 2;
  double score_ = 0.0;
  int tick_ = 0;
  bool done_ = false;
};

// ---------------------------------------------------------------------------
// Collector: 20x20 cells at 4 px/cell (80x80 RGB). Four binary buttons
// {up, down, left, right}; opposing presses cancel, diagonals work. +10
// per pellet, episode ends when all are collected or at max_ticks.
// ---------------------------------------------------------------------------

class CollectorEnv final : public GameEnv {
public:
  static constexpr int GRID = 20;
  static constexpr int CELL = 4;

  explicit CollectorEnv(EnvConfig cfg) : cfg_(std::move(cfg)) {
    if (cfg_.max_ticks <= 0) cfg_.max_ticks = 500;
    reset_state();
  }

  const EnvConfig& config() const override { return cfg_; }
  ActionSpace action_space() const override {
    return ActionSpace::buttons({"up", "down", "left", "right"});
  }

  void reset() override { reset_state(); }

  StepResult step(const Action& action) override {
    if (!action.valid_for(action_space()))
      throw std::invalid_argument("collector: action must be four binary indices");
    StepResult r;
    if (done_) {
      r.done = true;
      return r;
    }
    const int dy = action.indices[1] - action.indices[0];
    const int dx = action.indices[3] - action.indices[2];
    agent_x_ = std::clamp(agent_x_ + dx, 0, GRID - 1);
    agent_y_ = std::clamp(agent_y_ + dy, 0, GRID - 1);
    ++tick_;
    const int cell = agent_y_ * GRID + agent_x_;
    if (pellets_[cell]) {
      pellets_[cell] = 0;
      --pellets_left_;
      r.score_delta = 10.0;
      score_ += 10.0;
    }
    if (pellets_left_ == 0 || tick_ >= cfg_.max_ticks) done_ = true;
    r.done = done_;
    return r;
  }

  Observation render() const override {
    Observation obs(GRID * CELL, GRID * CELL);
    for (size_t i = 0; i < obs.pixels.size(); i += 3) {
      obs.pixels[i] = 10;
      obs.pixels[i + 1] = 14;
      obs.pixels[i + 2] = 10;
    }
    for (int y = 0; y < GRID; ++y)
      for (int x = 0; x < GRID; ++x)
        if (pellets_[y * GRID + x]) envdetail::fill_cell(obs, x, y, CELL, 240, 200, 60);
    envdetail::fill_cell(obs, agent_x_, agent_y_, CELL, 70, 110, 230);
    return obs;
  }

  double score() const override { return score_; }
  bool done() const override { return done_; }
  int tick() const override { return tick_; }
  Action noop_action() const override { return Action({0, 0, 0, 0}); }

  // Heads straight (diagonals allowed) for the nearest pellet by Manhattan
  // distance, lowest cell index on ties.
  Action expert_action() const override {
    int best = -1, best_dist = 1 << 30;
    for (int cell = 0; cell < GRID * GRID; ++cell) {
      if (!pellets_[cell]) continue;
      const int d = std::abs(cell % GRID - agent_x_) + std::abs(cell / GRID - agent_y_);
      if (d < best_dist) {
        best_dist = d;
        best = cell;
      }
    }
    Action a({0, 0, 0, 0});
    if (best < 0) return a;
    const int tx = best % GRID, ty = best / GRID;
    if (ty < agent_y_) a.indices[0] = 1;
    if (ty > agent_y_) a.indices[1] = 1;
    if (tx < agent_x_) a.indices[2] = 1;
    if (tx > agent_x_) a.indices[3] = 1;
    return a;
  }

private:
  void reset_state() {
    rng_.reseed(cfg_.seed);
    pellets_.assign(GRID * GRID, 0);
    agent_x_ = agent_y_ = GRID / 2;
    const int start = agent_y_ * GRID + agent_x_;
    int placed = 0;
    while (placed < cfg_.pellet_count) {
      const int cell = static_cast<int>(rng_.next_below(GRID * GRID));
      if (cell == start || pellets_[cell]) continue;
      pellets_[cell] = 1;
      ++placed;
    }
    pellets_left_ = cfg_.pellet_count;
    score_ = 0.0;
    tick_ = 0;
    done_ = false;
  }

  EnvConfig cfg_;
  Rng64 rng_;
  std::vector<uint8_t> pellets_;
  int agent_x_ = GRID / 2, agent_y_ = GRID / 2;
  int pellets_left_ = 0;
  double score_ = 0.0;
  int tick_ = 0;
  bool done_ = false;
};

inline std::unique_ptr<GameEnv> make_env(const EnvConfig& cfg) {
  if (cfg.game_id == "dodger") return std::make_unique<DodgerEnv>(cfg);
  if (cfg.game_id == "collector") return std::make_unique<CollectorEnv>(cfg);
  throw std::invalid_argument("unknown game_id: " + cfg.game_id);
}

// ---------------------------------------------------------------------------
// Demonstrators
// ---------------------------------------------------------------------------

inline Action random_agent(const ActionSpace& space, Rng64& rng) {
  Action a;
  a.indices.reserve(space.variables.size());
  for (const auto& v : space.variables)
    a.indices.push_back(static_cast<int>(rng.next_below(static_cast<uint64_t>(v.cardinality))));
  return a;
}

// Emits the greedy-safe action through a FIFO of length reaction_delay, so
// the recorded stream shows exactly the state-action mismatch a human
// demonstrator with that reflex time would produce. While the queue warms
// up it emits the no-op.
class ScriptedExpert {
public:
  ScriptedExpert(const GameEnv& env, int reaction_delay, double noise_prob = 0.0,
                 uint64_t noise_seed = 0)
      : env_(env), delay_(reaction_delay), noise_prob_(noise_prob), noise_rng_(noise_seed) {}

  Action next() {
    Action computed = env_.expert_action();
    if (noise_prob_ > 0.0 && noise_rng_.next_bernoulli(noise_prob_))
      computed = random_agent(env_.action_space(), noise_rng_);
    queue_.push_back(std::move(computed));
    if (static_cast<int>(queue_.size()) <= delay_) return env_.noop_action();
    Action out = std::move(queue_.front());
    queue_.pop_front();
    return out;
  }

  void reset() { queue_.clear(); }

private:
  const GameEnv& env_;
  int delay_;
  double noise_prob_;
  Rng64 noise_rng_;
  std::deque<Action> queue_;
};

// ---------------------------------------------------------------------------
// Rollouts
// ---------------------------------------------------------------------------

struct RolloutResult {
  Episode episode; // frames empty unless record_frames
  double score = 0.0;
  int ticks = 0;
};

// Runs policy(obs) -> Action until the episode ends; pairs frame i with the
// action chosen while looking at frame i.
template <typename Policy>
RolloutResult run_rollout(GameEnv& env, Policy&& policy, bool record_frames = true,
                          const std::string& player_id = "scripted") {
  RolloutResult out;
  out.episode.meta.game_id = env.config().game_id;
  out.episode.meta.player_id = player_id;
  out.episode.meta.fps = env.config().tick_rate;
  out.episode.meta.action_space = env.action_space();

  env.reset();
  Observation obs = env.render();
  out.episode.meta.native_width = obs.width;
  out.episode.meta.native_height = obs.height;
  while (!env.done()) {
    Action a = policy(obs);
    if (record_frames) {
      out.episode.frames.push_back(obs);
      out.episode.actions.push_back(a);
    }
    env.step(a);
    if (!env.done()) obs = env.render();
  }
  out.score = env.score();
  out.ticks = env.tick();
  out.episode.meta.final_score = out.score;
  return out;
}

// Demonstration set from the scripted expert: episode e uses seed
// base_seed + e for the environment and a derived stream for action noise.
inline Dataset record_expert_dataset(EnvConfig base, int n_episodes, int reaction_delay,
                                     double noise_prob, uint64_t base_seed,
                                     const std::string& player_id = "expert") {
  Dataset ds;
  ds.episodes.reserve(n_episodes);
  for (int e = 0; e < n_episodes; ++e) {
    EnvConfig cfg = base;
    cfg.seed = base_seed + static_cast<uint64_t>(e);
    auto env = make_env(cfg);
    ScriptedExpert expert(*env, reaction_delay, noise_prob, cfg.seed ^ 0xD5A5A5A5A5A5A5A5ULL);
    auto result = run_rollout(
        *env, [&](const Observation&) { return expert.next(); }, true, player_id);
    ds.episodes.push_back(std::move(result.episode));
  }
  return ds;
}

} // namespace clonebench
