// Two-phase cooperative T-Maze and a single-step matrix game.
//
// T-Maze: at t=0 both agents blindly pick a color (orange/green), then spawn
// at the stem base and must each stand on the goal of their chosen color at
// the same time. Goal colors and spawn order are randomized per episode, so
// success needs color disagreement, memory of the own choice, and collision
// handling on the single-file stem.
#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "oryx/common.hpp"
#include "oryx/data.hpp"

namespace oryx {

struct EnvInfo {
  std::string name;
  int64_t agents = 0;
  int64_t obs_dim = 0;
  int64_t num_actions = 0;
  nlohmann::json extra;
};

struct StepResult {
  std::vector<double> obs;  // agents * obs_dim, post-step
  double reward = 0.0;
  bool terminal = false;
  int64_t collisions = 0;
  bool success = false;
};

struct TMazeConfig {
  int64_t stem = 4;       // vertical corridor length below the junction
  int64_t arm = 3;        // horizontal corridor length each side
  int64_t step_limit = 20;
};

class TMazeEnv {
 public:
  enum Action : int64_t {
    kChooseOrange = 0,
    kChooseGreen = 1,
    kUp = 2,
    kDown = 3,
    kLeft = 4,
    kRight = 5,
    kNoop = 6
  };
  static constexpr int64_t kNumActions = 7;

  explicit TMazeEnv(TMazeConfig cfg = {}) : cfg_(cfg) {
    ORYX_REQUIRE(cfg_.stem >= 1 && cfg_.arm >= 1 && cfg_.step_limit >= 3);
    rows_ = cfg_.stem + 1;
    cols_ = 2 * cfg_.arm + 1;
  }

  EnvInfo info() const {
    EnvInfo e;
    e.name = "tmaze";
    e.agents = 2;
    e.obs_dim = obs_dim();
    e.num_actions = kNumActions;
    e.extra = {{"stem", cfg_.stem}, {"arm", cfg_.arm}, {"step_limit", cfg_.step_limit}};
    return e;
  }

  int64_t obs_dim() const { return 9 + 9 + 2 + kNumActions + 1; }
  int64_t junction_col() const { return cfg_.arm; }

  bool walkable(int64_t r, int64_t c) const {
    if (r == 0 && c >= 0 && c < cols_) return true;
    return c == junction_col() && r >= 1 && r <= cfg_.stem;
  }

  std::vector<double> reset(Rng& rng) {
    phase_choice_ = true;
    t_ = 0;
    terminal_ = false;
    green_right_ = rng.below(2) == 1;
    swap_spawn_ = rng.below(2) == 1;
    chosen_ = {-1, -1};
    prev_action_ = {-1, -1};
    pos_ = {{{-1, -1}, {-1, -1}}};
    return joint_obs();
  }

  // Legal actions for the current phase.
  std::vector<char> legal_actions() const {
    std::vector<char> m(kNumActions, 0);
    if (phase_choice_) {
      m[kChooseOrange] = m[kChooseGreen] = 1;
    } else {
      for (int64_t a = kUp; a <= kNoop; ++a) m[static_cast<size_t>(a)] = 1;
    }
    return m;
  }

  StepResult step(const std::vector<int64_t>& actions) {
    ORYX_REQUIRE_MSG(!terminal_, "step on a terminal episode");
    ORYX_REQUIRE(actions.size() == 2);
    StepResult res;
    if (phase_choice_) {
      for (int64_t a : actions)
        ORYX_REQUIRE_MSG(a == kChooseOrange || a == kChooseGreen,
                         "action " << a << " invalid in the choice phase");
      chosen_ = {actions[0], actions[1]};
      const std::array<std::array<int64_t, 2>, 2> starts{
          {{cfg_.stem, junction_col()}, {cfg_.stem - 1, junction_col()}}};
      pos_[0] = starts[swap_spawn_ ? 1 : 0];
      pos_[1] = starts[swap_spawn_ ? 0 : 1];
      phase_choice_ = false;
    } else {
      std::array<std::array<int64_t, 2>, 2> target = pos_;
      for (int i = 0; i < 2; ++i) {
        const int64_t a = actions[static_cast<size_t>(i)];
        ORYX_REQUIRE_MSG(a >= kUp && a <= kNoop, "action " << a << " invalid while navigating");
        auto [dr, dc] = delta(a);
        const int64_t r = pos_[static_cast<size_t>(i)][0] + dr;
        const int64_t c = pos_[static_cast<size_t>(i)][1] + dc;
        if (walkable(r, c)) {
          target[static_cast<size_t>(i)] = {r, c};
        } else if (a != kNoop) {
          res.collisions++;  // wall bump
        }
      }
      // same-target race or moving into the other's current cell: rejected
      const bool race = target[0] == target[1];
      for (int i = 0; i < 2; ++i) {
        const auto& other_now = pos_[static_cast<size_t>(1 - i)];
        if ((race || target[static_cast<size_t>(i)] == other_now) &&
            target[static_cast<size_t>(i)] != pos_[static_cast<size_t>(i)]) {
          target[static_cast<size_t>(i)] = pos_[static_cast<size_t>(i)];
          res.collisions++;
        }
      }
      pos_ = target;
    }
    prev_action_ = {actions[0], actions[1]};
    t_ += 1;

    const bool success = on_own_goal(0) && on_own_goal(1);
    if (success) {
      res.reward = 1.0;
      res.success = true;
      terminal_ = true;
    } else if (t_ >= cfg_.step_limit) {
      terminal_ = true;
    }
    res.terminal = terminal_;
    res.obs = joint_obs();
    return res;
  }

  std::vector<double> joint_obs() const {
    std::vector<double> all;
    all.reserve(static_cast<size_t>(2 * obs_dim()));
    for (int i = 0; i < 2; ++i) {
      const std::vector<double> o = agent_obs(i);
      all.insert(all.end(), o.begin(), o.end());
    }
    return all;
  }

  std::vector<double> agent_obs(int i) const {
    std::vector<double> o(static_cast<size_t>(obs_dim()), 0.0);
    if (phase_choice_) {
      o.back() = 1.0;  // phase flag; everything else blank
      return o;
    }
    const auto [r0, c0] = std::pair{pos_[static_cast<size_t>(i)][0],
                                    pos_[static_cast<size_t>(i)][1]};
    for (int64_t dr = -1; dr <= 1; ++dr) {
      for (int64_t dc = -1; dc <= 1; ++dc) {
        const size_t cell = static_cast<size_t>((dr + 1) * 3 + (dc + 1));
        if (walkable(r0 + dr, c0 + dc)) o[cell] = 1.0;
        const auto& other = pos_[static_cast<size_t>(1 - i)];
        if (other[0] == r0 + dr && other[1] == c0 + dc) o[9 + cell] = 1.0;
      }
    }
    o[18] = green_right_ ? 0.0 : 1.0;  // left arm is green
    o[19] = green_right_ ? 1.0 : 0.0;  // right arm is green
    const int64_t pa = prev_action_[static_cast<size_t>(i)];
    if (pa >= 0) o[static_cast<size_t>(20 + pa)] = 1.0;
    return o;
  }

  bool done() const { return terminal_; }
  bool choice_phase() const { return phase_choice_; }
  int64_t timestep() const { return t_; }
  bool green_right() const { return green_right_; }
  std::array<int64_t, 2> chosen() const { return chosen_; }
  std::array<std::array<int64_t, 2>, 2> positions() const { return pos_; }

  // Diagnostic / test support: place the episode directly into a navigation
  // state.
  void force_navigate_state(std::array<int64_t, 2> pos0, std::array<int64_t, 2> pos1,
                            int64_t color0, int64_t color1, bool green_right) {
    ORYX_REQUIRE(walkable(pos0[0], pos0[1]) && walkable(pos1[0], pos1[1]) && !(pos0 == pos1));
    phase_choice_ = false;
    terminal_ = false;
    t_ = 1;
    pos_ = {pos0, pos1};
    chosen_ = {color0, color1};
    green_right_ = green_right;
    prev_action_ = {color0, color1};
  }

  std::string ascii_grid() const {
    std::string out;
    for (int64_t r = 0; r < rows_; ++r) {
      for (int64_t c = 0; c < cols_; ++c) {
        char ch = walkable(r, c) ? '.' : '#';
        if (r == 0 && (c == 0 || c == cols_ - 1))
          ch = (c == cols_ - 1) == green_right_ ? 'G' : 'O';
        for (int i = 0; i < 2; ++i)
          if (pos_[static_cast<size_t>(i)][0] == r && pos_[static_cast<size_t>(i)][1] == c)
            ch = static_cast<char>('1' + i);
        out += ch;
      }
      out += '\n';
    }
    return out;
  }

 private:
  static std::pair<int64_t, int64_t> delta(int64_t action) {
    switch (action) {
      case kUp: return {-1, 0};
      case kDown: return {1, 0};
      case kLeft: return {0, -1};
      case kRight: return {0, 1};
      default: return {0, 0};
    }
  }

  bool on_own_goal(int i) const {
    if (chosen_[static_cast<size_t>(i)] < 0) return false;
    const auto& p = pos_[static_cast<size_t>(i)];
    const bool green = chosen_[static_cast<size_t>(i)] == kChooseGreen;
    if (p[0] != 0) return false;
    if (p[1] == 0) return green != green_right_;
    if (p[1] == cols_ - 1) return green == green_right_;
    return false;
  }

  TMazeConfig cfg_;
  int64_t rows_ = 0, cols_ = 0;
  bool phase_choice_ = true;
  bool terminal_ = false;
  int64_t t_ = 0;
  bool green_right_ = false;
  bool swap_spawn_ = false;
  std::array<int64_t, 2> chosen_{-1, -1};
  std::array<int64_t, 2> prev_action_{-1, -1};
  std::array<std::array<int64_t, 2>, 2> pos_{{{-1, -1}, {-1, -1}}};
};

// Scripted behavior policies for dataset generation. Stateful per episode:
// an agent remembers the color it actually picked (including noise flips)
// and navigates toward the matching arm, reading everything else off the
// current observation.
class ScriptedTMazePolicy {
 public:
  ScriptedTMazePolicy(int agent_index, double epsilon)
      : idx_(agent_index), eps_(epsilon) {
    ORYX_REQUIRE(agent_index == 0 || agent_index == 1);
    ORYX_REQUIRE(epsilon >= 0.0 && epsilon <= 1.0);
  }

  void begin_episode() { color_ = -1; }

  int64_t act(const std::vector<double>& obs, Rng& rng) {
    const bool choice = obs.back() > 0.5;
    if (choice) {
      int64_t a = idx_ == 0 ? TMazeEnv::kChooseOrange : TMazeEnv::kChooseGreen;
      if (eps_ > 0.0 && rng.uniform() < eps_)
        a = static_cast<int64_t>(rng.below(2));
      color_ = a;
      return a;
    }
    int64_t a = navigate(obs);
    if (eps_ > 0.0 && rng.uniform() < eps_)
      a = TMazeEnv::kUp + static_cast<int64_t>(rng.below(5));
    return a;
  }

 private:
  int64_t navigate(const std::vector<double>& obs) const {
    ORYX_REQUIRE_MSG(color_ >= 0, "navigate before the choice step");
    const bool my_green = color_ == TMazeEnv::kChooseGreen;
    const bool green_right = obs[19] > 0.5;
    const bool go_right = my_green == green_right;
    if (obs[1] > 0.5) return TMazeEnv::kUp;  // still in the stem
    if (go_right) return obs[5] > 0.5 ? TMazeEnv::kRight : TMazeEnv::kNoop;
    return obs[3] > 0.5 ? TMazeEnv::kLeft : TMazeEnv::kNoop;
  }

  int idx_;
  double eps_;
  int64_t color_ = -1;
};

// Control fixture: navigates like the expert but keeps no memory of its
// choice. It commits to an arm by coin flip at the junction and afterwards
// continues in the direction of its previous move (visible in the
// observation).
class MemorylessTMazePolicy {
 public:
  explicit MemorylessTMazePolicy(int agent_index) : idx_(agent_index) {}
  void begin_episode() {}

  int64_t act(const std::vector<double>& obs, Rng& rng) const {
    if (obs.back() > 0.5)
      return idx_ == 0 ? TMazeEnv::kChooseOrange : TMazeEnv::kChooseGreen;
    if (obs[1] > 0.5) return TMazeEnv::kUp;
    // previously moving along the bar: keep going, stop at the edge
    if (obs[20 + TMazeEnv::kLeft] > 0.5) return obs[3] > 0.5 ? TMazeEnv::kLeft : TMazeEnv::kNoop;
    if (obs[20 + TMazeEnv::kRight] > 0.5) return obs[5] > 0.5 ? TMazeEnv::kRight : TMazeEnv::kNoop;
    if (obs[20 + TMazeEnv::kNoop] > 0.5) return TMazeEnv::kNoop;
    return rng.below(2) == 0 ? TMazeEnv::kLeft : TMazeEnv::kRight;  // junction coin flip
  }

 private:
  int idx_;
};

// Rolls out whole episodes until the dataset holds at least
// `target_transitions` steps. One policy instance per agent, all driven by
// the same rng so a seed pins the entire dataset.
template <typename Env, typename Policy>
Dataset record(Env& env, std::vector<Policy> policies, int64_t target_transitions, Rng& rng,
               const std::string& behavior, uint64_t seed) {
  ORYX_REQUIRE(target_transitions >= 1);
  const EnvInfo info = env.info();
  ORYX_REQUIRE_MSG(static_cast<int64_t>(policies.size()) == info.agents,
                   "one policy per agent required");
  Dataset ds;
  ds.meta.env = info.name;
  ds.meta.behavior = behavior;
  ds.meta.agents = info.agents;
  ds.meta.obs_dim = info.obs_dim;
  ds.meta.num_actions = info.num_actions;
  ds.meta.seed = seed;
  ds.meta.env_info = info.extra;

  while (ds.transitions() < target_transitions) {
    Episode ep;
    std::vector<double> obs = env.reset(rng);
    ORYX_REQUIRE(static_cast<int64_t>(obs.size()) == info.agents * info.obs_dim);
    for (Policy& p : policies) p.begin_episode();
    while (!env.done()) {
      std::vector<int64_t> joint;
      for (int64_t i = 0; i < info.agents; ++i) {
        const std::vector<double> slice(obs.begin() + i * info.obs_dim,
                                        obs.begin() + (i + 1) * info.obs_dim);
        joint.push_back(policies[static_cast<size_t>(i)].act(slice, rng));
      }
      const StepResult res = env.step(joint);
      ep.steps += 1;
      ep.obs.insert(ep.obs.end(), obs.begin(), obs.end());
      ep.actions.insert(ep.actions.end(), joint.begin(), joint.end());
      ep.rewards.push_back(res.reward);
      obs = res.obs;
    }
    ds.append(std::move(ep));
  }
  return ds;
}

// Single-step two-agent matrix game; exact-solution oracle for the learner.
class MatrixGameEnv {
 public:
  explicit MatrixGameEnv(std::array<std::array<double, 2>, 2> payoff) : payoff_(payoff) {}

  EnvInfo info() const {
    EnvInfo e;
    e.name = "matrix";
    e.agents = 2;
    e.obs_dim = 2;
    e.num_actions = 2;
    e.extra = {{"payoff", {{payoff_[0][0], payoff_[0][1]}, {payoff_[1][0], payoff_[1][1]}}}};
    return e;
  }

  std::vector<double> reset(Rng&) {
    terminal_ = false;
    return {1.0, 0.0, 0.0, 1.0};  // identity one-hot per agent
  }

  StepResult step(const std::vector<int64_t>& actions) {
    ORYX_REQUIRE(!terminal_ && actions.size() == 2);
    for (int64_t a : actions) ORYX_REQUIRE(a == 0 || a == 1);
    terminal_ = true;
    StepResult res;
    res.reward = payoff_[static_cast<size_t>(actions[0])][static_cast<size_t>(actions[1])];
    res.terminal = true;
    res.success = res.reward > 0.0;
    res.obs = {1.0, 0.0, 0.0, 1.0};
    return res;
  }

  bool done() const { return terminal_; }

 private:
  std::array<std::array<double, 2>, 2> payoff_;
  bool terminal_ = false;
};

}  // namespace oryx
