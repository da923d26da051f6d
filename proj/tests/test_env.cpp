#include <catch2/catch_amalgamated.hpp>

#include <map>
#include <set>

#include "oryx/env.hpp"

using namespace oryx;

namespace {

// One scripted episode; returns the episode return.
template <typename Policy>
double rollout(TMazeEnv& env, std::vector<Policy> pols, Rng& rng) {
  std::vector<double> obs = env.reset(rng);
  for (Policy& p : pols) p.begin_episode();
  double ret = 0.0;
  while (!env.done()) {
    std::vector<int64_t> joint;
    for (size_t i = 0; i < pols.size(); ++i) {
      const std::vector<double> slice(obs.begin() + static_cast<int64_t>(i) * env.obs_dim(),
                                      obs.begin() + static_cast<int64_t>(i + 1) * env.obs_dim());
      joint.push_back(pols[i].act(slice, rng));
    }
    const StepResult res = env.step(joint);
    ret += res.reward;
    obs = res.obs;
  }
  return ret;
}

}  // namespace

TEST_CASE("reset randomizes goal colors and spawn order evenly", "[envs]") {
  TMazeEnv env;
  Rng rng(123);
  int green_right = 0, swapped = 0;
  const int n = 10000;
  for (int i = 0; i < n; ++i) {
    env.reset(rng);
    green_right += env.green_right() ? 1 : 0;
    env.step({TMazeEnv::kChooseOrange, TMazeEnv::kChooseGreen});
    swapped += env.positions()[0][0] == env.info().extra["stem"].get<int64_t>() - 1 ? 1 : 0;
  }
  REQUIRE(std::abs(green_right / double(n) - 0.5) < 0.02);
  REQUIRE(std::abs(swapped / double(n) - 0.5) < 0.02);
}

TEST_CASE("reset is reproducible and phase-1 observations are blank", "[envs]") {
  TMazeEnv a, b;
  Rng ra(7), rb(7);
  for (int i = 0; i < 100; ++i) {
    const std::vector<double> oa = a.reset(ra), ob = b.reset(rb);
    REQUIRE(oa == ob);
    REQUIRE(a.green_right() == b.green_right());
  }

  TMazeEnv env;
  Rng rng(1);
  const std::vector<double> obs = env.reset(rng);
  REQUIRE(static_cast<int64_t>(obs.size()) == 2 * env.obs_dim());
  for (int i = 0; i < 2; ++i) {
    for (int64_t k = 0; k < env.obs_dim() - 1; ++k)
      REQUIRE(obs[static_cast<size_t>(i * env.obs_dim() + k)] == 0.0);
    REQUIRE(obs[static_cast<size_t>((i + 1) * env.obs_dim() - 1)] == 1.0);  // phase flag
  }

  // the phase flips exactly once, at t = 1
  REQUIRE(env.choice_phase());
  env.step({TMazeEnv::kChooseOrange, TMazeEnv::kChooseGreen});
  REQUIRE_FALSE(env.choice_phase());
  REQUIRE(env.timestep() == 1);
}

TEST_CASE("movement rejection: walls, occupied cells, races, swaps", "[envs]") {
  TMazeEnv env;

  // wall bump leaves the position unchanged
  env.force_navigate_state({4, 3}, {0, 3}, TMazeEnv::kChooseOrange, TMazeEnv::kChooseGreen,
                           true);
  StepResult res = env.step({TMazeEnv::kLeft, TMazeEnv::kNoop});  // (4,2) is a wall
  REQUIRE(env.positions()[0] == std::array<int64_t, 2>{4, 3});
  REQUIRE(res.collisions == 1);
  REQUIRE(res.reward == 0.0);

  // moving into an occupied cell is rejected
  env.force_navigate_state({4, 3}, {3, 3}, TMazeEnv::kChooseOrange, TMazeEnv::kChooseGreen,
                           true);
  res = env.step({TMazeEnv::kUp, TMazeEnv::kNoop});
  REQUIRE(env.positions()[0] == std::array<int64_t, 2>{4, 3});
  REQUIRE(res.collisions == 1);

  // both agents target the same cell: both moves rejected
  env.force_navigate_state({0, 2}, {0, 4}, TMazeEnv::kChooseOrange, TMazeEnv::kChooseGreen,
                           true);
  res = env.step({TMazeEnv::kRight, TMazeEnv::kLeft});
  REQUIRE(env.positions()[0] == std::array<int64_t, 2>{0, 2});
  REQUIRE(env.positions()[1] == std::array<int64_t, 2>{0, 4});
  REQUIRE(res.collisions == 2);

  // swap attempt: both rejected
  env.force_navigate_state({4, 3}, {3, 3}, TMazeEnv::kChooseOrange, TMazeEnv::kChooseGreen,
                           true);
  res = env.step({TMazeEnv::kUp, TMazeEnv::kDown});
  REQUIRE(env.positions()[0] == std::array<int64_t, 2>{4, 3});
  REQUIRE(env.positions()[1] == std::array<int64_t, 2>{3, 3});

  // one agent on its goal is not enough
  env.force_navigate_state({0, 5}, {0, 1}, TMazeEnv::kChooseGreen, TMazeEnv::kChooseOrange,
                           true);
  res = env.step({TMazeEnv::kRight, TMazeEnv::kNoop});
  REQUIRE(res.reward == 0.0);
  REQUIRE_FALSE(res.terminal);

  // both on their own colors simultaneously: reward 1, terminal, then closed
  env.force_navigate_state({0, 5}, {0, 1}, TMazeEnv::kChooseGreen, TMazeEnv::kChooseOrange,
                           true);
  res = env.step({TMazeEnv::kRight, TMazeEnv::kLeft});
  REQUIRE(res.reward == 1.0);
  REQUIRE(res.success);
  REQUIRE(res.terminal);
  REQUIRE_THROWS_AS(env.step({TMazeEnv::kNoop, TMazeEnv::kNoop}), ContractError);

  // out-of-phase and out-of-range actions are rejected
  env.force_navigate_state({4, 3}, {3, 3}, TMazeEnv::kChooseOrange, TMazeEnv::kChooseGreen,
                           true);
  REQUIRE_THROWS_AS(env.step({TMazeEnv::kChooseOrange, TMazeEnv::kNoop}), ContractError);
  TMazeEnv fresh;
  Rng rng(3);
  fresh.reset(rng);
  REQUIRE_THROWS_AS(fresh.step({TMazeEnv::kUp, TMazeEnv::kChooseGreen}), ContractError);
}

TEST_CASE("same color choice makes success unreachable", "[envs]") {
  // exhaustive closure over a reduced maze: every reachable position pair
  // under every joint action never yields a reward
  TMazeConfig small;
  small.stem = 1;
  small.arm = 1;
  small.step_limit = 3;

  const std::array<int64_t, 2> colors{TMazeEnv::kChooseGreen, TMazeEnv::kChooseGreen};
  for (const bool green_right : {false, true}) {
    TMazeEnv probe(small);
    std::vector<std::array<int64_t, 2>> cells;
    for (int64_t r = 0; r < 2; ++r)
      for (int64_t c = 0; c < 3; ++c)
        if (probe.walkable(r, c)) cells.push_back({r, c});
    REQUIRE(cells.size() == 4);

    std::set<std::pair<std::array<int64_t, 2>, std::array<int64_t, 2>>> seen, frontier;
    for (const auto& p0 : cells)
      for (const auto& p1 : cells)
        if (!(p0 == p1)) frontier.insert({p0, p1});
    seen = frontier;

    int64_t expanded = 0;
    while (!frontier.empty()) {
      const auto [p0, p1] = *frontier.begin();
      frontier.erase(frontier.begin());
      for (int64_t a0 = TMazeEnv::kUp; a0 <= TMazeEnv::kNoop; ++a0)
        for (int64_t a1 = TMazeEnv::kUp; a1 <= TMazeEnv::kNoop; ++a1) {
          TMazeEnv env(small);
          env.force_navigate_state(p0, p1, colors[0], colors[1], green_right);
          const StepResult res = env.step({a0, a1});
          expanded++;
          REQUIRE(res.reward == 0.0);
          const auto next = std::pair{env.positions()[0], env.positions()[1]};
          if (seen.insert(next).second) frontier.insert(next);
        }
    }
    REQUIRE(expanded == 12 * 25);  // full closure: all distinct pairs reachable
  }
}

TEST_CASE("expert policy scores a perfect return on every seed", "[envs]") {
  TMazeEnv env;
  for (uint64_t seed = 0; seed < 200; ++seed) {
    Rng rng(seed);
    const double ret =
        rollout(env, std::vector<ScriptedTMazePolicy>{{0, 0.0}, {1, 0.0}}, rng);
    REQUIRE(ret == 1.0);
  }
}

TEST_CASE("noise levels order the scripted returns", "[envs]") {
  TMazeEnv env;

  // epsilon 1: choice and navigation actions are uniform draws
  {
    Rng rng(11);
    std::map<int64_t, int64_t> nav_counts;
    int64_t nav_total = 0;
    ScriptedTMazePolicy p(0, 1.0);
    for (int ep = 0; ep < 4000; ++ep) {
      std::vector<double> obs = env.reset(rng);
      p.begin_episode();
      ScriptedTMazePolicy q(1, 1.0);
      q.begin_episode();
      while (!env.done()) {
        const std::vector<double> o0(obs.begin(), obs.begin() + env.obs_dim());
        const std::vector<double> o1(obs.begin() + env.obs_dim(),
                                     obs.begin() + 2 * env.obs_dim());
        const int64_t a0 = p.act(o0, rng), a1 = q.act(o1, rng);
        if (!env.choice_phase()) {
          nav_counts[a0]++;
          nav_total++;
        }
        obs = env.step({a0, a1}).obs;
      }
    }
    for (int64_t a = TMazeEnv::kUp; a <= TMazeEnv::kNoop; ++a)
      REQUIRE(std::abs(nav_counts[a] / double(nav_total) - 0.2) < 0.02);
  }

  // mean returns: random < noisy(0.3) < expert
  auto mean_return = [&](double eps, uint64_t seed, int episodes) {
    Rng rng(seed);
    double sum = 0.0;
    for (int ep = 0; ep < episodes; ++ep)
      sum += rollout(env, std::vector<ScriptedTMazePolicy>{{0, eps}, {1, eps}}, rng);
    return sum / episodes;
  };
  const double random_mean = mean_return(1.0, 5, 1000);
  const double noisy_mean = mean_return(0.3, 6, 1000);
  INFO("random " << random_mean << " noisy " << noisy_mean);
  REQUIRE(random_mean < 0.05);
  REQUIRE(noisy_mean > random_mean);
  REQUIRE(noisy_mean < 1.0);
  REQUIRE(noisy_mean > 0.1);  // the mixed training dataset relies on this floor

  // a navigator with no memory of its color choice stays strictly below expert
  Rng rng(9);
  double memoryless = 0.0;
  for (int ep = 0; ep < 1000; ++ep)
    memoryless += rollout(env, std::vector<MemorylessTMazePolicy>{
                                   MemorylessTMazePolicy(0), MemorylessTMazePolicy(1)},
                          rng);
  memoryless /= 1000.0;
  INFO("memoryless " << memoryless);
  REQUIRE(memoryless < 1.0);
  REQUIRE(memoryless > 0.05);  // it still solves the no-memory fraction
}

TEST_CASE("random-action fuzz keeps the state space closed", "[envs]") {
  TMazeEnv env;
  Rng rng(2024);
  int64_t steps = 0;
  const int64_t budget = 1000000;
  while (steps < budget) {
    std::vector<double> obs = env.reset(rng);
    while (!env.done()) {
      std::vector<int64_t> joint;
      const std::vector<char> legal = env.legal_actions();
      for (int i = 0; i < 2; ++i) {
        int64_t a;
        do {
          a = static_cast<int64_t>(rng.below(TMazeEnv::kNumActions));
        } while (!legal[static_cast<size_t>(a)]);
        joint.push_back(a);
      }
      const StepResult res = env.step(joint);
      steps++;
      REQUIRE(static_cast<int64_t>(res.obs.size()) == 2 * env.obs_dim());
      REQUIRE((res.reward == 0.0 || res.reward == 1.0));
      REQUIRE(env.timestep() <= 20);
      if (!env.choice_phase()) {
        const auto pos = env.positions();
        REQUIRE(env.walkable(pos[0][0], pos[0][1]));
        REQUIRE(env.walkable(pos[1][0], pos[1][1]));
        REQUIRE_FALSE(pos[0] == pos[1]);
      }
      if (res.terminal) break;
    }
  }
  REQUIRE(steps >= budget);
}

TEST_CASE("matrix game payoffs, terminality, and expectations", "[envs]") {
  const std::array<std::array<double, 2>, 2> payoff{{{1.0, 0.0}, {0.0, 1.0}}};
  double sum = 0.0;
  for (int64_t a0 = 0; a0 < 2; ++a0)
    for (int64_t a1 = 0; a1 < 2; ++a1) {
      MatrixGameEnv env(payoff);
      Rng rng(1);
      const std::vector<double> obs = env.reset(rng);
      REQUIRE(obs == std::vector<double>{1.0, 0.0, 0.0, 1.0});
      const StepResult res = env.step({a0, a1});
      REQUIRE(res.reward == payoff[static_cast<size_t>(a0)][static_cast<size_t>(a1)]);
      REQUIRE(res.terminal);
      REQUIRE(env.done());
      REQUIRE_THROWS_AS(env.step({0, 0}), ContractError);
      sum += res.reward;
    }
  REQUIRE(sum / 4.0 == 0.5);  // uniform-policy value = mean payoff
}
