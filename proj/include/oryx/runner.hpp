// Training loop, greedy evaluation rollouts, and report files shared by the
// command-line tool and the acceptance suite.
#pragma once

#include <chrono>
#include <cstdint>
#include <fstream>
#include <functional>
#include <iostream>
#include <string>
#include <vector>

#include "oryx/env.hpp"
#include "oryx/learner.hpp"
#include "oryx/stats.hpp"

namespace oryx {

inline constexpr char kMetricsHeader[] =
    "step,critic_loss,policy_loss,mean_abs_advantage,weight_entropy,wall_ms";

// --- evaluation ---------------------------------------------------------------

struct EvalReport {
  int64_t episodes = 0;
  uint64_t seed = 0;
  std::vector<double> returns;  // one per episode
  double mean_return = 0.0;
  double std_return = 0.0;
  double success_rate = 0.0;
  double mean_steps = 0.0;
  bool has_normalized = false;
  double normalized = 0.0;
};

inline json report_to_json(const EvalReport& r) {
  json j{{"episodes", r.episodes},   {"seed", r.seed},
         {"returns", r.returns},     {"mean_return", r.mean_return},
         {"std_return", r.std_return}, {"success_rate", r.success_rate},
         {"mean_steps", r.mean_steps}};
  if (r.has_normalized) j["normalized"] = r.normalized;
  return j;
}

inline EvalReport report_from_json(const json& j) {
  EvalReport r;
  try {
    r.episodes = j.at("episodes").get<int64_t>();
    r.seed = j.at("seed").get<uint64_t>();
    r.returns = j.at("returns").get<std::vector<double>>();
    r.mean_return = j.at("mean_return").get<double>();
    r.std_return = j.at("std_return").get<double>();
    r.success_rate = j.at("success_rate").get<double>();
    r.mean_steps = j.at("mean_steps").get<double>();
    if (j.contains("normalized")) {
      r.has_normalized = true;
      r.normalized = j.at("normalized").get<double>();
    }
  } catch (const json::exception& e) {
    throw LoadError(LoadErrorKind::BadSchema, std::string("bad eval report: ") + e.what());
  }
  return r;
}

inline void save_report(const EvalReport& r, const std::string& path) {
  std::ofstream f(path, std::ios::trunc);
  ORYX_REQUIRE_MSG(f.good(), "cannot open " << path << " for writing");
  f << report_to_json(r).dump(2) << "\n";
  ORYX_REQUIRE_MSG(f.good(), "short write to " << path);
}

inline EvalReport load_report(const std::string& path) {
  std::ifstream f(path);
  if (!f.good()) throw LoadError(LoadErrorKind::Truncated, "cannot open " + path);
  json j;
  try {
    f >> j;
  } catch (const json::exception& e) {
    throw LoadError(LoadErrorKind::BadSchema, std::string("unparseable report: ") + e.what());
  }
  return report_from_json(j);
}

inline TMazeEnv tmaze_from_info(const json& env_info) {
  TMazeConfig cfg;
  cfg.stem = env_info.value("stem", cfg.stem);
  cfg.arm = env_info.value("arm", cfg.arm);
  cfg.step_limit = env_info.value("step_limit", cfg.step_limit);
  return TMazeEnv(cfg);
}

// Sequential greedy rollouts with one RNG stream per episode, so the report
// does not depend on evaluation order. `greedy_q` evaluates the critic head
// directly (critic-only training has no usable policy head).
inline EvalReport evaluate(const OryxModel& model, const ParamSet& params, TMazeEnv& env,
                           int64_t episodes, uint64_t seed, bool greedy = true,
                           bool greedy_q = false) {
  ORYX_REQUIRE(episodes >= 1);
  const EnvInfo info = env.info();
  ORYX_REQUIRE_MSG(info.agents == model.config().agents &&
                       info.obs_dim == model.config().obs_dim &&
                       info.num_actions == model.config().num_actions,
                   "environment does not match the checkpointed model dimensions");
  EvalReport rep;
  rep.episodes = episodes;
  rep.seed = seed;
  Rng master(seed);
  double step_sum = 0.0, ret_sum = 0.0, ret_sq = 0.0;
  int64_t successes = 0;
  for (int64_t e = 0; e < episodes; ++e) {
    Rng rng = master.stream(static_cast<uint64_t>(e));
    std::vector<double> obs = env.reset(rng);
    OryxModel::ExecState st = model.make_exec_state();
    double ret = 0.0;
    bool success = false;
    int64_t steps = 0;
    while (!env.done()) {
      const std::vector<char> legal = env.legal_actions();
      const OryxModel::ActResult act =
          model.act(params, obs, st, greedy, rng, &legal, nullptr, greedy_q);
      const StepResult res = env.step(act.actions);
      ret += res.reward;
      success = success || res.success;
      steps++;
      obs = res.obs;
    }
    rep.returns.push_back(ret);
    ret_sum += ret;
    ret_sq += ret * ret;
    step_sum += static_cast<double>(steps);
    successes += success ? 1 : 0;
  }
  const double n = static_cast<double>(episodes);
  rep.mean_return = ret_sum / n;
  rep.std_return =
      n > 1 ? std::sqrt(std::max(0.0, (ret_sq - ret_sum * ret_sum / n) / (n - 1.0))) : 0.0;
  rep.success_rate = static_cast<double>(successes) / n;
  rep.mean_steps = step_sum / n;
  return rep;
}

// Pools per-seed reports into one report over all episodes, so a t-test on
// the result sees every rollout rather than a few summary numbers.
inline EvalReport merge_reports(const std::vector<EvalReport>& parts) {
  ORYX_REQUIRE(!parts.empty());
  EvalReport m;
  m.seed = parts.front().seed;
  double steps = 0.0, succ = 0.0;
  for (const EvalReport& r : parts) {
    m.episodes += r.episodes;
    m.returns.insert(m.returns.end(), r.returns.begin(), r.returns.end());
    steps += r.mean_steps * static_cast<double>(r.episodes);
    succ += r.success_rate * static_cast<double>(r.episodes);
  }
  ORYX_REQUIRE(m.episodes >= 1 &&
               m.returns.size() == static_cast<size_t>(m.episodes));
  const double n = static_cast<double>(m.episodes);
  double sum = 0.0;
  for (double v : m.returns) sum += v;
  m.mean_return = sum / n;
  double sq = 0.0;
  for (double v : m.returns) sq += (v - m.mean_return) * (v - m.mean_return);
  m.std_return = m.episodes > 1 ? std::sqrt(sq / (n - 1.0)) : 0.0;
  m.success_rate = succ / n;
  m.mean_steps = steps / n;
  return m;
}

// --- training loop --------------------------------------------------------------

struct TrainConfig {
  int64_t updates = 20000;
  uint64_t seed = 1;
  HyperParams hp;
  AblationFlags ablate;
  ModelConfig model;  // dimension fields are overwritten from the dataset
  std::string metrics_path;  // empty: no CSV
  int64_t snapshot_every = 0;
  std::function<void(int64_t, const ParamSet&, const OryxModel&)> snapshot;
};

struct TrainOutcome {
  ModelConfig model;
  HyperParams hp;  // as actually used (ablation may shorten windows)
  ParamSet params;
  UpdateMetrics last;
  int64_t empty_group_events = 0;
};

// Runs the full update loop: sample windows, one gradient step, hard target
// sync every `target_sync` updates. A non-finite value anywhere aborts with
// the last metrics row on stderr.
inline TrainOutcome run_training(const Dataset& ds, TrainConfig cfg) {
  ORYX_REQUIRE(cfg.updates >= 0);
  cfg.model.obs_dim = ds.meta.obs_dim;
  cfg.model.num_actions = ds.meta.num_actions;
  cfg.model.agents = ds.meta.agents;
  if (cfg.ablate.no_memory) cfg.hp.seq_len = 2;
  if (cfg.ablate.no_autoregressive) cfg.model.autoregressive = false;
  // windows longer than every episode only add masked padding; trimming them
  // changes nothing about the losses but skips dead rows
  int64_t longest = 1;
  for (const Episode& ep : ds.episodes) longest = std::max(longest, ep.steps);
  cfg.hp.seq_len = std::min(cfg.hp.seq_len, longest);
  cfg.hp.check();
  cfg.model.check();

  Learner learner(cfg.model, cfg.hp, cfg.ablate);
  Rng master(cfg.seed);
  Rng init_rng = master.stream(0), data_rng = master.stream(1), step_rng = master.stream(2);
  TrainOutcome out;
  out.model = cfg.model;
  out.hp = cfg.hp;
  out.params = learner.model().init_params(init_rng);
  ParamSet target = out.params;
  AdamState opt = AdamState::init(out.params);

  std::ofstream csv;
  if (!cfg.metrics_path.empty()) {
    csv.open(cfg.metrics_path, std::ios::trunc);
    ORYX_REQUIRE_MSG(csv.good(), "cannot open " << cfg.metrics_path << " for writing");
    csv << kMetricsHeader << "\n";
  }

  for (int64_t step = 1; step <= cfg.updates; ++step) {
    const SequenceBatch batch = sample_batch(ds, cfg.hp.batch_size, cfg.hp.seq_len, data_rng);
    const auto t0 = std::chrono::steady_clock::now();
    try {
      out.last = learner.update_step(out.params, target, opt, batch, step_rng);
    } catch (const NumericError& e) {
      std::cerr << "numeric abort at update " << step << ": " << e.what() << "\n"
                << "last metrics: critic_loss=" << out.last.critic_loss
                << " policy_loss=" << out.last.policy_loss
                << " mean_abs_advantage=" << out.last.mean_abs_advantage
                << " weight_entropy=" << out.last.weight_entropy << "\n";
      throw;
    }
    const auto t1 = std::chrono::steady_clock::now();
    out.empty_group_events += out.last.empty_groups;
    if (csv.is_open()) {
      csv << step << ',' << out.last.critic_loss << ',' << out.last.policy_loss << ','
          << out.last.mean_abs_advantage << ',' << out.last.weight_entropy << ','
          << std::chrono::duration<double, std::milli>(t1 - t0).count() << "\n";
    }
    if (step % cfg.hp.target_sync == 0) Learner::sync_target(out.params, target);
    if (cfg.snapshot_every > 0 && cfg.snapshot && step % cfg.snapshot_every == 0)
      cfg.snapshot(step, out.params, learner.model());
  }
  return out;
}

// --- checkpoint metadata ---------------------------------------------------------

inline json ablate_to_json(const AblationFlags& a) {
  return json{{"no_autoregressive", a.no_autoregressive},
              {"no_memory", a.no_memory},
              {"no_icq", a.no_icq}};
}

inline AblationFlags ablate_from_json(const json& j) {
  AblationFlags a;
  a.no_autoregressive = j.value("no_autoregressive", false);
  a.no_memory = j.value("no_memory", false);
  a.no_icq = j.value("no_icq", false);
  return a;
}

inline json checkpoint_meta(const TrainOutcome& out, const Dataset& ds,
                            const AblationFlags& ablate, uint64_t seed, int64_t updates) {
  return json{{"model", model_config_to_json(out.model)},
              {"hp", hp_to_json(out.hp)},
              {"env", ds.meta.env},
              {"env_info", ds.meta.env_info},
              {"ablate", ablate_to_json(ablate)},
              {"seed", seed},
              {"updates", updates},
              {"dataset_behavior", ds.meta.behavior}};
}

}  // namespace oryx
