// Training update: SARSA-style critic targets softened by a batch softmax
// (implicit-constraint weighting), counterfactual advantages accumulated
// across the agent sequence, and advantage-weighted regression of the policy
// onto dataset actions. Dataset actions drive everything; the learned policy
// never acts during training.
#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "oryx/data.hpp"
#include "oryx/model.hpp"
#include "oryx/optim.hpp"
#include "oryx/tape.hpp"

namespace oryx {

struct HyperParams {
  double gamma = 0.99;
  double alpha_critic = 1000.0;
  double alpha_policy = 0.1;
  int64_t batch_size = 64;
  int64_t seq_len = 20;
  int64_t target_sync = 100;  // hard copy period, in updates
  double lr = 3e-4;
  bool batch_scaling = true;        // multiply critic softmax by group size
  bool permute_agents = true;       // fresh agent order each update
  bool per_agent_grouping = false;  // partition Z per agent slot instead of whole batch
  bool cumulative_advantage = true; // weight agent j by the prefix sum over m <= j

  void check() const {
    ORYX_REQUIRE(gamma > 0.0 && gamma <= 1.0);
    ORYX_REQUIRE(alpha_critic > 0.0 && alpha_policy > 0.0);
    ORYX_REQUIRE(batch_size >= 1 && seq_len >= 1 && target_sync >= 1 && lr >= 0.0);
  }
};

inline json hp_to_json(const HyperParams& hp) {
  return json{{"gamma", hp.gamma},
              {"alpha_critic", hp.alpha_critic},
              {"alpha_policy", hp.alpha_policy},
              {"batch_size", hp.batch_size},
              {"seq_len", hp.seq_len},
              {"target_sync", hp.target_sync},
              {"lr", hp.lr},
              {"batch_scaling", hp.batch_scaling},
              {"permute_agents", hp.permute_agents},
              {"per_agent_grouping", hp.per_agent_grouping},
              {"cumulative_advantage", hp.cumulative_advantage}};
}

inline HyperParams hp_from_json(const json& j) {
  HyperParams hp;
  hp.gamma = j.value("gamma", hp.gamma);
  hp.alpha_critic = j.value("alpha_critic", hp.alpha_critic);
  hp.alpha_policy = j.value("alpha_policy", hp.alpha_policy);
  hp.batch_size = j.value("batch_size", hp.batch_size);
  hp.seq_len = j.value("seq_len", hp.seq_len);
  hp.target_sync = j.value("target_sync", hp.target_sync);
  hp.lr = j.value("lr", hp.lr);
  hp.batch_scaling = j.value("batch_scaling", hp.batch_scaling);
  hp.permute_agents = j.value("permute_agents", hp.permute_agents);
  hp.per_agent_grouping = j.value("per_agent_grouping", hp.per_agent_grouping);
  hp.cumulative_advantage = j.value("cumulative_advantage", hp.cumulative_advantage);
  return hp;
}

struct AblationFlags {
  bool no_autoregressive = false;  // constant action inputs in the decoder
  bool no_memory = false;          // caller trains/evaluates with seq_len 2
  bool no_icq = false;             // max-operator targets, no policy head
};

// --- critic targets ----------------------------------------------------------

struct CriticTargets {
  Tensor target;  // per token
  Tensor mask;    // per token: contributes to the critic loss
  int64_t empty_groups = 0;
};

// q_next holds Q from the target network at the *dataset's* next action for
// each token; bootstrap_ok marks tokens whose next step exists inside the
// window. Terminal tokens regress to the raw reward. Non-terminal weights
// come from a softmax over the whole bootstrap group (or per agent slot),
// scaled by the group size so alpha -> infinity recovers r + gamma * q_next.
inline CriticTargets critic_targets(const Tensor& q_next, const Tensor& rewards,
                                    const Tensor& terminal, const Tensor& valid,
                                    const Tensor& bootstrap_ok, int64_t agents,
                                    const HyperParams& hp) {
  const int64_t m = q_next.numel();
  ORYX_REQUIRE(rewards.numel() == m && terminal.numel() == m && valid.numel() == m &&
               bootstrap_ok.numel() == m && agents >= 1 && m % agents == 0);
  CriticTargets out;
  out.target = Tensor(q_next.shape());
  out.mask = Tensor(q_next.shape());

  const int64_t groups = hp.per_agent_grouping ? agents : 1;
  for (int64_t g = 0; g < groups; ++g) {
    std::vector<int64_t> members;
    for (int64_t i = 0; i < m; ++i) {
      if (groups > 1 && i % agents != g) continue;
      if (valid[i] == 0.0) continue;
      if (terminal[i] != 0.0) {
        out.target[i] = rewards[i];
        out.mask[i] = 1.0;
      } else if (bootstrap_ok[i] != 0.0) {
        members.push_back(i);
        out.mask[i] = 1.0;
      }
      // non-terminal without a next step: excluded from the loss
    }
    if (members.empty()) {
      out.empty_groups++;
      continue;
    }
    double mx = q_next[members.front()];
    for (int64_t i : members) mx = std::max(mx, q_next[i]);
    double z = 0.0;
    for (int64_t i : members) z += std::exp((q_next[i] - mx) / hp.alpha_critic);
    const double scale = hp.batch_scaling ? static_cast<double>(members.size()) : 1.0;
    for (int64_t i : members) {
      const double w = std::exp((q_next[i] - mx) / hp.alpha_critic) / z;
      out.target[i] = rewards[i] + hp.gamma * scale * w * q_next[i];
    }
  }
  return out;
}

// --- counterfactual advantages -------------------------------------------------

struct AdvantageEstimate {
  Tensor advantage;      // per token (cumulative over preceding agents)
  Tensor weights;        // per token, sums to 1 per normalization group
  double mean_abs_advantage = 0.0;
  double weight_entropy = 0.0;
};

// advantage term at agent m: Q(taken action) - sum_a pi(a) Q(a); the token
// advantage is the prefix sum over agents of its timestep. probs are treated
// as constants (baseline detached).
inline AdvantageEstimate counterfactual_advantage(const Tensor& q_values, const Tensor& probs,
                                                  const std::vector<int64_t>& actions,
                                                  const Tensor& valid_tok, int64_t agents,
                                                  const HyperParams& hp) {
  ORYX_REQUIRE(q_values.rank() == 2 && q_values.same_shape(probs));
  const int64_t m = q_values.dim(0), na = q_values.dim(1);
  ORYX_REQUIRE(static_cast<int64_t>(actions.size()) == m && valid_tok.numel() == m &&
               agents >= 1 && m % agents == 0);

  AdvantageEstimate est;
  est.advantage = Tensor({m});
  double run = 0.0;
  for (int64_t i = 0; i < m; ++i) {
    if (i % agents == 0) run = 0.0;  // new timestep block
    if (valid_tok[i] == 0.0) continue;
    double psum = 0.0, baseline = 0.0;
    for (int64_t a = 0; a < na; ++a) {
      psum += probs[i * na + a];
      baseline += probs[i * na + a] * q_values[i * na + a];
    }
    ORYX_REQUIRE_MSG(std::abs(psum - 1.0) < 1e-6, "policy row " << i << " sums to " << psum);
    const double term = q_values[i * na + actions[static_cast<size_t>(i)]] - baseline;
    run = hp.cumulative_advantage ? run + term : term;
    est.advantage[i] = run;
  }

  // partition weights: softmax of A / alpha_policy over each group
  est.weights = Tensor({m});
  const int64_t groups = hp.per_agent_grouping ? agents : 1;
  double abs_sum = 0.0;
  int64_t n_valid = 0;
  for (int64_t g = 0; g < groups; ++g) {
    std::vector<int64_t> members;
    for (int64_t i = 0; i < m; ++i) {
      if (groups > 1 && i % agents != g) continue;
      if (valid_tok[i] != 0.0) members.push_back(i);
    }
    if (members.empty()) continue;
    double mx = est.advantage[members.front()];
    for (int64_t i : members) mx = std::max(mx, est.advantage[i]);
    double z = 0.0;
    for (int64_t i : members) z += std::exp((est.advantage[i] - mx) / hp.alpha_policy);
    double check = 0.0;
    for (int64_t i : members) {
      est.weights[i] = std::exp((est.advantage[i] - mx) / hp.alpha_policy) / z;
      check += est.weights[i];
      abs_sum += std::abs(est.advantage[i]);
      n_valid++;
      if (est.weights[i] > 0.0) est.weight_entropy -= est.weights[i] * std::log(est.weights[i]);
    }
    ORYX_REQUIRE_MSG(std::abs(check - 1.0) < 1e-9, "partition weights sum to " << check);
  }
  if (groups > 1) {
    // keep the loss scale comparable to batch grouping
    for (int64_t i = 0; i < m; ++i) est.weights[i] /= static_cast<double>(groups);
    est.weight_entropy /= static_cast<double>(groups);
  }
  est.mean_abs_advantage = n_valid > 0 ? abs_sum / static_cast<double>(n_valid) : 0.0;
  return est;
}

// --- update step ---------------------------------------------------------------

struct UpdateMetrics {
  double critic_loss = 0.0;
  double policy_loss = 0.0;
  double mean_abs_advantage = 0.0;
  double weight_entropy = 0.0;
  int64_t empty_groups = 0;
};

inline SequenceBatch permute_batch_agents(const SequenceBatch& b,
                                          const std::vector<int64_t>& perm) {
  ORYX_REQUIRE(static_cast<int64_t>(perm.size()) == b.agents);
  SequenceBatch out = b;
  for (int64_t w = 0; w < b.windows; ++w)
    for (int64_t t = 0; t < b.steps; ++t)
      for (int64_t j = 0; j < b.agents; ++j) {
        const int64_t dst = (w * b.steps + t) * b.agents + j;
        const int64_t src = (w * b.steps + t) * b.agents + perm[static_cast<size_t>(j)];
        out.actions[static_cast<size_t>(dst)] = b.actions[static_cast<size_t>(src)];
        out.segment[static_cast<size_t>(dst)] = b.segment[static_cast<size_t>(src)];
        std::copy(b.obs.data() + src * b.obs_dim, b.obs.data() + (src + 1) * b.obs_dim,
                  out.obs.data() + dst * b.obs_dim);
      }
  return out;
}

class Learner {
 public:
  Learner(ModelConfig mcfg, HyperParams hp, AblationFlags ablate = {})
      : model_(mcfg), hp_(hp), ablate_(ablate) {
    hp_.check();
  }

  const OryxModel& model() const { return model_; }
  const HyperParams& hyper() const { return hp_; }
  const AblationFlags& ablation() const { return ablate_; }

  UpdateMetrics update_step(ParamSet& params, const ParamSet& target_params, AdamState& opt,
                            const SequenceBatch& raw_batch, Rng& rng) {
    SequenceBatch batch = raw_batch;
    if (hp_.permute_agents && batch.agents > 1) {
      std::vector<int64_t> perm(static_cast<size_t>(batch.agents));
      for (int64_t j = 0; j < batch.agents; ++j) perm[static_cast<size_t>(j)] = j;
      rng.shuffle(perm);
      batch = permute_batch_agents(batch, perm);
    }

    const int64_t m = batch.token_rows(), agents = batch.agents;
    // per-token copies of per-step fields
    Tensor rewards_tok({m}), terminal_tok({m}), valid_tok({m}), bootstrap_tok({m});
    Tensor q_next({m});
    const OryxModel::ForwardValues tv = model_.forward_values(target_params, batch);
    for (int64_t w = 0; w < batch.windows; ++w)
      for (int64_t t = 0; t < batch.steps; ++t)
        for (int64_t j = 0; j < agents; ++j) {
          const int64_t tok = (w * batch.steps + t) * agents + j;
          const int64_t flat = w * batch.steps + t;
          rewards_tok[tok] = batch.rewards[static_cast<size_t>(flat)];
          terminal_tok[tok] = batch.terminal[static_cast<size_t>(flat)];
          valid_tok[tok] = batch.valid[static_cast<size_t>(flat)];
          if (t + 1 < batch.steps && batch.valid[static_cast<size_t>(flat + 1)] != 0.0) {
            bootstrap_tok[tok] = 1.0;
            const int64_t ntok = tok + agents;
            const int64_t na = batch.actions[static_cast<size_t>(ntok)];
            if (ablate_.no_icq) {
              double best = tv.q_values[ntok * model_.config().num_actions];
              for (int64_t a = 1; a < model_.config().num_actions; ++a)
                best = std::max(best, tv.q_values[ntok * model_.config().num_actions + a]);
              q_next[tok] = best;
            } else {
              q_next[tok] = tv.q_values[ntok * model_.config().num_actions + na];
            }
          }
        }

    HyperParams target_hp = hp_;
    if (ablate_.no_icq) target_hp.alpha_critic = 1e12;  // plain max-operator bootstrap
    const CriticTargets ct =
        critic_targets(q_next, rewards_tok, terminal_tok, valid_tok, bootstrap_tok, agents,
                       target_hp);

    Tape tape;
    const std::vector<int> ids = register_params(tape, params);
    const OryxModel::ForwardNodes fn = model_.forward(tape, params, ids, batch);
    const int q_taken = tape.gather_cols(fn.q_values, batch.actions);
    const int critic = tape.masked_mse(q_taken, ct.target, ct.mask);

    UpdateMetrics metrics;
    metrics.critic_loss = tape.value(critic)[0];
    metrics.empty_groups = ct.empty_groups;

    int total = critic;
    if (!ablate_.no_icq) {
      const Tensor probs = softmax_rows(tape.value(fn.logits));
      const AdvantageEstimate adv = counterfactual_advantage(
          tape.value(fn.q_values), probs, batch.actions, valid_tok, agents, hp_);
      const int pol = tape.weighted_nll(fn.logits, batch.actions, adv.weights);
      metrics.policy_loss = tape.value(pol)[0];
      metrics.mean_abs_advantage = adv.mean_abs_advantage;
      metrics.weight_entropy = adv.weight_entropy;
      total = tape.add(critic, pol);
    }

    tape.backward(total);
    AdamConfig acfg;
    acfg.lr = hp_.lr;
    adam_step(params, collect_grads(tape, ids), opt, acfg);
    return metrics;
  }

  static void sync_target(const ParamSet& params, ParamSet& target_params) {
    ORYX_REQUIRE(params.count() == target_params.count());
    for (int64_t i = 0; i < params.count(); ++i) target_params.value(i) = params.value(i);
  }

 private:
  OryxModel model_;
  HyperParams hp_;
  AblationFlags ablate_;
};

}  // namespace oryx
