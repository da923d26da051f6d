#include <catch2/catch_amalgamated.hpp>
#include <cstdio>

#include "oryx/learner.hpp"
#include "oryx/model.hpp"

using namespace oryx;

namespace {

ModelConfig small_cfg(int64_t agents = 2) {
  ModelConfig c;
  c.obs_dim = 5;
  c.num_actions = 4;
  c.agents = agents;
  c.embed = 12;
  c.heads = 2;
  c.ffn = 16;
  return c;
}

// A dense batch: `windows` windows of `steps` full steps, random obs/actions,
// one segment per window.
SequenceBatch random_batch(const ModelConfig& cfg, int64_t windows, int64_t steps,
                           uint64_t seed) {
  Rng rng(seed);
  SequenceBatch b;
  b.windows = windows;
  b.steps = steps;
  b.agents = cfg.agents;
  b.obs_dim = cfg.obs_dim;
  b.obs = Tensor::randn({b.token_rows(), cfg.obs_dim}, rng);
  b.actions.resize(static_cast<size_t>(b.token_rows()));
  for (auto& a : b.actions) a = static_cast<int64_t>(rng.below(static_cast<uint64_t>(cfg.num_actions)));
  b.rewards.assign(static_cast<size_t>(windows * steps), 0.0);
  b.terminal.assign(static_cast<size_t>(windows * steps), 0.0);
  b.valid.assign(static_cast<size_t>(windows * steps), 1.0);
  b.segment.resize(static_cast<size_t>(b.token_rows()));
  for (int64_t w = 0; w < windows; ++w)
    for (int64_t i = 0; i < steps * cfg.agents; ++i)
      b.segment[static_cast<size_t>(w * steps * cfg.agents + i)] = w;
  return b;
}

}  // namespace

TEST_CASE("shifted action inputs follow the agent sequence", "[model]") {
  ModelConfig cfg = small_cfg(3);
  SequenceBatch b = random_batch(cfg, 2, 4, 1);
  const Tensor s = shifted_action_inputs(b, cfg.num_actions);
  const int64_t cols = cfg.num_actions + 1;
  for (int64_t w = 0; w < b.windows; ++w)
    for (int64_t t = 0; t < b.steps; ++t)
      for (int64_t j = 0; j < b.agents; ++j) {
        const int64_t tok = (w * b.steps + t) * b.agents + j;
        if (j == 0) {
          REQUIRE(s[tok * cols + cfg.num_actions] == 1.0);  // start token
          for (int64_t a = 0; a < cfg.num_actions; ++a) REQUIRE(s[tok * cols + a] == 0.0);
        } else {
          REQUIRE(s[tok * cols + cfg.num_actions] == 0.0);
          for (int64_t a = 0; a < cfg.num_actions; ++a)
            REQUIRE(s[tok * cols + a] ==
                    (a == b.actions[static_cast<size_t>(tok - 1)] ? 1.0 : 0.0));
        }
      }
}

TEST_CASE("forward is deterministic and q shape tracks config", "[model]") {
  for (const int64_t agents : {1, 2, 3}) {
    ModelConfig cfg = small_cfg(agents);
    OryxModel model(cfg);
    Rng rng(2);
    const ParamSet params = model.init_params(rng);
    const SequenceBatch b = random_batch(cfg, 2, 3, 7);
    const auto v1 = model.forward_values(params, b);
    const auto v2 = model.forward_values(params, b);
    REQUIRE(v1.logits == v2.logits);
    REQUIRE(v1.q_values == v2.q_values);
    REQUIRE(v1.q_values.shape() == Shape{b.token_rows(), cfg.num_actions});
    REQUIRE(v1.embeddings.shape() == Shape{b.token_rows(), cfg.embed});
  }
}

TEST_CASE("per-token softmax of logits sums to one", "[model]") {
  ModelConfig cfg = small_cfg();
  OryxModel model(cfg);
  Rng rng(3);
  const ParamSet params = model.init_params(rng);
  const SequenceBatch b = random_batch(cfg, 3, 5, 9);
  const auto v = model.forward_values(params, b);
  const Tensor p = softmax_rows(v.logits);
  for (int64_t i = 0; i < p.dim(0); ++i) {
    double sum = 0.0;
    for (int64_t a = 0; a < p.dim(1); ++a) sum += p[i * p.dim(1) + a];
    REQUIRE(std::abs(sum - 1.0) < 1e-9);
  }
}

TEST_CASE("embeddings are causal in time and reset at episode starts", "[model]") {
  ModelConfig cfg = small_cfg();
  OryxModel model(cfg);
  Rng rng(4);
  const ParamSet params = model.init_params(rng);
  SequenceBatch b = random_batch(cfg, 1, 6, 11);
  const auto base = model.forward_values(params, b);

  SequenceBatch later = b;
  // perturb all observations at the last two steps
  for (int64_t tok = 4 * cfg.agents; tok < b.token_rows(); ++tok)
    for (int64_t c = 0; c < cfg.obs_dim; ++c) later.obs[tok * cfg.obs_dim + c] += 2.5;
  const auto v = model.forward_values(params, later);
  for (int64_t tok = 0; tok < 4 * cfg.agents; ++tok)
    for (int64_t c = 0; c < cfg.embed; ++c)
      REQUIRE(v.embeddings[tok * cfg.embed + c] == base.embeddings[tok * cfg.embed + c]);

  // split the window into two segments: second segment ignores the first
  SequenceBatch split = b;
  for (int64_t tok = 3 * cfg.agents; tok < b.token_rows(); ++tok)
    split.segment[static_cast<size_t>(tok)] = 99;
  const auto sv = model.forward_values(params, split);
  SequenceBatch pre = split;
  for (int64_t tok = 0; tok < 3 * cfg.agents; ++tok)
    for (int64_t c = 0; c < cfg.obs_dim; ++c) pre.obs[tok * cfg.obs_dim + c] -= 1.75;
  const auto pv = model.forward_values(params, pre);
  for (int64_t tok = 3 * cfg.agents; tok < b.token_rows(); ++tok)
    for (int64_t c = 0; c < cfg.embed; ++c)
      REQUIRE(sv.embeddings[tok * cfg.embed + c] == pv.embeddings[tok * cfg.embed + c]);
}

TEST_CASE("decoder respects the within-step agent order", "[model]") {
  ModelConfig cfg = small_cfg(3);
  OryxModel model(cfg);
  Rng rng(5);
  const ParamSet params = model.init_params(rng);
  SequenceBatch b = random_batch(cfg, 1, 4, 13);
  const auto base = model.forward_values(params, b);

  const int64_t t = 2;
  SequenceBatch mod = b;
  // change the LAST agent's action at step t: earlier agents' logits at t
  // must not move
  const int64_t last_tok = t * cfg.agents + (cfg.agents - 1);
  mod.actions[static_cast<size_t>(last_tok)] =
      (mod.actions[static_cast<size_t>(last_tok)] + 1) % cfg.num_actions;
  const auto v = model.forward_values(params, mod);
  for (int64_t j = 0; j < cfg.agents - 1; ++j) {
    const int64_t tok = t * cfg.agents + j;
    for (int64_t a = 0; a < cfg.num_actions; ++a)
      REQUIRE(v.logits[tok * cfg.num_actions + a] == base.logits[tok * cfg.num_actions + a]);
  }

  // change the FIRST agent's action at step t: the next agent's logits move
  SequenceBatch mod2 = b;
  const int64_t first_tok = t * cfg.agents;
  mod2.actions[static_cast<size_t>(first_tok)] =
      (mod2.actions[static_cast<size_t>(first_tok)] + 1) % cfg.num_actions;
  const auto v2 = model.forward_values(params, mod2);
  double moved = 0.0;
  for (int64_t a = 0; a < cfg.num_actions; ++a)
    moved += std::abs(v2.logits[(first_tok + 1) * cfg.num_actions + a] -
                      base.logits[(first_tok + 1) * cfg.num_actions + a]);
  REQUIRE(moved > 1e-8);
}

TEST_CASE("parallel training pass matches the recurrent act path", "[model]") {
  for (const int64_t blocks : {1, 2}) {
    ModelConfig cfg = small_cfg();
    cfg.blocks = blocks;
    OryxModel model(cfg);
    Rng rng(6);
    const ParamSet params = model.init_params(rng);
    const SequenceBatch b = random_batch(cfg, 1, 7, 15 + blocks);
    const auto par = model.forward_values(params, b);

    OryxModel::ExecState st = model.make_exec_state();
    Rng act_rng(1);
    for (int64_t t = 0; t < b.steps; ++t) {
      std::vector<double> obs(b.obs.data() + t * cfg.agents * cfg.obs_dim,
                              b.obs.data() + (t + 1) * cfg.agents * cfg.obs_dim);
      std::vector<int64_t> forced(b.actions.begin() + t * cfg.agents,
                                  b.actions.begin() + (t + 1) * cfg.agents);
      const auto res = model.act(params, obs, st, true, act_rng, nullptr, &forced);
      for (int64_t j = 0; j < cfg.agents; ++j) {
        const int64_t tok = t * cfg.agents + j;
        for (int64_t a = 0; a < cfg.num_actions; ++a) {
          REQUIRE(res.logits[j * cfg.num_actions + a] ==
                  Catch::Approx(par.logits[tok * cfg.num_actions + a]).margin(1e-8));
          REQUIRE(res.q_values[j * cfg.num_actions + a] ==
                  Catch::Approx(par.q_values[tok * cfg.num_actions + a]).margin(1e-8));
        }
      }
    }
  }
}

TEST_CASE("act is deterministic in greedy mode and in-range when sampling", "[model]") {
  ModelConfig cfg = small_cfg();
  OryxModel model(cfg);
  Rng rng(8);
  const ParamSet params = model.init_params(rng);
  Rng obs_rng(9);
  std::vector<double> obs(static_cast<size_t>(cfg.agents * cfg.obs_dim));
  for (auto& x : obs) x = obs_rng.normal();

  OryxModel::ExecState s1 = model.make_exec_state();
  OryxModel::ExecState s2 = model.make_exec_state();
  Rng r1(1), r2(2);
  const auto a1 = model.act(params, obs, s1, true, r1);
  const auto a2 = model.act(params, obs, s2, true, r2);
  REQUIRE(a1.actions == a2.actions);

  OryxModel::ExecState s3 = model.make_exec_state();
  Rng r3(3);
  for (int i = 0; i < 20; ++i) {
    s3.reset();
    const auto res = model.act(params, obs, s3, false, r3);
    for (int64_t a : res.actions) REQUIRE((a >= 0 && a < cfg.num_actions));
  }
}

TEST_CASE("hand-set decoder weights make agent 2 copy agent 1", "[model]") {
  ModelConfig cfg;
  cfg.obs_dim = 3;
  cfg.num_actions = 2;
  cfg.agents = 2;
  cfg.embed = 8;
  cfg.heads = 1;
  cfg.ffn = 8;
  OryxModel model(cfg);
  Rng rng(10);
  ParamSet params = model.init_params(rng);
  // cut the embedding and retention/ffn paths inside the decoder
  params.at("dec.in.we") = Tensor({cfg.embed, cfg.embed});
  params.at("dec.in.b") = Tensor({cfg.embed});
  params.at("dec.b0.wo") = Tensor({cfg.embed, cfg.embed});
  params.at("dec.b0.ffn.w2") = Tensor({cfg.ffn, cfg.embed});
  // route the shifted one-hot straight through: action a -> channel a
  Tensor ws({cfg.num_actions + 1, cfg.embed});
  ws.at(0, 0) = 5.0;
  ws.at(1, 1) = 5.0;
  params.at("dec.in.ws") = ws;
  // logits echo the channel
  Tensor pw({cfg.embed, cfg.num_actions});
  pw.at(0, 0) = 50.0;
  pw.at(1, 1) = 50.0;
  params.at("dec.pi.w") = pw;
  params.at("dec.pi.b") = Tensor({cfg.num_actions});

  std::vector<double> obs(static_cast<size_t>(cfg.agents * cfg.obs_dim), 0.3);
  // greedy: agent 1 sees the start token (all-zero channels -> tie ->
  // lowest index), agent 2 copies agent 1
  OryxModel::ExecState st = model.make_exec_state();
  Rng r(4);
  const auto g = model.act(params, obs, st, true, r);
  REQUIRE(g.actions[0] == 0);
  REQUIRE(g.actions[1] == g.actions[0]);

  for (int i = 0; i < 50; ++i) {
    st.reset();
    const auto res = model.act(params, obs, st, false, r);
    REQUIRE(res.actions[1] == res.actions[0]);
  }
}

TEST_CASE("checkpoint files round-trip and fail loudly when damaged", "[model]") {
  ModelConfig cfg = small_cfg();
  OryxModel model(cfg);
  Rng rng(11);
  const ParamSet params = model.init_params(rng);
  const json meta = {{"model", model_config_to_json(cfg)}, {"step", 123}};
  const std::string path = "ck_roundtrip.bin";
  save_checkpoint(path, meta, params);

  const Checkpoint ck = load_checkpoint(path);
  REQUIRE(ck.meta.at("step").get<int64_t>() == 123);
  REQUIRE(model_config_from_json(ck.meta.at("model")).embed == cfg.embed);
  REQUIRE(ck.params.count() == params.count());
  for (int64_t i = 0; i < params.count(); ++i) {
    REQUIRE(ck.params.name(i) == params.name(i));
    REQUIRE(ck.params.value(i) == params.value(i));
  }

  // flip one payload byte -> checksum failure
  {
    std::ifstream in(path, std::ios::binary);
    std::vector<char> bytes((std::istreambuf_iterator<char>(in)),
                            std::istreambuf_iterator<char>());
    bytes[bytes.size() / 2] = static_cast<char>(bytes[bytes.size() / 2] ^ 0x40);
    std::ofstream out("ck_corrupt.bin", std::ios::binary);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  }
  try {
    load_checkpoint("ck_corrupt.bin");
    FAIL("expected checksum failure");
  } catch (const LoadError& e) {
    REQUIRE(e.kind == LoadErrorKind::BadChecksum);
  }

  // truncated file
  {
    std::ifstream in(path, std::ios::binary);
    std::vector<char> bytes((std::istreambuf_iterator<char>(in)),
                            std::istreambuf_iterator<char>());
    bytes.resize(bytes.size() / 2);
    std::ofstream out("ck_trunc.bin", std::ios::binary);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  }
  REQUIRE_THROWS_AS(load_checkpoint("ck_trunc.bin"), LoadError);

  std::remove(path.c_str());
  std::remove("ck_corrupt.bin");
  std::remove("ck_trunc.bin");
}

TEST_CASE("disabling autoregression blinds the decoder to actions", "[model]") {
  ModelConfig cfg = small_cfg();
  cfg.autoregressive = false;
  OryxModel model(cfg);
  Rng rng(12);
  const ParamSet params = model.init_params(rng);
  SequenceBatch b = random_batch(cfg, 1, 3, 17);
  const auto base = model.forward_values(params, b);
  SequenceBatch mod = b;
  for (auto& a : mod.actions) a = (a + 1) % cfg.num_actions;
  const auto v = model.forward_values(params, mod);
  REQUIRE(v.logits == base.logits);
  REQUIRE(v.q_values == base.q_values);
}
