// Sequence model: a retention encoder over per-agent observation tokens and
// an autoregressive decoder that emits, per (timestep, agent) token, action
// logits and per-action Q-values. The decoder conditions on earlier agents'
// actions within a timestep through shifted one-hot action inputs plus an
// intra-timestep causal retention mask.
#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include <json.hpp>

#include "oryx/data.hpp"
#include "oryx/io.hpp"
#include "oryx/optim.hpp"
#include "oryx/retention.hpp"
#include "oryx/tape.hpp"
#include "oryx/tensor.hpp"

namespace oryx {

struct ModelConfig {
  int64_t obs_dim = 0;
  int64_t num_actions = 0;
  int64_t agents = 0;
  int64_t embed = 64;
  int64_t blocks = 1;
  int64_t heads = 1;
  int64_t ffn = 128;
  double kappa_scale = 0.5;
  bool autoregressive = true;  // off: action inputs replaced by a constant

  void check() const {
    ORYX_REQUIRE_MSG(obs_dim > 0 && agents > 0 && embed > 0 && blocks > 0 && heads > 0 &&
                         ffn > 0 && num_actions >= 2,
                     "bad model config");
    ORYX_REQUIRE_MSG(embed % heads == 0, "heads must divide embed");
  }
  RetentionConfig retention() const {
    RetentionConfig r;
    r.heads = heads;
    r.head_dim = embed / heads;
    r.kappa_scale = kappa_scale;
    return r;
  }
};

inline json model_config_to_json(const ModelConfig& c) {
  return json{{"obs_dim", c.obs_dim}, {"num_actions", c.num_actions},
              {"agents", c.agents},   {"embed", c.embed},
              {"blocks", c.blocks},   {"heads", c.heads},
              {"ffn", c.ffn},         {"kappa_scale", c.kappa_scale},
              {"autoregressive", c.autoregressive}};
}

inline ModelConfig model_config_from_json(const json& j) {
  ModelConfig c;
  try {
    c.obs_dim = j.at("obs_dim").get<int64_t>();
    c.num_actions = j.at("num_actions").get<int64_t>();
    c.agents = j.at("agents").get<int64_t>();
    c.embed = j.at("embed").get<int64_t>();
    c.blocks = j.at("blocks").get<int64_t>();
    c.heads = j.at("heads").get<int64_t>();
    c.ffn = j.at("ffn").get<int64_t>();
    c.kappa_scale = j.at("kappa_scale").get<double>();
    c.autoregressive = j.value("autoregressive", true);
  } catch (const json::exception& e) {
    throw LoadError(LoadErrorKind::BadSchema, std::string("bad model config: ") + e.what());
  }
  c.check();
  return c;
}

// Shifted one-hot action inputs: column layout [actions..., start flag].
// The first agent of every timestep gets the start token; agent j gets the
// one-hot action of agent j-1 at the same timestep.
inline Tensor shifted_action_inputs(const SequenceBatch& b, int64_t num_actions) {
  Tensor s({b.token_rows(), num_actions + 1});
  for (int64_t w = 0; w < b.windows; ++w)
    for (int64_t t = 0; t < b.steps; ++t)
      for (int64_t j = 0; j < b.agents; ++j) {
        const int64_t tok = (w * b.steps + t) * b.agents + j;
        if (j == 0) {
          s[tok * (num_actions + 1) + num_actions] = 1.0;
        } else {
          const int64_t prev = b.actions[static_cast<size_t>(tok - 1)];
          ORYX_REQUIRE(prev >= 0 && prev < num_actions);
          s[tok * (num_actions + 1) + prev] = 1.0;
        }
      }
  return s;
}

class OryxModel {
 public:
  explicit OryxModel(ModelConfig cfg) : cfg_(cfg) { cfg_.check(); }

  const ModelConfig& config() const { return cfg_; }

  ParamSet init_params(Rng& rng) const {
    ParamSet p;
    auto linear = [&](const std::string& name, int64_t in, int64_t out, bool bias) {
      p.add(name + ".w", Tensor::randn({in, out}, rng, 1.0 / std::sqrt(static_cast<double>(in))));
      if (bias) p.add(name + ".b", Tensor({out}));
    };
    const int64_t e = cfg_.embed;
    linear("enc.in", cfg_.obs_dim, e, true);
    for (int64_t i = 0; i < cfg_.blocks; ++i) add_block_params(p, "enc.b" + std::to_string(i), rng);
    p.add("dec.in.we", Tensor::randn({e, e}, rng, 1.0 / std::sqrt(static_cast<double>(e))));
    p.add("dec.in.ws", Tensor::randn({cfg_.num_actions + 1, e},
                                     rng, 1.0 / std::sqrt(static_cast<double>(cfg_.num_actions + 1))));
    p.add("dec.in.b", Tensor({e}));
    for (int64_t i = 0; i < cfg_.blocks; ++i) add_block_params(p, "dec.b" + std::to_string(i), rng);
    p.add("dec.out_norm.g", Tensor::full({e}, 1.0));
    linear("dec.pi", e, cfg_.num_actions, true);
    linear("dec.q", e, cfg_.num_actions, true);
    return p;
  }

  struct ForwardNodes {
    int embeddings = -1;
    int logits = -1;
    int q_values = -1;
  };

  // Training-mode forward over a token batch (windows already agent-permuted
  // by the caller when enabled). Constant inputs; params live on the tape.
  ForwardNodes forward(Tape& tape, const ParamSet& params, const std::vector<int>& ids,
                       const SequenceBatch& batch) const {
    ORYX_REQUIRE_MSG(batch.obs_dim == cfg_.obs_dim && batch.agents == cfg_.agents,
                     "batch does not match model config");
    auto pid = [&](const std::string& name) {
      const int64_t i = params.find(name);
      ORYX_REQUIRE_MSG(i >= 0, "missing parameter " << name);
      return ids[static_cast<size_t>(i)];
    };

    RetentionLayout enc_lay;
    enc_lay.windows = batch.windows;
    enc_lay.steps = batch.steps;
    enc_lay.block = batch.agents;
    enc_lay.segment = batch.segment;
    enc_lay.intra_causal = false;
    RetentionLayout dec_lay = enc_lay;
    dec_lay.intra_causal = true;

    const int obs = tape.constant(batch.obs, "obs");
    int x = tape.relu(tape.add_row_bias(tape.matmul(obs, pid("enc.in.w")), pid("enc.in.b")));
    for (int64_t i = 0; i < cfg_.blocks; ++i)
      x = block_forward(tape, pid, "enc.b" + std::to_string(i), x, enc_lay);
    const int embeddings = x;

    const int shifted = tape.constant(
        cfg_.autoregressive ? shifted_action_inputs(batch, cfg_.num_actions)
                            : Tensor::full({batch.token_rows(), cfg_.num_actions + 1}, -1.0),
        "shifted_actions");
    int d = tape.relu(tape.add(
        tape.matmul(embeddings, pid("dec.in.we")),
        tape.add_row_bias(tape.matmul(shifted, pid("dec.in.ws")), pid("dec.in.b"))));
    for (int64_t i = 0; i < cfg_.blocks; ++i)
      d = block_forward(tape, pid, "dec.b" + std::to_string(i), d, dec_lay);
    const int out = tape.rms_norm(d, pid("dec.out_norm.g"));
    const int logits = tape.add_row_bias(tape.matmul(out, pid("dec.pi.w")), pid("dec.pi.b"));
    const int q_values = tape.add_row_bias(tape.matmul(out, pid("dec.q.w")), pid("dec.q.b"));
    return {embeddings, logits, q_values};
  }

  // Convenience: forward without gradients (target network, probes).
  struct ForwardValues {
    Tensor embeddings, logits, q_values;
  };
  ForwardValues forward_values(const ParamSet& params, const SequenceBatch& batch) const {
    Tape tape;
    std::vector<int> ids;
    ids.reserve(static_cast<size_t>(params.count()));
    for (int64_t i = 0; i < params.count(); ++i)
      ids.push_back(tape.constant(params.value(i), params.name(i)));
    const ForwardNodes n = forward(tape, params, ids, batch);
    return {tape.value(n.embeddings), tape.value(n.logits), tape.value(n.q_values)};
  }

  // --- recurrent execution ---------------------------------------------

  struct ExecState {
    std::vector<RetentionState> enc;  // one per block
    std::vector<RetentionState> dec;
    void reset() {
      for (auto& s : enc) s.reset();
      for (auto& s : dec) s.reset();
    }
  };

  ExecState make_exec_state() const {
    ExecState st;
    for (int64_t i = 0; i < cfg_.blocks; ++i) {
      st.enc.push_back(RetentionState::zeros(cfg_.retention()));
      st.dec.push_back(RetentionState::zeros(cfg_.retention()));
    }
    return st;
  }

  struct ActResult {
    std::vector<int64_t> actions;  // one per agent
    Tensor logits;                 // (agents, num_actions), pre-mask
    Tensor q_values;               // (agents, num_actions)
  };

  // One environment timestep. Agents act in index order; agent j's logits
  // condition on already-chosen actions of agents < j. `legal` masks
  // sampling/argmax (logits themselves are unmasked); `forced` replaces the
  // chosen action (teacher forcing for consistency checks and probes);
  // `greedy_q` selects by argmax of the value head instead of the policy
  // head (critic-only operation).
  ActResult act(const ParamSet& params, const std::vector<double>& joint_obs, ExecState& st,
                bool greedy, Rng& rng, const std::vector<char>* legal = nullptr,
                const std::vector<int64_t>* forced = nullptr, bool greedy_q = false) const {
    const int64_t n = cfg_.agents, e = cfg_.embed, na = cfg_.num_actions;
    ORYX_REQUIRE(static_cast<int64_t>(joint_obs.size()) == n * cfg_.obs_dim);
    const RetentionConfig rc = cfg_.retention();

    // encoder consumes the whole timestep block at once
    Tensor obs({n, cfg_.obs_dim}, std::vector<double>(joint_obs));
    Tensor x = relu(add_row_bias(matmul(obs, params.at("enc.in.w")), params.at("enc.in.b")));
    for (int64_t i = 0; i < cfg_.blocks; ++i)
      x = block_step(params, "enc.b" + std::to_string(i), x, rc, false,
                     st.enc[static_cast<size_t>(i)], nullptr);

    // decoder: state decays once per timestep (tracked per block), tokens
    // are fed one at a time so each agent conditions on the previous ones
    std::vector<char> decayed(static_cast<size_t>(cfg_.blocks), 0);

    ActResult res;
    res.logits = Tensor({n, na});
    res.q_values = Tensor({n, na});
    res.actions.assign(static_cast<size_t>(n), 0);

    for (int64_t j = 0; j < n; ++j) {
      Tensor shifted({1, na + 1});
      if (!cfg_.autoregressive)
        shifted = Tensor::full({1, na + 1}, -1.0);
      else if (j == 0)
        shifted[na] = 1.0;
      else
        shifted[res.actions[static_cast<size_t>(j - 1)]] = 1.0;
      Tensor emb({1, e});
      std::copy(x.data() + j * e, x.data() + (j + 1) * e, emb.data());

      Tensor d = matmul(emb, params.at("dec.in.we"));
      const Tensor ds = add_row_bias(matmul(shifted, params.at("dec.in.ws")), params.at("dec.in.b"));
      d = relu(add(d, ds));
      for (int64_t i = 0; i < cfg_.blocks; ++i)
        d = block_step(params, "dec.b" + std::to_string(i), d, rc, true,
                       st.dec[static_cast<size_t>(i)], &decayed[static_cast<size_t>(i)]);
      const Tensor out = rms_norm_rows(d, params.at("dec.out_norm.g"));
      const Tensor lg = add_row_bias(matmul(out, params.at("dec.pi.w")), params.at("dec.pi.b"));
      const Tensor qv = add_row_bias(matmul(out, params.at("dec.q.w")), params.at("dec.q.b"));
      std::copy(lg.data(), lg.data() + na, res.logits.data() + j * na);
      std::copy(qv.data(), qv.data() + na, res.q_values.data() + j * na);

      int64_t a;
      if (forced) {
        a = (*forced)[static_cast<size_t>(j)];
        ORYX_REQUIRE(a >= 0 && a < na);
      } else if (greedy_q) {
        a = choose(qv, legal, true, rng);
      } else {
        a = choose(lg, legal, greedy, rng);
      }
      res.actions[static_cast<size_t>(j)] = a;
    }
    return res;
  }

 private:
  void add_block_params(ParamSet& p, const std::string& pre, Rng& rng) const {
    const int64_t e = cfg_.embed;
    const double s = 1.0 / std::sqrt(static_cast<double>(e));
    p.add(pre + ".norm1.g", Tensor::full({e}, 1.0));
    p.add(pre + ".wq", Tensor::randn({e, e}, rng, s));
    p.add(pre + ".wk", Tensor::randn({e, e}, rng, s));
    p.add(pre + ".wv", Tensor::randn({e, e}, rng, s));
    p.add(pre + ".headnorm.g", Tensor::full({e}, 1.0));
    p.add(pre + ".wo", Tensor::randn({e, e}, rng, s));
    p.add(pre + ".norm2.g", Tensor::full({e}, 1.0));
    p.add(pre + ".ffn.w1", Tensor::randn({e, cfg_.ffn}, rng, s));
    p.add(pre + ".ffn.b1", Tensor({cfg_.ffn}));
    p.add(pre + ".ffn.w2",
          Tensor::randn({cfg_.ffn, e}, rng, 1.0 / std::sqrt(static_cast<double>(cfg_.ffn))));
  }

  // Pre-norm retention block: x += Wo(head_norm(retention(norm(x)))), then
  // x += FFN(norm(x)).
  template <typename Pid>
  int block_forward(Tape& tape, Pid pid, const std::string& pre, int x,
                    const RetentionLayout& lay) const {
    const RetentionConfig rc = cfg_.retention();
    const int xn = tape.rms_norm(x, pid(pre + ".norm1.g"));
    const int q = tape.scale(tape.matmul(xn, pid(pre + ".wq")),
                             1.0 / std::sqrt(static_cast<double>(rc.head_dim)));
    const int k = tape.matmul(xn, pid(pre + ".wk"));
    const int v = tape.matmul(xn, pid(pre + ".wv"));
    const int r = retention(tape, q, k, v, rc, lay);
    const int rn = tape.head_norm(r, pid(pre + ".headnorm.g"), rc.heads);
    x = tape.add(x, tape.matmul(rn, pid(pre + ".wo")));
    const int h = tape.relu(
        tape.add_row_bias(tape.matmul(tape.rms_norm(x, pid(pre + ".norm2.g")), pid(pre + ".ffn.w1")),
                          pid(pre + ".ffn.b1")));
    return tape.add(x, tape.matmul(h, pid(pre + ".ffn.w2")));
  }

  // Recurrent twin of block_forward. For the encoder (intra_causal false) x
  // is the whole timestep block; state decays inside retention_step. For the
  // decoder x is a single token row: the state is decayed once per timestep
  // (tracked by *decayed), each token reads state + itself and is absorbed
  // immediately, which reproduces the intra-causal mask.
  Tensor block_step(const ParamSet& params, const std::string& pre, const Tensor& x,
                    const RetentionConfig& rc, bool intra_causal, RetentionState& st,
                    char* decayed) const {
    const Tensor xn = rms_norm_rows(x, params.at(pre + ".norm1.g"));
    Tensor q = matmul(xn, params.at(pre + ".wq"));
    for (int64_t i = 0; i < q.numel(); ++i) q[i] /= std::sqrt(static_cast<double>(rc.head_dim));
    const Tensor k = matmul(xn, params.at(pre + ".wk"));
    const Tensor v = matmul(xn, params.at(pre + ".wv"));

    Tensor r(x.shape());
    if (!intra_causal) {
      r = retention_step(q, k, v, rc, false, st);
    } else {
      ORYX_REQUIRE(x.dim(0) == 1 && decayed != nullptr);
      const int64_t d = rc.head_dim;
      if (!*decayed) {
        for (int64_t h = 0; h < rc.heads; ++h)
          as_mat(st.s[static_cast<size_t>(h)]) *= rc.kappa(h);
        *decayed = 1;
      }
      for (int64_t h = 0; h < rc.heads; ++h) {
        Tensor& s = st.s[static_cast<size_t>(h)];
        const int64_t off = h * d;
        double dot = 0.0;
        for (int64_t c = 0; c < d; ++c) dot += q[off + c] * k[off + c];
        for (int64_t col = 0; col < d; ++col) {
          double acc = dot * v[off + col];
          for (int64_t row = 0; row < d; ++row) acc += q[off + row] * s[row * d + col];
          r[off + col] = acc;
        }
        for (int64_t row = 0; row < d; ++row)
          for (int64_t col = 0; col < d; ++col) s[row * d + col] += k[off + row] * v[off + col];
      }
    }
    const Tensor rn = head_norm_rows(r, params.at(pre + ".headnorm.g"), rc.heads);
    Tensor out = add(x, matmul(rn, params.at(pre + ".wo")));
    const Tensor h1 = relu(add_row_bias(
        matmul(rms_norm_rows(out, params.at(pre + ".norm2.g")), params.at(pre + ".ffn.w1")),
        params.at(pre + ".ffn.b1")));
    return add(out, matmul(h1, params.at(pre + ".ffn.w2")));
  }

  static int64_t choose(const Tensor& logits_row, const std::vector<char>* legal, bool greedy,
                        Rng& rng) {
    const int64_t na = logits_row.dim(1);
    auto is_legal = [&](int64_t a) {
      return legal == nullptr || (*legal)[static_cast<size_t>(a)] != 0;
    };
    if (greedy) {
      int64_t best = -1;
      for (int64_t a = 0; a < na; ++a)
        if (is_legal(a) && (best < 0 || logits_row[a] > logits_row[best])) best = a;
      ORYX_REQUIRE_MSG(best >= 0, "no legal action");
      return best;
    }
    double mx = -std::numeric_limits<double>::infinity();
    for (int64_t a = 0; a < na; ++a)
      if (is_legal(a)) mx = std::max(mx, logits_row[a]);
    ORYX_REQUIRE_MSG(std::isfinite(mx), "no legal action");
    double z = 0.0;
    std::vector<double> p(static_cast<size_t>(na), 0.0);
    for (int64_t a = 0; a < na; ++a)
      if (is_legal(a)) {
        p[static_cast<size_t>(a)] = std::exp(logits_row[a] - mx);
        z += p[static_cast<size_t>(a)];
      }
    const double u = rng.uniform() * z;
    double acc = 0.0;
    for (int64_t a = 0; a < na; ++a) {
      acc += p[static_cast<size_t>(a)];
      if (u < acc && is_legal(a)) return a;
    }
    for (int64_t a = na - 1; a >= 0; --a)
      if (is_legal(a)) return a;
    throw ContractError("no legal action");
  }

  ModelConfig cfg_;
};

// --- checkpoints -------------------------------------------------------------

inline constexpr char kCheckpointMagic[] = "ORYXCP";
inline constexpr uint16_t kCheckpointVersion = 1;

inline void save_checkpoint(const std::string& path, const json& meta, const ParamSet& params) {
  ByteWriter w;
  w.str(kCheckpointMagic);
  w.u8(0);
  w.u16(kCheckpointVersion);
  json header = meta;
  json plist = json::array();
  for (int64_t i = 0; i < params.count(); ++i) {
    plist.push_back(json{{"name", params.name(i)}, {"shape", params.value(i).shape()}});
  }
  header["params"] = plist;
  const std::string hs = header.dump();
  w.u32(static_cast<uint32_t>(hs.size()));
  w.str(hs);
  for (int64_t i = 0; i < params.count(); ++i) {
    const Tensor& t = params.value(i);
    for (int64_t j = 0; j < t.numel(); ++j) {
      ORYX_REQUIRE_MSG(std::isfinite(t[j]), "non-finite parameter " << params.name(i));
      w.f64(t[j]);
    }
  }
  write_file_checksummed(path, w);
}

struct Checkpoint {
  json meta;
  ParamSet params;
};

inline Checkpoint load_checkpoint(const std::string& path) {
  const std::vector<uint8_t> body = read_file_checksummed(path);
  ByteReader r(body.data(), body.size());
  expect_magic(r, std::string(kCheckpointMagic) + '\0', "checkpoint");
  const uint16_t version = r.u16();
  if (version != kCheckpointVersion)
    throw LoadError(LoadErrorKind::BadVersion,
                    "checkpoint version " + std::to_string(version) + " unsupported");
  json header;
  try {
    header = json::parse(r.str(r.u32()));
  } catch (const json::exception& e) {
    throw LoadError(LoadErrorKind::BadSchema, std::string("unparseable checkpoint header: ") + e.what());
  }
  Checkpoint ck;
  if (!header.contains("params") || !header["params"].is_array())
    throw LoadError(LoadErrorKind::BadSchema, "checkpoint header missing params list");
  for (const json& pj : header["params"]) {
    std::string name;
    Shape shape;
    try {
      name = pj.at("name").get<std::string>();
      shape = pj.at("shape").get<Shape>();
    } catch (const json::exception& e) {
      throw LoadError(LoadErrorKind::BadSchema, std::string("bad param entry: ") + e.what());
    }
    Tensor t(shape);
    for (int64_t j = 0; j < t.numel(); ++j) {
      t[j] = r.f64();
      if (!std::isfinite(t[j]))
        throw LoadError(LoadErrorKind::BadPrecision, "non-finite parameter " + name);
    }
    ck.params.add(name, std::move(t));
  }
  if (r.remaining() != 0)
    throw LoadError(LoadErrorKind::BadSchema, "trailing bytes after parameters");
  header.erase("params");
  ck.meta = header;
  return ck;
}

}  // namespace oryx
