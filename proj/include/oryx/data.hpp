// Offline dataset of multi-agent episodes plus the window sampler that feeds
// training. Episodes store joint per-step data: one observation row per
// agent, one action per agent, one shared team reward per step.
#pragma once

#include <algorithm>
#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "oryx/common.hpp"
#include "oryx/io.hpp"
#include "oryx/tensor.hpp"

namespace oryx {

using nlohmann::json;

struct Episode {
  int64_t steps = 0;
  std::vector<double> obs;       // steps * agents * obs_dim
  std::vector<int64_t> actions;  // steps * agents
  std::vector<double> rewards;   // steps (team reward)

  double ret() const {
    double r = 0.0;
    for (double x : rewards) r += x;
    return r;
  }
};

struct DatasetMeta {
  std::string env;
  std::string behavior;
  int64_t agents = 0;
  int64_t obs_dim = 0;
  int64_t num_actions = 0;
  uint64_t seed = 0;
  json env_info = json::object();  // geometry, step limit, ...
};

inline json meta_to_json(const DatasetMeta& m) {
  return json{{"env", m.env},
              {"behavior", m.behavior},
              {"agents", m.agents},
              {"obs_dim", m.obs_dim},
              {"num_actions", m.num_actions},
              {"seed", m.seed},
              {"env_info", m.env_info}};
}

inline DatasetMeta meta_from_json(const json& j) {
  DatasetMeta m;
  try {
    m.env = j.at("env").get<std::string>();
    m.behavior = j.at("behavior").get<std::string>();
    m.agents = j.at("agents").get<int64_t>();
    m.obs_dim = j.at("obs_dim").get<int64_t>();
    m.num_actions = j.at("num_actions").get<int64_t>();
    m.seed = j.at("seed").get<uint64_t>();
    m.env_info = j.value("env_info", json::object());
  } catch (const json::exception& e) {
    throw LoadError(LoadErrorKind::BadSchema, std::string("bad dataset header: ") + e.what());
  }
  if (m.agents <= 0 || m.obs_dim <= 0 || m.num_actions <= 0)
    throw LoadError(LoadErrorKind::BadSchema, "non-positive dimensions in dataset header");
  return m;
}

class Dataset {
 public:
  DatasetMeta meta;
  std::vector<Episode> episodes;

  void append(Episode ep) {
    validate_episode(ep);
    episodes.push_back(std::move(ep));
  }

  void validate_episode(const Episode& ep) const {
    ORYX_REQUIRE_MSG(ep.steps > 0, "empty episode");
    ORYX_REQUIRE(static_cast<int64_t>(ep.obs.size()) == ep.steps * meta.agents * meta.obs_dim);
    ORYX_REQUIRE(static_cast<int64_t>(ep.actions.size()) == ep.steps * meta.agents);
    ORYX_REQUIRE(static_cast<int64_t>(ep.rewards.size()) == ep.steps);
    for (int64_t a : ep.actions)
      ORYX_REQUIRE_MSG(a >= 0 && a < meta.num_actions, "action " << a << " out of range");
  }

  int64_t transitions() const {
    int64_t n = 0;
    for (const Episode& e : episodes) n += e.steps;
    return n;
  }
};

// --- binary container -------------------------------------------------------

inline constexpr char kDatasetMagic[] = "ORYXDS";
inline constexpr uint16_t kDatasetVersion = 1;

inline void save_dataset(const Dataset& ds, const std::string& path) {
  ByteWriter w;
  w.str(kDatasetMagic);
  w.u8(0);
  w.u16(kDatasetVersion);
  json hj = meta_to_json(ds.meta);
  hj["episodes"] = ds.episodes.size();
  hj["transitions"] = ds.transitions();
  const std::string header = hj.dump();
  w.u32(static_cast<uint32_t>(header.size()));
  w.str(header);
  w.u32(static_cast<uint32_t>(ds.episodes.size()));
  for (const Episode& ep : ds.episodes) {
    ds.validate_episode(ep);
    w.u32(static_cast<uint32_t>(ep.steps));
    for (double x : ep.obs) {
      ORYX_REQUIRE_MSG(std::isfinite(x), "non-finite observation in dataset");
      w.f64(x);
    }
    for (int64_t a : ep.actions) w.u32(static_cast<uint32_t>(a));
    for (double r : ep.rewards) {
      ORYX_REQUIRE_MSG(std::isfinite(r), "non-finite reward in dataset");
      w.f64(r);
    }
  }
  write_file_checksummed(path, w);
}

inline Dataset load_dataset(const std::string& path) {
  const std::vector<uint8_t> body = read_file_checksummed(path);
  ByteReader r(body.data(), body.size());
  expect_magic(r, std::string(kDatasetMagic) + '\0', "dataset");
  const uint16_t version = r.u16();
  if (version != kDatasetVersion)
    throw LoadError(LoadErrorKind::BadVersion,
                    "dataset format version " + std::to_string(version) + " unsupported");
  const uint32_t hlen = r.u32();
  json header;
  try {
    header = json::parse(r.str(hlen));
  } catch (const json::exception& e) {
    throw LoadError(LoadErrorKind::BadSchema, std::string("unparseable dataset header: ") + e.what());
  }
  Dataset ds;
  ds.meta = meta_from_json(header);
  const uint32_t count = r.u32();
  ds.episodes.reserve(count);
  for (uint32_t i = 0; i < count; ++i) {
    Episode ep;
    ep.steps = r.u32();
    if (ep.steps <= 0) throw LoadError(LoadErrorKind::BadSchema, "episode with no steps");
    const int64_t nobs = ep.steps * ds.meta.agents * ds.meta.obs_dim;
    ep.obs.reserve(static_cast<size_t>(nobs));
    for (int64_t k = 0; k < nobs; ++k) {
      const double x = r.f64();
      if (!std::isfinite(x))
        throw LoadError(LoadErrorKind::BadPrecision, "non-finite observation in file");
      ep.obs.push_back(x);
    }
    for (int64_t k = 0; k < ep.steps * ds.meta.agents; ++k) {
      const uint32_t a = r.u32();
      if (a >= static_cast<uint32_t>(ds.meta.num_actions))
        throw LoadError(LoadErrorKind::BadSchema, "action index out of range in file");
      ep.actions.push_back(static_cast<int64_t>(a));
    }
    for (int64_t k = 0; k < ep.steps; ++k) {
      const double x = r.f64();
      if (!std::isfinite(x))
        throw LoadError(LoadErrorKind::BadPrecision, "non-finite reward in file");
      ep.rewards.push_back(x);
    }
    ds.episodes.push_back(std::move(ep));
  }
  if (r.remaining() != 0)
    throw LoadError(LoadErrorKind::BadSchema, "trailing bytes after last episode");
  // counts recorded in the header must describe the payload
  if (header.value("episodes", int64_t{-1}) != static_cast<int64_t>(ds.episodes.size()) ||
      header.value("transitions", int64_t{-1}) != ds.transitions())
    throw LoadError(LoadErrorKind::BadSchema, "header counts disagree with episode payload");
  return ds;
}

// --- stats and subsampling ---------------------------------------------------

struct DatasetStats {
  int64_t episodes = 0;
  int64_t transitions = 0;
  double return_mean = 0.0, return_std = 0.0, return_min = 0.0, return_max = 0.0;
  double length_mean = 0.0;
  int64_t length_min = 0, length_max = 0;
  std::vector<int64_t> action_counts;
};

inline DatasetStats compute_stats(const Dataset& ds) {
  DatasetStats s;
  s.episodes = static_cast<int64_t>(ds.episodes.size());
  s.action_counts.assign(static_cast<size_t>(ds.meta.num_actions), 0);
  if (s.episodes == 0) return s;
  double sum = 0.0, sumsq = 0.0;
  s.return_min = s.return_max = ds.episodes[0].ret();
  s.length_min = s.length_max = ds.episodes[0].steps;
  for (const Episode& ep : ds.episodes) {
    const double r = ep.ret();
    sum += r;
    sumsq += r * r;
    s.return_min = std::min(s.return_min, r);
    s.return_max = std::max(s.return_max, r);
    s.transitions += ep.steps;
    s.length_min = std::min(s.length_min, ep.steps);
    s.length_max = std::max(s.length_max, ep.steps);
    for (int64_t a : ep.actions) s.action_counts[static_cast<size_t>(a)]++;
  }
  const double n = static_cast<double>(s.episodes);
  s.return_mean = sum / n;
  s.return_std = n > 1 ? std::sqrt(std::max(0.0, (sumsq - sum * sum / n) / (n - 1))) : 0.0;
  s.length_mean = static_cast<double>(s.transitions) / n;
  return s;
}

inline json stats_to_json(const DatasetStats& s) {
  return json{{"episodes", s.episodes},
              {"transitions", s.transitions},
              {"return_mean", s.return_mean},
              {"return_std", s.return_std},
              {"return_min", s.return_min},
              {"return_max", s.return_max},
              {"length_mean", s.length_mean},
              {"length_min", s.length_min},
              {"length_max", s.length_max},
              {"action_counts", s.action_counts}};
}

// Shuffles episodes with the given seed, then takes whole episodes in shuffle
// order until the transition count reaches the target (inclusive: the episode
// that crosses the target is kept).
inline Dataset subsample_uniform(const Dataset& ds, int64_t target_transitions, uint64_t seed) {
  ORYX_REQUIRE_MSG(target_transitions >= 1 && target_transitions <= ds.transitions(),
                   "subsample target " << target_transitions << " of " << ds.transitions());
  std::vector<int64_t> idx(ds.episodes.size());
  for (size_t i = 0; i < idx.size(); ++i) idx[i] = static_cast<int64_t>(i);
  Rng rng(seed);
  rng.shuffle(idx);
  Dataset out;
  out.meta = ds.meta;
  int64_t got = 0;
  for (int64_t i : idx) {
    if (got >= target_transitions) break;
    out.episodes.push_back(ds.episodes[static_cast<size_t>(i)]);
    got += out.episodes.back().steps;
  }
  return out;
}

// --- training windows --------------------------------------------------------

// A batch of fixed-length windows. Token rows are ordered window-major, then
// step, then agent, matching RetentionLayout. Episodes shorter than the
// window are front-padded; segment -1 marks padding.
struct SequenceBatch {
  int64_t windows = 0, steps = 0, agents = 0, obs_dim = 0;
  Tensor obs;                    // (windows*steps*agents, obs_dim)
  std::vector<int64_t> actions;  // per token
  std::vector<double> rewards;   // per (window, step)
  std::vector<double> terminal;  // per (window, step): 1 = episode's last step
  std::vector<double> valid;     // per (window, step): 0 = padding
  std::vector<int64_t> segment;  // per token: episode id, -1 = padding

  int64_t token_rows() const { return windows * steps * agents; }
};

// Draws `windows` windows of `steps` steps. A window never crosses an episode
// boundary. Sampling picks a stored transition uniformly at random, then one
// of the windows containing it uniformly, so the anchor-transition marginal
// is exactly uniform.
inline SequenceBatch sample_batch(const Dataset& ds, int64_t windows, int64_t steps, Rng& rng) {
  ORYX_REQUIRE(windows > 0 && steps > 0 && !ds.episodes.empty());
  const int64_t n_agents = ds.meta.agents, obs_dim = ds.meta.obs_dim;

  std::vector<int64_t> prefix;  // cumulative transition counts
  prefix.reserve(ds.episodes.size() + 1);
  prefix.push_back(0);
  for (const Episode& ep : ds.episodes) prefix.push_back(prefix.back() + ep.steps);
  const int64_t total = prefix.back();

  SequenceBatch b;
  b.windows = windows;
  b.steps = steps;
  b.agents = n_agents;
  b.obs_dim = obs_dim;
  b.obs = Tensor({b.token_rows(), obs_dim});
  b.actions.assign(static_cast<size_t>(b.token_rows()), 0);
  b.rewards.assign(static_cast<size_t>(windows * steps), 0.0);
  b.terminal.assign(static_cast<size_t>(windows * steps), 0.0);
  b.valid.assign(static_cast<size_t>(windows * steps), 0.0);
  b.segment.assign(static_cast<size_t>(b.token_rows()), -1);

  for (int64_t w = 0; w < windows; ++w) {
    const int64_t pick = static_cast<int64_t>(rng.below(static_cast<uint64_t>(total)));
    const auto it = std::upper_bound(prefix.begin(), prefix.end(), pick);
    const int64_t e = static_cast<int64_t>(it - prefix.begin()) - 1;
    const Episode& ep = ds.episodes[static_cast<size_t>(e)];
    const int64_t t = pick - prefix[static_cast<size_t>(e)];

    int64_t start = 0, pad = 0;
    if (ep.steps <= steps) {
      pad = steps - ep.steps;
    } else {
      const int64_t lo = std::max<int64_t>(0, t - steps + 1);
      const int64_t hi = std::min<int64_t>(t, ep.steps - steps);
      start = lo + static_cast<int64_t>(rng.below(static_cast<uint64_t>(hi - lo + 1)));
    }

    for (int64_t s = pad; s < steps; ++s) {
      const int64_t src = start + (s - pad);
      const int64_t flat = w * steps + s;
      b.rewards[static_cast<size_t>(flat)] = ep.rewards[static_cast<size_t>(src)];
      b.terminal[static_cast<size_t>(flat)] = src == ep.steps - 1 ? 1.0 : 0.0;
      b.valid[static_cast<size_t>(flat)] = 1.0;
      for (int64_t a = 0; a < n_agents; ++a) {
        const int64_t tok = flat * n_agents + a;
        b.segment[static_cast<size_t>(tok)] = e;
        b.actions[static_cast<size_t>(tok)] = ep.actions[static_cast<size_t>(src * n_agents + a)];
        const double* row = ep.obs.data() + (src * n_agents + a) * obs_dim;
        std::copy(row, row + obs_dim, b.obs.data() + tok * obs_dim);
      }
    }
  }
  return b;
}

}  // namespace oryx
