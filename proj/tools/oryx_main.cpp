// Operator surface: dataset generation and inspection, training, evaluation
// rollouts, report comparison, and curve export. Every artifact-producing
// command drops an INI echo of its fully-resolved options next to the output,
// and `oryx --config <echo> <subcommand>` replays the run.
#include <CLI11.hpp>

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "oryx/runner.hpp"
#include "oryx/stats.hpp"

namespace fs = std::filesystem;

namespace {

using namespace oryx;

// Echoes only the invoked subcommand's options: a full dump would also apply
// other subcommands' empty required values on replay.
void write_resolved_config(const CLI::App& root, const std::string& sub, const std::string& path) {
  if (path.empty()) return;
  std::ofstream f(path, std::ios::trunc);
  ORYX_REQUIRE_MSG(f.good(), "cannot open " << path << " for writing");
  std::istringstream all(root.config_to_str(true, false));
  std::string line;
  const std::string prefix = sub + ".";
  while (std::getline(all, line))
    if (line.rfind(prefix, 0) == 0) f << line << "\n";
}

void print_stats(const Dataset& ds) { std::cout << stats_to_json(compute_stats(ds)).dump(2) << "\n"; }

std::vector<std::string> split_list(const std::string& csv) {
  std::vector<std::string> out;
  std::string item;
  std::istringstream s(csv);
  while (std::getline(s, item, ','))
    if (!item.empty()) out.push_back(item);
  return out;
}

// --- gen-data --------------------------------------------------------------------

struct GenDataArgs {
  std::string env = "tmaze";
  std::string policy = "expert";
  double epsilon = 0.3;
  int64_t transitions = 100000;
  uint64_t seed = 1;
  std::string out = "dataset.bin";
  int64_t stem = 4;
  int64_t arm = 3;
  int64_t step_limit = 20;
};

void cmd_gen_data(const CLI::App& root, const GenDataArgs& a) {
  ORYX_REQUIRE_MSG(a.env == "tmaze", "unknown env '" << a.env << "' (recordable: tmaze)");
  TMazeConfig mc;
  mc.stem = a.stem;
  mc.arm = a.arm;
  mc.step_limit = a.step_limit;
  TMazeEnv env(mc);
  Rng rng(a.seed);
  Dataset ds;
  if (a.policy == "memoryless") {
    std::vector<MemorylessTMazePolicy> ps{MemorylessTMazePolicy(0), MemorylessTMazePolicy(1)};
    ds = record(env, ps, a.transitions, rng, a.policy, a.seed);
  } else {
    ORYX_REQUIRE_MSG(a.policy == "expert" || a.policy == "noisy" || a.policy == "random",
                     "unknown policy '" << a.policy << "'");
    const double eps = a.policy == "expert" ? 0.0 : (a.policy == "random" ? 1.0 : a.epsilon);
    std::vector<ScriptedTMazePolicy> ps{ScriptedTMazePolicy(0, eps), ScriptedTMazePolicy(1, eps)};
    std::string behavior = a.policy;
    if (a.policy == "noisy") {
      std::ostringstream b;
      b << "noisy(eps=" << eps << ")";
      behavior = b.str();
    }
    ds = record(env, ps, a.transitions, rng, behavior, a.seed);
  }
  save_dataset(ds, a.out);
  print_stats(ds);
  write_resolved_config(root, "gen-data", a.out + ".run.ini");
}

// --- stats / subsample -----------------------------------------------------------

struct StatsArgs {
  std::string data;
  std::string out;  // optional: also write the summary json
};

void cmd_stats(const CLI::App& root, const StatsArgs& a) {
  const Dataset ds = load_dataset(a.data);
  const json j = stats_to_json(compute_stats(ds));
  std::cout << j.dump(2) << "\n";
  if (!a.out.empty()) {
    std::ofstream f(a.out, std::ios::trunc);
    ORYX_REQUIRE_MSG(f.good(), "cannot open " << a.out << " for writing");
    f << j.dump(2) << "\n";
    write_resolved_config(root, "stats", a.out + ".run.ini");
  }
}

struct SubsampleArgs {
  std::string data;
  std::string out;
  int64_t transitions = 0;
  uint64_t seed = 1;
};

void cmd_subsample(const CLI::App& root, const SubsampleArgs& a) {
  const Dataset ds = load_dataset(a.data);
  const Dataset sub = subsample_uniform(ds, a.transitions, a.seed);
  save_dataset(sub, a.out);
  print_stats(sub);
  write_resolved_config(root, "subsample", a.out + ".run.ini");
}

// --- train -----------------------------------------------------------------------

struct TrainArgs {
  std::string data;
  std::string out_dir = "run";
  int64_t updates = 20000;
  uint64_t seed = 1;
  HyperParams hp;
  ModelConfig model;
  std::string ablate;  // comma-separated component names
  int64_t eval_every = 0;     // 0: no snapshot evaluations
  int64_t eval_episodes = 32;
};

void cmd_train(const CLI::App& root, const TrainArgs& a) {
  const Dataset ds = load_dataset(a.data);
  fs::create_directories(a.out_dir);
  TrainConfig cfg;
  cfg.updates = a.updates;
  cfg.seed = a.seed;
  cfg.hp = a.hp;
  cfg.model = a.model;
  for (const std::string& s : split_list(a.ablate)) {
    if (s == "no-autoregressive")
      cfg.ablate.no_autoregressive = true;
    else if (s == "no-memory")
      cfg.ablate.no_memory = true;
    else if (s == "no-icq")
      cfg.ablate.no_icq = true;
    else
      ORYX_REQUIRE_MSG(false, "unknown ablation '" << s
                                  << "' (no-autoregressive, no-memory, no-icq)");
  }
  cfg.metrics_path = a.out_dir + "/metrics.csv";

  std::ofstream curve;
  if (a.eval_every > 0) {
    ORYX_REQUIRE_MSG(ds.meta.env == "tmaze", "snapshot evaluation needs a tmaze dataset");
    curve.open(a.out_dir + "/eval_curve.csv", std::ios::trunc);
    ORYX_REQUIRE_MSG(curve.good(), "cannot open " << a.out_dir << "/eval_curve.csv for writing");
    curve << "step,mean_return,success_rate\n";
    cfg.snapshot_every = a.eval_every;
    cfg.snapshot = [&](int64_t step, const ParamSet& p, const OryxModel& m) {
      TMazeEnv env = tmaze_from_info(ds.meta.env_info);
      const EvalReport r = evaluate(m, p, env, a.eval_episodes, a.seed * 1000003ull + step, true,
                                    cfg.ablate.no_icq);
      curve << step << ',' << r.mean_return << ',' << r.success_rate << '\n' << std::flush;
      std::cerr << "update " << step << ": eval mean return " << r.mean_return << "\n";
    };
  }

  const TrainOutcome out = run_training(ds, cfg);
  const std::string ckpt = a.out_dir + "/checkpoint.bin";
  save_checkpoint(ckpt, checkpoint_meta(out, ds, cfg.ablate, a.seed, a.updates), out.params);
  write_resolved_config(root, "train", a.out_dir + "/run.ini");
  std::cout << json{{"checkpoint", ckpt},
                    {"updates", a.updates},
                    {"seq_len_used", out.hp.seq_len},
                    {"final_critic_loss", out.last.critic_loss},
                    {"final_policy_loss", out.last.policy_loss},
                    {"empty_group_events", out.empty_group_events}}
                   .dump(2)
            << "\n";
}

// --- eval ------------------------------------------------------------------------

struct EvalArgs {
  std::string checkpoint;
  int64_t episodes = 320;
  uint64_t seed = 42;
  std::string seeds;  // comma-separated multi-seed pooling; overrides --seed
  std::string out;
  bool sample = false;
  double random_score = 0.0;
  double expert_score = 0.0;  // normalization runs iff the anchors differ
};

void cmd_eval(const CLI::App& root, const EvalArgs& a) {
  const Checkpoint ck = load_checkpoint(a.checkpoint);
  ORYX_REQUIRE_MSG(ck.meta.value("env", std::string()) == "tmaze",
                   "checkpoint has no rollout environment attached");
  const ModelConfig mc = model_config_from_json(ck.meta.at("model"));
  const AblationFlags ab = ablate_from_json(ck.meta.value("ablate", json::object()));
  const OryxModel model(mc);
  std::vector<uint64_t> seeds;
  for (const std::string& s : split_list(a.seeds)) seeds.push_back(std::stoull(s));
  if (seeds.empty()) seeds.push_back(a.seed);
  std::vector<EvalReport> parts;
  for (uint64_t s : seeds) {
    TMazeEnv env = tmaze_from_info(ck.meta.value("env_info", json::object()));
    parts.push_back(evaluate(model, ck.params, env, a.episodes, s, !a.sample, ab.no_icq));
  }
  EvalReport rep = merge_reports(parts);
  if (a.expert_score != a.random_score) {
    rep.normalized = norm_score(rep.mean_return, a.random_score, a.expert_score);
    rep.has_normalized = true;
  }
  std::cout << report_to_json(rep).dump(2) << "\n";
  if (!a.out.empty()) {
    save_report(rep, a.out);
    write_resolved_config(root, "eval", a.out + ".run.ini");
  }
}

// --- compare ---------------------------------------------------------------------

struct CompareArgs {
  std::string a;
  std::string b;
  double alpha = 0.05;
  std::string out;
};

void cmd_compare(const CLI::App& root, const CompareArgs& c) {
  const EvalReport ra = load_report(c.a);
  const EvalReport rb = load_report(c.b);
  const WelchResult w = welch_t_test(ra.returns, rb.returns);
  const json j{{"a", c.a},
               {"b", c.b},
               {"mean_a", ra.mean_return},
               {"mean_b", rb.mean_return},
               {"t", w.t},
               {"dof", w.dof},
               {"p", w.p},
               {"alpha", c.alpha},
               {"significant", w.p < c.alpha}};
  std::cout << j.dump(2) << "\n";
  if (!c.out.empty()) {
    std::ofstream f(c.out, std::ios::trunc);
    ORYX_REQUIRE_MSG(f.good(), "cannot open " << c.out << " for writing");
    f << j.dump(2) << "\n";
    write_resolved_config(root, "compare", c.out + ".run.ini");
  }
}

// --- export-curves ---------------------------------------------------------------

struct ExportArgs {
  std::vector<std::string> runs;
  std::string out = "curves.csv";
};

std::vector<std::string> split_csv_row(const std::string& line) {
  std::vector<std::string> out;
  std::string field;
  std::istringstream s(line);
  while (std::getline(s, field, ',')) out.push_back(field);
  if (!line.empty() && line.back() == ',') out.push_back("");
  return out;
}

void cmd_export_curves(const CLI::App& root, const ExportArgs& a) {
  const std::vector<std::string> cols = split_csv_row(kMetricsHeader);
  std::ofstream out(a.out, std::ios::trunc);
  ORYX_REQUIRE_MSG(out.good(), "cannot open " << a.out << " for writing");
  out << "run,step,metric,value\n";
  int64_t skipped = 0;
  std::vector<std::string> run_ids;
  for (const std::string& path : a.runs) {
    std::string run = fs::path(path).parent_path().filename().string();
    if (run.empty()) run = fs::path(path).stem().string();
    while (std::find(run_ids.begin(), run_ids.end(), run) != run_ids.end()) run += "+";
    run_ids.push_back(run);
    std::ifstream f(path);
    ORYX_REQUIRE_MSG(f.good(), "cannot open " << path);
    std::string line;
    ORYX_REQUIRE_MSG(std::getline(f, line) && line == kMetricsHeader,
                     "metrics schema mismatch in " << path);
    int64_t row = 1;
    while (std::getline(f, line)) {
      ++row;
      if (line.empty()) continue;
      const std::vector<std::string> fields = split_csv_row(line);
      ORYX_REQUIRE_MSG(fields.size() == cols.size(),
                       "metrics schema mismatch in " << path << " at row " << row);
      for (size_t k = 1; k < fields.size(); ++k) {
        if (fields[k].empty()) {
          ++skipped;
          continue;
        }
        out << run << ',' << fields[0] << ',' << cols[k] << ',' << fields[k] << '\n';
      }
    }
  }
  if (skipped > 0) std::cerr << "warning: omitted " << skipped << " empty metric cells\n";
  write_resolved_config(root, "export-curves", a.out + ".run.ini");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"offline multi-agent control: retention decoder + soft-constrained Q-learning"};
  app.option_defaults()->always_capture_default();
  app.require_subcommand(1);
  app.set_config("--config", "", "replay a saved resolved config");

  GenDataArgs g;
  CLI::App* gd = app.add_subcommand("gen-data", "record a scripted-policy dataset");
  gd->add_option("--env", g.env, "environment to record (tmaze)");
  gd->add_option("--policy", g.policy, "behavior policy")
      ->check(CLI::IsMember({"expert", "noisy", "random", "memoryless"}));
  gd->add_option("--epsilon", g.epsilon, "wrong-action rate of the noisy policy")
      ->check(CLI::Range(0.0, 1.0));
  gd->add_option("--transitions", g.transitions, "minimum transitions to record")
      ->check(CLI::PositiveNumber);
  gd->add_option("--seed", g.seed, "rng seed");
  gd->add_option("--out", g.out, "dataset file to write");
  gd->add_option("--stem", g.stem, "corridor length before the junction")
      ->check(CLI::PositiveNumber);
  gd->add_option("--arm", g.arm, "arm length either side of the junction")
      ->check(CLI::PositiveNumber);
  gd->add_option("--step-limit", g.step_limit, "navigation step budget")
      ->check(CLI::PositiveNumber);
  gd->callback([&] { cmd_gen_data(app, g); });

  StatsArgs st;
  CLI::App* sc = app.add_subcommand("stats", "summarize a dataset file");
  sc->add_option("--data", st.data, "dataset file")->required()->check(CLI::ExistingFile);
  sc->add_option("--out", st.out, "also write the summary json here");
  uint64_t stats_seed = 0;
  sc->add_option("--seed", stats_seed, "unused; accepted for uniformity");
  sc->callback([&] { cmd_stats(app, st); });

  SubsampleArgs su;
  CLI::App* sb = app.add_subcommand("subsample", "keep a random subset of whole episodes");
  sb->add_option("--data", su.data, "source dataset")->required()->check(CLI::ExistingFile);
  sb->add_option("--out", su.out, "dataset file to write")->required();
  sb->add_option("--transitions", su.transitions, "minimum transitions to keep")
      ->required()
      ->check(CLI::PositiveNumber);
  sb->add_option("--seed", su.seed, "rng seed");
  sb->callback([&] { cmd_subsample(app, su); });

  TrainArgs t;
  CLI::App* tr = app.add_subcommand("train", "run the offline update loop on a dataset");
  tr->add_option("--data", t.data, "training dataset")->required()->check(CLI::ExistingFile);
  tr->add_option("--out-dir", t.out_dir, "directory for checkpoint + metrics");
  tr->add_option("--updates", t.updates, "gradient updates")->check(CLI::NonNegativeNumber);
  tr->add_option("--seed", t.seed, "rng seed");
  tr->add_option("--lr", t.hp.lr, "adam step size");
  tr->add_option("--gamma", t.hp.gamma, "discount");
  tr->add_option("--alpha-critic", t.hp.alpha_critic, "critic softmax temperature");
  tr->add_option("--alpha-policy", t.hp.alpha_policy, "advantage-weight temperature");
  tr->add_option("--batch-size", t.hp.batch_size, "windows per update")
      ->check(CLI::PositiveNumber);
  tr->add_option("--seq-len", t.hp.seq_len, "window length in timesteps")
      ->check(CLI::PositiveNumber);
  tr->add_option("--target-sync", t.hp.target_sync, "hard target copy period")
      ->check(CLI::PositiveNumber);
  tr->add_option("--batch-scaling", t.hp.batch_scaling,
                 "multiply the critic softmax by the group size");
  tr->add_option("--permute-agents", t.hp.permute_agents, "fresh agent order every update");
  tr->add_option("--per-agent-grouping", t.hp.per_agent_grouping,
                 "partition the critic softmax per agent slot");
  tr->add_option("--cumulative-advantage", t.hp.cumulative_advantage,
                 "sum advantages over preceding agents");
  tr->add_option("--embed", t.model.embed, "embedding width")->check(CLI::PositiveNumber);
  tr->add_option("--blocks", t.model.blocks, "decoder blocks")->check(CLI::PositiveNumber);
  tr->add_option("--heads", t.model.heads, "retention heads")->check(CLI::PositiveNumber);
  tr->add_option("--ffn", t.model.ffn, "feed-forward width")->check(CLI::PositiveNumber);
  tr->add_option("--kappa-scale", t.model.kappa_scale, "decay schedule scale")
      ->check(CLI::Range(0.0, 1.0));
  tr->add_option("--ablate", t.ablate,
                 "comma-separated components to disable: no-autoregressive, no-memory, no-icq");
  tr->add_option("--eval-every", t.eval_every, "snapshot evaluation period (0: off)")
      ->check(CLI::NonNegativeNumber);
  tr->add_option("--eval-episodes", t.eval_episodes, "episodes per snapshot evaluation")
      ->check(CLI::PositiveNumber);
  tr->callback([&] { cmd_train(app, t); });

  EvalArgs e;
  CLI::App* ev = app.add_subcommand("eval", "greedy rollouts from a checkpoint");
  ev->add_option("--checkpoint", e.checkpoint, "trained checkpoint")
      ->required()
      ->check(CLI::ExistingFile);
  ev->add_option("--episodes", e.episodes, "episodes per seed")->check(CLI::PositiveNumber);
  ev->add_option("--seed", e.seed, "rng seed");
  ev->add_option("--seeds", e.seeds, "comma-separated seeds; pools rollouts across them");
  ev->add_option("--out", e.out, "report json to write");
  ev->add_flag("--sample", e.sample, "sample the policy instead of greedy argmax");
  CLI::Option* rs =
      ev->add_option("--random-score", e.random_score, "normalization floor (off while == ceiling)");
  CLI::Option* es =
      ev->add_option("--expert-score", e.expert_score, "normalization ceiling (off while == floor)");
  rs->needs(es);
  es->needs(rs);
  ev->callback([&] { cmd_eval(app, e); });

  CompareArgs c;
  CLI::App* cp = app.add_subcommand("compare", "two-sided unequal-variance t-test on two reports");
  cp->add_option("--a", c.a, "first report json")->required()->check(CLI::ExistingFile);
  cp->add_option("--b", c.b, "second report json")->required()->check(CLI::ExistingFile);
  cp->add_option("--alpha", c.alpha, "significance level")->check(CLI::Range(0.0, 1.0));
  cp->add_option("--out", c.out, "also write the verdict json here");
  uint64_t compare_seed = 0;
  cp->add_option("--seed", compare_seed, "unused; accepted for uniformity");
  cp->callback([&] { cmd_compare(app, c); });

  ExportArgs x;
  CLI::App* xc = app.add_subcommand("export-curves", "reshape metrics CSVs to long format");
  xc->add_option("runs", x.runs, "metrics.csv files")->required()->check(CLI::ExistingFile);
  xc->add_option("--out", x.out, "merged CSV to write");
  uint64_t export_seed = 0;
  xc->add_option("--seed", export_seed, "unused; accepted for uniformity");
  xc->callback([&] { cmd_export_curves(app, x); });

  try {
    CLI11_PARSE(app, argc, argv);
  } catch (const LoadError& err) {
    std::cerr << "error: " << err.what() << "\n";
    return 2;
  } catch (const std::exception& err) {
    std::cerr << "error: " << err.what() << "\n";
    return 1;
  }
  return 0;
}
