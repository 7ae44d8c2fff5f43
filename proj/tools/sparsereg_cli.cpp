// Command-line front end: gen-data, train, sweep, eval.
#include "sparsereg/errors.hpp"
#include "sparsereg/runner.hpp"
#include "sparsereg/runtime.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <cmath>
#include <deque>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

namespace fs = std::filesystem;
using namespace sparsereg;

namespace {

// Flags that map one-to-one onto config keys. Only flags actually given override the file.
struct ConfigFlags {
  std::string config_file;
  std::vector<std::pair<std::string, std::string>> values;
  std::vector<std::string> sets;
  std::vector<std::pair<CLI::Option*, std::string>> bound;
  std::deque<std::string> storage;  // stable addresses for CLI11

  void add(CLI::App& app, const std::string& flag, const std::string& key, const std::string& help) {
    storage.emplace_back();
    bound.emplace_back(app.add_option(flag, storage.back(), help), key);
  }

  KeyValues collect() const {
    KeyValues kv;
    if (!config_file.empty()) {
      try {
        kv = read_key_values(config_file);
      } catch (const ParseError& e) {
        throw ConfigError(e.what());
      }
    }
    KeyValues over;
    for (std::size_t i = 0; i < bound.size(); ++i)
      if (bound[i].first->count()) over[bound[i].second] = storage[i];
    for (const auto& s : sets) {
      const auto eq = s.find('=');
      if (eq == std::string::npos || eq == 0) throw ConfigError("--set expects section.key=value, got '" + s + "'");
      over[s.substr(0, eq)] = s.substr(eq + 1);
    }
    return merge(std::move(kv), over);
  }
};

void add_run_flags(CLI::App& cmd, ConfigFlags& f) {
  cmd.add_option("-c,--config", f.config_file, "Config file (sectioned key = value)");
  f.add(cmd, "--env", "run.env", "Environment: pointmass, pendulum");
  f.add(cmd, "--algorithm", "run.algorithm", "bc, td3bc, iql");
  f.add(cmd, "--regularizer", "regularizer.kind",
        "none, sparse, l1, dropout, weight_decay, layer_norm, spectral_norm");
  f.add(cmd, "--sparsity", "regularizer.sparsity", "Fraction of weights masked (sparse)");
  f.add(cmd, "--mode", "regularizer.mode", "Mask schedule: spu or sfi");
  f.add(cmd, "--refresh-interval", "regularizer.refresh_interval", "Steps between mask refreshes");
  f.add(cmd, "--refresh-cutoff", "regularizer.refresh_cutoff", "Last step at which masks refresh");
  f.add(cmd, "--l1", "regularizer.l1_lambda", "L1 coefficient");
  f.add(cmd, "--dropout", "regularizer.dropout_rate", "Dropout rate");
  f.add(cmd, "--weight-decay", "regularizer.weight_decay", "AdamW decay coefficient");
  f.add(cmd, "--hidden-dims", "run.hidden_dims", "Comma-separated hidden widths");
  f.add(cmd, "--total-steps", "run.total_steps", "Gradient steps per seed");
  f.add(cmd, "--eval-interval", "run.eval_interval", "Steps between evaluations");
  f.add(cmd, "--seeds", "run.seeds", "Comma-separated seeds");
  f.add(cmd, "--eval-episodes", "run.eval_episodes", "Episodes per evaluation");
  f.add(cmd, "--dataset", "dataset.path", "Stem of a saved dataset");
  f.add(cmd, "--validation-dataset", "dataset.validation_path", "Stem of a saved validation dataset");
  f.add(cmd, "--quality", "dataset.quality", "Generated data: expert, medium, medium_replay, expert_replay");
  f.add(cmd, "--size", "dataset.size", "Generated training transitions");
  f.add(cmd, "--validation-size", "dataset.validation_size", "Generated validation transitions");
  f.add(cmd, "--gen-seed", "dataset.seed", "Generator seed");
  f.add(cmd, "-o,--output", "run.output_dir", "Output directory");
  f.add(cmd, "-j,--jobs", "run.jobs", "Seeds trained concurrently");
  f.add(cmd, "--checkpoint", "run.checkpoint", "Write actor checkpoints (true/false)");
  cmd.add_option("--set", f.sets, "Raw override, section.key=value (repeatable)");
}

int run_gen_data(const std::string& env_name, const std::string& quality, long long size, std::uint64_t seed,
                 const std::string& out, bool force) {
  if (size <= 0) throw UsageError("--size must be positive");
  const auto env = make_env(env_name);
  const auto q = parse_dataset_quality(quality);
  const fs::path stem = out.empty() ? fs::path(env_name + "_" + quality + "_" + std::to_string(size) + "_" +
                                               std::to_string(seed))
                                    : fs::path(out);
  if (!force && (fs::exists(manifest_path(stem)) || fs::exists(binary_path(stem))))
    throw UsageError(manifest_path(stem).string() + " already exists; pass --force to overwrite");
  if (!stem.parent_path().empty()) fs::create_directories(stem.parent_path());
  const auto ds = generate(*env, q, static_cast<std::size_t>(size), seed);
  save(ds, stem);

  std::vector<double> returns;
  std::size_t offset = 0;
  for (const auto& [id, len] : ds.trajectories()) {
    double r = 0.0;
    for (std::size_t i = 0; i < len; ++i) r += ds[offset + i].r;
    returns.push_back(r);
    offset += len;
  }
  double mean = 0.0, var = 0.0;
  for (double r : returns) mean += r;
  mean /= static_cast<double>(returns.size());
  for (double r : returns) var += (r - mean) * (r - mean);
  const auto [lo, hi] = std::minmax_element(returns.begin(), returns.end());
  std::cout << "wrote " << manifest_path(stem).string() << " and " << binary_path(stem).string() << "\n"
            << "transitions " << ds.size() << ", trajectories " << returns.size() << "\n"
            << "trajectory return mean " << mean << ", std " << std::sqrt(var / static_cast<double>(returns.size()))
            << ", min " << *lo << ", max " << *hi << "\n";
  return kExitOk;
}

int run_eval(const std::string& checkpoint, std::string env_name, int episodes, std::uint64_t seed) {
  if (episodes < 1) throw UsageError("--episodes must be positive");
  const auto ck = load_actor(checkpoint);
  if (env_name.empty()) env_name = ck.env_name;
  const auto env = make_env(env_name);
  const auto stats = evaluate_policy(ck.actor, *env, episodes, seed);
  const auto score = normalized_score(stats.mean, pinned_baselines(env_name));
  std::cout << "env " << env_name << ", episodes " << episodes << "\n"
            << "return mean " << stats.mean << ", std " << stats.std << "\n"
            << "normalized score " << score << "\n";
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  tune_allocator();
  CLI::App app{"Sparse-mask regularization for offline RL on toy control tasks"};
  app.require_subcommand(1);

  auto* gen = app.add_subcommand("gen-data", "Generate an offline dataset");
  std::string g_env = "pointmass", g_quality = "expert", g_out;
  long long g_size = 10000;
  std::uint64_t g_seed = 0;
  bool g_force = false;
  gen->add_option("--env", g_env, "Environment")->capture_default_str();
  gen->add_option("--quality", g_quality, "expert, medium, medium_replay, expert_replay")->capture_default_str();
  gen->add_option("--size", g_size, "Transitions")->capture_default_str();
  gen->add_option("--seed", g_seed, "Generator seed")->capture_default_str();
  gen->add_option("-o,--out", g_out, "Output stem (writes <stem>.manifest.json and <stem>.bin)");
  gen->add_flag("--force", g_force, "Overwrite existing files");

  auto* train_cmd = app.add_subcommand("train", "Train every seed of one configuration");
  ConfigFlags train_flags;
  add_run_flags(*train_cmd, train_flags);

  auto* sweep = app.add_subcommand("sweep", "Run a grid of configurations");
  ConfigFlags sweep_flags;
  add_run_flags(*sweep, sweep_flags);
  sweep_flags.add(*sweep, "--sparsities", "sweep.sparsity", "Grid axis: comma-separated sparsities");
  sweep_flags.add(*sweep, "--sizes", "sweep.size", "Grid axis: comma-separated dataset sizes");
  sweep_flags.add(*sweep, "--regularizers", "sweep.regularizer", "Grid axis: regularizers");
  sweep_flags.add(*sweep, "--algorithms", "sweep.algorithm", "Grid axis: algorithms");
  sweep_flags.add(*sweep, "--modes", "sweep.mode", "Grid axis: sfi,spu");

  auto* eval = app.add_subcommand("eval", "Evaluate a saved actor checkpoint");
  std::string e_ckpt, e_env;
  int e_episodes = 10;
  std::uint64_t e_seed = 0;
  eval->add_option("checkpoint", e_ckpt, "Checkpoint stem (e.g. runs/x/actor_final_0)")->required();
  eval->add_option("--env", e_env, "Environment (defaults to the checkpoint's)");
  eval->add_option("--episodes", e_episodes, "Episodes")->capture_default_str();
  eval->add_option("--seed", e_seed, "Evaluation seed")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitConfig;
  }

  try {
    if (*gen) return run_gen_data(g_env, g_quality, g_size, g_seed, g_out, g_force);
    if (*train_cmd) {
      const auto cfg = config_from_key_values(train_flags.collect());
      const auto record = run_training(cfg, &std::cout);
      std::cout << "normalized score " << record.normalized_mean << " +/- " << record.normalized_std << "\n"
                << "results in " << cfg.output_dir.string() << "\n";
      return record.all_ok() ? kExitOk : kExitDivergence;
    }
    if (*sweep) {
      const auto kv = sweep_flags.collect();
      const auto base = config_from_key_values(kv);
      const auto cells = run_sweep(base, grid_from_key_values(kv), &std::cout);
      bool all_ok = true;
      for (const auto& c : cells) {
        std::cout << c.label << ": " << (c.ok ? format_cell(c.record.normalized_mean, c.record.normalized_std) : "failed: " + c.error)
                  << "\n";
        all_ok = all_ok && c.ok;
      }
      std::cout << "table in " << (base.output_dir / "table.csv").string() << "\n";
      return all_ok ? kExitOk : kExitDivergence;
    }
    if (*eval) return run_eval(e_ckpt, e_env, e_episodes, e_seed);
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const DivergenceError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitDivergence;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitFailure;
  }
  return kExitFailure;
}
