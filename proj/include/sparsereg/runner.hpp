#pragma once

#include "sparsereg/algorithms.hpp"
#include "sparsereg/datasets.hpp"
#include "sparsereg/eval_metrics.hpp"
#include "sparsereg/mlp.hpp"

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace sparsereg {

/// Flat "section.key" -> value view of a config file or of command-line overrides.
using KeyValues = std::map<std::string, std::string>;

/// Parses "[section]" headers and "key = value" lines; '#' and ';' start comments.
KeyValues parse_key_values(const std::string& text, const std::string& origin = "<config>");
KeyValues read_key_values(const std::filesystem::path& path);
/// `overrides` wins over `base`.
KeyValues merge(KeyValues base, const KeyValues& overrides);

struct DatasetSource {
  /// Stem of a saved dataset; when set, generation fields are ignored.
  std::optional<std::filesystem::path> path;
  std::optional<std::filesystem::path> validation_path;
  /// Fraction held out when a loaded dataset has no separate validation file.
  double validation_fraction = 0.2;
  DatasetQuality quality = DatasetQuality::expert;
  /// Training transitions.
  std::size_t size = 10000;
  /// Validation transitions; defaults to size / 4.
  std::optional<std::size_t> validation_size;
  std::uint64_t gen_seed = 0;
};

struct RunConfig {
  std::string env = "pointmass";
  AlgorithmKind algorithm = AlgorithmKind::bc;
  DatasetSource dataset;
  Regularizer regularizer;
  /// Refresh schedule follows total_steps unless set explicitly.
  bool sparse_schedule_explicit = false;
  std::vector<std::size_t> hidden_dims{256, 256};
  AlgoHyper hyper;
  std::int64_t total_steps = 20000;
  std::int64_t eval_interval = 100;
  std::vector<std::uint64_t> seeds{0, 1, 2};
  int eval_episodes = 10;
  std::filesystem::path output_dir = "runs/default";
  bool checkpoint = true;
  /// Seeds trained concurrently.
  int jobs = 1;

  /// Throws ConfigError naming every violated field.
  void validate() const;
  /// Canonical key-value form; parsing it back gives the same config.
  KeyValues to_key_values() const;
  AgentOptions agent_options() const;
};

/// Builds a config from defaults plus `kv`. Unknown keys and bad values are all reported at once.
RunConfig config_from_key_values(const KeyValues& kv);
std::string to_snapshot(const RunConfig& cfg);

struct RunData {
  OfflineDataset train;
  OfflineDataset validation;
};

RunData resolve_dataset(const RunConfig& cfg);

struct SeedResult {
  std::uint64_t seed = 0;
  bool ok = true;
  std::string error;
  std::int64_t steps_completed = 0;
  std::filesystem::path curve_path;
  double final_return_mean = kNaN;
  double final_return_std = kNaN;
  double final_normalized = kNaN;
  double final_train_mse = kNaN;
  double final_val_mse = kNaN;
  double min_val_mse = kNaN;
  double wall_seconds = 0.0;
};

struct RunRecord {
  RunConfig config;
  std::vector<SeedResult> seeds;
  /// Mean and population std of final_normalized over successful seeds.
  double normalized_mean = kNaN;
  double normalized_std = kNaN;
  double wall_seconds = 0.0;

  bool all_ok() const;
};

/// Summary statistics recomputed from per-seed results.
void summarize(RunRecord& record);

/// Trains every seed, writing curve_<seed>.csv, summary.json, config.snapshot and
/// (optionally) actor_final_<seed> checkpoints into cfg.output_dir.
RunRecord run_training(const RunConfig& cfg, std::ostream* log = nullptr);

/// Writes summary.json for `record` into its output directory.
void write_summary(const RunRecord& record, const std::filesystem::path& dataset_reference);

/// Saves an actor as `<stem>.manifest.json` + `<stem>.bin`.
void save_actor(const Mlp& actor, const std::string& env_name, const std::filesystem::path& stem);
struct ActorCheckpoint {
  std::string env_name;
  Mlp actor;
};
ActorCheckpoint load_actor(const std::filesystem::path& stem);

/// Axes of a sweep; empty axes keep the base config's value.
struct SweepGrid {
  std::vector<double> sparsity;
  std::vector<std::size_t> size;
  std::vector<RegularizerKind> regularizer;
  std::vector<AlgorithmKind> algorithm;
  std::vector<SparsityMode> mode;
};

/// Reads comma-separated lists from "sweep.<axis>" keys.
SweepGrid grid_from_key_values(const KeyValues& kv);

struct SweepCell {
  std::string label;
  RunConfig config;
  std::optional<double> sparsity;
  std::size_t size = 0;
  bool ok = false;
  std::string error;
  RunRecord record;
};

/// Expands the grid in axis order (size, algorithm, regularizer, mode, sparsity).
/// Sparsity values apply only to sparse cells; a non-sparse regularizer yields one cell.
std::vector<SweepCell> expand_grid(const RunConfig& base, const SweepGrid& grid);

/// Runs every cell into base.output_dir/<label>, then writes sweep.csv and table.csv.
std::vector<SweepCell> run_sweep(const RunConfig& base, const SweepGrid& grid, std::ostream* log = nullptr);

/// "mean±std" with shortest round-trip formatting.
std::string format_cell(double mean, double std);

// Exit codes shared by the command-line tool.
inline constexpr int kExitOk = 0;
inline constexpr int kExitFailure = 1;
inline constexpr int kExitConfig = 2;
inline constexpr int kExitDivergence = 3;

}  // namespace sparsereg
