#pragma once

#include "sparsereg/datasets.hpp"
#include "sparsereg/envs.hpp"
#include "sparsereg/mlp.hpp"

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <limits>
#include <map>
#include <string>
#include <vector>

namespace sparsereg {

inline constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

/// One evaluation point. Loss columns hold the most recent update's losses (NaN before any).
struct CurveRow {
  std::int64_t step = 0;
  double return_mean = 0.0;
  double return_std = 0.0;
  double normalized_score = 0.0;
  double train_mse = 0.0;
  double val_mse = 0.0;
  double actor_loss = kNaN;
  double critic_loss = kNaN;
  double value_loss = kNaN;
  double global_sparsity = 0.0;
  double mask_change = 0.0;
  std::vector<double> layer_sparsity;

  friend bool operator==(const CurveRow&, const CurveRow&) = default;
};

class LearningCurve {
 public:
  LearningCurve() = default;
  explicit LearningCurve(std::vector<std::string> sparsity_columns) : sparsity_columns_(std::move(sparsity_columns)) {}

  /// Rejects rows whose step does not strictly increase or whose sparsity width is wrong.
  void append(CurveRow row);

  const std::vector<CurveRow>& rows() const { return rows_; }
  const std::vector<std::string>& sparsity_columns() const { return sparsity_columns_; }
  bool empty() const { return rows_.empty(); }
  const CurveRow& back() const { return rows_.back(); }
  std::vector<std::int64_t> steps() const;

  /// Fixed columns first, then one column per entry of sparsity_columns().
  void write_csv(std::ostream& out) const;
  void write_csv(const std::filesystem::path& path) const;
  static LearningCurve read_csv(const std::filesystem::path& path);

 private:
  std::vector<std::string> sparsity_columns_;
  std::vector<CurveRow> rows_;
};

/// Column names written before the sparsity columns.
const std::vector<std::string>& curve_fixed_columns();

struct ScoreBaselines {
  std::string env_name;
  double random_score = 0.0;
  double expert_score = 0.0;
};

/// Maps a batch of observations [n x obs_dim] to actions [n x act_dim].
using BatchPolicy = std::function<Matrix(const Matrix&)>;

struct ReturnStats {
  double mean = 0.0;
  double std = 0.0;  // population
};

/// Runs n_episodes in lockstep; episode i resets with derive_seed(seed, i).
ReturnStats evaluate_policy(const BatchPolicy& policy, const Environment& env, int n_episodes, std::uint64_t seed);
ReturnStats evaluate_policy(const Mlp& actor, const Environment& env, int n_episodes, std::uint64_t seed);

/// The scripted expert as a deterministic batch policy.
BatchPolicy expert_batch_policy(const Environment& env);
/// Uniform random actions drawn from its own generator.
BatchPolicy random_batch_policy(const Environment& env, std::uint64_t seed);

double normalized_score(double score, const ScoreBaselines& baselines);

/// Monte-Carlo estimate of the random and expert returns.
ScoreBaselines estimate_baselines(const Environment& env, int n_episodes, std::uint64_t seed);

/// Baselines pinned from estimate_baselines(env, kBaselineEpisodes, kBaselineSeed).
inline constexpr int kBaselineEpisodes = 10000;
inline constexpr std::uint64_t kBaselineSeed = 20240601;
ScoreBaselines pinned_baselines(const std::string& env_name);

/// Mean over every transition and action dimension of (pi(s) - a)^2, exact over the split.
double action_mse(const Mlp& actor, const OfflineDataset& split);

/// Linear-interpolated quantiles (numpy's default rule).
double quantile(std::vector<double> values, double q);

struct RunCurve {
  std::string env_name;
  std::uint64_t seed = 0;
  LearningCurve curve;
};

struct AggregateCurve {
  std::vector<std::int64_t> steps;
  std::vector<double> mean_normalized;
  /// min, 25%, median, 75%, max of the final normalized score over all runs.
  std::array<double, 5> final_quantiles{};
};

/// Per step: mean normalized return across envs within a seed, then across seeds.
AggregateCurve aggregate(const std::vector<RunCurve>& curves, const std::map<std::string, ScoreBaselines>& baselines);

}  // namespace sparsereg
