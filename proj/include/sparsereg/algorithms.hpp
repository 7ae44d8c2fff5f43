#pragma once

#include "sparsereg/datasets.hpp"
#include "sparsereg/envs.hpp"
#include "sparsereg/errors.hpp"
#include "sparsereg/eval_metrics.hpp"
#include "sparsereg/mask.hpp"
#include "sparsereg/mlp.hpp"
#include "sparsereg/optim.hpp"
#include "sparsereg/random.hpp"
#include "sparsereg/sparse_reg.hpp"

#include <array>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace sparsereg {

enum class AlgorithmKind { bc, td3bc, iql };

AlgorithmKind parse_algorithm(std::string_view name);
std::string to_string(AlgorithmKind kind);

struct AlgoHyper {
  double gamma = 0.99;
  double tau = 5e-3;
  int policy_freq = 2;
  double lr = 1e-3;
  std::size_t batch = 256;
  double td3bc_alpha = 2.5;
  double iql_expectile = 0.7;
  double iql_beta = 3.0;
  double awr_clip = 100.0;
  /// Target-policy smoothing, as fractions of the action bound.
  double policy_noise = 0.2;
  double noise_clip = 0.5;
  /// |loss| above this aborts the run.
  double divergence_threshold = 1e8;

  void validate() const;
};

enum class RegularizerKind { none, sparse, l1, dropout, weight_decay, layer_norm, spectral_norm };

RegularizerKind parse_regularizer(std::string_view name);
std::string to_string(RegularizerKind kind);

struct Regularizer {
  RegularizerKind kind = RegularizerKind::none;
  SparsityConfig sparse;
  double l1_lambda = 1e-4;
  double dropout_rate = 0.1;
  double weight_decay = OptimizerState::kDefaultWeightDecay;

  void validate() const;
};

struct AgentOptions {
  AlgorithmKind algorithm = AlgorithmKind::bc;
  std::vector<std::size_t> hidden{256, 256};
  AlgoHyper hyper;
  Regularizer regularizer;
};

/// Masks for every trainable network; targets reuse their source's masks.
struct NetworkMasks {
  std::vector<Mask> actor;
  std::array<std::vector<Mask>, 2> critics;
  std::vector<Mask> value;
};

/// Networks, masks, optimizers and random streams of one training run.
struct AgentState {
  AgentOptions options;
  EnvSpec env;

  Mlp actor;
  std::optional<Mlp> target_actor;  // TD3+BC
  std::vector<Mlp> critics;         // twin Q for TD3+BC and IQL
  std::vector<Mlp> target_critics;
  std::optional<Mlp> value;  // IQL

  NetworkMasks masks;
  bool masks_initialized = false;

  OptimizerState actor_opt;
  std::vector<OptimizerState> critic_opts;
  std::optional<OptimizerState> value_opt;

  std::int64_t step = 0;
  std::int64_t actor_updates = 0;
  /// Mini-batches, smoothing noise and dropout.
  Rng rng;
  /// Saliency batches and the noise used inside saliency losses.
  Rng score_rng;
  std::optional<TransitionBatch> fixed_score_batch;

  static AgentState create(const EnvSpec& env, AgentOptions options, std::uint64_t seed);

  bool sparse() const { return options.regularizer.kind == RegularizerKind::sparse; }
};

struct UpdateLosses {
  double actor = kNaN;
  double critic = kNaN;
  double value = kNaN;
};

/// One step on mean ||pi(s) - a||^2 (plus L1 when configured). Returns the pre-step BC loss.
double bc_update(AgentState& agent, const TransitionBatch& batch);
/// Critic step every call; actor and polyak step every policy_freq calls.
UpdateLosses td3bc_update(AgentState& agent, const TransitionBatch& batch);
/// Expectile value step, TD critic step, advantage-weighted actor step, then polyak on target critics.
UpdateLosses iql_update(AgentState& agent, const TransitionBatch& batch);
UpdateLosses update(AgentState& agent, const TransitionBatch& batch);

/// Asymmetric squared error |tau - 1(u < 0)| u^2 with u = target - v, averaged over rows.
Var expectile_loss(const Var& v, const Matrix& targets, double expectile);
/// exp(beta * advantage) clipped to [0, clip]; NaN maps to 0.
Eigen::VectorXd awr_weights(const Matrix& advantage, double beta, double clip);

// Per-network objectives; used both for updates and for saliency scoring.
Var bc_actor_loss(AgentState& agent, Tape& tape, const TransitionBatch& batch);
Var td3bc_critic_loss(AgentState& agent, Tape& tape, const TransitionBatch& batch, std::size_t critic, Rng& noise_rng);
Var td3bc_actor_loss(AgentState& agent, Tape& tape, const TransitionBatch& batch);
Var iql_value_loss(AgentState& agent, Tape& tape, const TransitionBatch& batch);
Var iql_critic_loss(AgentState& agent, Tape& tape, const TransitionBatch& batch, std::size_t critic);
Var iql_actor_loss(AgentState& agent, Tape& tape, const TransitionBatch& batch);

/// The networks the sparse regularizer manages, each with its own objective.
std::vector<ManagedNetwork> managed_networks(AgentState& agent);

/// Zeroes masked entries of every network and target (no-op without masks).
void enforce_masks(AgentState& agent);

/// Names of the per-tensor sparsity columns ("actor.w0", "critic1.b2", ...).
std::vector<std::string> sparsity_column_names(const AgentState& agent);

struct EvalPoint {
  double return_mean = 0.0;
  double return_std = 0.0;
  double normalized_score = 0.0;
  double train_mse = 0.0;
  double val_mse = 0.0;
};

using EvalHook = std::function<EvalPoint(const AgentState&)>;

struct TrainOptions {
  std::int64_t total_steps = 20000;
  std::int64_t eval_interval = 100;
};

/// Raised when an update diverges; carries the curve recorded so far.
class TrainingAborted : public DivergenceError {
 public:
  TrainingAborted(const std::string& what, LearningCurve partial, std::int64_t step)
      : DivergenceError(what), partial_(std::move(partial)), step_(step) {}
  const LearningCurve& partial_curve() const { return partial_; }
  std::int64_t step() const { return step_; }

 private:
  LearningCurve partial_;
  std::int64_t step_;
};

/// Mask refresh -> batch -> update, evaluating at step 0 and every eval_interval steps.
LearningCurve train(AgentState& agent, const OfflineDataset& train_set, const TrainOptions& options,
                    const EvalHook& eval_hook);

}  // namespace sparsereg
