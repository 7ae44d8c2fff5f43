#pragma once

#include "sparsereg/autograd.hpp"
#include "sparsereg/datasets.hpp"
#include "sparsereg/mask.hpp"
#include "sparsereg/mlp.hpp"

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace sparsereg {

/// Connection sensitivity |theta_q * dL/dtheta_q| for every entry of one tensor.
struct SaliencyScore {
  std::vector<double> scores;
};

enum class SparsityMode {
  sfi,  ///< masks chosen once at initialization
  spu,  ///< masks recomputed every refresh_interval steps up to refresh_cutoff
};

struct SparsityConfig {
  /// Fraction of parameters forced to zero.
  double sparsity = 0.95;
  std::int64_t refresh_interval = 100;
  std::int64_t refresh_cutoff = 4000;
  SparsityMode mode = SparsityMode::spu;
  std::size_t score_batch_size = 256;
  /// Rank biases together with weights; when false biases keep an all-ones mask.
  bool mask_biases = true;
  /// Reuse the first saliency batch on every refresh instead of resampling.
  bool fixed_score_batch = false;

  void validate() const;
  /// Interval and cutoff at 1/200 and 1/5 of a run's length (at least one step each).
  static SparsityConfig for_run(std::int64_t total_steps, double sparsity, SparsityMode mode);
};

using BatchLoss = std::function<Var(Tape&, const TransitionBatch&)>;

/// |theta * grad| for each tensor, from gradients already stored in the tensors.
std::vector<SaliencyScore> saliency_from_gradients(std::span<const Tensor* const> params);

/// One forward/backward of `loss` on `batch`, scored against `net`'s parameters.
/// Gradients of `net` are zeroed before and after; parameter values are not touched.
std::vector<SaliencyScore> compute_saliency(Mlp& net, const BatchLoss& loss, const TransitionBatch& batch);

/// Keeps the round((1 - sparsity) * P) highest scores across all tensors, P being the number of
/// rankable entries. Ties go to the lower flat index. Tensors flagged unrankable get all-ones masks.
std::vector<Mask> top_k_mask(std::span<const SaliencyScore> scores, double sparsity,
                             const std::vector<bool>& rankable = {});

/// theta <- theta * m; dropped entries are written as +0.0.
void apply_mask(std::span<Tensor* const> params, std::span<const Mask> masks);
void apply_mask(Mlp& net, std::span<const Mask> masks);

/// Masks a target network with its source's masks.
void propagate_to_target(std::span<const Mask> source_masks, Mlp& target);

/// A network whose mask is owned by the sparse regularizer, plus the targets sharing that mask.
struct ManagedNetwork {
  std::string name;
  Mlp* net = nullptr;
  std::vector<Mlp*> targets;
  BatchLoss loss;
  std::vector<Mask>* masks = nullptr;
};

/// Scores every managed network on `batch` first, then builds and applies all masks.
void refresh_masks(std::span<ManagedNetwork> nets, const TransitionBatch& batch, const SparsityConfig& cfg);

/// True when a refresh is scheduled after `step` completed gradient steps (step 0 excluded).
bool refresh_due(std::int64_t step, const SparsityConfig& cfg);

/// Refreshes all masks when scheduled; `draw_batch` is called only if a refresh fires.
bool maybe_refresh(std::int64_t step, const SparsityConfig& cfg, std::span<ManagedNetwork> nets,
                   const std::function<TransitionBatch()>& draw_batch);

struct SparsityReport {
  std::vector<double> tensor_sparsity;
  double global_sparsity = 0.0;
  /// Hamming distance to the previous masks divided by the parameter count.
  std::optional<double> change_fraction;
};

SparsityReport layer_sparsity_report(std::span<const Mask> masks, std::span<const Mask> previous = {});

}  // namespace sparsereg
