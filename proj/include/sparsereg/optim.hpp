#pragma once

#include "sparsereg/autograd.hpp"
#include "sparsereg/mask.hpp"
#include "sparsereg/tensor.hpp"

#include <cstdint>
#include <span>
#include <vector>

namespace sparsereg {

enum class OptimizerKind { adam, adamw };

struct AdamOptions {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Adam / AdamW moments for one list of parameter tensors.
struct OptimizerState {
  static constexpr double kDefaultWeightDecay = 0.01;

  OptimizerKind kind = OptimizerKind::adam;
  double weight_decay = 0.0;
  AdamOptions options;
  std::uint64_t step_count = 0;
  std::vector<std::vector<double>> first_moment;
  std::vector<std::vector<double>> second_moment;

  static OptimizerState adam(std::span<Tensor* const> params, AdamOptions options = {});
  static OptimizerState adamw(std::span<Tensor* const> params, AdamOptions options = {},
                              double weight_decay = kDefaultWeightDecay);
};

/// One Adam (or decoupled-decay AdamW) step. Entries whose mask bit is 0 are left
/// untouched, so a zero stays bitwise zero.
void adam_step(OptimizerState& state, std::span<Tensor* const> params, std::span<const Mask> masks = {});

enum class PenaltyKind { none, l1 };

struct Penalty {
  PenaltyKind kind = PenaltyKind::none;
  double lambda = 0.0;

  static Penalty none() { return {}; }
  static Penalty l1(double lambda) { return {PenaltyKind::l1, lambda}; }
};

/// base + lambda * sum |theta| over `params` for L1, base otherwise.
Var regularized_loss(const Var& base, std::span<Tensor* const> params, const Penalty& penalty);

}  // namespace sparsereg
