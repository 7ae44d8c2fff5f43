#include "sparsereg/optim.hpp"

#include "sparsereg/errors.hpp"

#include <cmath>

namespace sparsereg {

namespace {

OptimizerState make_state(OptimizerKind kind, std::span<Tensor* const> params, AdamOptions options, double decay) {
  OptimizerState state;
  state.kind = kind;
  state.options = options;
  state.weight_decay = decay;
  for (const auto* p : params) {
    state.first_moment.emplace_back(p->size(), 0.0);
    state.second_moment.emplace_back(p->size(), 0.0);
  }
  return state;
}

}  // namespace

OptimizerState OptimizerState::adam(std::span<Tensor* const> params, AdamOptions options) {
  return make_state(OptimizerKind::adam, params, options, 0.0);
}

OptimizerState OptimizerState::adamw(std::span<Tensor* const> params, AdamOptions options, double weight_decay) {
  if (weight_decay < 0.0) throw ConfigError("weight decay must be non-negative");
  return make_state(OptimizerKind::adamw, params, options, weight_decay);
}

void adam_step(OptimizerState& state, std::span<Tensor* const> params, std::span<const Mask> masks) {
  if (state.first_moment.size() != params.size() || state.second_moment.size() != params.size())
    throw DimensionError("optimizer holds moments for " + std::to_string(state.first_moment.size()) +
                         " tensors, got " + std::to_string(params.size()));
  if (!masks.empty() && masks.size() != params.size())
    throw DimensionError("one mask per parameter tensor required");
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (state.first_moment[i].size() != params[i]->size() || state.second_moment[i].size() != params[i]->size())
      throw DimensionError("optimizer moment shape does not match parameter " + std::to_string(i));
    if (!masks.empty() && masks[i].size() != params[i]->size())
      throw DimensionError("mask size does not match parameter " + std::to_string(i));
  }

  ++state.step_count;
  const auto& o = state.options;
  const double t = static_cast<double>(state.step_count);
  const double bias1 = 1.0 - std::pow(o.beta1, t);
  const double bias2 = 1.0 - std::pow(o.beta2, t);
  const double step_size = o.lr / bias1;
  const double inv_sqrt_bias2 = 1.0 / std::sqrt(bias2);
  const double decay = state.kind == OptimizerKind::adamw ? o.lr * state.weight_decay : 0.0;

  for (std::size_t i = 0; i < params.size(); ++i) {
    auto theta = params[i]->data();
    auto grad = params[i]->grad();
    double* __restrict th = theta.data();
    const double* __restrict g = grad.data();
    double* __restrict m = state.first_moment[i].data();
    double* __restrict v = state.second_moment[i].data();
    const std::uint8_t* keep = masks.empty() ? nullptr : masks[i].bits().data();
    const std::size_t n = theta.size();
    // branch-free so the loop vectorizes; dropped entries keep theta, m and v unchanged
    for (std::size_t j = 0; j < n; ++j) {
      const double mj = o.beta1 * m[j] + (1.0 - o.beta1) * g[j];
      const double vj = o.beta2 * v[j] + (1.0 - o.beta2) * g[j] * g[j];
      const double decayed = th[j] - decay * th[j];
      const double tj = decayed - step_size * mj / (std::sqrt(vj) * inv_sqrt_bias2 + o.eps);
      const bool k = !keep || keep[j] != 0;
      m[j] = k ? mj : m[j];
      v[j] = k ? vj : v[j];
      th[j] = k ? tj : th[j];
    }
  }
}

Var regularized_loss(const Var& base, std::span<Tensor* const> params, const Penalty& penalty) {
  if (penalty.lambda < 0.0) throw ConfigError("penalty coefficient must be non-negative");
  if (penalty.kind == PenaltyKind::none || penalty.lambda == 0.0) return base;
  Tape& tape = *base.tape();
  Var total = base;
  for (auto* p : params) total = add(total, scale(sum_abs(tape.parameter(*p)), penalty.lambda));
  return total;
}

}  // namespace sparsereg
