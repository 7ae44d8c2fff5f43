#include "sparsereg/sparse_reg.hpp"

#include "sparsereg/errors.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace sparsereg {

void SparsityConfig::validate() const {
  if (!(sparsity >= 0.0 && sparsity < 1.0)) throw ConfigError("sparsity must lie in [0, 1)");
  if (refresh_interval < 1) throw ConfigError("refresh_interval must be positive");
  if (refresh_cutoff < 0) throw ConfigError("refresh_cutoff must be non-negative");
  if (score_batch_size < 1) throw ConfigError("score_batch_size must be positive");
  if (mode == SparsityMode::sfi && refresh_cutoff != 0) throw ConfigError("SFI mode requires refresh_cutoff == 0");
  if (mode == SparsityMode::spu && refresh_interval > refresh_cutoff)
    throw ConfigError("SPU mode requires refresh_interval <= refresh_cutoff");
}

SparsityConfig SparsityConfig::for_run(std::int64_t total_steps, double sparsity, SparsityMode mode) {
  SparsityConfig cfg;
  cfg.sparsity = sparsity;
  cfg.mode = mode;
  cfg.refresh_interval = std::max<std::int64_t>(1, total_steps / 200);
  cfg.refresh_cutoff = mode == SparsityMode::sfi ? 0 : std::max<std::int64_t>(cfg.refresh_interval, total_steps / 5);
  return cfg;
}

std::vector<SaliencyScore> saliency_from_gradients(std::span<const Tensor* const> params) {
  std::vector<SaliencyScore> out;
  out.reserve(params.size());
  for (const auto* p : params) {
    SaliencyScore s;
    s.scores.resize(p->size());
    auto theta = p->data();
    auto grad = p->grad();
    for (std::size_t i = 0; i < theta.size(); ++i) s.scores[i] = std::abs(theta[i] * grad[i]);
    out.push_back(std::move(s));
  }
  return out;
}

std::vector<SaliencyScore> compute_saliency(Mlp& net, const BatchLoss& loss, const TransitionBatch& batch) {
  if (batch.size() == 0) throw UsageError("saliency needs a non-empty batch");
  net.zero_grad();
  Tape tape;
  Var l = loss(tape, batch);
  if (!std::isfinite(l.scalar())) throw NumericError("saliency loss is not finite");
  if (l.requires_grad()) tape.backward(l);
  const auto params = std::as_const(net).parameters();
  auto scores = saliency_from_gradients(params);
  net.zero_grad();
  return scores;
}

std::vector<Mask> top_k_mask(std::span<const SaliencyScore> scores, double sparsity, const std::vector<bool>& rankable) {
  if (!(sparsity >= 0.0 && sparsity < 1.0)) throw ConfigError("sparsity must lie in [0, 1)");
  if (!rankable.empty() && rankable.size() != scores.size())
    throw DimensionError("one rankable flag per score tensor required");
  auto is_rankable = [&](std::size_t t) { return rankable.empty() || rankable[t]; };

  // flat index -> (tensor, offset) over rankable tensors only
  std::vector<std::size_t> offsets(scores.size() + 1, 0);
  for (std::size_t t = 0; t < scores.size(); ++t)
    offsets[t + 1] = offsets[t] + (is_rankable(t) ? scores[t].scores.size() : 0);
  const std::size_t total = offsets.back();
  const auto k = static_cast<std::size_t>(std::llround((1.0 - sparsity) * static_cast<double>(total)));

  std::vector<double> flat(total);
  for (std::size_t t = 0; t < scores.size(); ++t) {
    if (!is_rankable(t)) continue;
    const auto& s = scores[t].scores;
    for (std::size_t i = 0; i < s.size(); ++i) {
      if (!(s[i] >= 0.0) || !std::isfinite(s[i])) throw NumericError("saliency scores must be finite and non-negative");
      flat[offsets[t] + i] = s[i];
    }
  }

  std::vector<std::size_t> order(total);
  std::iota(order.begin(), order.end(), std::size_t{0});
  auto better = [&](std::size_t a, std::size_t b) { return flat[a] > flat[b] || (flat[a] == flat[b] && a < b); };
  if (k < total) std::nth_element(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k), order.end(), better);

  std::vector<std::uint8_t> keep(total, 0);
  for (std::size_t i = 0; i < k; ++i) keep[order[i]] = 1;

  std::vector<Mask> masks;
  masks.reserve(scores.size());
  for (std::size_t t = 0; t < scores.size(); ++t) {
    if (!is_rankable(t)) {
      masks.push_back(Mask::ones(scores[t].scores.size()));
      continue;
    }
    masks.emplace_back(std::vector<std::uint8_t>(keep.begin() + static_cast<std::ptrdiff_t>(offsets[t]),
                                                 keep.begin() + static_cast<std::ptrdiff_t>(offsets[t + 1])));
  }
  return masks;
}

void apply_mask(std::span<Tensor* const> params, std::span<const Mask> masks) {
  if (params.size() != masks.size())
    throw DimensionError("expected " + std::to_string(params.size()) + " masks, got " + std::to_string(masks.size()));
  for (std::size_t t = 0; t < params.size(); ++t)
    if (params[t]->size() != masks[t].size())
      throw DimensionError("mask " + std::to_string(t) + " is not congruent with its parameter tensor");
  for (std::size_t t = 0; t < params.size(); ++t) {
    auto theta = params[t]->data();
    for (std::size_t i = 0; i < theta.size(); ++i)
      if (!masks[t].keep(i)) theta[i] = 0.0;
  }
}

void apply_mask(Mlp& net, std::span<const Mask> masks) { apply_mask(net.parameters(), masks); }

void propagate_to_target(std::span<const Mask> source_masks, Mlp& target) { apply_mask(target, source_masks); }

void refresh_masks(std::span<ManagedNetwork> nets, const TransitionBatch& batch, const SparsityConfig& cfg) {
  std::vector<std::vector<SaliencyScore>> scores;
  scores.reserve(nets.size());
  for (auto& n : nets) scores.push_back(compute_saliency(*n.net, n.loss, batch));

  for (std::size_t i = 0; i < nets.size(); ++i) {
    auto& n = nets[i];
    std::vector<bool> rankable;
    for (const auto& name : n.net->parameter_names()) rankable.push_back(cfg.mask_biases || name[0] != 'b');
    *n.masks = top_k_mask(scores[i], cfg.sparsity, rankable);
    apply_mask(*n.net, *n.masks);
    for (auto* target : n.targets) propagate_to_target(*n.masks, *target);
  }
}

bool refresh_due(std::int64_t step, const SparsityConfig& cfg) {
  return cfg.mode == SparsityMode::spu && step > 0 && step % cfg.refresh_interval == 0 && step <= cfg.refresh_cutoff;
}

bool maybe_refresh(std::int64_t step, const SparsityConfig& cfg, std::span<ManagedNetwork> nets,
                   const std::function<TransitionBatch()>& draw_batch) {
  if (!refresh_due(step, cfg)) return false;
  refresh_masks(nets, draw_batch(), cfg);
  return true;
}

SparsityReport layer_sparsity_report(std::span<const Mask> masks, std::span<const Mask> previous) {
  if (!previous.empty() && previous.size() != masks.size())
    throw DimensionError("previous masks do not match the current mask list");
  SparsityReport report;
  std::size_t zeros = 0, total = 0, changed = 0;
  for (std::size_t t = 0; t < masks.size(); ++t) {
    const auto& m = masks[t];
    const std::size_t z = m.size() - m.count();
    report.tensor_sparsity.push_back(m.size() ? static_cast<double>(z) / static_cast<double>(m.size()) : 0.0);
    zeros += z;
    total += m.size();
    if (!previous.empty()) {
      if (previous[t].size() != m.size()) throw DimensionError("previous mask size mismatch");
      for (std::size_t i = 0; i < m.size(); ++i) changed += m.keep(i) != previous[t].keep(i);
    }
  }
  report.global_sparsity = total ? static_cast<double>(zeros) / static_cast<double>(total) : 0.0;
  if (!previous.empty()) report.change_fraction = total ? static_cast<double>(changed) / static_cast<double>(total) : 0.0;
  return report;
}

}  // namespace sparsereg
