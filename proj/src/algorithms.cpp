#include "sparsereg/algorithms.hpp"

#include "sparsereg/errors.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace sparsereg {

AlgorithmKind parse_algorithm(std::string_view name) {
  if (name == "bc") return AlgorithmKind::bc;
  if (name == "td3bc") return AlgorithmKind::td3bc;
  if (name == "iql") return AlgorithmKind::iql;
  throw ConfigError("unknown algorithm '" + std::string(name) + "'");
}

std::string to_string(AlgorithmKind kind) {
  switch (kind) {
    case AlgorithmKind::bc: return "bc";
    case AlgorithmKind::td3bc: return "td3bc";
    case AlgorithmKind::iql: return "iql";
  }
  return "?";
}

RegularizerKind parse_regularizer(std::string_view name) {
  if (name == "none") return RegularizerKind::none;
  if (name == "sparse") return RegularizerKind::sparse;
  if (name == "l1") return RegularizerKind::l1;
  if (name == "dropout") return RegularizerKind::dropout;
  if (name == "weight_decay") return RegularizerKind::weight_decay;
  if (name == "layer_norm") return RegularizerKind::layer_norm;
  if (name == "spectral_norm") return RegularizerKind::spectral_norm;
  throw ConfigError("unknown regularizer '" + std::string(name) + "'");
}

std::string to_string(RegularizerKind kind) {
  switch (kind) {
    case RegularizerKind::none: return "none";
    case RegularizerKind::sparse: return "sparse";
    case RegularizerKind::l1: return "l1";
    case RegularizerKind::dropout: return "dropout";
    case RegularizerKind::weight_decay: return "weight_decay";
    case RegularizerKind::layer_norm: return "layer_norm";
    case RegularizerKind::spectral_norm: return "spectral_norm";
  }
  return "?";
}

void AlgoHyper::validate() const {
  if (!(gamma > 0.0 && gamma < 1.0)) throw ConfigError("gamma must lie in (0, 1)");
  if (!(tau > 0.0 && tau <= 1.0)) throw ConfigError("tau must lie in (0, 1]");
  if (policy_freq < 1) throw ConfigError("policy_freq must be positive");
  if (!(lr > 0.0)) throw ConfigError("lr must be positive");
  if (batch < 1) throw ConfigError("batch must be positive");
  if (!(iql_expectile > 0.5 && iql_expectile < 1.0)) throw ConfigError("iql_expectile must lie in (0.5, 1)");
  if (iql_beta < 0.0) throw ConfigError("iql_beta must be non-negative");
  if (!(awr_clip > 0.0)) throw ConfigError("awr_clip must be positive");
  if (td3bc_alpha < 0.0) throw ConfigError("td3bc_alpha must be non-negative");
}

void Regularizer::validate() const {
  switch (kind) {
    case RegularizerKind::sparse: sparse.validate(); break;
    case RegularizerKind::l1:
      if (l1_lambda < 0.0) throw ConfigError("l1 lambda must be non-negative");
      break;
    case RegularizerKind::dropout:
      if (!(dropout_rate > 0.0 && dropout_rate < 1.0)) throw ConfigError("dropout rate must lie in (0, 1)");
      break;
    case RegularizerKind::weight_decay:
      if (weight_decay < 0.0) throw ConfigError("weight decay must be non-negative");
      break;
    default: break;
  }
}

AgentState AgentState::create(const EnvSpec& env, AgentOptions options, std::uint64_t seed) {
  options.hyper.validate();
  options.regularizer.validate();

  MlpOptions net;
  net.hidden = options.hidden;
  net.activation = Activation::relu;
  const auto& reg = options.regularizer;
  if (reg.kind == RegularizerKind::dropout) net.dropout_rate = reg.dropout_rate;
  net.layer_norm = reg.kind == RegularizerKind::layer_norm;
  net.spectral_norm = reg.kind == RegularizerKind::spectral_norm;
  MlpOptions actor_net = net;
  actor_net.bounded_output = env.act_bound;

  Rng init(derive_seed(seed, 1));
  AgentState agent;
  agent.options = options;
  agent.env = env;
  agent.rng = Rng(derive_seed(seed, 2));
  agent.score_rng = Rng(derive_seed(seed, 3));
  agent.actor = Mlp(env.obs_dim, env.act_dim, actor_net, init);

  const AdamOptions adam{options.hyper.lr};
  auto make_opt = [&](Mlp& m) {
    const auto params = m.parameters();
    return reg.kind == RegularizerKind::weight_decay ? OptimizerState::adamw(params, adam, reg.weight_decay)
                                                     : OptimizerState::adam(params, adam);
  };
  agent.actor_opt = make_opt(agent.actor);

  if (options.algorithm == AlgorithmKind::td3bc) agent.target_actor = agent.actor;
  if (options.algorithm != AlgorithmKind::bc) {
    for (int i = 0; i < 2; ++i) agent.critics.emplace_back(env.obs_dim + env.act_dim, 1, net, init);
    agent.target_critics = agent.critics;
    for (auto& c : agent.critics) agent.critic_opts.push_back(make_opt(c));
  }
  if (options.algorithm == AlgorithmKind::iql) {
    agent.value = Mlp(env.obs_dim, 1, net, init);
    agent.value_opt = make_opt(*agent.value);
  }
  return agent;
}

Var expectile_loss(const Var& v, const Matrix& targets, double expectile) {
  const Matrix u = targets - v.value();
  Eigen::VectorXd w(u.rows());
  for (Eigen::Index i = 0; i < u.rows(); ++i) w(i) = std::abs(expectile - (u(i, 0) < 0.0 ? 1.0 : 0.0));
  return weighted_mse(v.tape()->constant(targets), v, w);
}

Eigen::VectorXd awr_weights(const Matrix& advantage, double beta, double clip) {
  Eigen::VectorXd w(advantage.rows());
  for (Eigen::Index i = 0; i < w.size(); ++i) {
    const double e = std::exp(beta * advantage(i, 0));
    w(i) = std::clamp(std::isnan(e) ? 0.0 : e, 0.0, clip);
  }
  return w;
}

namespace {

void check_loss(const AgentState& agent, const char* what, double v) {
  if (!std::isfinite(v) || std::abs(v) > agent.options.hyper.divergence_threshold) {
    std::ostringstream msg;
    msg << to_string(agent.options.algorithm) << " " << what << " diverged at step " << agent.step << " (" << v << ")";
    throw DivergenceError(msg.str());
  }
}

Matrix concat(const Matrix& a, const Matrix& b) {
  Matrix out(a.rows(), a.cols() + b.cols());
  out << a, b;
  return out;
}

void zero_all_grads(AgentState& agent) {
  agent.actor.zero_grad();
  for (auto& c : agent.critics) c.zero_grad();
  if (agent.value) agent.value->zero_grad();
}

void step_network(AgentState& agent, Mlp& net, OptimizerState& opt, const std::vector<Mask>& masks) {
  const auto params = net.parameters();
  adam_step(opt, params, agent.sparse() ? std::span<const Mask>(masks) : std::span<const Mask>());
}

Var critic_regression_loss(AgentState& agent, Tape& tape, Mlp& critic, const TransitionBatch& batch, const Matrix& y) {
  Var q = critic.forward(tape, tape.constant(concat(batch.obs, batch.actions)), Mode::train, &agent.rng);
  return mse(q, tape.constant(y));
}

Matrix td3bc_target(AgentState& agent, const TransitionBatch& batch, Rng& noise_rng) {
  const auto& h = agent.options.hyper;
  const double bound = agent.env.act_bound;
  Matrix next_action = agent.target_actor->predict(batch.next_obs);
  std::normal_distribution<double> gauss(0.0, h.policy_noise * bound);
  const double clip = h.noise_clip * bound;
  for (Eigen::Index i = 0; i < next_action.rows(); ++i)
    for (Eigen::Index j = 0; j < next_action.cols(); ++j)
      next_action(i, j) = std::clamp(next_action(i, j) + std::clamp(gauss(noise_rng), -clip, clip), -bound, bound);
  const Matrix sa = concat(batch.next_obs, next_action);
  const Matrix q = agent.target_critics[0].predict(sa).cwiseMin(agent.target_critics[1].predict(sa));
  return batch.rewards + (h.gamma * (1.0 - batch.dones.array()) * q.array()).matrix();
}

Matrix target_q(AgentState& agent, const TransitionBatch& batch) {
  const Matrix sa = concat(batch.obs, batch.actions);
  return agent.target_critics[0].predict(sa).cwiseMin(agent.target_critics[1].predict(sa));
}

Var value_expectile_loss(AgentState& agent, Tape& tape, const TransitionBatch& batch, const Matrix& tq) {
  Var v = agent.value->forward(tape, tape.constant(batch.obs), Mode::train, &agent.rng);
  return expectile_loss(v, tq, agent.options.hyper.iql_expectile);
}

Matrix iql_critic_target(AgentState& agent, const TransitionBatch& batch, const Matrix& next_v) {
  return batch.rewards + (agent.options.hyper.gamma * (1.0 - batch.dones.array()) * next_v.array()).matrix();
}

Var awr_loss(AgentState& agent, Tape& tape, const TransitionBatch& batch, const Eigen::VectorXd& w) {
  Var pi = agent.actor.forward(tape, tape.constant(batch.obs), Mode::train, &agent.rng);
  return weighted_mse(pi, tape.constant(batch.actions), w);
}

Var with_actor_penalty(AgentState& agent, const Var& loss) {
  const auto& reg = agent.options.regularizer;
  if (reg.kind != RegularizerKind::l1) return loss;
  const auto params = agent.actor.parameters();
  return regularized_loss(loss, params, Penalty::l1(reg.l1_lambda));
}

void backward_if_connected(Tape& tape, const Var& loss) {
  if (loss.requires_grad()) tape.backward(loss);
}

void polyak_targets(AgentState& agent) {
  const double tau = agent.options.hyper.tau;
  for (std::size_t i = 0; i < agent.critics.size(); ++i) agent.target_critics[i].polyak_from(agent.critics[i], tau);
  if (agent.target_actor) agent.target_actor->polyak_from(agent.actor, tau);
}

}  // namespace

Var bc_actor_loss(AgentState& agent, Tape& tape, const TransitionBatch& batch) {
  Var pi = agent.actor.forward(tape, tape.constant(batch.obs), Mode::train, &agent.rng);
  return mse(pi, tape.constant(batch.actions));
}

Var td3bc_critic_loss(AgentState& agent, Tape& tape, const TransitionBatch& batch, std::size_t critic, Rng& noise_rng) {
  const Matrix y = td3bc_target(agent, batch, noise_rng);
  return critic_regression_loss(agent, tape, agent.critics.at(critic), batch, y);
}

Var td3bc_actor_loss(AgentState& agent, Tape& tape, const TransitionBatch& batch) {
  Var obs = tape.constant(batch.obs);
  Var pi = agent.actor.forward(tape, obs, Mode::train, &agent.rng);
  Var q = agent.critics[0].forward(tape, concat_cols(obs, pi), Mode::train, &agent.rng);
  const double lambda = agent.options.hyper.td3bc_alpha / std::max(q.value().cwiseAbs().mean(), 1e-8);
  return add(scale(mean(q), -lambda), mse(pi, tape.constant(batch.actions)));
}

Var iql_value_loss(AgentState& agent, Tape& tape, const TransitionBatch& batch) {
  return value_expectile_loss(agent, tape, batch, target_q(agent, batch));
}

Var iql_critic_loss(AgentState& agent, Tape& tape, const TransitionBatch& batch, std::size_t critic) {
  const Matrix y = iql_critic_target(agent, batch, agent.value->predict(batch.next_obs));
  return critic_regression_loss(agent, tape, agent.critics.at(critic), batch, y);
}

Var iql_actor_loss(AgentState& agent, Tape& tape, const TransitionBatch& batch) {
  const Matrix adv = target_q(agent, batch) - agent.value->predict(batch.obs);
  return awr_loss(agent, tape, batch, awr_weights(adv, agent.options.hyper.iql_beta, agent.options.hyper.awr_clip));
}

double bc_update(AgentState& agent, const TransitionBatch& batch) {
  if (agent.options.algorithm != AlgorithmKind::bc) throw UsageError("bc_update on a non-BC agent");
  zero_all_grads(agent);
  Tape tape;
  Var base = bc_actor_loss(agent, tape, batch);
  check_loss(agent, "actor loss", base.scalar());
  backward_if_connected(tape, with_actor_penalty(agent, base));
  step_network(agent, agent.actor, agent.actor_opt, agent.masks.actor);
  ++agent.step;
  ++agent.actor_updates;
  return base.scalar();
}

UpdateLosses td3bc_update(AgentState& agent, const TransitionBatch& batch) {
  if (agent.options.algorithm != AlgorithmKind::td3bc) throw UsageError("td3bc_update on a non-TD3+BC agent");
  UpdateLosses losses;
  {
    zero_all_grads(agent);
    const Matrix y = td3bc_target(agent, batch, agent.rng);
    Tape tape;
    Var loss = add(critic_regression_loss(agent, tape, agent.critics[0], batch, y),
                   critic_regression_loss(agent, tape, agent.critics[1], batch, y));
    losses.critic = loss.scalar();
    check_loss(agent, "critic loss", losses.critic);
    tape.backward(loss);
    for (std::size_t i = 0; i < 2; ++i) step_network(agent, agent.critics[i], agent.critic_opts[i], agent.masks.critics[i]);
  }
  ++agent.step;
  if (agent.step % agent.options.hyper.policy_freq == 0) {
    zero_all_grads(agent);
    Tape tape;
    Var loss = td3bc_actor_loss(agent, tape, batch);
    losses.actor = loss.scalar();
    check_loss(agent, "actor loss", losses.actor);
    tape.backward(with_actor_penalty(agent, loss));
    step_network(agent, agent.actor, agent.actor_opt, agent.masks.actor);
    zero_all_grads(agent);
    polyak_targets(agent);
    ++agent.actor_updates;
  }
  return losses;
}

UpdateLosses iql_update(AgentState& agent, const TransitionBatch& batch) {
  if (agent.options.algorithm != AlgorithmKind::iql) throw UsageError("iql_update on a non-IQL agent");
  UpdateLosses losses;
  const Matrix tq = target_q(agent, batch);
  const Matrix next_v = agent.value->predict(batch.next_obs);
  Matrix advantage;
  {
    zero_all_grads(agent);
    Tape tape;
    Var loss = value_expectile_loss(agent, tape, batch, tq);
    losses.value = loss.scalar();
    check_loss(agent, "value loss", losses.value);
    // pre-step V(s), as the critic target uses the pre-step V(s')
    advantage = tq - agent.value->predict(batch.obs);
    tape.backward(loss);
    step_network(agent, *agent.value, *agent.value_opt, agent.masks.value);
  }
  {
    zero_all_grads(agent);
    const Matrix y = iql_critic_target(agent, batch, next_v);
    Tape tape;
    Var loss = add(critic_regression_loss(agent, tape, agent.critics[0], batch, y),
                   critic_regression_loss(agent, tape, agent.critics[1], batch, y));
    losses.critic = loss.scalar();
    check_loss(agent, "critic loss", losses.critic);
    tape.backward(loss);
    for (std::size_t i = 0; i < 2; ++i) step_network(agent, agent.critics[i], agent.critic_opts[i], agent.masks.critics[i]);
  }
  {
    zero_all_grads(agent);
    Tape tape;
    Var loss = awr_loss(agent, tape, batch, awr_weights(advantage, agent.options.hyper.iql_beta, agent.options.hyper.awr_clip));
    losses.actor = loss.scalar();
    check_loss(agent, "actor loss", losses.actor);
    tape.backward(with_actor_penalty(agent, loss));
    step_network(agent, agent.actor, agent.actor_opt, agent.masks.actor);
  }
  zero_all_grads(agent);
  polyak_targets(agent);
  ++agent.step;
  ++agent.actor_updates;
  return losses;
}

UpdateLosses update(AgentState& agent, const TransitionBatch& batch) {
  switch (agent.options.algorithm) {
    case AlgorithmKind::bc: {
      UpdateLosses l;
      l.actor = bc_update(agent, batch);
      return l;
    }
    case AlgorithmKind::td3bc: return td3bc_update(agent, batch);
    case AlgorithmKind::iql: return iql_update(agent, batch);
  }
  throw UsageError("unknown algorithm");
}

std::vector<ManagedNetwork> managed_networks(AgentState& agent) {
  std::vector<ManagedNetwork> nets;
  AgentState* a = &agent;
  switch (agent.options.algorithm) {
    case AlgorithmKind::bc:
      nets.push_back({"actor", &agent.actor, {},
                      [a](Tape& t, const TransitionBatch& b) { return bc_actor_loss(*a, t, b); }, &agent.masks.actor});
      break;
    case AlgorithmKind::td3bc:
      nets.push_back({"actor", &agent.actor, {&*agent.target_actor},
                      [a](Tape& t, const TransitionBatch& b) { return td3bc_actor_loss(*a, t, b); }, &agent.masks.actor});
      for (std::size_t i = 0; i < 2; ++i)
        nets.push_back({"critic" + std::to_string(i + 1), &agent.critics[i], {&agent.target_critics[i]},
                        [a, i](Tape& t, const TransitionBatch& b) { return td3bc_critic_loss(*a, t, b, i, a->score_rng); },
                        &agent.masks.critics[i]});
      break;
    case AlgorithmKind::iql:
      nets.push_back({"actor", &agent.actor, {},
                      [a](Tape& t, const TransitionBatch& b) { return iql_actor_loss(*a, t, b); }, &agent.masks.actor});
      for (std::size_t i = 0; i < 2; ++i)
        nets.push_back({"critic" + std::to_string(i + 1), &agent.critics[i], {&agent.target_critics[i]},
                        [a, i](Tape& t, const TransitionBatch& b) { return iql_critic_loss(*a, t, b, i); },
                        &agent.masks.critics[i]});
      nets.push_back({"value", &*agent.value, {},
                      [a](Tape& t, const TransitionBatch& b) { return iql_value_loss(*a, t, b); }, &agent.masks.value});
      break;
  }
  return nets;
}

void enforce_masks(AgentState& agent) {
  if (!agent.masks_initialized) return;
  for (auto& n : managed_networks(agent)) {
    apply_mask(*n.net, *n.masks);
    for (auto* t : n.targets) propagate_to_target(*n.masks, *t);
  }
}

namespace {

struct NamedNet {
  std::string name;
  const Mlp* net;
  const std::vector<Mask>* masks;
};

std::vector<NamedNet> trainable_networks(const AgentState& agent) {
  std::vector<NamedNet> out{{"actor", &agent.actor, &agent.masks.actor}};
  for (std::size_t i = 0; i < agent.critics.size(); ++i)
    out.push_back({"critic" + std::to_string(i + 1), &agent.critics[i], &agent.masks.critics[i]});
  if (agent.value) out.push_back({"value", &*agent.value, &agent.masks.value});
  return out;
}

/// Every network's masks in column order; all-ones when masking is off.
std::vector<Mask> current_masks(const AgentState& agent) {
  std::vector<Mask> out;
  for (const auto& n : trainable_networks(agent)) {
    if (agent.masks_initialized) {
      out.insert(out.end(), n.masks->begin(), n.masks->end());
    } else {
      for (const auto* p : n.net->parameters()) out.push_back(Mask::ones(p->size()));
    }
  }
  return out;
}

}  // namespace

std::vector<std::string> sparsity_column_names(const AgentState& agent) {
  std::vector<std::string> cols;
  for (const auto& n : trainable_networks(agent))
    for (const auto& p : n.net->parameter_names()) cols.push_back(n.name + "." + p);
  return cols;
}

LearningCurve train(AgentState& agent, const OfflineDataset& train_set, const TrainOptions& options,
                    const EvalHook& eval_hook) {
  if (options.total_steps < 0) throw ConfigError("total_steps must be non-negative");
  if (options.eval_interval < 1) throw ConfigError("eval_interval must be positive");
  if (train_set.size() == 0) throw UsageError("empty training set");

  LearningCurve curve(sparsity_column_names(agent));
  auto nets = managed_networks(agent);
  const auto& sparse_cfg = agent.options.regularizer.sparse;
  auto draw_score_batch = [&]() {
    if (sparse_cfg.fixed_score_batch && agent.fixed_score_batch) return *agent.fixed_score_batch;
    auto batch = sample_batch(train_set, sparse_cfg.score_batch_size, agent.score_rng);
    if (sparse_cfg.fixed_score_batch) agent.fixed_score_batch = batch;
    return batch;
  };

  if (agent.sparse() && !agent.masks_initialized) {
    refresh_masks(nets, draw_score_batch(), sparse_cfg);
    agent.masks_initialized = true;
  }

  std::vector<Mask> previous = current_masks(agent);
  UpdateLosses last;
  auto record = [&]() {
    const EvalPoint p = eval_hook(agent);
    const auto masks = current_masks(agent);
    const auto report = layer_sparsity_report(masks, previous);
    CurveRow row;
    row.step = agent.step;
    row.return_mean = p.return_mean;
    row.return_std = p.return_std;
    row.normalized_score = p.normalized_score;
    row.train_mse = p.train_mse;
    row.val_mse = p.val_mse;
    row.actor_loss = last.actor;
    row.critic_loss = last.critic;
    row.value_loss = last.value;
    row.global_sparsity = report.global_sparsity;
    row.mask_change = report.change_fraction.value_or(0.0);
    row.layer_sparsity = report.tensor_sparsity;
    curve.append(std::move(row));
    previous = masks;
  };

  record();
  try {
    for (std::int64_t i = 0; i < options.total_steps; ++i) {
      if (agent.sparse()) maybe_refresh(agent.step, sparse_cfg, nets, draw_score_batch);
      const auto batch = sample_batch(train_set, agent.options.hyper.batch, agent.rng);
      const UpdateLosses l = update(agent, batch);
      last.critic = l.critic;
      last.value = l.value;
      if (!std::isnan(l.actor)) last.actor = l.actor;
      if (agent.step % options.eval_interval == 0) record();
    }
  } catch (const DivergenceError& e) {
    throw TrainingAborted(e.what(), curve, agent.step);
  }
  return curve;
}

}  // namespace sparsereg
