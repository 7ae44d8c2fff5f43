#include "sparsereg/envs.hpp"

#include "sparsereg/errors.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace sparsereg {

StepResult Environment::step(const EnvState& state, std::span<const double> action) const {
  const auto& s = spec();
  if (action.size() != s.act_dim)
    throw DimensionError(s.name + ": action has " + std::to_string(action.size()) + " entries, expected " +
                         std::to_string(s.act_dim));
  if (state.observation.size() != s.obs_dim) throw DimensionError(s.name + ": observation has wrong size");
  if (state.t >= s.horizon) throw UsageError(s.name + ": episode already finished");
  std::vector<double> clipped(action.begin(), action.end());
  for (auto& a : clipped) {
    if (!std::isfinite(a)) throw NumericError(s.name + ": non-finite action");
    a = std::clamp(a, -s.act_bound, s.act_bound);
  }
  return advance(state, clipped);
}

PointMassEnv::PointMassEnv() : spec_{"pointmass", 3, 1, 1.0, 200, 0} {}

EnvState PointMassEnv::reset(std::uint64_t seed) const {
  Rng rng(seed);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  const double x = u(rng);
  const double goal = u(rng);
  return {{x, 0.0, goal - x}, 0};
}

StepResult PointMassEnv::advance(const EnvState& state, std::span<const double> action) const {
  const auto& o = state.observation;
  const double x = o[0], v = o[1], offset = o[2];
  const double a = action[0];
  StepResult r;
  r.reward = -offset * offset - 0.01 * a * a;
  const double dx = kDt * v;
  r.state.observation = {x + dx, v + kDt * a, offset - dx};
  r.state.t = state.t + 1;
  r.done = r.state.t == spec_.horizon;
  return r;
}

std::vector<double> PointMassEnv::expert_action(std::span<const double> o) const {
  const double a = kPositionGain * o[2] - kVelocityGain * o[1];
  return {std::clamp(a, -spec_.act_bound, spec_.act_bound)};
}

PendulumEnv::PendulumEnv() : spec_{"pendulum", 3, 1, 12.0, 200, 0} {}

EnvState PendulumEnv::reset(std::uint64_t seed) const {
  Rng rng(seed);
  std::uniform_real_distribution<double> angle(-std::numbers::pi, std::numbers::pi);
  std::uniform_real_distribution<double> rate(-1.0, 1.0);
  const double theta = angle(rng);
  const double theta_dot = rate(rng);
  return {{std::cos(theta), std::sin(theta), theta_dot}, 0};
}

StepResult PendulumEnv::advance(const EnvState& state, std::span<const double> action) const {
  const auto& o = state.observation;
  const double theta = std::atan2(o[1], o[0]);
  const double theta_dot = o[2];
  const double a = action[0];
  StepResult r;
  r.reward = -(theta * theta + 0.1 * theta_dot * theta_dot + 0.001 * a * a);
  const double accel = (kGravity / kLength) * std::sin(theta) + a / (kMass * kLength * kLength);
  const double next_rate = theta_dot + kDt * accel;
  const double next_theta = theta + kDt * next_rate;
  r.state.observation = {std::cos(next_theta), std::sin(next_theta), next_rate};
  r.state.t = state.t + 1;
  r.done = r.state.t == spec_.horizon;
  return r;
}

std::vector<double> PendulumEnv::expert_action(std::span<const double> o) const {
  const double theta = std::atan2(o[1], o[0]);
  const double inertia = kMass * kLength * kLength;
  // cancel gravity, then PD on the wrapped angle
  const double a = inertia * (-(kGravity / kLength) * std::sin(theta) - kAngleGain * theta - kRateGain * o[2]);
  return {std::clamp(a, -spec_.act_bound, spec_.act_bound)};
}

std::unique_ptr<Environment> make_env(std::string_view name) {
  if (name == "pointmass") return std::make_unique<PointMassEnv>();
  if (name == "pendulum") return std::make_unique<PendulumEnv>();
  throw ConfigError("unknown environment '" + std::string(name) + "'");
}

std::vector<std::string> env_names() { return {"pointmass", "pendulum"}; }

PolicyQuality parse_policy_quality(std::string_view name) {
  if (name == "expert") return PolicyQuality::expert;
  if (name == "medium") return PolicyQuality::medium;
  if (name == "random") return PolicyQuality::random;
  throw ConfigError("unknown policy quality '" + std::string(name) + "'");
}

std::string to_string(PolicyQuality quality) {
  switch (quality) {
    case PolicyQuality::expert: return "expert";
    case PolicyQuality::medium: return "medium";
    case PolicyQuality::random: return "random";
  }
  return "?";
}

std::vector<double> ScriptedPolicy::act(const Environment& env, const EnvState& state, Rng& rng) const {
  const double bound = env.spec().act_bound;
  switch (quality) {
    case PolicyQuality::expert: return env.expert_action(state.observation);
    case PolicyQuality::medium: {
      auto a = env.expert_action(state.observation);
      if (noise_fraction > 0.0) {
        std::normal_distribution<double> noise(0.0, noise_fraction * bound);
        for (auto& x : a) x = std::clamp(x + noise(rng), -bound, bound);
      }
      return a;
    }
    case PolicyQuality::random: {
      std::uniform_real_distribution<double> u(-bound, bound);
      std::vector<double> a(env.spec().act_dim);
      for (auto& x : a) x = u(rng);
      return a;
    }
  }
  throw ConfigError("unknown policy quality");
}

std::vector<double> scripted_policy(const Environment& env, PolicyQuality quality, const EnvState& state, Rng& rng) {
  return ScriptedPolicy{quality}.act(env, state, rng);
}

}  // namespace sparsereg
