#pragma once

#include "sparsereg/random.hpp"

#include <cstddef>
#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace sparsereg {

struct EnvSpec {
  std::string name;
  std::size_t obs_dim = 0;
  std::size_t act_dim = 0;
  double act_bound = 1.0;
  int horizon = 200;
  std::uint64_t dynamics_seed = 0;
};

/// The observation is the complete dynamical state, so stepping from a stored
/// observation reproduces the original transition exactly.
struct EnvState {
  std::vector<double> observation;
  int t = 0;
};

struct StepResult {
  EnvState state;
  double reward = 0.0;
  bool done = false;
};

/// Deterministic fixed-horizon continuous-control task.
class Environment {
 public:
  virtual ~Environment() = default;

  virtual const EnvSpec& spec() const = 0;
  virtual EnvState reset(std::uint64_t seed) const = 0;
  /// Clips the action to [-act_bound, act_bound] before integrating.
  StepResult step(const EnvState& state, std::span<const double> action) const;
  /// Saturated PD controller used as the expert behaviour policy.
  virtual std::vector<double> expert_action(std::span<const double> observation) const = 0;

 protected:
  virtual StepResult advance(const EnvState& state, std::span<const double> clipped_action) const = 0;
};

/// Double integrator: observation [x, v, goal - x], x' = x + dt v, v' = v + dt a,
/// reward -(x - goal)^2 - 0.01 a^2.
class PointMassEnv final : public Environment {
 public:
  static constexpr double kDt = 0.05;
  static constexpr double kPositionGain = 8.0;
  static constexpr double kVelocityGain = 5.0;

  PointMassEnv();
  const EnvSpec& spec() const override { return spec_; }
  EnvState reset(std::uint64_t seed) const override;
  std::vector<double> expert_action(std::span<const double> observation) const override;

 protected:
  StepResult advance(const EnvState& state, std::span<const double> action) const override;

 private:
  EnvSpec spec_;
};

/// Torque-driven pendulum with theta = 0 upright: observation [cos, sin, theta_dot],
/// theta_ddot = (g / l) sin(theta) + a / (m l^2), semi-implicit Euler at dt = 0.05,
/// reward -(theta^2 + 0.1 theta_dot^2 + 0.001 a^2) on the wrapped angle.
class PendulumEnv final : public Environment {
 public:
  static constexpr double kDt = 0.05;
  static constexpr double kGravity = 10.0;
  static constexpr double kLength = 1.0;
  static constexpr double kMass = 1.0;
  static constexpr double kAngleGain = 20.0;
  static constexpr double kRateGain = 6.0;

  PendulumEnv();
  const EnvSpec& spec() const override { return spec_; }
  EnvState reset(std::uint64_t seed) const override;
  std::vector<double> expert_action(std::span<const double> observation) const override;

 protected:
  StepResult advance(const EnvState& state, std::span<const double> action) const override;

 private:
  EnvSpec spec_;
};

std::unique_ptr<Environment> make_env(std::string_view name);
std::vector<std::string> env_names();

enum class PolicyQuality { expert, medium, random };

PolicyQuality parse_policy_quality(std::string_view name);
std::string to_string(PolicyQuality quality);

/// Behaviour policies for dataset generation. Medium adds N(0, (noise_fraction * bound)^2)
/// to the expert action and clips; random is uniform on the action box.
struct ScriptedPolicy {
  static constexpr double kMediumNoiseFraction = 0.3;

  PolicyQuality quality = PolicyQuality::expert;
  double noise_fraction = kMediumNoiseFraction;

  std::vector<double> act(const Environment& env, const EnvState& state, Rng& rng) const;
};

std::vector<double> scripted_policy(const Environment& env, PolicyQuality quality, const EnvState& state, Rng& rng);

}  // namespace sparsereg
