#pragma once

#include "sparsereg/envs.hpp"
#include "sparsereg/random.hpp"
#include "sparsereg/tensor.hpp"

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace sparsereg {

struct Transition {
  std::vector<double> s;
  std::vector<double> a;
  double r = 0.0;
  std::vector<double> s_next;
  bool done = false;

  friend bool operator==(const Transition&, const Transition&) = default;
};

enum class DatasetQuality { expert, medium, medium_replay, expert_replay };
enum class DatasetSplit { train, validation };

DatasetQuality parse_dataset_quality(std::string_view name);
std::string to_string(DatasetQuality quality);
DatasetSplit parse_dataset_split(std::string_view name);
std::string to_string(DatasetSplit split);

struct DatasetInfo {
  std::string env_name;
  std::size_t obs_dim = 0;
  std::size_t act_dim = 0;
  DatasetQuality quality = DatasetQuality::expert;
  std::uint64_t generator_seed = 0;
  DatasetSplit split = DatasetSplit::train;

  friend bool operator==(const DatasetInfo&, const DatasetInfo&) = default;
};

/// Mini-batch in matrix form: one row per sampled transition.
struct TransitionBatch {
  Matrix obs;       // [B x obs_dim]
  Matrix actions;   // [B x act_dim]
  Matrix rewards;   // [B x 1]
  Matrix next_obs;  // [B x obs_dim]
  Matrix dones;     // [B x 1], 1.0 for terminal
  std::vector<std::size_t> indices;

  std::size_t size() const { return static_cast<std::size_t>(obs.rows()); }
};

/// Immutable set of transitions. Every transition carries the id of the trajectory
/// it came from; a trajectory's transitions are contiguous.
class OfflineDataset {
 public:
  OfflineDataset(DatasetInfo info, std::vector<Transition> transitions, std::vector<std::uint64_t> trajectory_ids);

  const DatasetInfo& info() const { return info_; }
  std::size_t size() const { return transitions_.size(); }
  const Transition& operator[](std::size_t i) const { return transitions_[i]; }
  const std::vector<Transition>& transitions() const { return transitions_; }
  std::uint64_t trajectory_id(std::size_t i) const { return trajectory_ids_[i]; }
  const std::vector<std::uint64_t>& trajectory_ids() const { return trajectory_ids_; }
  /// (id, length) for each trajectory in storage order.
  std::vector<std::pair<std::uint64_t, std::size_t>> trajectories() const;

  /// Rows for the given transition indices.
  TransitionBatch gather(std::span<const std::size_t> indices) const;
  /// Whole dataset as one batch, in storage order.
  TransitionBatch all() const;

  friend bool operator==(const OfflineDataset&, const OfflineDataset&) = default;

 private:
  DatasetInfo info_;
  std::vector<Transition> transitions_;
  std::vector<std::uint64_t> trajectory_ids_;
};

/// Rolls out the tier's behaviour policy for `n_transitions` steps, truncating the last episode.
/// Replay tiers alternate trajectories between the tier policy (even ids) and the random policy.
OfflineDataset generate(const Environment& env, DatasetQuality quality, std::size_t n_transitions, std::uint64_t seed);

/// Moves whole trajectories, in storage order, into the validation split until it holds at
/// least `validation_fraction` of the transitions. The train split always keeps one trajectory.
std::pair<OfflineDataset, OfflineDataset> split(const OfflineDataset& ds, double validation_fraction);

/// Uniform sampling with replacement.
TransitionBatch sample_batch(const OfflineDataset& ds, std::size_t batch_size, Rng& rng);

/// Paths of the two files backing a dataset stored under `stem`.
std::filesystem::path manifest_path(const std::filesystem::path& stem);
std::filesystem::path binary_path(const std::filesystem::path& stem);

/// Writes `<stem>.manifest.json` and `<stem>.bin`.
void save(const OfflineDataset& ds, const std::filesystem::path& stem);
OfflineDataset load(const std::filesystem::path& stem);

}  // namespace sparsereg
