#include "sparsereg/datasets.hpp"

#include "sparsereg/errors.hpp"
#include "sparsereg/io.hpp"

#include <json.hpp>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <set>

namespace sparsereg {

namespace fs = std::filesystem;
using nlohmann::json;
using io::get_f64;
using io::line_and_column;
using io::put_f64;
using io::read_file;
using io::write_atomically;

DatasetQuality parse_dataset_quality(std::string_view name) {
  if (name == "expert") return DatasetQuality::expert;
  if (name == "medium") return DatasetQuality::medium;
  if (name == "medium_replay") return DatasetQuality::medium_replay;
  if (name == "expert_replay") return DatasetQuality::expert_replay;
  throw ConfigError("unknown dataset quality '" + std::string(name) + "'");
}

std::string to_string(DatasetQuality quality) {
  switch (quality) {
    case DatasetQuality::expert: return "expert";
    case DatasetQuality::medium: return "medium";
    case DatasetQuality::medium_replay: return "medium_replay";
    case DatasetQuality::expert_replay: return "expert_replay";
  }
  return "?";
}

DatasetSplit parse_dataset_split(std::string_view name) {
  if (name == "train") return DatasetSplit::train;
  if (name == "validation") return DatasetSplit::validation;
  throw ConfigError("unknown dataset split '" + std::string(name) + "'");
}

std::string to_string(DatasetSplit split) { return split == DatasetSplit::train ? "train" : "validation"; }

OfflineDataset::OfflineDataset(DatasetInfo info, std::vector<Transition> transitions,
                               std::vector<std::uint64_t> trajectory_ids)
    : info_(std::move(info)), transitions_(std::move(transitions)), trajectory_ids_(std::move(trajectory_ids)) {
  if (transitions_.empty()) throw UsageError("an offline dataset must hold at least one transition");
  if (trajectory_ids_.size() != transitions_.size())
    throw DimensionError("one trajectory id per transition required");
  auto finite = [](const std::vector<double>& v) {
    return std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); });
  };
  for (std::size_t i = 0; i < transitions_.size(); ++i) {
    const auto& t = transitions_[i];
    if (t.s.size() != info_.obs_dim || t.s_next.size() != info_.obs_dim || t.a.size() != info_.act_dim)
      throw DimensionError("transition " + std::to_string(i) + " does not match the dataset dimensions");
    if (!finite(t.s) || !finite(t.a) || !finite(t.s_next) || !std::isfinite(t.r))
      throw NumericError("transition " + std::to_string(i) + " holds a non-finite value");
  }
  std::set<std::uint64_t> seen;
  for (std::size_t i = 0; i < trajectory_ids_.size(); ++i) {
    if (i > 0 && trajectory_ids_[i] == trajectory_ids_[i - 1]) continue;
    if (!seen.insert(trajectory_ids_[i]).second)
      throw UsageError("trajectory " + std::to_string(trajectory_ids_[i]) + " is not contiguous");
  }
}

std::vector<std::pair<std::uint64_t, std::size_t>> OfflineDataset::trajectories() const {
  std::vector<std::pair<std::uint64_t, std::size_t>> out;
  for (std::size_t i = 0; i < trajectory_ids_.size(); ++i) {
    if (i == 0 || trajectory_ids_[i] != trajectory_ids_[i - 1])
      out.emplace_back(trajectory_ids_[i], 1);
    else
      ++out.back().second;
  }
  return out;
}

TransitionBatch OfflineDataset::gather(std::span<const std::size_t> indices) const {
  const auto n = static_cast<Eigen::Index>(indices.size());
  const auto od = static_cast<Eigen::Index>(info_.obs_dim), ad = static_cast<Eigen::Index>(info_.act_dim);
  TransitionBatch b;
  b.obs.resize(n, od);
  b.actions.resize(n, ad);
  b.rewards.resize(n, 1);
  b.next_obs.resize(n, od);
  b.dones.resize(n, 1);
  b.indices.assign(indices.begin(), indices.end());
  for (Eigen::Index row = 0; row < n; ++row) {
    const auto idx = indices[static_cast<std::size_t>(row)];
    if (idx >= transitions_.size()) throw UsageError("batch index out of range");
    const auto& t = transitions_[idx];
    for (Eigen::Index j = 0; j < od; ++j) {
      b.obs(row, j) = t.s[static_cast<std::size_t>(j)];
      b.next_obs(row, j) = t.s_next[static_cast<std::size_t>(j)];
    }
    for (Eigen::Index j = 0; j < ad; ++j) b.actions(row, j) = t.a[static_cast<std::size_t>(j)];
    b.rewards(row, 0) = t.r;
    b.dones(row, 0) = t.done ? 1.0 : 0.0;
  }
  return b;
}

TransitionBatch OfflineDataset::all() const {
  std::vector<std::size_t> idx(transitions_.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  return gather(idx);
}

OfflineDataset generate(const Environment& env, DatasetQuality quality, std::size_t n_transitions,
                        std::uint64_t seed) {
  if (n_transitions < 1) throw UsageError("dataset size must be at least 1");
  const auto& spec = env.spec();
  const PolicyQuality tier = (quality == DatasetQuality::expert || quality == DatasetQuality::expert_replay)
                                 ? PolicyQuality::expert
                                 : PolicyQuality::medium;
  const bool replay = quality == DatasetQuality::medium_replay || quality == DatasetQuality::expert_replay;

  std::vector<Transition> out;
  std::vector<std::uint64_t> ids;
  out.reserve(n_transitions);
  ids.reserve(n_transitions);
  for (std::uint64_t traj = 0; out.size() < n_transitions; ++traj) {
    const ScriptedPolicy policy{replay && traj % 2 == 1 ? PolicyQuality::random : tier};
    Rng policy_rng(derive_seed(seed, 2 * traj + 1));
    EnvState state = env.reset(derive_seed(seed, 2 * traj));
    for (int t = 0; t < spec.horizon && out.size() < n_transitions; ++t) {
      auto action = policy.act(env, state, policy_rng);
      StepResult next = env.step(state, action);
      out.push_back({state.observation, std::move(action), next.reward, next.state.observation, next.done});
      ids.push_back(traj);
      state = std::move(next.state);
    }
  }
  DatasetInfo info{spec.name, spec.obs_dim, spec.act_dim, quality, seed, DatasetSplit::train};
  return OfflineDataset(std::move(info), std::move(out), std::move(ids));
}

std::pair<OfflineDataset, OfflineDataset> split(const OfflineDataset& ds, double validation_fraction) {
  if (!(validation_fraction > 0.0 && validation_fraction < 1.0))
    throw ConfigError("validation fraction must lie in (0, 1)");
  const auto trajs = ds.trajectories();
  if (trajs.size() < 2) throw SplitError("splitting needs at least two trajectories, found " + std::to_string(trajs.size()));

  const double want = validation_fraction * static_cast<double>(ds.size());
  std::size_t n_val_traj = 0, n_val = 0;
  while (n_val_traj + 1 < trajs.size() && static_cast<double>(n_val) < want - 1e-9) {
    n_val += trajs[n_val_traj].second;
    ++n_val_traj;
  }

  std::vector<Transition> val_t(ds.transitions().begin(), ds.transitions().begin() + static_cast<std::ptrdiff_t>(n_val));
  std::vector<Transition> train_t(ds.transitions().begin() + static_cast<std::ptrdiff_t>(n_val), ds.transitions().end());
  std::vector<std::uint64_t> val_ids(ds.trajectory_ids().begin(), ds.trajectory_ids().begin() + static_cast<std::ptrdiff_t>(n_val));
  std::vector<std::uint64_t> train_ids(ds.trajectory_ids().begin() + static_cast<std::ptrdiff_t>(n_val), ds.trajectory_ids().end());

  DatasetInfo train_info = ds.info();
  train_info.split = DatasetSplit::train;
  DatasetInfo val_info = ds.info();
  val_info.split = DatasetSplit::validation;
  return {OfflineDataset(std::move(train_info), std::move(train_t), std::move(train_ids)),
          OfflineDataset(std::move(val_info), std::move(val_t), std::move(val_ids))};
}

TransitionBatch sample_batch(const OfflineDataset& ds, std::size_t batch_size, Rng& rng) {
  if (batch_size < 1) throw UsageError("batch size must be at least 1");
  std::uniform_int_distribution<std::size_t> pick(0, ds.size() - 1);
  std::vector<std::size_t> idx(batch_size);
  for (auto& i : idx) i = pick(rng);
  return ds.gather(idx);
}

// ---------------------------------------------------------------------------
// Manifest + little-endian binary storage

namespace {

constexpr const char* kFormat = "sparsereg-dataset";
constexpr int kFormatVersion = 1;

std::size_t record_bytes(std::size_t obs_dim, std::size_t act_dim) {
  return 8 * (2 * obs_dim + act_dim + 1) + 1;
}

template <typename T>
T require(const json& j, const char* key, const fs::path& path) {
  if (!j.contains(key)) throw SchemaError(path.string() + ": missing field '" + key + "'");
  try {
    return j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw SchemaError(path.string() + ": field '" + key + "' has the wrong type");
  }
}

}  // namespace

fs::path manifest_path(const fs::path& stem) {
  fs::path p = stem;
  p += ".manifest.json";
  return p;
}

fs::path binary_path(const fs::path& stem) {
  fs::path p = stem;
  p += ".bin";
  return p;
}

void save(const OfflineDataset& ds, const fs::path& stem) {
  const auto& info = ds.info();
  json trajectories = json::array();
  for (const auto& [id, len] : ds.trajectories()) trajectories.push_back({id, len});
  json manifest = {
      {"format", kFormat},
      {"version", kFormatVersion},
      {"env_name", info.env_name},
      {"obs_dim", info.obs_dim},
      {"act_dim", info.act_dim},
      {"quality", to_string(info.quality)},
      {"seed", info.generator_seed},
      {"split", to_string(info.split)},
      {"count", ds.size()},
      {"endianness", "little"},
      {"record_bytes", record_bytes(info.obs_dim, info.act_dim)},
      {"trajectories", trajectories},
  };

  std::string bin;
  bin.reserve(ds.size() * record_bytes(info.obs_dim, info.act_dim));
  for (const auto& t : ds.transitions()) {
    for (double v : t.s) put_f64(bin, v);
    for (double v : t.a) put_f64(bin, v);
    put_f64(bin, t.r);
    for (double v : t.s_next) put_f64(bin, v);
    bin.push_back(t.done ? 1 : 0);
  }
  if (stem.has_parent_path()) fs::create_directories(stem.parent_path());
  write_atomically(binary_path(stem), bin);
  write_atomically(manifest_path(stem), manifest.dump(2) + "\n");
}

OfflineDataset load(const fs::path& stem) {
  const fs::path mpath = manifest_path(stem);
  const std::string text = read_file(mpath);
  json manifest;
  try {
    manifest = json::parse(text);
  } catch (const json::parse_error& e) {
    auto [line, col] = line_and_column(text, e.byte);
    throw ParseError(mpath.string() + ": line " + std::to_string(line) + ", column " + std::to_string(col) + ": " +
                     e.what());
  }
  if (!manifest.is_object()) throw SchemaError(mpath.string() + ": manifest must be a JSON object");
  if (require<std::string>(manifest, "format", mpath) != kFormat)
    throw SchemaError(mpath.string() + ": not a dataset manifest");
  if (require<std::string>(manifest, "endianness", mpath) != "little")
    throw SchemaError(mpath.string() + ": only little-endian payloads are supported");

  DatasetInfo info;
  info.env_name = require<std::string>(manifest, "env_name", mpath);
  info.obs_dim = require<std::size_t>(manifest, "obs_dim", mpath);
  info.act_dim = require<std::size_t>(manifest, "act_dim", mpath);
  info.generator_seed = require<std::uint64_t>(manifest, "seed", mpath);
  const auto count = require<std::size_t>(manifest, "count", mpath);
  try {
    info.quality = parse_dataset_quality(require<std::string>(manifest, "quality", mpath));
    info.split = parse_dataset_split(require<std::string>(manifest, "split", mpath));
  } catch (const ConfigError& e) {
    throw SchemaError(mpath.string() + ": " + e.what());
  }
  if (info.obs_dim == 0 || info.act_dim == 0 || count == 0)
    throw SchemaError(mpath.string() + ": dimensions and count must be positive");
  for (const auto& name : env_names()) {
    if (name != info.env_name) continue;
    const auto& spec = make_env(name)->spec();
    if (spec.obs_dim != info.obs_dim || spec.act_dim != info.act_dim)
      throw SchemaError(mpath.string() + ": " + name + " has obs_dim " + std::to_string(spec.obs_dim) +
                        " and act_dim " + std::to_string(spec.act_dim));
  }

  const auto traj_json = require<json>(manifest, "trajectories", mpath);
  std::vector<std::uint64_t> ids;
  ids.reserve(count);
  if (!traj_json.is_array()) throw SchemaError(mpath.string() + ": 'trajectories' must be an array");
  for (const auto& entry : traj_json) {
    if (!entry.is_array() || entry.size() != 2 || !entry[0].is_number_unsigned() || !entry[1].is_number_unsigned())
      throw SchemaError(mpath.string() + ": trajectory entries must be [id, length]");
    const auto id = entry[0].get<std::uint64_t>();
    const auto len = entry[1].get<std::size_t>();
    if (len == 0 || ids.size() + len > count) throw SchemaError(mpath.string() + ": trajectory lengths disagree with count");
    ids.insert(ids.end(), len, id);
  }
  if (ids.size() != count) throw SchemaError(mpath.string() + ": trajectory lengths disagree with count");

  const fs::path bpath = binary_path(stem);
  const std::string bin = read_file(bpath);
  const std::size_t rec = record_bytes(info.obs_dim, info.act_dim);
  if (bin.size() != count * rec) {
    if (bin.size() % count == 0) {
      const std::size_t actual = bin.size() / count;
      throw SchemaError(bpath.string() + ": records are " + std::to_string(actual) + " bytes but the manifest (obs_dim " +
                        std::to_string(info.obs_dim) + ", act_dim " + std::to_string(info.act_dim) + ") implies " +
                        std::to_string(rec));
    }
    const std::size_t complete = bin.size() / rec;
    throw ParseError(bpath.string() + ": payload is " + std::to_string(bin.size()) + " bytes, expected " +
                     std::to_string(count * rec) + "; record " + std::to_string(complete) + " is incomplete at offset " +
                     std::to_string(complete * rec));
  }

  std::vector<Transition> transitions(count);
  const auto* p = reinterpret_cast<const unsigned char*>(bin.data());
  std::size_t offset = 0;
  auto read_vec = [&](std::vector<double>& v, std::size_t n) {
    v.resize(n);
    for (auto& x : v) {
      x = get_f64(p + offset);
      if (!std::isfinite(x)) throw ParseError(bpath.string() + ": non-finite value at offset " + std::to_string(offset));
      offset += 8;
    }
  };
  for (auto& t : transitions) {
    read_vec(t.s, info.obs_dim);
    read_vec(t.a, info.act_dim);
    std::vector<double> r;
    read_vec(r, 1);
    t.r = r[0];
    read_vec(t.s_next, info.obs_dim);
    const unsigned char done = p[offset];
    if (done > 1) throw ParseError(bpath.string() + ": done flag must be 0 or 1 at offset " + std::to_string(offset));
    t.done = done == 1;
    ++offset;
  }
  return OfflineDataset(std::move(info), std::move(transitions), std::move(ids));
}

}  // namespace sparsereg
