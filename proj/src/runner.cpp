#include "sparsereg/runner.hpp"

#include "sparsereg/errors.hpp"
#include "sparsereg/io.hpp"

#include <json.hpp>

#include <algorithm>
#include <atomic>
#include <charconv>
#include <chrono>
#include <cmath>
#include <fstream>
#include <mutex>
#include <ostream>
#include <set>
#include <sstream>
#include <thread>

namespace sparsereg {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr const char* kVersion = "sparsereg 0.1.0";
constexpr std::uint64_t kEvalStream = 0xE7A1;
constexpr std::uint64_t kValidationStream = 0x5A11;

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::string item;
  std::istringstream in(s);
  while (std::getline(in, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

double to_double(const std::string& s) {
  double v = 0.0;
  auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size() || !std::isfinite(v))
    throw ConfigError("expected a number, got '" + s + "'");
  return v;
}

std::int64_t to_int(const std::string& s) {
  std::int64_t v = 0;
  auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size()) throw ConfigError("expected an integer, got '" + s + "'");
  return v;
}

std::uint64_t to_uint(const std::string& s) {
  std::uint64_t v = 0;
  auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size())
    throw ConfigError("expected a non-negative integer, got '" + s + "'");
  return v;
}

bool to_bool(const std::string& s) {
  if (s == "true" || s == "1" || s == "yes" || s == "on") return true;
  if (s == "false" || s == "0" || s == "no" || s == "off") return false;
  throw ConfigError("expected true/false, got '" + s + "'");
}

SparsityMode to_mode(const std::string& s) {
  if (s == "spu") return SparsityMode::spu;
  if (s == "sfi") return SparsityMode::sfi;
  throw ConfigError("unknown sparsity mode '" + s + "' (sfi, spu)");
}

std::string mode_name(SparsityMode m) { return m == SparsityMode::spu ? "spu" : "sfi"; }

template <typename T, typename F>
std::vector<T> to_list(const std::string& s, F f) {
  std::vector<T> out;
  for (const auto& item : split_list(s)) out.push_back(static_cast<T>(f(item)));
  return out;
}

template <typename T>
std::string join(const std::vector<T>& xs) {
  std::string out;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    if (i) out += ",";
    if constexpr (std::is_floating_point_v<T>)
      out += io::format_double(xs[i]);
    else
      out += std::to_string(xs[i]);
  }
  return out;
}

double mean_of(const std::vector<double>& xs) {
  double s = 0.0;
  for (double x : xs) s += x;
  return s / static_cast<double>(xs.size());
}

double population_std(const std::vector<double>& xs) {
  const double m = mean_of(xs);
  double s = 0.0;
  for (double x : xs) s += (x - m) * (x - m);
  return std::sqrt(s / static_cast<double>(xs.size()));
}

json number_or_null(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

}  // namespace

KeyValues parse_key_values(const std::string& text, const std::string& origin) {
  KeyValues kv;
  std::string section;
  std::istringstream in(text);
  std::string raw;
  std::size_t line_no = 0;
  while (std::getline(in, raw)) {
    ++line_no;
    auto cut = raw.find_first_of("#;");
    std::string line = trim(cut == std::string::npos ? raw : raw.substr(0, cut));
    if (line.empty()) continue;
    const auto where = origin + ":" + std::to_string(line_no);
    if (line.front() == '[') {
      if (line.back() != ']' || line.size() < 3) throw ParseError(where + ": malformed section header");
      section = trim(std::string_view(line).substr(1, line.size() - 2));
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ParseError(where + ": expected 'key = value'");
    const auto key = trim(std::string_view(line).substr(0, eq));
    if (key.empty()) throw ParseError(where + ": empty key");
    const auto full = section.empty() ? key : section + "." + key;
    if (kv.count(full)) throw ParseError(where + ": duplicate key '" + full + "'");
    kv[full] = trim(std::string_view(line).substr(eq + 1));
  }
  return kv;
}

KeyValues read_key_values(const fs::path& path) { return parse_key_values(io::read_file(path), path.string()); }

KeyValues merge(KeyValues base, const KeyValues& overrides) {
  for (const auto& [k, v] : overrides) base[k] = v;
  return base;
}

RunConfig config_from_key_values(const KeyValues& kv) {
  RunConfig c;
  std::vector<std::string> errors;
  using Setter = std::function<void(const std::string&)>;
  const std::map<std::string, Setter> setters{
      {"run.env", [&](const std::string& v) { c.env = v; }},
      {"run.algorithm", [&](const std::string& v) { c.algorithm = parse_algorithm(v); }},
      {"run.hidden_dims", [&](const std::string& v) { c.hidden_dims = to_list<std::size_t>(v, to_uint); }},
      {"run.total_steps", [&](const std::string& v) { c.total_steps = to_int(v); }},
      {"run.eval_interval", [&](const std::string& v) { c.eval_interval = to_int(v); }},
      {"run.seeds", [&](const std::string& v) { c.seeds = to_list<std::uint64_t>(v, to_uint); }},
      {"run.eval_episodes", [&](const std::string& v) { c.eval_episodes = static_cast<int>(to_int(v)); }},
      {"run.output_dir", [&](const std::string& v) { c.output_dir = v; }},
      {"run.checkpoint", [&](const std::string& v) { c.checkpoint = to_bool(v); }},
      {"run.jobs", [&](const std::string& v) { c.jobs = static_cast<int>(to_int(v)); }},
      {"dataset.path", [&](const std::string& v) { c.dataset.path = fs::path(v); }},
      {"dataset.validation_path", [&](const std::string& v) { c.dataset.validation_path = fs::path(v); }},
      {"dataset.validation_fraction", [&](const std::string& v) { c.dataset.validation_fraction = to_double(v); }},
      {"dataset.quality", [&](const std::string& v) { c.dataset.quality = parse_dataset_quality(v); }},
      {"dataset.size", [&](const std::string& v) { c.dataset.size = to_uint(v); }},
      {"dataset.validation_size", [&](const std::string& v) { c.dataset.validation_size = to_uint(v); }},
      {"dataset.seed", [&](const std::string& v) { c.dataset.gen_seed = to_uint(v); }},
      {"regularizer.kind", [&](const std::string& v) { c.regularizer.kind = parse_regularizer(v); }},
      {"regularizer.sparsity", [&](const std::string& v) { c.regularizer.sparse.sparsity = to_double(v); }},
      {"regularizer.mode", [&](const std::string& v) { c.regularizer.sparse.mode = to_mode(v); }},
      {"regularizer.refresh_interval",
       [&](const std::string& v) {
         c.regularizer.sparse.refresh_interval = to_int(v);
         c.sparse_schedule_explicit = true;
       }},
      {"regularizer.refresh_cutoff",
       [&](const std::string& v) {
         c.regularizer.sparse.refresh_cutoff = to_int(v);
         c.sparse_schedule_explicit = true;
       }},
      {"regularizer.score_batch_size", [&](const std::string& v) { c.regularizer.sparse.score_batch_size = to_uint(v); }},
      {"regularizer.mask_biases", [&](const std::string& v) { c.regularizer.sparse.mask_biases = to_bool(v); }},
      {"regularizer.fixed_score_batch",
       [&](const std::string& v) { c.regularizer.sparse.fixed_score_batch = to_bool(v); }},
      {"regularizer.l1_lambda", [&](const std::string& v) { c.regularizer.l1_lambda = to_double(v); }},
      {"regularizer.dropout_rate", [&](const std::string& v) { c.regularizer.dropout_rate = to_double(v); }},
      {"regularizer.weight_decay", [&](const std::string& v) { c.regularizer.weight_decay = to_double(v); }},
      {"hyper.gamma", [&](const std::string& v) { c.hyper.gamma = to_double(v); }},
      {"hyper.tau", [&](const std::string& v) { c.hyper.tau = to_double(v); }},
      {"hyper.policy_freq", [&](const std::string& v) { c.hyper.policy_freq = static_cast<int>(to_int(v)); }},
      {"hyper.lr", [&](const std::string& v) { c.hyper.lr = to_double(v); }},
      {"hyper.batch", [&](const std::string& v) { c.hyper.batch = to_uint(v); }},
      {"hyper.td3bc_alpha", [&](const std::string& v) { c.hyper.td3bc_alpha = to_double(v); }},
      {"hyper.iql_expectile", [&](const std::string& v) { c.hyper.iql_expectile = to_double(v); }},
      {"hyper.iql_beta", [&](const std::string& v) { c.hyper.iql_beta = to_double(v); }},
      {"hyper.awr_clip", [&](const std::string& v) { c.hyper.awr_clip = to_double(v); }},
      {"hyper.policy_noise", [&](const std::string& v) { c.hyper.policy_noise = to_double(v); }},
      {"hyper.noise_clip", [&](const std::string& v) { c.hyper.noise_clip = to_double(v); }},
      {"hyper.divergence_threshold", [&](const std::string& v) { c.hyper.divergence_threshold = to_double(v); }},
  };
  for (const auto& [key, value] : kv) {
    if (key.rfind("sweep.", 0) == 0) continue;
    auto it = setters.find(key);
    if (it == setters.end()) {
      errors.push_back(key + ": unknown key");
      continue;
    }
    try {
      it->second(value);
    } catch (const Error& e) {
      errors.push_back(key + ": " + e.what());
    }
  }
  if (!errors.empty()) {
    std::string msg = "invalid configuration:";
    for (const auto& e : errors) msg += "\n  " + e;
    throw ConfigError(msg);
  }
  c.validate();
  return c;
}

void RunConfig::validate() const {
  std::vector<std::string> errors;
  auto check = [&](bool ok, const std::string& what) {
    if (!ok) errors.push_back(what);
  };
  const auto names = env_names();
  check(std::find(names.begin(), names.end(), env) != names.end(), "run.env: unknown environment '" + env + "'");
  check(!hidden_dims.empty(), "run.hidden_dims: at least one hidden layer required");
  check(std::all_of(hidden_dims.begin(), hidden_dims.end(), [](std::size_t h) { return h > 0; }),
        "run.hidden_dims: widths must be positive");
  check(eval_interval >= 1, "run.eval_interval: must be positive");
  check(total_steps >= eval_interval, "run.total_steps: must be at least run.eval_interval");
  check(!seeds.empty(), "run.seeds: at least one seed required");
  check(std::set<std::uint64_t>(seeds.begin(), seeds.end()).size() == seeds.size(), "run.seeds: duplicate seed");
  check(eval_episodes >= 1, "run.eval_episodes: must be positive");
  check(jobs >= 1, "run.jobs: must be positive");
  check(!output_dir.empty(), "run.output_dir: must not be empty");
  if (!dataset.path) {
    check(dataset.size > 0, "dataset.size: must be positive");
    check(!dataset.validation_size || *dataset.validation_size > 0, "dataset.validation_size: must be positive");
  } else if (!dataset.validation_path) {
    check(dataset.validation_fraction > 0.0 && dataset.validation_fraction < 1.0,
          "dataset.validation_fraction: must lie in (0, 1)");
  }
  try {
    hyper.validate();
  } catch (const ConfigError& e) {
    errors.push_back(std::string("hyper: ") + e.what());
  }
  try {
    agent_options().regularizer.validate();
  } catch (const ConfigError& e) {
    errors.push_back(std::string("regularizer: ") + e.what());
  }
  if (!errors.empty()) {
    std::string msg = "invalid configuration:";
    for (const auto& e : errors) msg += "\n  " + e;
    throw ConfigError(msg);
  }
}

KeyValues RunConfig::to_key_values() const {
  KeyValues kv;
  kv["run.env"] = env;
  kv["run.algorithm"] = to_string(algorithm);
  kv["run.hidden_dims"] = join(hidden_dims);
  kv["run.total_steps"] = std::to_string(total_steps);
  kv["run.eval_interval"] = std::to_string(eval_interval);
  kv["run.seeds"] = join(seeds);
  kv["run.eval_episodes"] = std::to_string(eval_episodes);
  kv["run.output_dir"] = output_dir.string();
  kv["run.checkpoint"] = checkpoint ? "true" : "false";
  if (dataset.path) {
    kv["dataset.path"] = dataset.path->string();
    if (dataset.validation_path)
      kv["dataset.validation_path"] = dataset.validation_path->string();
    else
      kv["dataset.validation_fraction"] = io::format_double(dataset.validation_fraction);
  } else {
    kv["dataset.quality"] = to_string(dataset.quality);
    kv["dataset.size"] = std::to_string(dataset.size);
    kv["dataset.validation_size"] = std::to_string(dataset.validation_size.value_or(dataset.size / 4));
    kv["dataset.seed"] = std::to_string(dataset.gen_seed);
  }
  const auto& r = regularizer;
  kv["regularizer.kind"] = to_string(r.kind);
  switch (r.kind) {
    case RegularizerKind::sparse: {
      const auto s = agent_options().regularizer.sparse;
      kv["regularizer.sparsity"] = io::format_double(s.sparsity);
      kv["regularizer.mode"] = mode_name(s.mode);
      kv["regularizer.refresh_interval"] = std::to_string(s.refresh_interval);
      kv["regularizer.refresh_cutoff"] = std::to_string(s.refresh_cutoff);
      kv["regularizer.score_batch_size"] = std::to_string(s.score_batch_size);
      kv["regularizer.mask_biases"] = s.mask_biases ? "true" : "false";
      kv["regularizer.fixed_score_batch"] = s.fixed_score_batch ? "true" : "false";
      break;
    }
    case RegularizerKind::l1: kv["regularizer.l1_lambda"] = io::format_double(r.l1_lambda); break;
    case RegularizerKind::dropout: kv["regularizer.dropout_rate"] = io::format_double(r.dropout_rate); break;
    case RegularizerKind::weight_decay: kv["regularizer.weight_decay"] = io::format_double(r.weight_decay); break;
    default: break;
  }
  const auto& h = hyper;
  kv["hyper.gamma"] = io::format_double(h.gamma);
  kv["hyper.tau"] = io::format_double(h.tau);
  kv["hyper.policy_freq"] = std::to_string(h.policy_freq);
  kv["hyper.lr"] = io::format_double(h.lr);
  kv["hyper.batch"] = std::to_string(h.batch);
  kv["hyper.td3bc_alpha"] = io::format_double(h.td3bc_alpha);
  kv["hyper.iql_expectile"] = io::format_double(h.iql_expectile);
  kv["hyper.iql_beta"] = io::format_double(h.iql_beta);
  kv["hyper.awr_clip"] = io::format_double(h.awr_clip);
  kv["hyper.policy_noise"] = io::format_double(h.policy_noise);
  kv["hyper.noise_clip"] = io::format_double(h.noise_clip);
  kv["hyper.divergence_threshold"] = io::format_double(h.divergence_threshold);
  return kv;
}

std::string to_snapshot(const RunConfig& cfg) {
  // run.jobs only changes scheduling, never results, so it stays out of the snapshot
  std::ostringstream out;
  std::string section;
  for (const auto& [key, value] : cfg.to_key_values()) {
    const auto dot = key.find('.');
    const auto s = key.substr(0, dot);
    if (s != section) {
      if (!section.empty()) out << "\n";
      out << "[" << s << "]\n";
      section = s;
    }
    out << key.substr(dot + 1) << " = " << value << "\n";
  }
  return out.str();
}

AgentOptions RunConfig::agent_options() const {
  AgentOptions o;
  o.algorithm = algorithm;
  o.hidden = hidden_dims;
  o.hyper = hyper;
  o.regularizer = regularizer;
  if (!sparse_schedule_explicit) {
    const auto derived = SparsityConfig::for_run(total_steps, regularizer.sparse.sparsity, regularizer.sparse.mode);
    o.regularizer.sparse.refresh_interval = derived.refresh_interval;
    o.regularizer.sparse.refresh_cutoff = derived.refresh_cutoff;
  }
  return o;
}

RunData resolve_dataset(const RunConfig& cfg) {
  const auto env = make_env(cfg.env);
  const auto& spec = env->spec();
  auto check_env = [&](const OfflineDataset& ds, const fs::path& p) {
    if (ds.info().env_name != spec.name)
      throw ConfigError(p.string() + ": dataset is for '" + ds.info().env_name + "', run uses '" + spec.name + "'");
  };
  if (cfg.dataset.path) {
    auto ds = load(*cfg.dataset.path);
    check_env(ds, *cfg.dataset.path);
    if (cfg.dataset.validation_path) {
      auto val = load(*cfg.dataset.validation_path);
      check_env(val, *cfg.dataset.validation_path);
      return {std::move(ds), std::move(val)};
    }
    auto [tr, va] = split(ds, cfg.dataset.validation_fraction);
    return {std::move(tr), std::move(va)};
  }
  const auto val_size = cfg.dataset.validation_size.value_or(std::max<std::size_t>(1, cfg.dataset.size / 4));
  auto train = generate(*env, cfg.dataset.quality, cfg.dataset.size, cfg.dataset.gen_seed);
  auto val = generate(*env, cfg.dataset.quality, val_size, derive_seed(cfg.dataset.gen_seed, kValidationStream));
  // relabel so the manifest says which split it is
  auto info = val.info();
  info.split = DatasetSplit::validation;
  OfflineDataset validation(info, val.transitions(), val.trajectory_ids());
  return {std::move(train), std::move(validation)};
}

bool RunRecord::all_ok() const {
  return std::all_of(seeds.begin(), seeds.end(), [](const SeedResult& s) { return s.ok; });
}

void summarize(RunRecord& record) {
  std::vector<double> finals;
  for (const auto& s : record.seeds)
    if (s.ok) finals.push_back(s.final_normalized);
  if (finals.empty()) {
    record.normalized_mean = record.normalized_std = kNaN;
    return;
  }
  record.normalized_mean = mean_of(finals);
  record.normalized_std = population_std(finals);
}

void write_summary(const RunRecord& record, const fs::path& dataset_reference) {
  json seeds = json::array();
  for (const auto& s : record.seeds) {
    seeds.push_back({{"seed", s.seed},
                     {"status", s.ok ? "ok" : "diverged"},
                     {"error", s.error},
                     {"steps_completed", s.steps_completed},
                     {"curve", s.curve_path.filename().string()},
                     {"final_return_mean", number_or_null(s.final_return_mean)},
                     {"final_return_std", number_or_null(s.final_return_std)},
                     {"final_normalized_score", number_or_null(s.final_normalized)},
                     {"final_train_mse", number_or_null(s.final_train_mse)},
                     {"final_val_mse", number_or_null(s.final_val_mse)},
                     {"min_val_mse", number_or_null(s.min_val_mse)},
                     {"wall_seconds", s.wall_seconds}});
  }
  json j{{"version", kVersion},
         {"config_snapshot", "config.snapshot"},
         {"dataset", dataset_reference.string()},
         {"env", record.config.env},
         {"algorithm", to_string(record.config.algorithm)},
         {"regularizer", to_string(record.config.regularizer.kind)},
         {"seeds", seeds},
         {"normalized_score_mean", number_or_null(record.normalized_mean)},
         {"normalized_score_std", number_or_null(record.normalized_std)},
         {"wall_seconds", record.wall_seconds}};
  io::write_atomically(record.config.output_dir / "summary.json", j.dump(2) + "\n");
}

namespace {

SeedResult train_one_seed(const RunConfig& cfg, const RunData& data, const ScoreBaselines& baselines,
                          std::uint64_t seed) {
  const auto start = std::chrono::steady_clock::now();
  const auto env = make_env(cfg.env);
  SeedResult res;
  res.seed = seed;
  res.curve_path = cfg.output_dir / ("curve_" + std::to_string(seed) + ".csv");

  auto agent = AgentState::create(env->spec(), cfg.agent_options(), seed);
  const auto eval_seed = derive_seed(seed, kEvalStream);
  EvalHook hook = [&](const AgentState& a) {
    EvalPoint p;
    const auto stats = evaluate_policy(a.actor, *env, cfg.eval_episodes, eval_seed);
    p.return_mean = stats.mean;
    p.return_std = stats.std;
    p.normalized_score = normalized_score(stats.mean, baselines);
    p.train_mse = action_mse(a.actor, data.train);
    p.val_mse = action_mse(a.actor, data.validation);
    return p;
  };
  TrainOptions opts{cfg.total_steps, cfg.eval_interval};
  LearningCurve curve;
  try {
    curve = train(agent, data.train, opts, hook);
  } catch (const TrainingAborted& e) {
    curve = e.partial_curve();
    res.ok = false;
    res.error = e.what();
  }
  curve.write_csv(res.curve_path);
  res.steps_completed = agent.step;
  if (!curve.empty()) {
    const auto& last = curve.back();
    res.final_return_mean = last.return_mean;
    res.final_return_std = last.return_std;
    res.final_normalized = last.normalized_score;
    res.final_train_mse = last.train_mse;
    res.final_val_mse = last.val_mse;
    res.min_val_mse = last.val_mse;
    for (const auto& r : curve.rows()) res.min_val_mse = std::min(res.min_val_mse, r.val_mse);
  }
  if (cfg.checkpoint && res.ok) save_actor(agent.actor, cfg.env, cfg.output_dir / ("actor_final_" + std::to_string(seed)));
  res.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return res;
}

}  // namespace

RunRecord run_training(const RunConfig& cfg, std::ostream* log) {
  cfg.validate();
  const auto start = std::chrono::steady_clock::now();
  fs::create_directories(cfg.output_dir);
  io::write_atomically(cfg.output_dir / "config.snapshot", to_snapshot(cfg));

  const RunData data = resolve_dataset(cfg);
  fs::path dataset_reference;
  if (cfg.dataset.path) {
    dataset_reference = manifest_path(fs::absolute(*cfg.dataset.path));
  } else {
    save(data.train, cfg.output_dir / "dataset.train");
    save(data.validation, cfg.output_dir / "dataset.validation");
    dataset_reference = manifest_path("dataset.train");
  }
  const auto baselines = pinned_baselines(cfg.env);

  RunRecord record;
  record.config = cfg;
  record.seeds.resize(cfg.seeds.size());
  std::mutex log_mutex;
  auto run_index = [&](std::size_t i) {
    record.seeds[i] = train_one_seed(cfg, data, baselines, cfg.seeds[i]);
    if (log) {
      const auto& s = record.seeds[i];
      std::lock_guard lock(log_mutex);
      *log << "seed " << s.seed << ": " << (s.ok ? "ok" : "diverged") << " after " << s.steps_completed
           << " steps, return " << s.final_return_mean << ", normalized " << s.final_normalized << ", val_mse "
           << s.final_val_mse << " (" << s.wall_seconds << " s)";
      if (!s.ok) *log << ": " << s.error;
      *log << "\n";
    }
  };
  const auto jobs = std::min<std::size_t>(static_cast<std::size_t>(cfg.jobs), cfg.seeds.size());
  if (jobs <= 1) {
    for (std::size_t i = 0; i < cfg.seeds.size(); ++i) run_index(i);
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> workers;
    std::exception_ptr failure;
    std::mutex failure_mutex;
    for (std::size_t w = 0; w < jobs; ++w) {
      workers.emplace_back([&] {
        for (std::size_t i; (i = next++) < cfg.seeds.size();) {
          try {
            run_index(i);
          } catch (...) {
            std::lock_guard lock(failure_mutex);
            if (!failure) failure = std::current_exception();
          }
        }
      });
    }
    for (auto& t : workers) t.join();
    if (failure) std::rethrow_exception(failure);
  }
  summarize(record);
  record.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  write_summary(record, dataset_reference);
  return record;
}

namespace {

constexpr const char* kActorFormat = "sparsereg-actor";
constexpr int kActorVersion = 1;

}  // namespace

void save_actor(const Mlp& actor, const std::string& env_name, const fs::path& stem) {
  const auto& o = actor.options();
  json tensors = json::array();
  std::string bytes;
  const auto names = actor.parameter_names();
  const auto params = actor.parameters();
  for (std::size_t i = 0; i < params.size(); ++i) {
    tensors.push_back({{"name", names[i]}, {"shape", params[i]->shape()}});
    for (double v : params[i]->data()) io::put_f64(bytes, v);
  }
  const bool spectral = actor.spectral_layer().has_value();
  if (spectral) {
    for (double v : actor.spectral_u()) io::put_f64(bytes, v);
    for (double v : actor.spectral_v()) io::put_f64(bytes, v);
  }
  json manifest{{"format", kActorFormat},
                {"version", kActorVersion},
                {"env_name", env_name},
                {"in_dim", actor.in_dim()},
                {"out_dim", actor.out_dim()},
                {"hidden", o.hidden},
                {"activation", o.activation == Activation::relu ? "relu" : "tanh"},
                {"bounded_output", o.bounded_output ? json(*o.bounded_output) : json(nullptr)},
                {"dropout_rate", o.dropout_rate},
                {"layer_norm", o.layer_norm},
                {"spectral_norm", o.spectral_norm},
                {"endianness", "little"},
                {"tensors", tensors},
                {"bytes", bytes.size()}};
  fs::path bin = stem;
  bin += ".bin";
  io::write_atomically(bin, bytes);
  io::write_atomically(manifest_path(stem), manifest.dump(2) + "\n");
}

ActorCheckpoint load_actor(const fs::path& stem) {
  const auto mpath = manifest_path(stem);
  const auto text = io::read_file(mpath);
  json m;
  try {
    m = json::parse(text);
  } catch (const json::parse_error& e) {
    const auto [line, col] = io::line_and_column(text, e.byte);
    throw ParseError(mpath.string() + ":" + std::to_string(line) + ":" + std::to_string(col) + ": invalid JSON");
  }
  ActorCheckpoint out;
  MlpOptions o;
  std::size_t in_dim = 0, out_dim = 0, expected_bytes = 0;
  try {
    if (m.at("format").get<std::string>() != kActorFormat) throw SchemaError(mpath.string() + ": not an actor checkpoint");
    if (m.at("version").get<int>() != kActorVersion) throw SchemaError(mpath.string() + ": unsupported version");
    if (m.at("endianness").get<std::string>() != "little") throw SchemaError(mpath.string() + ": unsupported endianness");
    out.env_name = m.at("env_name").get<std::string>();
    in_dim = m.at("in_dim").get<std::size_t>();
    out_dim = m.at("out_dim").get<std::size_t>();
    o.hidden = m.at("hidden").get<std::vector<std::size_t>>();
    const auto act = m.at("activation").get<std::string>();
    if (act != "relu" && act != "tanh") throw SchemaError(mpath.string() + ": unknown activation '" + act + "'");
    o.activation = act == "relu" ? Activation::relu : Activation::tanh;
    if (!m.at("bounded_output").is_null()) o.bounded_output = m.at("bounded_output").get<double>();
    o.dropout_rate = m.at("dropout_rate").get<double>();
    o.layer_norm = m.at("layer_norm").get<bool>();
    o.spectral_norm = m.at("spectral_norm").get<bool>();
    expected_bytes = m.at("bytes").get<std::size_t>();
  } catch (const json::exception& e) {
    throw SchemaError(mpath.string() + ": " + e.what());
  }
  Rng unused(0);
  out.actor = Mlp(in_dim, out_dim, o, unused);

  fs::path bin = stem;
  bin += ".bin";
  const auto bytes = io::read_file(bin);
  const auto params = out.actor.parameters();
  std::size_t need = 0;
  for (const auto* p : params) need += 8 * p->size();
  if (out.actor.spectral_layer()) need += 8 * (out.actor.spectral_u().size() + out.actor.spectral_v().size());
  if (need != expected_bytes) throw SchemaError(mpath.string() + ": byte count does not match the architecture");
  if (bytes.size() != need)
    throw ParseError(bin.string() + ": expected " + std::to_string(need) + " bytes, found " + std::to_string(bytes.size()));
  const auto* p = reinterpret_cast<const unsigned char*>(bytes.data());
  auto next = [&] {
    const double v = io::get_f64(p);
    if (!std::isfinite(v)) throw ParseError(bin.string() + ": non-finite value");
    p += 8;
    return v;
  };
  for (auto* t : params)
    for (double& v : t->data()) v = next();
  if (out.actor.spectral_layer()) {
    for (auto& v : out.actor.spectral_u()) v = next();
    for (auto& v : out.actor.spectral_v()) v = next();
  }
  return out;
}

SweepGrid grid_from_key_values(const KeyValues& kv) {
  SweepGrid g;
  std::vector<std::string> errors;
  for (const auto& [key, value] : kv) {
    if (key.rfind("sweep.", 0) != 0) continue;
    const auto axis = key.substr(6);
    try {
      if (axis == "sparsity")
        g.sparsity = to_list<double>(value, to_double);
      else if (axis == "size")
        g.size = to_list<std::size_t>(value, to_uint);
      else if (axis == "regularizer")
        g.regularizer = to_list<RegularizerKind>(value, [](const std::string& s) { return parse_regularizer(s); });
      else if (axis == "algorithm")
        g.algorithm = to_list<AlgorithmKind>(value, [](const std::string& s) { return parse_algorithm(s); });
      else if (axis == "mode")
        g.mode = to_list<SparsityMode>(value, to_mode);
      else
        errors.push_back(key + ": unknown sweep axis");
    } catch (const Error& e) {
      errors.push_back(key + ": " + e.what());
    }
  }
  if (!errors.empty()) {
    std::string msg = "invalid sweep grid:";
    for (const auto& e : errors) msg += "\n  " + e;
    throw ConfigError(msg);
  }
  return g;
}

std::vector<SweepCell> expand_grid(const RunConfig& base, const SweepGrid& grid) {
  const auto sizes = grid.size.empty() ? std::vector<std::size_t>{base.dataset.size} : grid.size;
  const auto algos = grid.algorithm.empty() ? std::vector<AlgorithmKind>{base.algorithm} : grid.algorithm;
  std::vector<RegularizerKind> regs = grid.regularizer;
  if (regs.empty()) regs = {grid.sparsity.empty() ? base.regularizer.kind : RegularizerKind::sparse};
  const auto modes = grid.mode.empty() ? std::vector<SparsityMode>{base.regularizer.sparse.mode} : grid.mode;
  const auto sparsities =
      grid.sparsity.empty() ? std::vector<double>{base.regularizer.sparse.sparsity} : grid.sparsity;
  if (!grid.size.empty() && base.dataset.path)
    throw ConfigError("sweep.size: cannot vary the size of a dataset loaded from dataset.path");

  std::vector<SweepCell> cells;
  for (auto size : sizes)
    for (auto algo : algos)
      for (auto reg : regs) {
        const bool sparse = reg == RegularizerKind::sparse;
        for (std::size_t mi = 0; mi < (sparse ? modes.size() : 1); ++mi)
          for (std::size_t si = 0; si < (sparse ? sparsities.size() : 1); ++si) {
            SweepCell cell;
            cell.config = base;
            cell.size = size;
            cell.config.dataset.size = size;
            if (!grid.size.empty()) cell.config.dataset.validation_size.reset();
            cell.config.algorithm = algo;
            cell.config.regularizer.kind = reg;
            std::ostringstream label;
            label << "size" << size << "_" << to_string(algo) << "_" << to_string(reg);
            if (sparse) {
              cell.config.regularizer.sparse.mode = modes[mi];
              cell.config.regularizer.sparse.sparsity = sparsities[si];
              cell.sparsity = sparsities[si];
              label << "_" << mode_name(modes[mi]) << "_s" << io::format_double(sparsities[si]);
            }
            cell.label = label.str();
            cell.config.output_dir = base.output_dir / cell.label;
            cells.push_back(std::move(cell));
          }
      }
  return cells;
}

std::string format_cell(double mean, double std) {
  return io::format_double(mean) + "\xC2\xB1" + io::format_double(std);
}

std::vector<SweepCell> run_sweep(const RunConfig& base, const SweepGrid& grid, std::ostream* log) {
  auto cells = expand_grid(base, grid);
  for (auto& cell : cells) cell.config.validate();
  fs::create_directories(base.output_dir);
  for (auto& cell : cells) {
    if (log) *log << "cell " << cell.label << "\n";
    try {
      cell.record = run_training(cell.config, log);
      cell.ok = cell.record.all_ok();
      if (!cell.ok) {
        for (const auto& s : cell.record.seeds)
          if (!s.ok) {
            cell.error = "seed " + std::to_string(s.seed) + ": " + s.error;
            break;
          }
      }
    } catch (const std::exception& e) {
      cell.ok = false;
      cell.error = e.what();
    }
  }

  std::ostringstream longform;
  longform << "cell,size,algorithm,regularizer,mode,sparsity,seed,status,final_normalized_score,final_return_mean,"
              "final_train_mse,final_val_mse,error\n";
  auto csv_text = [](std::string s) {
    for (auto& ch : s)
      if (ch == ',' || ch == '\n' || ch == '"') ch = ' ';
    return s;
  };
  for (const auto& cell : cells) {
    const auto& c = cell.config;
    const std::string prefix = cell.label + "," + std::to_string(cell.size) + "," + to_string(c.algorithm) + "," +
                               to_string(c.regularizer.kind) + "," +
                               (cell.sparsity ? mode_name(c.regularizer.sparse.mode) : "") + "," +
                               (cell.sparsity ? io::format_double(*cell.sparsity) : "");
    if (cell.record.seeds.empty()) {
      longform << prefix << ",,failed,nan,nan,nan,nan," << csv_text(cell.error) << "\n";
      continue;
    }
    for (const auto& s : cell.record.seeds)
      longform << prefix << "," << s.seed << "," << (s.ok ? "ok" : "diverged") << ","
               << io::format_double(s.final_normalized) << "," << io::format_double(s.final_return_mean) << ","
               << io::format_double(s.final_train_mse) << "," << io::format_double(s.final_val_mse) << ","
               << csv_text(s.error) << "\n";
  }
  io::write_atomically(base.output_dir / "sweep.csv", longform.str());

  // rows: dataset size; columns: everything else
  std::vector<std::string> columns;
  std::vector<std::size_t> rows;
  std::map<std::pair<std::size_t, std::string>, const SweepCell*> at;
  for (const auto& cell : cells) {
    const auto col = cell.label.substr(cell.label.find('_') + 1);
    if (std::find(columns.begin(), columns.end(), col) == columns.end()) columns.push_back(col);
    if (std::find(rows.begin(), rows.end(), cell.size) == rows.end()) rows.push_back(cell.size);
    at[{cell.size, col}] = &cell;
  }
  std::ostringstream table;
  table << "size";
  for (const auto& c : columns) table << "," << c;
  table << "\n";
  for (auto r : rows) {
    table << r;
    for (const auto& c : columns) {
      table << ",";
      auto it = at.find({r, c});
      if (it == at.end()) continue;
      const auto* cell = it->second;
      if (!cell->ok)
        table << "failed";
      else
        table << format_cell(cell->record.normalized_mean, cell->record.normalized_std);
    }
    table << "\n";
  }
  io::write_atomically(base.output_dir / "table.csv", table.str());
  return cells;
}

}  // namespace sparsereg
