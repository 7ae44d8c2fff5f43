#include "sparsereg/eval_metrics.hpp"

#include "sparsereg/errors.hpp"
#include "sparsereg/io.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

namespace sparsereg {

namespace {

using io::format_double;

double parse_double(const std::string& s) {
  if (s == "nan") return kNaN;
  double v = 0.0;
  auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size()) throw ParseError("bad number '" + s + "' in curve");
  return v;
}

}  // namespace

const std::vector<std::string>& curve_fixed_columns() {
  static const std::vector<std::string> cols{"step",        "return_mean",   "return_std",    "normalized_score",
                                             "train_mse",   "val_mse",       "actor_loss",    "critic_loss",
                                             "value_loss",  "global_sparsity", "mask_change"};
  return cols;
}

void LearningCurve::append(CurveRow row) {
  if (!rows_.empty() && row.step <= rows_.back().step) throw UsageError("curve steps must strictly increase");
  if (row.layer_sparsity.size() != sparsity_columns_.size())
    throw DimensionError("curve row has " + std::to_string(row.layer_sparsity.size()) + " sparsity values, expected " +
                         std::to_string(sparsity_columns_.size()));
  rows_.push_back(std::move(row));
}

std::vector<std::int64_t> LearningCurve::steps() const {
  std::vector<std::int64_t> out;
  for (const auto& r : rows_) out.push_back(r.step);
  return out;
}

void LearningCurve::write_csv(std::ostream& out) const {
  bool first = true;
  for (const auto& c : curve_fixed_columns()) {
    out << (first ? "" : ",") << c;
    first = false;
  }
  for (const auto& c : sparsity_columns_) out << ",sparsity." << c;
  out << "\n";
  for (const auto& r : rows_) {
    out << r.step;
    for (double v : {r.return_mean, r.return_std, r.normalized_score, r.train_mse, r.val_mse, r.actor_loss,
                     r.critic_loss, r.value_loss, r.global_sparsity, r.mask_change})
      out << "," << format_double(v);
    for (double v : r.layer_sparsity) out << "," << format_double(v);
    out << "\n";
  }
}

void LearningCurve::write_csv(const std::filesystem::path& path) const {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw Error("cannot write " + path.string());
  write_csv(f);
}

LearningCurve LearningCurve::read_csv(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw ParseError("cannot open " + path.string());
  auto split_line = [](const std::string& line) {
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    return cells;
  };
  std::string line;
  if (!std::getline(f, line)) throw ParseError(path.string() + ": empty curve file");
  const auto header = split_line(line);
  const auto& fixed = curve_fixed_columns();
  if (header.size() < fixed.size() || !std::equal(fixed.begin(), fixed.end(), header.begin()))
    throw ParseError(path.string() + ": unexpected curve header");
  std::vector<std::string> sparsity;
  for (std::size_t i = fixed.size(); i < header.size(); ++i) sparsity.push_back(header[i].substr(std::string("sparsity.").size()));
  LearningCurve curve(sparsity);
  std::size_t line_no = 1;
  while (std::getline(f, line)) {
    ++line_no;
    const auto cells = split_line(line);
    if (cells.size() != header.size())
      throw ParseError(path.string() + ": line " + std::to_string(line_no) + " has " + std::to_string(cells.size()) + " cells");
    CurveRow r;
    r.step = std::stoll(cells[0]);
    double* fields[] = {&r.return_mean, &r.return_std, &r.normalized_score, &r.train_mse, &r.val_mse,
                        &r.actor_loss,  &r.critic_loss, &r.value_loss,     &r.global_sparsity, &r.mask_change};
    for (std::size_t i = 0; i < std::size(fields); ++i) *fields[i] = parse_double(cells[i + 1]);
    for (std::size_t i = fixed.size(); i < cells.size(); ++i) r.layer_sparsity.push_back(parse_double(cells[i]));
    curve.append(std::move(r));
  }
  return curve;
}

ReturnStats evaluate_policy(const BatchPolicy& policy, const Environment& env, int n_episodes, std::uint64_t seed) {
  if (n_episodes < 1) throw UsageError("evaluation needs at least one episode");
  const auto& spec = env.spec();
  const auto n = static_cast<std::size_t>(n_episodes);
  std::vector<EnvState> states;
  states.reserve(n);
  for (std::size_t i = 0; i < n; ++i) states.push_back(env.reset(derive_seed(seed, i)));
  std::vector<double> returns(n, 0.0);

  Matrix obs(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(spec.obs_dim));
  for (int t = 0; t < spec.horizon; ++t) {
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < spec.obs_dim; ++j)
        obs(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = states[i].observation[j];
    const Matrix actions = policy(obs);
    if (actions.rows() != obs.rows() || static_cast<std::size_t>(actions.cols()) != spec.act_dim)
      throw DimensionError("policy returned actions of the wrong shape");
    for (std::size_t i = 0; i < n; ++i) {
      const auto row = actions.row(static_cast<Eigen::Index>(i));
      std::vector<double> a(row.data(), row.data() + row.size());
      auto result = env.step(states[i], a);
      returns[i] += result.reward;
      states[i] = std::move(result.state);
    }
  }
  ReturnStats stats;
  for (double r : returns) stats.mean += r;
  stats.mean /= static_cast<double>(n);
  double var = 0.0;
  for (double r : returns) var += (r - stats.mean) * (r - stats.mean);
  stats.std = std::sqrt(var / static_cast<double>(n));
  return stats;
}

ReturnStats evaluate_policy(const Mlp& actor, const Environment& env, int n_episodes, std::uint64_t seed) {
  return evaluate_policy([&actor](const Matrix& obs) { return actor.predict(obs); }, env, n_episodes, seed);
}

BatchPolicy expert_batch_policy(const Environment& env) {
  return [&env](const Matrix& obs) {
    Matrix out(obs.rows(), static_cast<Eigen::Index>(env.spec().act_dim));
    for (Eigen::Index i = 0; i < obs.rows(); ++i) {
      std::vector<double> o(obs.row(i).data(), obs.row(i).data() + obs.cols());
      const auto a = env.expert_action(o);
      for (std::size_t j = 0; j < a.size(); ++j) out(i, static_cast<Eigen::Index>(j)) = a[j];
    }
    return out;
  };
}

BatchPolicy random_batch_policy(const Environment& env, std::uint64_t seed) {
  auto rng = std::make_shared<Rng>(seed);
  const double bound = env.spec().act_bound;
  const auto act_dim = static_cast<Eigen::Index>(env.spec().act_dim);
  return [rng, bound, act_dim](const Matrix& obs) {
    std::uniform_real_distribution<double> u(-bound, bound);
    Matrix out(obs.rows(), act_dim);
    for (Eigen::Index i = 0; i < out.rows(); ++i)
      for (Eigen::Index j = 0; j < act_dim; ++j) out(i, j) = u(*rng);
    return out;
  };
}

double normalized_score(double score, const ScoreBaselines& baselines) {
  const double span = baselines.expert_score - baselines.random_score;
  if (span == 0.0) throw ConfigError("expert and random baselines coincide for " + baselines.env_name);
  return (score - baselines.random_score) / span;
}

ScoreBaselines estimate_baselines(const Environment& env, int n_episodes, std::uint64_t seed) {
  ScoreBaselines b;
  b.env_name = env.spec().name;
  b.expert_score = evaluate_policy(expert_batch_policy(env), env, n_episodes, seed).mean;
  b.random_score = evaluate_policy(random_batch_policy(env, derive_seed(seed, 0xBA5E)), env, n_episodes, seed).mean;
  return b;
}

ScoreBaselines pinned_baselines(const std::string& env_name) {
  // estimate_baselines(env, kBaselineEpisodes, kBaselineSeed); checked by test_eval_metrics
  if (env_name == "pointmass") return {env_name, -400.71995021395719, -11.85657118942412};
  if (env_name == "pendulum") return {env_name, -1257.475550341768, -45.431566730469235};
  throw ConfigError("no pinned score baselines for '" + env_name + "'");
}

double action_mse(const Mlp& actor, const OfflineDataset& split) {
  constexpr std::size_t kChunk = 4096;
  double total = 0.0;
  std::vector<std::size_t> idx;
  for (std::size_t start = 0; start < split.size(); start += kChunk) {
    const std::size_t end = std::min(split.size(), start + kChunk);
    idx.resize(end - start);
    for (std::size_t i = start; i < end; ++i) idx[i - start] = i;
    const auto batch = split.gather(idx);
    total += (actor.predict(batch.obs) - batch.actions).squaredNorm();
  }
  return total / static_cast<double>(split.size() * split.info().act_dim);
}

double quantile(std::vector<double> values, double q) {
  if (values.empty()) throw UsageError("quantile of an empty set");
  if (q < 0.0 || q > 1.0) throw UsageError("quantile level must lie in [0, 1]");
  std::sort(values.begin(), values.end());
  const double pos = q * static_cast<double>(values.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, values.size() - 1);
  return values[lo] + (pos - static_cast<double>(lo)) * (values[hi] - values[lo]);
}

AggregateCurve aggregate(const std::vector<RunCurve>& curves, const std::map<std::string, ScoreBaselines>& baselines) {
  if (curves.empty()) throw UsageError("nothing to aggregate");
  AggregateCurve out;
  out.steps = curves.front().curve.steps();
  if (out.steps.empty()) throw UsageError("cannot aggregate empty curves");
  for (const auto& c : curves)
    if (c.curve.steps() != out.steps) throw UsageError("curves do not share an evaluation cadence");

  auto base_for = [&](const std::string& env) -> const ScoreBaselines& {
    auto it = baselines.find(env);
    if (it == baselines.end()) throw ConfigError("no baselines for environment '" + env + "'");
    return it->second;
  };

  std::set<std::uint64_t> seeds;
  for (const auto& c : curves) seeds.insert(c.seed);
  out.mean_normalized.assign(out.steps.size(), 0.0);
  for (std::size_t s = 0; s < out.steps.size(); ++s) {
    double across_seeds = 0.0;
    for (auto seed : seeds) {
      double across_envs = 0.0;
      int n_envs = 0;
      for (const auto& c : curves) {
        if (c.seed != seed) continue;
        across_envs += normalized_score(c.curve.rows()[s].return_mean, base_for(c.env_name));
        ++n_envs;
      }
      across_seeds += across_envs / n_envs;
    }
    out.mean_normalized[s] = across_seeds / static_cast<double>(seeds.size());
  }

  std::vector<double> finals;
  for (const auto& c : curves) finals.push_back(normalized_score(c.curve.back().return_mean, base_for(c.env_name)));
  const double levels[] = {0.0, 0.25, 0.5, 0.75, 1.0};
  for (std::size_t i = 0; i < 5; ++i) out.final_quantiles[i] = quantile(finals, levels[i]);
  return out;
}

}  // namespace sparsereg
