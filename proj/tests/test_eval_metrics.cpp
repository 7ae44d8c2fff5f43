#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "sparsereg/errors.hpp"
#include "sparsereg/eval_metrics.hpp"
#include "support.hpp"

#include <sstream>

using namespace sparsereg;

namespace {

LearningCurve flat_curve(std::vector<double> returns, std::int64_t every = 10) {
  LearningCurve c;
  std::int64_t step = 0;
  for (double r : returns) {
    CurveRow row;
    row.step = step;
    row.return_mean = r;
    c.append(row);
    step += every;
  }
  return c;
}

Mlp constant_actor(std::size_t obs_dim, double value) {
  Rng rng(0);
  Mlp m(obs_dim, 1, MlpOptions{{}}, rng);
  m.layers()[0].weight.matrix().setZero();
  m.layers()[0].bias.matrix().setConstant(value);
  return m;
}

}  // namespace

TEST_CASE("normalized score") {
  const ScoreBaselines b{"x", -100.0, 100.0};
  CHECK(normalized_score(100.0, b) == 1.0);
  CHECK(normalized_score(-100.0, b) == 0.0);
  CHECK(normalized_score(50.0, b) == 0.75);
  CHECK_THROWS_AS(normalized_score(1.0, ScoreBaselines{"x", 3.0, 3.0}), ConfigError);

  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(-50.0, 50.0);
  for (int i = 0; i < 100; ++i) {
    const double s = u(rng), r = u(rng), e = r + 1.0 + std::abs(u(rng));
    const double a = 0.1 + std::abs(u(rng)), off = u(rng);
    const double base = normalized_score(s, {"x", r, e});
    CHECK(normalized_score(a * s + off, {"x", a * r + off, a * e + off}) == doctest::Approx(base).epsilon(1e-9));
  }
}

TEST_CASE("evaluate_policy") {
  PointMassEnv env;
  const auto expert = expert_batch_policy(env);
  SUBCASE("one episode has zero spread") { CHECK(evaluate_policy(expert, env, 1, 3).std == 0.0); }
  SUBCASE("deterministic for a seed") {
    const auto a = evaluate_policy(expert, env, 7, 3);
    const auto b = evaluate_policy(expert, env, 7, 3);
    CHECK(a.mean == b.mean);
    CHECK(a.std == b.std);
  }
  SUBCASE("matches a sequential rollout") {
    double total = 0.0;
    for (std::uint64_t i = 0; i < 5; ++i) {
      auto st = env.reset(derive_seed(42, i));
      for (bool done = false; !done;) {
        auto r = env.step(st, env.expert_action(st.observation));
        total += r.reward;
        st = r.state;
        done = r.done;
      }
    }
    CHECK(evaluate_policy(expert, env, 5, 42).mean == doctest::Approx(total / 5.0).epsilon(1e-12));
  }
  SUBCASE("an actor network is evaluated through predict") {
    const auto actor = constant_actor(3, 0.0);
    const auto from_net = evaluate_policy(actor, env, 4, 8);
    const auto from_fn = evaluate_policy([](const Matrix& o) { return Matrix(Matrix::Zero(o.rows(), 1)); }, env, 4, 8);
    CHECK(from_net.mean == from_fn.mean);
  }
  SUBCASE("bad requests") {
    CHECK_THROWS_AS(evaluate_policy(expert, env, 0, 1), UsageError);
    CHECK_THROWS_AS(evaluate_policy([](const Matrix& o) { return Matrix(Matrix::Zero(o.rows(), 2)); }, env, 2, 1),
                    DimensionError);
  }
}

TEST_CASE("pinned baselines match a fresh Monte-Carlo estimate") {
  for (const auto& name : env_names()) {
    auto env = make_env(name);
    const auto pinned = pinned_baselines(name);
    const auto fresh = estimate_baselines(*env, kBaselineEpisodes, kBaselineSeed);
    CAPTURE(name);
    CHECK(fresh.expert_score == doctest::Approx(pinned.expert_score).epsilon(1e-12));
    CHECK(fresh.random_score == doctest::Approx(pinned.random_score).epsilon(1e-12));
    CHECK(pinned.expert_score > pinned.random_score);

    // an independent 100-episode estimate lands near the pinned values
    const auto small = estimate_baselines(*env, 100, 777);
    const auto spread = evaluate_policy(random_batch_policy(*env, 5), *env, 100, 777).std;
    CHECK(std::abs(small.random_score - pinned.random_score) < 4.0 * spread / 10.0);
    CHECK(std::abs(normalized_score(small.expert_score, pinned) - 1.0) < 0.05);
  }
  CHECK_THROWS_AS(pinned_baselines("cartpole"), ConfigError);
}

TEST_CASE("action_mse") {
  SUBCASE("zero actor on unit actions") {
    std::vector<Transition> t;
    std::vector<std::uint64_t> ids;
    for (int i = 0; i < 10; ++i) {
      t.push_back({{0.1 * i, 0.0, 0.0}, {i % 2 ? 1.0 : -1.0}, 0.0, {0.0, 0.0, 0.0}, false});
      ids.push_back(0);
    }
    OfflineDataset ds({"pointmass", 3, 1}, t, ids);
    CHECK(action_mse(constant_actor(3, 0.0), ds) == 1.0);
    // direct summation for a constant actor: mean((c - a)^2)
    double direct = 0.0;
    for (const auto& x : t) direct += (0.25 - x.a[0]) * (0.25 - x.a[0]);
    CHECK(action_mse(constant_actor(3, 0.25), ds) == doctest::Approx(direct / 10.0));
  }
  SUBCASE("memorised single transition") {
    OfflineDataset ds({"pointmass", 3, 1}, {{{0.3, 0.1, 0.2}, {0.7}, 0.0, {0, 0, 0}, false}}, {0});
    CHECK(action_mse(constant_actor(3, 0.7), ds) == 0.0);
  }
  SUBCASE("pure") {
    PendulumEnv env;
    const auto ds = generate(env, DatasetQuality::medium, 5000, 1);
    Rng rng(2);
    Mlp actor(3, 1, MlpOptions{{16}}, rng);
    CHECK(action_mse(actor, ds) == action_mse(actor, ds));
    // chunked evaluation agrees with one full-batch pass
    const auto all = ds.all();
    CHECK(action_mse(actor, ds) == doctest::Approx((actor.predict(all.obs) - all.actions).squaredNorm() / 5000.0));
  }
}

TEST_CASE("quantiles") {
  const std::vector<double> v{0.5, 0.1, 0.4, 0.2, 0.3};
  CHECK(quantile(v, 0.5) == 0.3);
  CHECK(quantile(v, 0.0) == 0.1);
  CHECK(quantile(v, 1.0) == 0.5);
  CHECK(quantile({1.0, 2.0}, 0.25) == 1.25);
  CHECK_THROWS_AS(quantile({}, 0.5), UsageError);
}

TEST_CASE("aggregate") {
  const std::map<std::string, ScoreBaselines> b{{"a", {"a", 0.0, 10.0}}, {"b", {"b", -100.0, 0.0}}};
  SUBCASE("single run is its own normalization") {
    const auto agg = aggregate({{"a", 0, flat_curve({1.0, 5.0, 9.0})}}, b);
    CHECK(agg.steps == std::vector<std::int64_t>{0, 10, 20});
    CHECK(agg.mean_normalized[1] == doctest::Approx(0.5));
    CHECK(agg.final_quantiles[2] == doctest::Approx(0.9));
  }
  SUBCASE("two envs average") {
    const auto agg = aggregate({{"a", 0, flat_curve({2.0})}, {"b", 0, flat_curve({-20.0})}}, b);
    CHECK(agg.mean_normalized[0] == doctest::Approx(0.5));
  }
  SUBCASE("final quantiles across runs") {
    std::vector<RunCurve> runs;
    for (std::uint64_t s = 0; s < 5; ++s) runs.push_back({"a", s, flat_curve({0.0, static_cast<double>(s + 1)})});
    const auto agg = aggregate(runs, b);
    CHECK(agg.final_quantiles[0] == doctest::Approx(0.1));
    CHECK(agg.final_quantiles[2] == doctest::Approx(0.3));
    CHECK(agg.final_quantiles[4] == doctest::Approx(0.5));
    CHECK(agg.mean_normalized[1] == doctest::Approx(0.3));
  }
  SUBCASE("cadence mismatch") {
    CHECK_THROWS_AS(aggregate({{"a", 0, flat_curve({1.0, 2.0})}, {"a", 1, flat_curve({1.0, 2.0}, 20)}}, b), UsageError);
  }
  SUBCASE("missing baselines") { CHECK_THROWS_AS(aggregate({{"zzz", 0, flat_curve({1.0})}}, b), ConfigError); }
}

TEST_CASE("learning curve csv") {
  LearningCurve c({"actor.w0", "actor.b0"});
  for (std::int64_t s : {0, 100, 200}) {
    CurveRow r;
    r.step = s;
    r.return_mean = -12.5 + static_cast<double>(s) * 0.1;
    r.val_mse = 1.0 / 3.0;
    r.layer_sparsity = {0.95, 0.5};
    if (s) r.actor_loss = 0.125;
    c.append(r);
  }
  const auto dir = testing::scratch_dir("curve");
  c.write_csv(dir / "c.csv");
  const auto back = LearningCurve::read_csv(dir / "c.csv");
  CHECK(back.sparsity_columns() == c.sparsity_columns());
  REQUIRE(back.rows().size() == 3);
  CHECK(back.rows()[1].val_mse == c.rows()[1].val_mse);
  CHECK(std::isnan(back.rows()[0].actor_loss));
  CHECK(back.rows()[2].actor_loss == 0.125);
  std::ostringstream head;
  c.write_csv(head);
  CHECK(head.str().rfind("step,return_mean,", 0) == 0);
  CHECK(head.str().find("sparsity.actor.w0") != std::string::npos);

  CurveRow stale;
  stale.step = 200;
  stale.layer_sparsity = {0.0, 0.0};
  CHECK_THROWS_AS(c.append(stale), UsageError);
  CurveRow narrow;
  narrow.step = 300;
  CHECK_THROWS_AS(c.append(narrow), DimensionError);
}
