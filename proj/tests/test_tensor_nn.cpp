#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "sparsereg/autograd.hpp"
#include "sparsereg/errors.hpp"
#include "sparsereg/mlp.hpp"
#include "sparsereg/optim.hpp"
#include "support.hpp"

#include <cmath>
#include <cstring>

using namespace sparsereg;
using testing::check_gradients;
using testing::random_matrix;
using testing::random_tensor;

namespace {

bool bitwise_zero(double v) {
  std::uint64_t bits;
  std::memcpy(&bits, &v, sizeof bits);
  return bits == 0;
}

}  // namespace

TEST_CASE("tensor shape and storage") {
  Tensor t({2, 3}, 1.5);
  CHECK(t.size() == 6);
  CHECK(t.rows() == 2);
  CHECK(t.cols() == 3);
  CHECK(t.matrix()(1, 2) == 1.5);
  Tensor v({4});
  CHECK(v.rows() == 1);
  CHECK(v.cols() == 4);
  CHECK_THROWS_AS(Tensor({2, 2}, std::vector<double>{1, 2, 3}), DimensionError);
}

TEST_CASE("sum of parameters has an all-ones gradient") {
  std::mt19937_64 rng(1);
  auto p = random_tensor({3, 4}, rng);
  Tape tape;
  tape.backward(sum(tape.parameter(p)));
  for (double g : p.grad()) CHECK(g == 1.0);
}

TEST_CASE("single-layer MSE gradient matches the closed form 2/(B*out) (Wx - y) x^T") {
  std::mt19937_64 rng(2);
  auto W = random_tensor({2, 3}, rng);
  Tensor b({2});
  const Matrix X = random_matrix(5, 3, rng);
  const Matrix Y = random_matrix(5, 2, rng);
  Tape tape;
  tape.backward(mse(linear(tape.constant(X), tape.parameter(W), tape.parameter(b)), tape.constant(Y)));
  const Matrix residual = X * W.matrix().transpose() - Y;
  const Matrix expected = (2.0 / residual.size()) * residual.transpose() * X;
  CHECK((W.grad_matrix() - expected).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("every op passes the finite-difference check") {
  std::mt19937_64 rng(3);
  auto a = random_tensor({4, 3}, rng);
  auto b = random_tensor({4, 3}, rng);
  auto w = random_tensor({2, 3}, rng);
  auto bias = random_tensor({2}, rng);
  auto gain = random_tensor({3}, rng);
  auto shift = random_tensor({3}, rng);
  const Matrix c = random_matrix(4, 3, rng);
  Eigen::VectorXd rw(4);
  rw << 0.5, 2.0, 1.0, 0.1;
  Eigen::VectorXd u = Eigen::VectorXd::Random(2).normalized(), v = Eigen::VectorXd::Random(3).normalized();

  using Build = std::function<Var(Tape&)>;
  const std::vector<std::pair<const char*, Build>> cases{
      {"linear", [&](Tape& t) { return sum(square(linear(t.parameter(a), t.parameter(w), t.parameter(bias)))); }},
      {"relu", [&](Tape& t) { return sum(mul_constant(relu(t.parameter(a)), c)); }},
      {"tanh", [&](Tape& t) { return sum(mul_constant(tanh(t.parameter(a)), c)); }},
      {"scale/add/sub", [&](Tape& t) { return sum(square(sub(scale(t.parameter(a), 1.7), add(t.parameter(b), t.parameter(a))))); }},
      {"mul", [&](Tape& t) { return mean(mul(t.parameter(a), t.parameter(b))); }},
      {"sum_abs", [&](Tape& t) { return sum_abs(t.parameter(a)); }},
      {"minimum", [&](Tape& t) { return sum(mul_constant(minimum(t.parameter(a), t.parameter(b)), c)); }},
      {"concat", [&](Tape& t) { return sum(square(concat_cols(t.parameter(a), t.parameter(b)))); }},
      {"mse", [&](Tape& t) { return mse(t.parameter(a), t.parameter(b)); }},
      {"weighted_mse", [&](Tape& t) { return weighted_mse(t.parameter(a), t.parameter(b), rw); }},
      {"layer_norm",
       [&](Tape& t) {
         return sum(mul_constant(layer_norm(t.parameter(a), t.parameter(gain), t.parameter(shift), 1e-5), c));
       }},
      {"spectral_scale",
       [&](Tape& t) {
         return sum(square(linear(t.constant(c), spectral_scale(t.parameter(w), u, v, 1e-12), t.parameter(bias))));
       }},
  };
  for (const auto& [name, build] : cases) {
    CAPTURE(name);
    const auto r = check_gradients(build, {&a, &b, &w, &bias, &gain, &shift});
    CHECK(r.max_rel_error < 1e-4);
  }
}

TEST_CASE("sum_abs subgradient at zero is zero") {
  Tensor p({3}, std::vector<double>{0.0, 2.0, -3.0});
  Tape tape;
  tape.backward(sum_abs(tape.parameter(p)));
  CHECK(p.grad()[0] == 0.0);
  CHECK(p.grad()[1] == 1.0);
  CHECK(p.grad()[2] == -1.0);
}

TEST_CASE("backward misuse is rejected") {
  Tensor p({2, 2}, 1.0);
  SUBCASE("non-scalar") {
    Tape tape;
    CHECK_THROWS_AS(tape.backward(tape.parameter(p)), DimensionError);
  }
  SUBCASE("twice") {
    Tape tape;
    auto l = sum(tape.parameter(p));
    tape.backward(l);
    CHECK_THROWS_AS(tape.backward(l), UsageError);
  }
  SUBCASE("other tape") {
    Tape t1, t2;
    auto l = sum(t1.parameter(p));
    CHECK_THROWS_AS(t2.backward(l), UsageError);
  }
  SUBCASE("no parameter on the path") {
    Tape tape;
    CHECK_THROWS_AS(tape.backward(sum(tape.constant(Matrix::Ones(2, 2)))), UsageError);
  }
  SUBCASE("shape mismatch") {
    Tape tape;
    CHECK_THROWS_AS(add(tape.parameter(p), tape.constant(Matrix::Ones(3, 2))), DimensionError);
  }
}

TEST_CASE("layer norm output has zero mean and unit variance per row") {
  std::mt19937_64 rng(4);
  const Matrix x = random_matrix(6, 16, rng, 5.0);
  Tensor gain({16}, 1.0), bias({16}, 0.0);
  Tape tape;
  const Matrix y = layer_norm(tape.constant(x), tape.parameter(gain), tape.parameter(bias), Mlp::kLayerNormEps).value();
  for (Eigen::Index r = 0; r < y.rows(); ++r) {
    const double m = y.row(r).mean();
    const double var = (y.row(r).array() - m).square().mean();
    CHECK(std::abs(m) < 1e-10);
    CHECK(std::abs(var - 1.0) < 1e-10);
  }
}

TEST_CASE("mlp forward on hand-set weights") {
  Rng rng(0);
  SUBCASE("zero parameters give zero output") {
    Mlp net(3, 2, MlpOptions{{4}}, rng);
    for (auto* p : net.parameters()) std::fill(p->data().begin(), p->data().end(), 0.0);
    CHECK(net.predict(Matrix::Random(5, 3)).cwiseAbs().maxCoeff() == 0.0);
  }
  SUBCASE("single identity layer") {
    Mlp net(2, 2, MlpOptions{{}}, rng);
    net.layers()[0].weight.matrix() = Matrix::Identity(2, 2);
    net.layers()[0].bias.matrix().setZero();
    Matrix x(1, 2);
    x << 0.3, -1.7;
    CHECK(net.predict(x) == x);
  }
  SUBCASE("two layers computed by hand") {
    Mlp net(2, 1, MlpOptions{{2}}, rng);
    net.layers()[0].weight.matrix() << 1.0, -1.0, 2.0, 0.5;
    net.layers()[0].bias.matrix() << 0.5, -3.0;
    net.layers()[1].weight.matrix() << 2.0, -1.0;
    net.layers()[1].bias.matrix() << 0.25;
    Matrix x(1, 2);
    x << 1.0, 2.0;
    // hidden pre-activations: [1 - 2 + 0.5, 2 + 1 - 3] = [-0.5, 0] -> relu [0, 0]
    CHECK(net.predict(x)(0, 0) == doctest::Approx(0.25));
    x << 3.0, 1.0;
    // [3 - 1 + 0.5, 6 + 0.5 - 3] = [2.5, 3.5] -> 2*2.5 - 3.5 + 0.25
    CHECK(net.predict(x)(0, 0) == doctest::Approx(1.75));
  }
}

TEST_CASE("mlp validates its input") {
  Rng rng(0);
  Mlp net(3, 1, MlpOptions{{8}}, rng);
  CHECK_THROWS_AS(net.predict(Matrix::Zero(2, 4)), DimensionError);
  Matrix bad = Matrix::Zero(2, 3);
  bad(1, 1) = std::nan("");
  CHECK_THROWS_AS(net.predict(bad), NumericError);
}

TEST_CASE("mlp init follows uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) with zero biases") {
  Rng rng(5);
  Mlp net(9, 2, MlpOptions{{16, 4}}, rng);
  for (const auto& layer : net.layers()) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(layer.weight.cols()));
    CHECK(layer.weight.matrix().cwiseAbs().maxCoeff() <= bound);
    CHECK(layer.bias.matrix().cwiseAbs().maxCoeff() == 0.0);
  }
  CHECK(net.parameter_count() == 9 * 16 + 16 + 16 * 4 + 4 + 4 * 2 + 2);
}

TEST_CASE("random small networks pass the finite-difference check") {
  std::mt19937_64 data_rng(6);
  for (int trial = 0; trial < 20; ++trial) {
    Rng rng(100 + trial);
    MlpOptions o;
    o.hidden = {static_cast<std::size_t>(2 + trial % 15)};
    if (trial % 2) o.hidden.push_back(static_cast<std::size_t>(3 + trial % 7));
    o.activation = trial % 3 == 0 ? Activation::tanh : Activation::relu;
    o.layer_norm = trial % 4 == 1;
    o.spectral_norm = trial % 5 == 2;
    if (trial % 3 == 1) o.bounded_output = 2.0;
    Mlp net(3, 2, o, rng);
    const Matrix x = random_matrix(7, 3, data_rng);
    const Matrix y = random_matrix(7, 2, data_rng);
    const auto r = check_gradients(
        [&](Tape& t) { return mse(net.forward(t, t.constant(x), Mode::eval), t.constant(y)); }, net.parameters());
    CAPTURE(trial);
    CHECK(r.max_rel_error < 1e-4);
  }
}

TEST_CASE("dropout is inactive in eval mode and scales kept units in train mode") {
  Rng init(7);
  MlpOptions o{{32}};
  Mlp plain(4, 3, o, init);
  Mlp dropped = plain;
  // same weights, different dropout rate
  MlpOptions od = o;
  od.dropout_rate = 0.5;
  Rng init2(7);
  Mlp with_dropout(4, 3, od, init2);
  const Matrix x = Matrix::Random(5, 4);
  CHECK(plain.predict(x) == with_dropout.predict(x));
  Tape tape;
  Rng drop(1);
  const Matrix train_out = with_dropout.forward(tape, tape.constant(x), Mode::train, &drop).value();
  CHECK(train_out != plain.predict(x));
  Tape tape2;
  CHECK_THROWS_AS(with_dropout.forward(tape2, tape2.constant(x), Mode::train, nullptr), UsageError);
}

TEST_CASE("bounded output stays inside the bound") {
  Rng rng(8);
  MlpOptions o{{16}};
  o.bounded_output = 2.5;
  Mlp net(3, 2, o, rng);
  const Matrix y = net.predict(Matrix::Random(50, 3) * 100.0);
  CHECK(y.cwiseAbs().maxCoeff() <= 2.5);
}

TEST_CASE("polyak averaging") {
  Rng rng(9);
  Mlp source(3, 2, MlpOptions{{8}}, rng);
  Mlp target(3, 2, MlpOptions{{8}}, rng);
  SUBCASE("tau 1 copies the source exactly") {
    target.polyak_from(source, 1.0);
    const auto sp = source.parameters();
    const auto tp = target.parameters();
    for (std::size_t i = 0; i < sp.size(); ++i)
      CHECK(std::equal(sp[i]->data().begin(), sp[i]->data().end(), tp[i]->data().begin()));
  }
  SUBCASE("targets converge geometrically to a frozen source") {
    const double tau = 5e-3;
    auto gap = [&] {
      double g = 0.0;
      const auto sp = source.parameters();
      const auto tp = target.parameters();
      for (std::size_t i = 0; i < sp.size(); ++i)
        g = std::max(g, (sp[i]->matrix() - tp[i]->matrix()).cwiseAbs().maxCoeff());
      return g;
    };
    double prev = gap();
    for (int k = 0; k < 50; ++k) {
      target.polyak_from(source, tau);
      const double now = gap();
      CHECK(now <= (1.0 - tau) * prev + 1e-15);
      prev = now;
    }
  }
  SUBCASE("architecture mismatch") {
    Mlp other(3, 2, MlpOptions{{9}}, rng);
    CHECK_THROWS_AS(target.polyak_from(other, 0.5), DimensionError);
  }
}

TEST_CASE("spectral normalization") {
  Rng rng(10);
  MlpOptions o{{2}};
  o.spectral_norm = true;
  Mlp net(2, 1, o, rng);
  REQUIRE(net.spectral_layer() == std::optional<std::size_t>(0));
  auto effective = [&] {
    Tape tape;
    auto w = spectral_scale(tape.parameter(net.layers()[0].weight), net.spectral_u(), net.spectral_v(),
                            Mlp::kSpectralFloor);
    return Matrix(w.value());
  };
  auto iterate = [&](int n) {
    for (int i = 0; i < n; ++i) {
      Tape tape;
      net.forward(tape, tape.constant(Matrix::Ones(1, 2)), Mode::train);
    }
  };
  SUBCASE("diag(3, 1) becomes diag(1, 1/3)") {
    net.layers()[0].weight.matrix() << 3.0, 0.0, 0.0, 1.0;
    iterate(30);
    const Matrix w = effective();
    CHECK(w(0, 0) == doctest::Approx(1.0).epsilon(1e-3));
    CHECK(w(1, 1) == doctest::Approx(1.0 / 3.0).epsilon(1e-3));
    CHECK(std::abs(w(0, 1)) < 1e-3);
    CHECK(net.spectral_sigma() == doctest::Approx(3.0).epsilon(1e-3));
  }
  SUBCASE("unit spectral norm leaves the weight alone") {
    net.layers()[0].weight.matrix() << 0.6, 0.8, -0.8, 0.6;  // orthogonal
    iterate(30);
    CHECK((effective() - net.layers()[0].weight.matrix()).cwiseAbs().maxCoeff() < 1e-6);
  }
  SUBCASE("zero matrix stays zero without dividing by zero") {
    net.layers()[0].weight.matrix().setZero();
    iterate(3);
    const Matrix w = effective();
    CHECK(w.allFinite());
    CHECK(w.cwiseAbs().maxCoeff() == 0.0);
  }
}

TEST_CASE("adam matches a hand-rolled recurrence") {
  Tensor p({1}, std::vector<double>{1.0});
  std::vector<Tensor*> params{&p};
  auto st = OptimizerState::adam(params);
  double theta = 1.0, m = 0.0, v = 0.0;
  const double lr = 1e-3, b1 = 0.9, b2 = 0.999, eps = 1e-8;
  const double grads[] = {1.0, -0.5, 2.0, 0.0};
  for (int t = 1; t <= 4; ++t) {
    const double g = grads[t - 1];
    p.grad()[0] = g;
    adam_step(st, params);
    m = b1 * m + (1 - b1) * g;
    v = b2 * v + (1 - b2) * g * g;
    const double mhat = m / (1 - std::pow(b1, t));
    const double vhat = v / (1 - std::pow(b2, t));
    theta -= lr * mhat / (std::sqrt(vhat) + eps);
    CHECK(p[0] == doctest::Approx(theta).epsilon(1e-12));
  }
  // t = 1 in closed form: theta = 1 - lr * 1 / (1 + eps)
  Tensor q({1}, std::vector<double>{1.0});
  std::vector<Tensor*> qs{&q};
  auto st2 = OptimizerState::adam(qs);
  q.grad()[0] = 1.0;
  adam_step(st2, qs);
  CHECK(q[0] == doctest::Approx(1.0 - 1e-3 / (1.0 + 1e-8)).epsilon(1e-14));
  CHECK(st2.step_count == 1);
}

TEST_CASE("adam with zero gradient leaves parameters unchanged") {
  Tensor p({3}, std::vector<double>{1.0, -2.0, 0.5});
  std::vector<Tensor*> params{&p};
  auto st = OptimizerState::adam(params);
  adam_step(st, params);
  CHECK(p[0] == 1.0);
  CHECK(p[1] == -2.0);
  CHECK(p[2] == 0.5);
  CHECK(st.step_count == 1);
}

TEST_CASE("masked entries stay bitwise zero and keep frozen moments") {
  std::mt19937_64 rng(11);
  Tensor p({4}, std::vector<double>{0.0, 1.0, 0.0, -1.0});
  std::vector<Tensor*> params{&p};
  const std::vector<Mask> masks{Mask({0, 1, 0, 1})};
  for (auto kind : {OptimizerKind::adam, OptimizerKind::adamw}) {
    auto st = kind == OptimizerKind::adam ? OptimizerState::adam(params) : OptimizerState::adamw(params);
    for (int step = 0; step < 25; ++step) {
      std::normal_distribution<double> n;
      for (auto& g : p.grad()) g = n(rng) + 3.0;
      adam_step(st, params, masks);
      CHECK(bitwise_zero(p[0]));
      CHECK(bitwise_zero(p[2]));
      CHECK(st.first_moment[0][0] == 0.0);
      CHECK(st.second_moment[0][2] == 0.0);
    }
  }
  auto st = OptimizerState::adam(params);
  const std::vector<Mask> wrong{Mask({1, 1})};
  CHECK_THROWS_AS(adam_step(st, params, wrong), DimensionError);
}

TEST_CASE("adamw applies decoupled decay") {
  Tensor p({1}, std::vector<double>{2.0});
  std::vector<Tensor*> params{&p};
  auto st = OptimizerState::adamw(params, AdamOptions{}, 0.01);
  adam_step(st, params);  // zero gradient: only decay acts
  CHECK(p[0] == doctest::Approx(2.0 - 1e-3 * 0.01 * 2.0).epsilon(1e-14));
}

TEST_CASE("l1 regularized loss") {
  Tensor p({2}, std::vector<double>{1.0, -2.0});
  std::vector<Tensor*> params{&p};
  Tape tape;
  Tensor anchor({1}, 0.0);
  const Var base = add(scale(sum(tape.parameter(anchor)), 0.0), tape.constant(Matrix::Constant(1, 1, 1.0)));
  CHECK(regularized_loss(base, params, Penalty::l1(0.5)).scalar() == doctest::Approx(2.5));
  CHECK(regularized_loss(base, params, Penalty::none()).scalar() == 1.0);
  CHECK(regularized_loss(base, params, Penalty::l1(0.0)).scalar() == 1.0);
  CHECK_THROWS_AS(regularized_loss(base, params, Penalty::l1(-1.0)), ConfigError);
}

TEST_CASE("training is deterministic for a fixed seed") {
  auto run = [] {
    Rng rng(12);
    Mlp net(3, 1, MlpOptions{{8, 8}}, rng);
    auto params = net.parameters();
    auto st = OptimizerState::adam(params);
    std::mt19937_64 data(13);
    for (int i = 0; i < 20; ++i) {
      const Matrix x = random_matrix(16, 3, data);
      const Matrix y = x.rowwise().sum();
      net.zero_grad();
      Tape tape;
      tape.backward(mse(net.forward(tape, tape.constant(x), Mode::train), tape.constant(y)));
      adam_step(st, params);
    }
    std::vector<double> flat;
    for (auto* p : net.parameters()) flat.insert(flat.end(), p->data().begin(), p->data().end());
    return flat;
  };
  CHECK(run() == run());
}
