#include "sparsereg/mlp.hpp"

#include "sparsereg/errors.hpp"

#include <cmath>

namespace sparsereg {

namespace {

Eigen::VectorXd normalized(const Eigen::VectorXd& x) {
  const double n = x.norm();
  return n > 1e-12 ? Eigen::VectorXd(x / n) : Eigen::VectorXd::Zero(x.size());
}

Matrix activate(const Matrix& z, Activation act) {
  return act == Activation::relu ? Matrix(z.cwiseMax(0.0)) : Matrix(z.array().tanh().matrix());
}

}  // namespace

Mlp::Mlp(std::size_t in_dim, std::size_t out_dim, MlpOptions options, Rng& rng)
    : in_dim_(in_dim), out_dim_(out_dim), options_(std::move(options)) {
  if (in_dim == 0 || out_dim == 0) throw DimensionError("mlp input and output dimensions must be positive");
  if (options_.dropout_rate < 0.0 || options_.dropout_rate >= 1.0)
    throw ConfigError("dropout rate must lie in [0, 1)");
  if (options_.bounded_output && !(*options_.bounded_output > 0.0))
    throw ConfigError("bounded output scale must be positive");

  std::vector<std::size_t> dims{in_dim};
  for (auto h : options_.hidden) {
    if (h == 0) throw DimensionError("hidden layer width must be positive");
    dims.push_back(h);
  }
  dims.push_back(out_dim);

  for (std::size_t i = 0; i + 1 < dims.size(); ++i) {
    const std::size_t fan_in = dims[i], fan_out = dims[i + 1];
    DenseLayer layer{Tensor({fan_out, fan_in}), Tensor({fan_out})};
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    std::uniform_real_distribution<double> init(-bound, bound);
    for (auto& w : layer.weight.data()) w = init(rng);
    layers_.push_back(std::move(layer));
  }
  if (options_.layer_norm) {
    for (std::size_t i = 0; i + 1 < layers_.size(); ++i) {
      const std::size_t width = layers_[i].weight.rows();
      norms_.push_back({Tensor({width}, 1.0), Tensor({width}, 0.0)});
    }
  }
  if (auto idx = spectral_layer()) {
    const auto& W = layers_[*idx].weight;
    std::normal_distribution<double> gauss(0.0, 1.0);
    Eigen::VectorXd u(W.rows());
    for (auto& x : u) x = gauss(rng);
    spectral_u_ = normalized(u);
    spectral_v_ = normalized(W.matrix().transpose() * spectral_u_);
  }
}

std::optional<std::size_t> Mlp::spectral_layer() const {
  if (!options_.spectral_norm || layers_.size() < 2) return std::nullopt;
  return layers_.size() - 2;
}

double Mlp::spectral_sigma() const {
  auto idx = spectral_layer();
  if (!idx) return 1.0;
  return spectral_u_.dot(layers_[*idx].weight.matrix() * spectral_v_);
}

void Mlp::check_input(const Matrix& input) const {
  if (static_cast<std::size_t>(input.cols()) != in_dim_)
    throw DimensionError("mlp expects " + std::to_string(in_dim_) + " input features, got " +
                         std::to_string(input.cols()));
  if (!input.allFinite()) throw NumericError("mlp input contains non-finite values");
}

Var Mlp::forward(Tape& tape, const Var& input, Mode mode, Rng* dropout_rng) {
  check_input(input.value());
  const bool use_dropout = mode == Mode::train && options_.dropout_rate > 0.0;
  if (use_dropout && !dropout_rng) throw UsageError("train-mode dropout requires a random generator");
  const auto spectral = spectral_layer();

  Var h = input;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    auto& layer = layers_[i];
    Var w = tape.parameter(layer.weight);
    if (spectral && *spectral == i) {
      if (mode == Mode::train) {
        const auto W = layer.weight.matrix();
        spectral_v_ = normalized(W.transpose() * spectral_u_);
        spectral_u_ = normalized(W * spectral_v_);
      }
      w = spectral_scale(w, spectral_u_, spectral_v_, kSpectralFloor);
    }
    Var z = linear(h, w, tape.parameter(layer.bias));
    if (i + 1 == layers_.size()) {
      if (options_.bounded_output) z = scale(tanh(z), *options_.bounded_output);
      return z;
    }
    if (options_.layer_norm) z = layer_norm(z, tape.parameter(norms_[i].gain), tape.parameter(norms_[i].bias), kLayerNormEps);
    h = options_.activation == Activation::relu ? relu(z) : tanh(z);
    if (use_dropout) {
      const double keep = 1.0 - options_.dropout_rate;
      std::bernoulli_distribution coin(keep);
      Matrix mask(h.rows(), h.cols());
      for (Eigen::Index r = 0; r < mask.rows(); ++r)
        for (Eigen::Index c = 0; c < mask.cols(); ++c) mask(r, c) = coin(*dropout_rng) ? 1.0 / keep : 0.0;
      h = mul_constant(h, mask);
    }
  }
  return h;
}

Matrix Mlp::predict(const Matrix& input) const {
  check_input(input);
  const auto spectral = spectral_layer();
  Matrix h = input;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    const auto& layer = layers_[i];
    Matrix z(h.rows(), layer.weight.rows());
    if (spectral && *spectral == i) {
      const double sigma = spectral_sigma();
      Matrix w = layer.weight.matrix() / (sigma > kSpectralFloor ? sigma : kSpectralFloor);
      z.noalias() = h * w.transpose();
    } else {
      z.noalias() = h * layer.weight.matrix().transpose();
    }
    z.rowwise() += Eigen::Map<const Eigen::RowVectorXd>(layer.bias.data().data(), layer.bias.size());
    if (i + 1 == layers_.size()) {
      if (options_.bounded_output) z = (z.array().tanh() * *options_.bounded_output).matrix();
      return z;
    }
    if (options_.layer_norm) {
      const auto n = static_cast<double>(z.cols());
      Eigen::VectorXd mu = z.rowwise().mean();
      Matrix centered = z.colwise() - mu;
      Eigen::VectorXd inv_std = ((centered.array().square().rowwise().sum() / n) + kLayerNormEps).rsqrt().matrix();
      Matrix normalized_z = centered.array().colwise() * inv_std.array();
      const Eigen::Map<const Eigen::RowVectorXd> gv(norms_[i].gain.data().data(), z.cols());
      const Eigen::Map<const Eigen::RowVectorXd> bv(norms_[i].bias.data().data(), z.cols());
      z = (normalized_z.array().rowwise() * gv.array()).rowwise() + bv.array();
    }
    h = activate(z, options_.activation);
  }
  return h;
}

std::vector<Tensor*> Mlp::parameters() {
  std::vector<Tensor*> out;
  for (auto& l : layers_) {
    out.push_back(&l.weight);
    out.push_back(&l.bias);
  }
  for (auto& n : norms_) {
    out.push_back(&n.gain);
    out.push_back(&n.bias);
  }
  return out;
}

std::vector<const Tensor*> Mlp::parameters() const {
  std::vector<const Tensor*> out;
  for (auto* t : const_cast<Mlp*>(this)->parameters()) out.push_back(t);
  return out;
}

std::vector<std::string> Mlp::parameter_names() const {
  std::vector<std::string> names;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    names.push_back("w" + std::to_string(i));
    names.push_back("b" + std::to_string(i));
  }
  for (std::size_t i = 0; i < norms_.size(); ++i) {
    names.push_back("ln" + std::to_string(i) + ".gain");
    names.push_back("ln" + std::to_string(i) + ".bias");
  }
  return names;
}

std::size_t Mlp::parameter_count() const {
  std::size_t n = 0;
  for (const auto* t : parameters()) n += t->size();
  return n;
}

void Mlp::zero_grad() {
  for (auto* t : parameters()) t->zero_grad();
}

bool Mlp::same_architecture(const Mlp& other) const {
  auto a = parameters();
  auto b = other.parameters();
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i)
    if (!a[i]->same_shape(*b[i])) return false;
  return true;
}

void Mlp::polyak_from(const Mlp& source, double tau) {
  if (!same_architecture(source)) throw DimensionError("polyak update between different architectures");
  auto dst = parameters();
  auto src = source.parameters();
  for (std::size_t i = 0; i < dst.size(); ++i) {
    auto d = dst[i]->data();
    auto s = src[i]->data();
    for (std::size_t j = 0; j < d.size(); ++j) d[j] = (1.0 - tau) * d[j] + tau * s[j];
  }
  // targets only run in eval mode, so they borrow the source's power-iteration vectors
  spectral_u_ = source.spectral_u_;
  spectral_v_ = source.spectral_v_;
}

}  // namespace sparsereg
