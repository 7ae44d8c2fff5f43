#pragma once

#include "sparsereg/autograd.hpp"
#include "sparsereg/random.hpp"
#include "sparsereg/tensor.hpp"

#include <cstddef>
#include <optional>
#include <string>
#include <vector>

namespace sparsereg {

enum class Activation { relu, tanh };
enum class Mode { train, eval };

struct MlpOptions {
  std::vector<std::size_t> hidden{256, 256};
  Activation activation = Activation::relu;
  /// When set, the output is scale * tanh(z).
  std::optional<double> bounded_output;
  /// Dropout after every hidden activation; 0 disables.
  double dropout_rate = 0.0;
  bool layer_norm = false;
  bool spectral_norm = false;
};

struct DenseLayer {
  Tensor weight;  // [out x in]
  Tensor bias;    // [out]
};

struct LayerNormParams {
  Tensor gain;
  Tensor bias;
};

/// Multilayer perceptron over row-major batches [B x in].
///
/// Hidden layer i computes act(norm(W_i h + b_i)) followed by dropout in train
/// mode. Dropout and layer norm never touch the output layer; spectral
/// normalization, when enabled, rescales the penultimate layer's weight.
class Mlp {
 public:
  static constexpr double kLayerNormEps = 1e-12;
  static constexpr double kSpectralFloor = 1e-12;

  Mlp() = default;
  Mlp(std::size_t in_dim, std::size_t out_dim, MlpOptions options, Rng& rng);

  /// Records the forward pass on `tape`. Train mode needs `dropout_rng` when dropout is on,
  /// and advances the spectral power iteration by one step.
  Var forward(Tape& tape, const Var& input, Mode mode, Rng* dropout_rng = nullptr);
  /// Eval-mode forward without recording.
  Matrix predict(const Matrix& input) const;

  std::vector<Tensor*> parameters();
  std::vector<const Tensor*> parameters() const;
  std::vector<std::string> parameter_names() const;
  std::size_t parameter_count() const;
  void zero_grad();

  bool same_architecture(const Mlp& other) const;
  /// target <- (1 - tau) * target + tau * source, elementwise over all parameters.
  void polyak_from(const Mlp& source, double tau);

  std::size_t in_dim() const { return in_dim_; }
  std::size_t out_dim() const { return out_dim_; }
  const MlpOptions& options() const { return options_; }
  std::vector<DenseLayer>& layers() { return layers_; }
  const std::vector<DenseLayer>& layers() const { return layers_; }
  /// Index of the spectrally normalized layer, if any.
  std::optional<std::size_t> spectral_layer() const;
  Eigen::VectorXd& spectral_u() { return spectral_u_; }
  Eigen::VectorXd& spectral_v() { return spectral_v_; }
  const Eigen::VectorXd& spectral_u() const { return spectral_u_; }
  const Eigen::VectorXd& spectral_v() const { return spectral_v_; }
  /// Current estimate of the largest singular value of the spectral layer.
  double spectral_sigma() const;

 private:
  void check_input(const Matrix& input) const;

  std::size_t in_dim_ = 0;
  std::size_t out_dim_ = 0;
  MlpOptions options_;
  std::vector<DenseLayer> layers_;
  std::vector<LayerNormParams> norms_;
  Eigen::VectorXd spectral_u_;
  Eigen::VectorXd spectral_v_;
};

}  // namespace sparsereg
