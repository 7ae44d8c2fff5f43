#pragma once

#include "sparsereg/tensor.hpp"

#include <cstddef>
#include <functional>
#include <vector>

namespace sparsereg {

class Tape;

/// Handle to a value recorded on a Tape. Cheap to copy; valid while the tape lives.
class Var {
 public:
  Var() = default;

  const Matrix& value() const;
  Eigen::Index rows() const { return value().rows(); }
  Eigen::Index cols() const { return value().cols(); }
  /// Value of a 1x1 var.
  double scalar() const;
  bool requires_grad() const;

  Tape* tape() const { return tape_; }
  std::size_t id() const { return id_; }

 private:
  friend class Tape;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

/// Reverse-mode tape. Parameters enter as leaves that accumulate into Tensor::grad.
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, std::size_t self)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Matrix value);
  Var parameter(Tensor& tensor);

  /// Accumulates d(loss)/d(parameter) into every parameter leaf reachable from `loss`.
  void backward(const Var& loss);

  // Used by operation implementations.
  Var record(Matrix value, bool requires_grad, BackwardFn backward);
  const Matrix& value_of(std::size_t id) const { return nodes_[id].value; }
  const Matrix& grad_of(std::size_t id) const { return nodes_[id].grad; }
  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }
  template <typename Expr>
  void accumulate(std::size_t id, const Expr& g) {
    auto& node = nodes_[id];
    if (!node.requires_grad) return;
    if (node.grad.size() == 0)
      node.grad = g;
    else
      node.grad += g;
  }

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Matrix value;
    Matrix grad;
    bool requires_grad = false;
    Tensor* parameter = nullptr;
    BackwardFn backward;
  };

  std::vector<Node> nodes_;
  bool consumed_ = false;
};

// Differentiable operations. Binary operations require both operands on the same tape.

/// x * W^T + b, with W shaped [out x in] and b shaped [out].
Var linear(const Var& x, const Var& weight, const Var& bias);
Var relu(const Var& x);
Var tanh(const Var& x);
Var scale(const Var& x, double factor);
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
/// Elementwise product.
Var mul(const Var& a, const Var& b);
/// Elementwise product with a constant matrix of the same shape.
Var mul_constant(const Var& x, const Matrix& c);
Var square(const Var& x);
Var mean(const Var& x);
Var sum(const Var& x);
/// Sum of |x| with subgradient sign(x), sign(0) = 0.
Var sum_abs(const Var& x);
/// Elementwise minimum; ties send the gradient to `a`.
Var minimum(const Var& a, const Var& b);
Var concat_cols(const Var& a, const Var& b);
/// Mean over all entries of (a - b)^2.
Var mse(const Var& a, const Var& b);
/// mean_i( w_i * mean_j (a_ij - b_ij)^2 ) with w a constant column of per-row weights.
Var weighted_mse(const Var& a, const Var& b, const Eigen::VectorXd& row_weights);
/// Per-row normalization to zero mean and unit variance, then gain and bias ([1 x n] each).
Var layer_norm(const Var& x, const Var& gain, const Var& bias, double eps);
/// W / max(u^T W v, floor) with u, v held constant.
Var spectral_scale(const Var& weight, const Eigen::VectorXd& u, const Eigen::VectorXd& v, double floor);
/// Copy of the value with no gradient path.
Var detach(const Var& x);

}  // namespace sparsereg
