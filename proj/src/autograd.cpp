#include "sparsereg/autograd.hpp"

#include "sparsereg/errors.hpp"

#include <cmath>
#include <string>

namespace sparsereg {

const Matrix& Var::value() const {
  if (!tape_) throw UsageError("use of an unbound Var");
  return tape_->value_of(id_);
}

double Var::scalar() const {
  const auto& v = value();
  if (v.size() != 1)
    throw DimensionError("expected a scalar, got " + std::to_string(v.rows()) + "x" + std::to_string(v.cols()));
  return v(0, 0);
}

bool Var::requires_grad() const { return tape_ && tape_->requires_grad(id_); }

Var Tape::constant(Matrix value) { return record(std::move(value), false, nullptr); }

Var Tape::parameter(Tensor& tensor) {
  Var v = record(Matrix(tensor.matrix()), true, nullptr);
  nodes_.back().parameter = &tensor;
  return v;
}

Var Tape::record(Matrix value, bool requires_grad, BackwardFn backward) {
  Node node;
  node.value = std::move(value);
  node.requires_grad = requires_grad;
  node.backward = std::move(backward);
  nodes_.push_back(std::move(node));
  return Var(this, nodes_.size() - 1);
}

void Tape::backward(const Var& loss) {
  if (loss.tape() != this) throw UsageError("loss was recorded on a different tape");
  if (value_of(loss.id()).size() != 1) throw DimensionError("backward requires a scalar loss");
  if (!requires_grad(loss.id())) throw UsageError("backward on a scalar with no path to any parameter");
  if (consumed_) throw UsageError("tape has already been differentiated");
  consumed_ = true;

  nodes_[loss.id()].grad = Matrix::Ones(1, 1);
  for (std::size_t i = loss.id() + 1; i-- > 0;) {
    auto& node = nodes_[i];
    if (node.grad.size() == 0) continue;
    if (node.parameter) {
      node.parameter->grad_matrix() += node.grad;
    } else if (node.backward) {
      node.backward(*this, i);
    }
  }
}

namespace {

Tape& common_tape(const Var& a, const Var& b) {
  if (!a.tape() || a.tape() != b.tape()) throw UsageError("operands live on different tapes");
  return *a.tape();
}

void require_same_shape(const Var& a, const Var& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw DimensionError(std::string(op) + ": shape mismatch " + std::to_string(a.rows()) + "x" +
                         std::to_string(a.cols()) + " vs " + std::to_string(b.rows()) + "x" +
                         std::to_string(b.cols()));
}

}  // namespace

Var linear(const Var& x, const Var& weight, const Var& bias) {
  Tape& tape = common_tape(x, weight);
  common_tape(x, bias);
  const auto& W = weight.value();
  const auto& b = bias.value();
  if (x.cols() != W.cols())
    throw DimensionError("linear: input has " + std::to_string(x.cols()) + " features, weight expects " +
                         std::to_string(W.cols()));
  if (b.size() != W.rows()) throw DimensionError("linear: bias size does not match weight rows");
  Matrix out(x.rows(), W.rows());
  out.noalias() = x.value() * W.transpose();
  out.rowwise() += Eigen::Map<const Eigen::RowVectorXd>(b.data(), b.size());
  const auto xi = x.id(), wi = weight.id(), bi = bias.id();
  const bool rg = x.requires_grad() || weight.requires_grad() || bias.requires_grad();
  return tape.record(std::move(out), rg, [xi, wi, bi](Tape& t, std::size_t self) {
    const Matrix& g = t.grad_of(self);
    if (t.requires_grad(xi)) {
      Matrix dx(g.rows(), t.value_of(wi).cols());
      dx.noalias() = g * t.value_of(wi);
      t.accumulate(xi, dx);
    }
    if (t.requires_grad(wi)) {
      Matrix dw(g.cols(), t.value_of(xi).cols());
      dw.noalias() = g.transpose() * t.value_of(xi);
      t.accumulate(wi, dw);
    }
    if (t.requires_grad(bi)) {
      const Matrix& bv = t.value_of(bi);
      Matrix db = g.colwise().sum();
      t.accumulate(bi, db.reshaped<Eigen::RowMajor>(bv.rows(), bv.cols()));
    }
  });
}

Var relu(const Var& x) {
  Tape& tape = *x.tape();
  Matrix out = x.value().cwiseMax(0.0);
  const auto xi = x.id();
  return tape.record(std::move(out), x.requires_grad(), [xi](Tape& t, std::size_t self) {
    const Matrix& in = t.value_of(xi);
    t.accumulate(xi, (in.array() > 0.0).select(t.grad_of(self), 0.0));
  });
}

Var tanh(const Var& x) {
  Tape& tape = *x.tape();
  Matrix out = x.value().array().tanh().matrix();
  const auto xi = x.id();
  return tape.record(std::move(out), x.requires_grad(), [xi](Tape& t, std::size_t self) {
    const Matrix& y = t.value_of(self);
    t.accumulate(xi, (t.grad_of(self).array() * (1.0 - y.array().square())).matrix());
  });
}

Var scale(const Var& x, double factor) {
  Tape& tape = *x.tape();
  const auto xi = x.id();
  return tape.record(x.value() * factor, x.requires_grad(),
                     [xi, factor](Tape& t, std::size_t self) { t.accumulate(xi, t.grad_of(self) * factor); });
}

Var add(const Var& a, const Var& b) {
  Tape& tape = common_tape(a, b);
  require_same_shape(a, b, "add");
  const auto ai = a.id(), bi = b.id();
  return tape.record(a.value() + b.value(), a.requires_grad() || b.requires_grad(),
                     [ai, bi](Tape& t, std::size_t self) {
                       t.accumulate(ai, t.grad_of(self));
                       t.accumulate(bi, t.grad_of(self));
                     });
}

Var sub(const Var& a, const Var& b) {
  Tape& tape = common_tape(a, b);
  require_same_shape(a, b, "sub");
  const auto ai = a.id(), bi = b.id();
  return tape.record(a.value() - b.value(), a.requires_grad() || b.requires_grad(),
                     [ai, bi](Tape& t, std::size_t self) {
                       t.accumulate(ai, t.grad_of(self));
                       t.accumulate(bi, -t.grad_of(self));
                     });
}

Var mul(const Var& a, const Var& b) {
  Tape& tape = common_tape(a, b);
  require_same_shape(a, b, "mul");
  const auto ai = a.id(), bi = b.id();
  return tape.record(a.value().cwiseProduct(b.value()), a.requires_grad() || b.requires_grad(),
                     [ai, bi](Tape& t, std::size_t self) {
                       t.accumulate(ai, t.grad_of(self).cwiseProduct(t.value_of(bi)));
                       t.accumulate(bi, t.grad_of(self).cwiseProduct(t.value_of(ai)));
                     });
}

Var mul_constant(const Var& x, const Matrix& c) {
  Tape& tape = *x.tape();
  if (c.rows() != x.rows() || c.cols() != x.cols()) throw DimensionError("mul_constant: shape mismatch");
  const auto xi = x.id();
  return tape.record(x.value().cwiseProduct(c), x.requires_grad(),
                     [xi, c](Tape& t, std::size_t self) { t.accumulate(xi, t.grad_of(self).cwiseProduct(c)); });
}

Var square(const Var& x) {
  Tape& tape = *x.tape();
  const auto xi = x.id();
  return tape.record(x.value().array().square().matrix(), x.requires_grad(), [xi](Tape& t, std::size_t self) {
    t.accumulate(xi, (2.0 * t.grad_of(self).array() * t.value_of(xi).array()).matrix());
  });
}

Var mean(const Var& x) {
  Tape& tape = *x.tape();
  const auto xi = x.id();
  const double n = static_cast<double>(x.value().size());
  return tape.record(Matrix::Constant(1, 1, x.value().mean()), x.requires_grad(),
                     [xi, n](Tape& t, std::size_t self) {
                       const Matrix& in = t.value_of(xi);
                       t.accumulate(xi, Matrix::Constant(in.rows(), in.cols(), t.grad_of(self)(0, 0) / n));
                     });
}

Var sum(const Var& x) {
  Tape& tape = *x.tape();
  const auto xi = x.id();
  return tape.record(Matrix::Constant(1, 1, x.value().sum()), x.requires_grad(), [xi](Tape& t, std::size_t self) {
    const Matrix& in = t.value_of(xi);
    t.accumulate(xi, Matrix::Constant(in.rows(), in.cols(), t.grad_of(self)(0, 0)));
  });
}

Var sum_abs(const Var& x) {
  Tape& tape = *x.tape();
  const auto xi = x.id();
  return tape.record(Matrix::Constant(1, 1, x.value().cwiseAbs().sum()), x.requires_grad(),
                     [xi](Tape& t, std::size_t self) {
                       const double g = t.grad_of(self)(0, 0);
                       const Matrix& in = t.value_of(xi);
                       Matrix d = in.unaryExpr([g](double v) { return v > 0.0 ? g : (v < 0.0 ? -g : 0.0); });
                       t.accumulate(xi, d);
                     });
}

Var minimum(const Var& a, const Var& b) {
  Tape& tape = common_tape(a, b);
  require_same_shape(a, b, "minimum");
  const auto ai = a.id(), bi = b.id();
  return tape.record(a.value().cwiseMin(b.value()), a.requires_grad() || b.requires_grad(),
                     [ai, bi](Tape& t, std::size_t self) {
                       const auto take_a = (t.value_of(ai).array() <= t.value_of(bi).array());
                       const Matrix& g = t.grad_of(self);
                       if (t.requires_grad(ai)) t.accumulate(ai, take_a.select(g, 0.0).matrix());
                       if (t.requires_grad(bi)) t.accumulate(bi, take_a.select(0.0, g).matrix());
                     });
}

Var concat_cols(const Var& a, const Var& b) {
  Tape& tape = common_tape(a, b);
  if (a.rows() != b.rows()) throw DimensionError("concat_cols: row count mismatch");
  Matrix out(a.rows(), a.cols() + b.cols());
  out << a.value(), b.value();
  const auto ai = a.id(), bi = b.id();
  const auto ac = a.cols(), bc = b.cols();
  return tape.record(std::move(out), a.requires_grad() || b.requires_grad(),
                     [ai, bi, ac, bc](Tape& t, std::size_t self) {
                       const Matrix& g = t.grad_of(self);
                       if (t.requires_grad(ai)) t.accumulate(ai, g.leftCols(ac));
                       if (t.requires_grad(bi)) t.accumulate(bi, g.rightCols(bc));
                     });
}

Var mse(const Var& a, const Var& b) { return mean(square(sub(a, b))); }

Var weighted_mse(const Var& a, const Var& b, const Eigen::VectorXd& row_weights) {
  if (row_weights.size() != a.rows()) throw DimensionError("weighted_mse: one weight per row required");
  Matrix w = row_weights.replicate(1, a.cols());
  return mean(mul_constant(square(sub(a, b)), w));
}

Var layer_norm(const Var& x, const Var& gain, const Var& bias, double eps) {
  Tape& tape = common_tape(x, gain);
  common_tape(x, bias);
  const Matrix& in = x.value();
  const auto n = in.cols();
  if (gain.value().size() != n || bias.value().size() != n)
    throw DimensionError("layer_norm: gain/bias size must equal feature count");
  Eigen::VectorXd mu = in.rowwise().mean();
  Matrix centered = in.colwise() - mu;
  Eigen::VectorXd inv_std =
      ((centered.array().square().rowwise().sum() / static_cast<double>(n)) + eps).rsqrt().matrix();
  Matrix normalized = centered.array().colwise() * inv_std.array();
  const Eigen::Map<const Eigen::RowVectorXd> gv(gain.value().data(), n);
  const Eigen::Map<const Eigen::RowVectorXd> bv(bias.value().data(), n);
  Matrix out = (normalized.array().rowwise() * gv.array()).rowwise() + bv.array();

  const auto xi = x.id(), gi = gain.id(), bi = bias.id();
  const bool rg = x.requires_grad() || gain.requires_grad() || bias.requires_grad();
  return tape.record(std::move(out), rg,
                     [xi, gi, bi, normalized = std::move(normalized), inv_std = std::move(inv_std)](
                         Tape& t, std::size_t self) {
                       const Matrix& g = t.grad_of(self);
                       const auto cols = g.cols();
                       if (t.requires_grad(gi)) {
                         Matrix dg = (g.cwiseProduct(normalized)).colwise().sum();
                         t.accumulate(gi, dg.reshaped<Eigen::RowMajor>(t.value_of(gi).rows(), t.value_of(gi).cols()));
                       }
                       if (t.requires_grad(bi)) {
                         Matrix db = g.colwise().sum();
                         t.accumulate(bi, db.reshaped<Eigen::RowMajor>(t.value_of(bi).rows(), t.value_of(bi).cols()));
                       }
                       if (t.requires_grad(xi)) {
                         const Eigen::Map<const Eigen::RowVectorXd> gv(t.value_of(gi).data(), cols);
                         Matrix dn = g.array().rowwise() * gv.array();
                         const double nf = static_cast<double>(cols);
                         Eigen::VectorXd sum_dn = dn.rowwise().sum();
                         Eigen::VectorXd sum_dn_n = dn.cwiseProduct(normalized).rowwise().sum();
                         Matrix dx = ((nf * dn.array()).colwise() - sum_dn.array() -
                                      normalized.array().colwise() * sum_dn_n.array())
                                         .colwise() *
                                     (inv_std.array() / nf);
                         t.accumulate(xi, dx);
                       }
                     });
}

Var spectral_scale(const Var& weight, const Eigen::VectorXd& u, const Eigen::VectorXd& v, double floor) {
  Tape& tape = *weight.tape();
  const Matrix& W = weight.value();
  if (u.size() != W.rows() || v.size() != W.cols()) throw DimensionError("spectral_scale: vector sizes");
  const double sigma = u.dot(W * v);
  const bool floored = !(sigma > floor);
  const double denom = floored ? floor : sigma;
  const auto wi = weight.id();
  return tape.record(W / denom, weight.requires_grad(),
                     [wi, u, v, denom, floored](Tape& t, std::size_t self) {
                       const Matrix& g = t.grad_of(self);
                       Matrix dw = g / denom;
                       if (!floored) {
                         const double inner = g.cwiseProduct(t.value_of(wi)).sum();
                         dw.noalias() -= (inner / (denom * denom)) * (u * v.transpose());
                       }
                       t.accumulate(wi, dw);
                     });
}

Var detach(const Var& x) { return x.tape()->constant(x.value()); }

}  // namespace sparsereg
