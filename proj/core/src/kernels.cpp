#include <algorithm>
#include <cmath>

#include "injop/error.hpp"
#include "injop/nonlin.hpp"

namespace injop::nonlin {

namespace {

constexpr const char* kModule = "nonlin";

}  // namespace

BivariateField BivariateField::constant(double v) {
  BivariateField f;
  f.kind = Kind::Constant;
  f.c0 = v;
  return f;
}

BivariateField BivariateField::affine(double c0, double cx, double cy, double cxy) {
  BivariateField f;
  f.kind = Kind::Affine;
  f.c0 = c0;
  f.cx = cx;
  f.cy = cy;
  f.cxy = cxy;
  return f;
}

BivariateField BivariateField::gaussian(double amp, double width) {
  if (!(width > 0.0)) throw PreconditionError(kModule, "gaussian field needs width > 0");
  BivariateField f;
  f.kind = Kind::Gaussian;
  f.amp = amp;
  f.width = width;
  return f;
}

BivariateField BivariateField::from_table(Eigen::MatrixXd values) {
  if (values.rows() != values.cols()) throw DimensionError(kModule, "field table must be square");
  BivariateField f;
  f.kind = Kind::Table;
  f.table = std::move(values);
  return f;
}

double BivariateField::operator()(double x, double y) const {
  switch (kind) {
    case Kind::Constant:
      return c0;
    case Kind::Affine:
      return c0 + cx * x + cy * y + cxy * x * y;
    case Kind::Gaussian: {
      const double d = (x - y) / width;
      return amp * std::exp(-d * d);
    }
    case Kind::Table:
      throw PreconditionError(kModule, "tabulated field has no pointwise evaluation");
  }
  return 0.0;
}

Eigen::MatrixXd BivariateField::sample(const Grid& grid) const {
  if (kind == Kind::Table) {
    if (table.rows() != grid.M || table.cols() != grid.M)
      throw DimensionError(kModule, "field table is " + std::to_string(table.rows()) + "x" +
                                        std::to_string(table.cols()) + ", grid has M=" +
                                        std::to_string(grid.M));
    return table;
  }
  if (kind == Kind::Constant) return Eigen::MatrixXd::Constant(grid.M, grid.M, c0);
  Eigen::MatrixXd out(grid.M, grid.M);
  for (int j = 0; j < grid.M; ++j)
    for (int i = 0; i < grid.M; ++i) out(i, j) = (*this)(grid.nodes[i], grid.nodes[j]);
  return out;
}

std::string to_string(BivariateField::Kind kind) {
  switch (kind) {
    case BivariateField::Kind::Constant:
      return "constant";
    case BivariateField::Kind::Affine:
      return "affine";
    case BivariateField::Kind::Gaussian:
      return "gaussian";
    case BivariateField::Kind::Table:
      return "table";
  }
  return "constant";
}

BivariateField::Kind field_kind_from_string(const std::string& name) {
  if (name == "constant") return BivariateField::Kind::Constant;
  if (name == "affine") return BivariateField::Kind::Affine;
  if (name == "gaussian") return BivariateField::Kind::Gaussian;
  if (name == "table") return BivariateField::Kind::Table;
  throw FormatError(kModule, "unknown field kind '" + name + "'");
}

std::string to_string(Signature s) { return s == Signature::UX ? "u(x)" : "u(y)"; }

Signature signature_from_string(const std::string& name) {
  if (name == "u(x)") return Signature::UX;
  if (name == "u(y)") return Signature::UY;
  throw FormatError(kModule, "unknown kernel signature '" + name + "'");
}

std::string to_string(KernelKind kind) {
  switch (kind) {
    case KernelKind::SigmoidSum:
      return "SigmoidSum";
    case KernelKind::Wire:
      return "Wire";
    case KernelKind::VolterraLipschitz:
      return "VolterraLipschitz";
    case KernelKind::SoftmaxAttention:
      return "SoftmaxAttention";
    case KernelKind::LinearTable:
      return "LinearTable";
  }
  return "LinearTable";
}

KernelKind kernel_kind_from_string(const std::string& name) {
  if (name == "SigmoidSum") return KernelKind::SigmoidSum;
  if (name == "Wire") return KernelKind::Wire;
  if (name == "VolterraLipschitz") return KernelKind::VolterraLipschitz;
  if (name == "SoftmaxAttention") return KernelKind::SoftmaxAttention;
  if (name == "LinearTable") return KernelKind::LinearTable;
  throw FormatError(kModule, "unknown kernel kind '" + name + "'");
}

NonlinearKernel NonlinearKernel::sigmoid_sum(std::vector<ActivatedTerm> terms, Signature s) {
  NonlinearKernel k;
  k.kind = KernelKind::SigmoidSum;
  k.signature = s;
  k.terms = std::move(terms);
  return k;
}

NonlinearKernel NonlinearKernel::wire(double omega, std::vector<ActivatedTerm> terms, Signature s) {
  NonlinearKernel k;
  k.kind = KernelKind::Wire;
  k.signature = s;
  k.omega = omega;
  k.terms = std::move(terms);
  return k;
}

NonlinearKernel NonlinearKernel::volterra(BivariateField kappa, BivariateField lambda) {
  NonlinearKernel k;
  k.kind = KernelKind::VolterraLipschitz;
  k.signature = Signature::UY;
  k.kappa = std::move(kappa);
  k.lambda = std::move(lambda);
  return k;
}

NonlinearKernel NonlinearKernel::linear(BivariateField table) {
  NonlinearKernel k;
  k.kind = KernelKind::LinearTable;
  k.signature = Signature::UY;
  k.table = std::move(table);
  return k;
}

NonlinearKernel NonlinearKernel::attention(Eigen::MatrixXd A, Eigen::MatrixXd B) {
  NonlinearKernel k;
  k.kind = KernelKind::SoftmaxAttention;
  k.A = std::move(A);
  k.B = std::move(B);
  return k;
}

double logistic(double t) {
  if (t >= 0.0) return 1.0 / (1.0 + std::exp(-t));
  const double e = std::exp(t);
  return e / (1.0 + e);
}

double logistic_derivative(double t) {
  const double s = logistic(t);
  return s * (1.0 - s);
}

double wire_activation(double omega, double t) { return std::sin(omega * t) * std::exp(-t * t); }

double wire_derivative(double omega, double t) {
  return (omega * std::cos(omega * t) - 2.0 * t * std::sin(omega * t)) * std::exp(-t * t);
}

NonlinearIntegralOperator::NonlinearIntegralOperator(GridPtr grid, Eigen::VectorXd w, NonlinearKernel kernel,
                                                     std::optional<Eigen::MatrixXd> bias)
    : grid_(std::move(grid)), w_(std::move(w)) {
  if (!grid_) throw DimensionError(kModule, "operator without grid");
  if (kernel.kind == KernelKind::SoftmaxAttention)
    throw PreconditionError(kModule, "attention operators take a channel matrix W");
  if (w_.size() != grid_->M) throw DimensionError(kModule, "W must have one value per grid node");
  if (w_.cwiseAbs().minCoeff() <= 1e-10) throw PreconditionError(kModule, "W is not invertible nodewise");
  channels_ = 1;
  if (bias) {
    if (bias->rows() != 1 || bias->cols() != grid_->M) throw DimensionError(kModule, "bias must be 1 x M");
    bias_ = *bias;
    has_bias_ = true;
  } else {
    bias_ = Eigen::MatrixXd::Zero(1, grid_->M);
  }
  build(std::move(kernel));
}

NonlinearIntegralOperator::NonlinearIntegralOperator(GridPtr grid, Eigen::MatrixXd w_matrix,
                                                     NonlinearKernel kernel, std::optional<Eigen::MatrixXd> bias)
    : grid_(std::move(grid)), w_matrix_(std::move(w_matrix)) {
  if (!grid_) throw DimensionError(kModule, "operator without grid");
  if (kernel.kind != KernelKind::SoftmaxAttention)
    throw PreconditionError(kModule, "a channel matrix W is only supported for attention kernels");
  const Eigen::Index d = w_matrix_.rows();
  if (d == 0 || w_matrix_.cols() != d) throw DimensionError(kModule, "W must be a square d x d matrix");
  if (kernel.A.rows() != d || kernel.A.cols() != d || kernel.B.rows() != d || kernel.B.cols() != d)
    throw DimensionError(kModule, "attention matrices A and B must be d x d");
  Eigen::FullPivLU<Eigen::MatrixXd> lu(w_matrix_);
  if (!lu.isInvertible()) throw PreconditionError(kModule, "W is not invertible");
  channels_ = static_cast<int>(d);
  w_ = Eigen::VectorXd::Ones(grid_->M);
  if (bias) {
    if (bias->rows() != d || bias->cols() != grid_->M) throw DimensionError(kModule, "bias must be d x M");
    bias_ = *bias;
    has_bias_ = true;
  } else {
    bias_ = Eigen::MatrixXd::Zero(d, grid_->M);
  }
  build(std::move(kernel));
}

void NonlinearIntegralOperator::build(NonlinearKernel kernel) {
  kernel_ = std::move(kernel);
  const Grid& g = *grid_;
  const int M = g.M;

  if (kernel_.is_volterra()) {
    // Trapezoid rule on [a, x_i]: h/2 at both ends, h inside, nothing beyond x_i.
    const double h = g.spacing();
    wq_ = Eigen::MatrixXd::Zero(M, M);
    for (int i = 1; i < M; ++i) {
      wq_.row(i).head(i + 1).setConstant(h);
      wq_(i, 0) = wq_(i, i) = 0.5 * h;
    }
  } else {
    wq_ = g.weights.transpose().replicate(M, 1);
  }

  switch (kernel_.kind) {
    case KernelKind::SigmoidSum:
    case KernelKind::Wire:
      if (kernel_.terms.empty()) throw PreconditionError(kModule, "activated kernel needs at least one term");
      for (const auto& t : kernel_.terms) sampled_.push_back({t.c.sample(g), t.a.sample(g), t.b.sample(g)});
      break;
    case KernelKind::VolterraLipschitz: {
      kappa_ = kernel_.kappa.sample(g);
      lambda_ = kernel_.lambda.sample(g);
      // Causal mask: zero whenever y > x.
      for (int j = 0; j < M; ++j)
        for (int i = 0; i < j; ++i) kappa_(i, j) = lambda_(i, j) = 0.0;
      break;
    }
    case KernelKind::LinearTable:
      table_ = kernel_.table.sample(g);
      break;
    case KernelKind::SoftmaxAttention:
      break;
  }
}

Eigen::MatrixXd NonlinearIntegralOperator::activated_sum(const Eigen::VectorXd& u, bool derivative) const {
  const int M = grid_->M;
  Eigen::MatrixXd out = Eigen::MatrixXd::Zero(M, M);
  const bool wire = kernel_.kind == KernelKind::Wire;
  const double omega = kernel_.omega;
  for (const auto& t : sampled_) {
    Eigen::MatrixXd s = t.a;
    if (kernel_.signature == Signature::UY)
      s.array().rowwise() *= u.transpose().array();
    else
      s.array().colwise() *= u.array();
    s += t.b;
    if (!derivative) {
      s = s.unaryExpr([wire, omega](double v) { return wire ? wire_activation(omega, v) : logistic(v); });
      out += t.c.cwiseProduct(s);
    } else {
      s = s.unaryExpr([wire, omega](double v) { return wire ? wire_derivative(omega, v) : logistic_derivative(v); });
      out += t.c.cwiseProduct(t.a).cwiseProduct(s);
    }
  }
  return out;
}

Eigen::MatrixXd NonlinearIntegralOperator::kernel_matrix(const Eigen::VectorXd& u) const {
  if (u.size() != grid_->M) throw DimensionError(kModule, "function does not live on the operator grid");
  switch (kernel_.kind) {
    case KernelKind::SigmoidSum:
    case KernelKind::Wire:
      return activated_sum(u, false);
    case KernelKind::VolterraLipschitz: {
      Eigen::MatrixXd k = lambda_;
      const Eigen::VectorXd th = u.array().tanh().matrix();
      if (kernel_.signature == Signature::UY)
        k.array().rowwise() *= th.transpose().array();
      else
        k.array().colwise() *= th.array();
      return kappa_ + k;
    }
    case KernelKind::LinearTable:
      return table_;
    case KernelKind::SoftmaxAttention:
      break;
  }
  throw PreconditionError(kModule, "attention kernels have no scalar kernel matrix");
}

Eigen::MatrixXd NonlinearIntegralOperator::kernel_t_derivative(const Eigen::VectorXd& u) const {
  if (u.size() != grid_->M) throw DimensionError(kModule, "function does not live on the operator grid");
  switch (kernel_.kind) {
    case KernelKind::SigmoidSum:
    case KernelKind::Wire:
      return activated_sum(u, true);
    case KernelKind::VolterraLipschitz: {
      Eigen::MatrixXd k = lambda_;
      const Eigen::VectorXd sech2 = (1.0 - u.array().tanh().square()).matrix();
      if (kernel_.signature == Signature::UY)
        k.array().rowwise() *= sech2.transpose().array();
      else
        k.array().colwise() *= sech2.array();
      return k;
    }
    case KernelKind::LinearTable:
      return Eigen::MatrixXd::Zero(grid_->M, grid_->M);
    case KernelKind::SoftmaxAttention:
      break;
  }
  throw PreconditionError(kModule, "attention kernels are not differentiable here");
}

Eigen::MatrixXd NonlinearIntegralOperator::attention_weights(const Eigen::MatrixXd& u) const {
  if (kernel_.kind != KernelKind::SoftmaxAttention)
    throw PreconditionError(kModule, "attention weights need an attention kernel");
  // scores(i, j) = <A u(x_i), B u(y_j)>
  Eigen::MatrixXd scores = (kernel_.A * u).transpose() * (kernel_.B * u);
  const Eigen::VectorXd& w = grid_->weights;
  for (Eigen::Index j = 0; j < scores.cols(); ++j) {
    const double mx = scores.col(j).maxCoeff();
    scores.col(j) = (scores.col(j).array() - mx).exp().matrix();
    scores.col(j) /= w.dot(scores.col(j));
  }
  return scores;
}

Eigen::MatrixXd NonlinearIntegralOperator::K(const Eigen::MatrixXd& u) const {
  if (u.rows() != channels_ || u.cols() != grid_->M)
    throw DimensionError(kModule, "function has shape " + std::to_string(u.rows()) + "x" +
                                      std::to_string(u.cols()) + ", operator expects " +
                                      std::to_string(channels_) + "x" + std::to_string(grid_->M));
  if (kernel_.kind == KernelKind::SoftmaxAttention) {
    const Eigen::MatrixXd weights = attention_weights(u);
    // K(u)(x_i) = sum_j w_j weight(x_i, y_j) u(y_j)
    return u * grid_->weights.asDiagonal() * weights.transpose();
  }
  const Eigen::VectorXd v = u.row(0).transpose();
  const Eigen::MatrixXd k = wq_.cwiseProduct(kernel_matrix(v));
  return (k * v).transpose();
}

Eigen::MatrixXd NonlinearIntegralOperator::apply_w(const Eigen::MatrixXd& u) const {
  if (kernel_.kind == KernelKind::SoftmaxAttention) return w_matrix_ * u;
  return u.array().rowwise() * w_.transpose().array();
}

Eigen::MatrixXd NonlinearIntegralOperator::apply_w_inverse(const Eigen::MatrixXd& v) const {
  if (kernel_.kind == KernelKind::SoftmaxAttention) return w_matrix_.partialPivLu().solve(v);
  return v.array().rowwise() / w_.transpose().array();
}

double NonlinearIntegralOperator::w_inverse_norm() const {
  if (kernel_.kind == KernelKind::SoftmaxAttention) {
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(w_matrix_);
    return 1.0 / svd.singularValues().minCoeff();
  }
  return w_.cwiseAbs().cwiseInverse().maxCoeff();
}

Eigen::MatrixXd NonlinearIntegralOperator::apply(const Eigen::MatrixXd& u) const {
  return apply_w(u) + K(u) + bias_;
}

GridFunction NonlinearIntegralOperator::apply(const GridFunction& u) const {
  if (!u.grid || !u.grid->same_as(*grid_)) throw DimensionError(kModule, "function lives on a different grid");
  return GridFunction(grid_, apply(u.values));
}

double NonlinearIntegralOperator::c_sup() const {
  double s = 0.0;
  for (const auto& t : sampled_) s += t.c.cwiseAbs().maxCoeff();
  return s;
}

GridFunction apply_nonlinear(const NonlinearIntegralOperator& F, const GridFunction& u) { return F.apply(u); }

}  // namespace injop::nonlin
