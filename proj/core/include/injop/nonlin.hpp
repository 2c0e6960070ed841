#pragma once

// Nonlinear integral operators F(u) = W u + K(u) + b with
//   K(u)(x) = int_D k(x, y, u(x) or u(y)) u(y) dy,
// discretized on a uniform grid. Kernel tables are sampled once when the
// operator is built.

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "injop/funcspace.hpp"

namespace injop::nonlin {

using funcspace::Grid;
using funcspace::GridFunction;
using funcspace::GridPtr;

/// Scalar coefficient field c(x, y) of a kernel.
struct BivariateField {
  enum class Kind { Constant, Affine, Gaussian, Table };
  Kind kind = Kind::Constant;
  double c0 = 0.0;  // Constant value, or the affine offset
  double cx = 0.0;
  double cy = 0.0;
  double cxy = 0.0;
  double amp = 0.0;    // Gaussian: amp * exp(-((x - y) / width)^2)
  double width = 1.0;
  Eigen::MatrixXd table;  // Table: values at (x_i, y_j)

  static BivariateField constant(double v);
  static BivariateField affine(double c0, double cx, double cy, double cxy = 0.0);
  static BivariateField gaussian(double amp, double width);
  static BivariateField from_table(Eigen::MatrixXd values);

  double operator()(double x, double y) const;
  /// M x M matrix of values at (x_i, y_j).
  Eigen::MatrixXd sample(const Grid& grid) const;
};

std::string to_string(BivariateField::Kind kind);
BivariateField::Kind field_kind_from_string(const std::string& name);

/// Which value of u the scalar kernel reads.
enum class Signature { UX, UY };

std::string to_string(Signature s);
Signature signature_from_string(const std::string& name);

/// c * act(a t + b)
struct ActivatedTerm {
  BivariateField c;
  BivariateField a;
  BivariateField b;
};

enum class KernelKind { SigmoidSum, Wire, VolterraLipschitz, SoftmaxAttention, LinearTable };

std::string to_string(KernelKind kind);
KernelKind kernel_kind_from_string(const std::string& name);

struct NonlinearKernel {
  KernelKind kind = KernelKind::LinearTable;
  Signature signature = Signature::UY;
  /// SigmoidSum and Wire: k = sum_j c_j act(a_j t + b_j).
  std::vector<ActivatedTerm> terms;
  /// Wire: act(t) = sin(omega t) exp(-t^2).
  double omega = 1.0;
  /// VolterraLipschitz: k = 1_{y <= x} (kappa + lambda tanh t).
  BivariateField kappa;
  BivariateField lambda;
  /// LinearTable: k = table(x, y), independent of u.
  BivariateField table;
  /// SoftmaxAttention: k = softmax_x(<A u(x), B u(y)>), d x d matrices.
  Eigen::MatrixXd A;
  Eigen::MatrixXd B;
  /// Declared bound on the kernel and its first three t-derivatives.
  std::optional<double> c0;

  static NonlinearKernel sigmoid_sum(std::vector<ActivatedTerm> terms, Signature s = Signature::UY);
  static NonlinearKernel wire(double omega, std::vector<ActivatedTerm> terms, Signature s = Signature::UY);
  static NonlinearKernel volterra(BivariateField kappa, BivariateField lambda = BivariateField::constant(0.0));
  static NonlinearKernel linear(BivariateField table);
  static NonlinearKernel attention(Eigen::MatrixXd A, Eigen::MatrixXd B);

  bool is_volterra() const { return kind == KernelKind::VolterraLipschitz; }
  bool differentiable() const { return kind != KernelKind::SoftmaxAttention && signature == Signature::UY; }
};

double logistic(double t);
double logistic_derivative(double t);
double wire_activation(double omega, double t);
double wire_derivative(double omega, double t);

/// F(u) = W u + K(u) + b on a fixed grid.
///
/// Scalar kinds act on one channel with a positive per-node multiplier W(x).
/// Attention acts on d channels with a constant invertible d x d matrix W.
class NonlinearIntegralOperator {
 public:
  NonlinearIntegralOperator(GridPtr grid, Eigen::VectorXd w, NonlinearKernel kernel,
                            std::optional<Eigen::MatrixXd> bias = std::nullopt);
  /// Attention form with a constant channel-mixing matrix.
  NonlinearIntegralOperator(GridPtr grid, Eigen::MatrixXd w_matrix, NonlinearKernel kernel,
                            std::optional<Eigen::MatrixXd> bias = std::nullopt);

  const GridPtr& grid() const { return grid_; }
  const NonlinearKernel& kernel() const { return kernel_; }
  int channels() const { return channels_; }
  /// Per-node multiplier (scalar kinds).
  const Eigen::VectorXd& w() const { return w_; }
  /// Channel matrix (attention).
  const Eigen::MatrixXd& w_matrix() const { return w_matrix_; }
  /// channels x M; zero when absent.
  const Eigen::MatrixXd& bias() const { return bias_; }
  bool has_bias() const { return has_bias_; }
  /// Quadrature weights of K: row i integrates over y (truncated at x_i for Volterra).
  const Eigen::MatrixXd& quadrature() const { return wq_; }

  /// |D|.
  double length() const { return grid_->length(); }

  /// k(x_i, y_j, .) at the given u (scalar kinds).
  Eigen::MatrixXd kernel_matrix(const Eigen::VectorXd& u) const;
  /// d/dt k(x_i, y_j, t) at t = u (scalar kinds).
  Eigen::MatrixXd kernel_t_derivative(const Eigen::VectorXd& u) const;
  /// Softmax weights over x for each y (attention), M x M with (i, j) = weight(x_i, y_j).
  Eigen::MatrixXd attention_weights(const Eigen::MatrixXd& u) const;

  /// K(u), channels x M.
  Eigen::MatrixXd K(const Eigen::MatrixXd& u) const;
  /// W u.
  Eigen::MatrixXd apply_w(const Eigen::MatrixXd& u) const;
  /// W^{-1} v.
  Eigen::MatrixXd apply_w_inverse(const Eigen::MatrixXd& v) const;
  /// ||W^{-1}|| as an operator on L2.
  double w_inverse_norm() const;
  /// W u + K(u) + b.
  Eigen::MatrixXd apply(const Eigen::MatrixXd& u) const;
  GridFunction apply(const GridFunction& u) const;

  /// Sum over terms of the sup of |c_j| on the grid (SigmoidSum, Wire).
  double c_sup() const;

 private:
  void build(NonlinearKernel kernel);
  Eigen::MatrixXd activated_sum(const Eigen::VectorXd& u, bool derivative) const;

  GridPtr grid_;
  NonlinearKernel kernel_;
  int channels_ = 1;
  Eigen::VectorXd w_;
  Eigen::MatrixXd w_matrix_;
  Eigen::MatrixXd bias_;
  bool has_bias_ = false;
  Eigen::MatrixXd wq_;
  struct SampledTerm {
    Eigen::MatrixXd c, a, b;
  };
  std::vector<SampledTerm> sampled_;
  Eigen::MatrixXd kappa_, lambda_, table_;
};

GridFunction apply_nonlinear(const NonlinearIntegralOperator& F, const GridFunction& u);

struct CoercivityReport {
  std::vector<double> radii;
  std::vector<double> min_values;  // min over rays of <alpha r u + W^{-1}K(r u), u>
  bool monotone = false;           // min_values nondecreasing in r
  /// SigmoidSum: alpha - ||W^{-1}|| C_K |D|.
  std::optional<double> analytic_slope;
  /// Smallest listed radius from which every min value is >= (alpha / 2) r.
  std::optional<double> half_alpha_threshold;
};

CoercivityReport estimate_coercivity(const NonlinearIntegralOperator& F, double alpha, int ray_dirs,
                                     const std::vector<double>& radii, std::uint64_t seed = 0);

/// Empirical Lipschitz constant of W^{-1}K over seeded pairs: differences
/// along the first eight Fourier modes, then alternating random far pairs and
/// nearby pairs whose offset follows a few power steps of the local Jacobian.
/// Constant base points on an amplitude ladder follow, and the steepest base
/// point is then hill-climbed with smooth kicks.
double estimate_contraction(const NonlinearIntegralOperator& F, int pair_samples, std::uint64_t seed = 0);

/// Upper bound on the Lipschitz constant of W^{-1}K on the grid, for scalar
/// kinds with the u(y) signature; nullopt otherwise.
std::optional<double> analytic_lipschitz_bound(const NonlinearIntegralOperator& F);

struct InversionTrace {
  std::vector<double> residual_l2;
  std::vector<double> residual_h1;
  std::vector<double> ratios;  // successive residual (or step) ratios; NaN for the first entry
  bool converged = false;
  int iterations = 0;
};

struct InversionResult {
  GridFunction u;
  InversionTrace trace;
};

/// Fixed-point iteration u <- W^{-1}(z - b - K(u)) from u = 0. Throws
/// DivergenceError after five consecutive residual increases.
InversionResult invert_banach(const NonlinearIntegralOperator& F, const GridFunction& z, double tol,
                              int max_iter);

/// Dense Jacobian A_{u0} = diag(W) + quadrature (k + u0(y) dk/dt) on grid values.
Eigen::MatrixXd frechet_derivative(const NonlinearIntegralOperator& F, const GridFunction& u0);
Eigen::MatrixXd frechet_derivative(const NonlinearIntegralOperator& F, const Eigen::VectorXd& u0);

/// Solves A w = rhs after checking sigma_min(A) > 1e-10 sigma_max.
GridFunction solve_frechet(const Eigen::MatrixXd& A, const GridFunction& rhs);
Eigen::VectorXd solve_frechet(const Eigen::MatrixXd& A, const Eigen::VectorXd& rhs);

}  // namespace injop::nonlin
