#pragma once

// Finite-rank integral neural operators: layers u -> sigma(K_N u + b_N) with
//   K_N u = sum_{k,p < N} C_{k,p} (u, phi_k) phi_p,
// composed into networks whose last layer is linear.

#include <functional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "injop/funcspace.hpp"

namespace injop::finite_rank {

using funcspace::BasisSpec;
using funcspace::SpectralCoeffs;
using funcspace::Transform;

enum class ActivationKind { ReLU, LeakyReLU, Sigmoid, Identity };

struct Activation {
  ActivationKind kind = ActivationKind::Identity;
  double a = 0.0;  // LeakyReLU slope on the negative half-line

  static Activation relu() { return {ActivationKind::ReLU, 0.0}; }
  static Activation leaky_relu(double slope);
  static Activation sigmoid() { return {ActivationKind::Sigmoid, 0.0}; }
  static Activation identity() { return {ActivationKind::Identity, 0.0}; }

  double operator()(double s) const;
  double derivative(double s) const;

  bool is_injective() const { return kind != ActivationKind::ReLU; }
  /// Identity, or LeakyReLU with slope exactly 1.
  bool acts_as_identity() const {
    return kind == ActivationKind::Identity || (kind == ActivationKind::LeakyReLU && a == 1.0);
  }
  bool operator==(const Activation&) const = default;
};

std::string to_string(ActivationKind kind);
ActivationKind activation_kind_from_string(const std::string& name);

/// One layer of rank N from d_in to d_out channels.
///
/// The coefficient tensor is held as its dense block matrix (N d_out) x (N d_in)
/// in mode-major order: block row p, block column k is C_{k,p}.
class FiniteRankLayer {
 public:
  FiniteRankLayer() = default;
  FiniteRankLayer(BasisSpec basis, int d_in, int d_out, int N,
                  Activation activation = Activation::identity());

  int d_in() const { return d_in_; }
  int d_out() const { return d_out_; }
  int rank() const { return N_; }
  const BasisSpec& basis() const { return basis_; }
  const Activation& activation() const { return activation_; }
  void set_activation(Activation act) { activation_ = act; }

  /// d_out x d_in block mapping input mode k to output mode p.
  Eigen::Block<Eigen::MatrixXd> C(int k, int p);
  Eigen::Block<const Eigen::MatrixXd> C(int k, int p) const;

  const Eigen::MatrixXd& blocks() const { return blocks_; }
  void set_blocks(Eigen::MatrixXd blocks);

  /// Bias coefficients, d_out x N.
  const Eigen::MatrixXd& bias() const { return bias_; }
  void set_bias(Eigen::MatrixXd bias);
  SpectralCoeffs bias_coeffs() const { return SpectralCoeffs(basis_, bias_); }

 private:
  BasisSpec basis_;
  int d_in_ = 0;
  int d_out_ = 0;
  int N_ = 0;
  Activation activation_;
  Eigen::MatrixXd blocks_;
  Eigen::MatrixXd bias_;
};

/// K_N u, ignoring bias and activation.
SpectralCoeffs apply_finite_rank(const FiniteRankLayer& layer, const SpectralCoeffs& u);

/// K_N u + b_N.
SpectralCoeffs apply_affine(const FiniteRankLayer& layer, const SpectralCoeffs& u);

/// to_spectral(sigma(from_spectral(K_N u + b_N))) on the transform's grid.
SpectralCoeffs apply_layer(const FiniteRankLayer& layer, const SpectralCoeffs& u,
                           const Transform& transform);

/// (N d_out) x (N d_in) matrix acting on mode-major stacked coefficients.
Eigen::MatrixXd block_matrix(const FiniteRankLayer& layer);

/// Ordered layers sharing one basis and rank; the last layer is linear.
struct FiniteRankNetwork {
  BasisSpec basis;
  int N = 0;
  std::vector<FiniteRankLayer> layers;

  int d_in() const { return layers.front().d_in(); }
  int d_out() const { return layers.back().d_out(); }

  /// Throws DimensionError/PreconditionError if the invariants do not hold.
  void validate() const;
};

SpectralCoeffs apply_network(const FiniteRankNetwork& net, const SpectralCoeffs& u,
                             const Transform& transform);
SpectralCoeffs apply_network(const FiniteRankNetwork& net, const SpectralCoeffs& u,
                             funcspace::GridPtr grid);

/// Result of projecting a bivariate kernel onto the first N x N modes.
struct TruncationResult {
  FiniteRankLayer layer;
  double hs_norm = 0.0;       // quadrature Hilbert-Schmidt norm of the kernel
  double tail = 0.0;          // quadrature ||k - k_N||_HS, an upper bound on ||K - K_N||_op
  bool tail_clamped = false;  // the difference came out negative and was clamped to 0
};

using BivariateKernel = std::function<double(double x, double y)>;

/// c_{k,p} = (k, phi_p(x) phi_k(y)) by double trapezoid quadrature on the grid.
TruncationResult truncate_kernel(const BivariateKernel& kernel, const BasisSpec& basis,
                                 const funcspace::Grid& grid, int N);
/// Same, from a precomputed M x M table K(i, j) = k(x_i, y_j).
TruncationResult truncate_kernel(const Eigen::MatrixXd& table, const BasisSpec& basis,
                                 const funcspace::Grid& grid, int N);

}  // namespace injop::finite_rank
