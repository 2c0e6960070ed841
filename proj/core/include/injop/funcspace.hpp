#pragma once

// Function spaces on a bounded interval D = [a, b]: uniform grids with
// composite trapezoid weights, orthonormal bases, and the analysis/synthesis
// maps between grid samples and spectral coefficients.

#include <memory>
#include <string>

#include <Eigen/Dense>

namespace injop::funcspace {

/// Uniform closed grid on [a, b] with M nodes and trapezoid weights.
struct Grid {
  double a = 0.0;
  double b = 1.0;
  int M = 0;
  Eigen::VectorXd nodes;
  Eigen::VectorXd weights;

  static Grid uniform(double a, double b, int M);

  double length() const { return b - a; }
  double spacing() const { return (b - a) / (M - 1); }
  bool same_as(const Grid& other) const {
    return a == other.a && b == other.b && M == other.M;
  }
};

using GridPtr = std::shared_ptr<const Grid>;

inline constexpr int kDefaultGridSize = 512;
inline constexpr int kAliasingFactor = 8;

GridPtr make_grid(double a = 0.0, double b = 1.0, int M = kDefaultGridSize);

enum class BasisKind { Fourier, StepHaar };

/// Orthonormal system on [a, b].
///
/// Fourier (1-based): phi_1 = 1, phi_{2k} = sqrt2 cos(2 pi k t),
/// phi_{2k+1} = sqrt2 sin(2 pi k t), with t = (x - a)/(b - a) and a
/// 1/sqrt(b - a) normalization.
///
/// StepHaar: `cells` step functions with disjoint supports
/// [a + k L/cells, a + (k+1) L/cells), each normalized under the grid
/// quadrature. It is an orthonormal sequence, not a complete basis.
struct BasisSpec {
  BasisKind kind = BasisKind::Fourier;
  double a = 0.0;
  double b = 1.0;
  int cells = 64;

  bool operator==(const BasisSpec&) const = default;
  bool matches(const Grid& grid) const { return a == grid.a && b == grid.b; }
};

std::string to_string(BasisKind kind);
BasisKind basis_kind_from_string(const std::string& name);

/// Evaluates mode `k` (0-based) at a point. StepHaar modes need the grid for
/// their quadrature normalization and are only available via sample_basis.
double fourier_mode(const BasisSpec& basis, int k, double x);

/// M x N matrix whose column k holds mode k sampled on the grid nodes.
Eigen::MatrixXd sample_basis(const BasisSpec& basis, const Grid& grid, int N);

/// Vector-valued function sampled on a grid: `values` is channels x M.
struct GridFunction {
  GridPtr grid;
  Eigen::MatrixXd values;

  GridFunction() = default;
  GridFunction(GridPtr g, Eigen::MatrixXd v);
  static GridFunction zeros(GridPtr g, int channels);

  int channels() const { return static_cast<int>(values.rows()); }
  int size() const { return static_cast<int>(values.cols()); }
  /// Single-channel view as a column vector (channel 0).
  Eigen::VectorXd column() const { return values.row(0).transpose(); }
};

/// Coefficients of an h-channel function in the first N modes: `coeffs` is
/// channels x N.
struct SpectralCoeffs {
  BasisSpec basis;
  Eigen::MatrixXd coeffs;

  SpectralCoeffs() = default;
  SpectralCoeffs(BasisSpec b, Eigen::MatrixXd c) : basis(b), coeffs(std::move(c)) {}
  static SpectralCoeffs zeros(const BasisSpec& basis, int channels, int N);

  int channels() const { return static_cast<int>(coeffs.rows()); }
  int order() const { return static_cast<int>(coeffs.cols()); }

  /// Mode-major stacking: entry k * channels + c holds coeffs(c, k).
  Eigen::VectorXd stacked() const;
  static SpectralCoeffs from_stacked(const BasisSpec& basis, const Eigen::VectorXd& v,
                                     int channels, int N);

  /// Zero-pads (or truncates) to order N.
  SpectralCoeffs resized(int N) const;
  double norm() const { return coeffs.norm(); }
};

/// Checks M >= 8N and throws AliasingError otherwise.
void require_resolution(const Grid& grid, int N);

/// Quadrature L2 pairing sum_i w_i f_i g_i of two single-channel functions.
double inner_product(const GridFunction& f, const GridFunction& g);

/// Quadrature L2 norm over all channels.
double l2_norm(const GridFunction& f);

/// Discrete H1 norm: L2 part plus forward-difference derivative
/// sum_i h ((u_{i+1} - u_i)/h)^2.
double h1_norm(const GridFunction& f);
double h1_norm(const Grid& grid, const Eigen::VectorXd& u);
double l2_norm(const Grid& grid, const Eigen::VectorXd& u);

/// Cached analysis/synthesis pair for one (basis, grid, N) triple.
class Transform {
 public:
  Transform(const BasisSpec& basis, GridPtr grid, int N);

  const BasisSpec& basis() const { return basis_; }
  const GridPtr& grid() const { return grid_; }
  int order() const { return N_; }
  /// M x N sampled modes.
  const Eigen::MatrixXd& modes() const { return phi_; }

  SpectralCoeffs analyze(const GridFunction& f) const;
  GridFunction synthesize(const SpectralCoeffs& c) const;

  /// Raw forms on channel-major matrices (channels x M <-> channels x N).
  Eigen::MatrixXd analyze(const Eigen::MatrixXd& values) const { return values * weighted_phi_; }
  Eigen::MatrixXd synthesize(const Eigen::MatrixXd& coeffs) const {
    return coeffs * phi_.transpose();
  }

 private:
  BasisSpec basis_;
  GridPtr grid_;
  int N_;
  Eigen::MatrixXd phi_;
  Eigen::MatrixXd weighted_phi_;
};

/// coeffs(c, k) = <f_c, phi_k> for k < N.
SpectralCoeffs to_spectral(const GridFunction& f, const BasisSpec& basis, int N);

/// Pointwise sum_k coeffs(c, k) phi_k on the grid nodes.
GridFunction from_spectral(const SpectralCoeffs& c, GridPtr grid);

/// Gram matrix of the first N modes under the grid quadrature.
Eigen::MatrixXd gram(const BasisSpec& basis, const Grid& grid, int N);

}  // namespace injop::funcspace
