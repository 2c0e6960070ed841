#include "injop/finite_rank.hpp"

#include <algorithm>
#include <cmath>

#include "injop/error.hpp"

namespace injop::finite_rank {

namespace {

constexpr const char* kModule = "finite_rank_no";

double logistic(double s) {
  if (s >= 0.0) return 1.0 / (1.0 + std::exp(-s));
  const double e = std::exp(s);
  return e / (1.0 + e);
}

}  // namespace

Activation Activation::leaky_relu(double slope) {
  if (!(slope > 0.0)) throw PreconditionError(kModule, "LeakyReLU needs slope a > 0");
  return {ActivationKind::LeakyReLU, slope};
}

double Activation::operator()(double s) const {
  switch (kind) {
    case ActivationKind::ReLU:
      return s > 0.0 ? s : 0.0;
    case ActivationKind::LeakyReLU:
      // ReLU(s) - a ReLU(-s)
      return s > 0.0 ? s : a * s;
    case ActivationKind::Sigmoid:
      return logistic(s);
    case ActivationKind::Identity:
      return s;
  }
  return s;
}

double Activation::derivative(double s) const {
  switch (kind) {
    case ActivationKind::ReLU:
      return s > 0.0 ? 1.0 : 0.0;
    case ActivationKind::LeakyReLU:
      return s > 0.0 ? 1.0 : a;
    case ActivationKind::Sigmoid: {
      const double v = logistic(s);
      return v * (1.0 - v);
    }
    case ActivationKind::Identity:
      return 1.0;
  }
  return 1.0;
}

std::string to_string(ActivationKind kind) {
  switch (kind) {
    case ActivationKind::ReLU:
      return "relu";
    case ActivationKind::LeakyReLU:
      return "leaky_relu";
    case ActivationKind::Sigmoid:
      return "sigmoid";
    case ActivationKind::Identity:
      return "identity";
  }
  return "identity";
}

ActivationKind activation_kind_from_string(const std::string& name) {
  if (name == "relu" || name == "ReLU") return ActivationKind::ReLU;
  if (name == "leaky_relu" || name == "LeakyReLU") return ActivationKind::LeakyReLU;
  if (name == "sigmoid" || name == "Sigmoid") return ActivationKind::Sigmoid;
  if (name == "identity" || name == "Identity") return ActivationKind::Identity;
  throw FormatError(kModule, "unknown activation '" + name + "'");
}

FiniteRankLayer::FiniteRankLayer(BasisSpec basis, int d_in, int d_out, int N, Activation activation)
    : basis_(basis),
      d_in_(d_in),
      d_out_(d_out),
      N_(N),
      activation_(activation),
      blocks_(Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(N) * d_out,
                                    static_cast<Eigen::Index>(N) * d_in)),
      bias_(Eigen::MatrixXd::Zero(d_out, N)) {
  if (d_in <= 0 || d_out <= 0 || N <= 0)
    throw DimensionError(kModule, "layer needs positive d_in, d_out and N");
}

Eigen::Block<Eigen::MatrixXd> FiniteRankLayer::C(int k, int p) {
  return blocks_.block(static_cast<Eigen::Index>(p) * d_out_, static_cast<Eigen::Index>(k) * d_in_,
                       d_out_, d_in_);
}

Eigen::Block<const Eigen::MatrixXd> FiniteRankLayer::C(int k, int p) const {
  return blocks_.block(static_cast<Eigen::Index>(p) * d_out_, static_cast<Eigen::Index>(k) * d_in_,
                       d_out_, d_in_);
}

void FiniteRankLayer::set_blocks(Eigen::MatrixXd blocks) {
  if (blocks.rows() != blocks_.rows() || blocks.cols() != blocks_.cols())
    throw DimensionError(kModule, "block matrix must be (N d_out) x (N d_in)");
  blocks_ = std::move(blocks);
}

void FiniteRankLayer::set_bias(Eigen::MatrixXd bias) {
  if (bias.rows() != d_out_ || bias.cols() != N_)
    throw DimensionError(kModule, "bias must be d_out x N");
  bias_ = std::move(bias);
}

SpectralCoeffs apply_finite_rank(const FiniteRankLayer& layer, const SpectralCoeffs& u) {
  if (u.channels() != layer.d_in() || u.order() != layer.rank())
    throw DimensionError(kModule, "input has " + std::to_string(u.channels()) + " channels of order " +
                                      std::to_string(u.order()) + ", layer expects " +
                                      std::to_string(layer.d_in()) + " of order " +
                                      std::to_string(layer.rank()));
  const Eigen::VectorXd out = layer.blocks() * u.stacked();
  return SpectralCoeffs::from_stacked(layer.basis(), out, layer.d_out(), layer.rank());
}

SpectralCoeffs apply_affine(const FiniteRankLayer& layer, const SpectralCoeffs& u) {
  SpectralCoeffs out = apply_finite_rank(layer, u);
  out.coeffs += layer.bias();
  return out;
}

SpectralCoeffs apply_layer(const FiniteRankLayer& layer, const SpectralCoeffs& u,
                           const Transform& transform) {
  SpectralCoeffs pre = apply_affine(layer, u);
  if (layer.activation().acts_as_identity()) return pre;
  if (transform.order() != layer.rank() || transform.basis() != layer.basis())
    throw DimensionError(kModule, "transform does not match the layer's basis and rank");
  Eigen::MatrixXd values = transform.synthesize(pre.coeffs);
  const Activation act = layer.activation();
  values = values.unaryExpr([&act](double s) { return act(s); });
  pre.coeffs = transform.analyze(values);
  return pre;
}

Eigen::MatrixXd block_matrix(const FiniteRankLayer& layer) { return layer.blocks(); }

void FiniteRankNetwork::validate() const {
  if (layers.empty()) throw DimensionError(kModule, "network has no layers");
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const auto& layer = layers[l];
    if (layer.rank() != N)
      throw DimensionError(kModule, "layer " + std::to_string(l) + " has rank " +
                                        std::to_string(layer.rank()) + ", network rank is " +
                                        std::to_string(N));
    if (layer.basis() != basis)
      throw DimensionError(kModule, "layer " + std::to_string(l) + " uses a different basis");
    if (l > 0 && layers[l - 1].d_out() != layer.d_in())
      throw DimensionError(kModule, "channel mismatch between layers " + std::to_string(l - 1) +
                                        " and " + std::to_string(l));
  }
  if (!layers.back().activation().acts_as_identity())
    throw PreconditionError(kModule, "final layer must be linear (identity activation)");
}

SpectralCoeffs apply_network(const FiniteRankNetwork& net, const SpectralCoeffs& u,
                             const Transform& transform) {
  net.validate();
  SpectralCoeffs x = u;
  for (const auto& layer : net.layers) x = apply_layer(layer, x, transform);
  return x;
}

SpectralCoeffs apply_network(const FiniteRankNetwork& net, const SpectralCoeffs& u,
                             funcspace::GridPtr grid) {
  return apply_network(net, u, Transform(net.basis, std::move(grid), net.N));
}

TruncationResult truncate_kernel(const Eigen::MatrixXd& table, const BasisSpec& basis,
                                 const funcspace::Grid& grid, int N) {
  if (table.rows() != grid.M || table.cols() != grid.M)
    throw DimensionError(kModule, "kernel table must be M x M");
  funcspace::require_resolution(grid, N);
  const Eigen::MatrixXd phi = funcspace::sample_basis(basis, grid, N);
  const Eigen::MatrixXd wphi = grid.weights.asDiagonal() * phi;
  // coef(p, k) = sum_ij w_i w_j phi_p(x_i) k(x_i, y_j) phi_k(y_j)
  const Eigen::MatrixXd coef = wphi.transpose() * table * wphi;

  TruncationResult result;
  result.layer = FiniteRankLayer(basis, 1, 1, N);
  Eigen::MatrixXd blocks(N, N);
  for (int k = 0; k < N; ++k)
    for (int p = 0; p < N; ++p) blocks(p, k) = coef(p, k);
  result.layer.set_blocks(std::move(blocks));

  const double hs2 = (grid.weights.transpose() * table.cwiseAbs2() * grid.weights)(0, 0);
  result.hs_norm = std::sqrt(std::max(hs2, 0.0));
  // hs2 - |coef|^2 cancels to ~sqrt(eps) when the tail is tiny; the residual
  // table gives the same quadrature HS norm without that floor.
  result.tail_clamped = hs2 - coef.squaredNorm() < 0.0;
  const Eigen::MatrixXd residual = table - phi * coef * phi.transpose();
  const double tail2 = (grid.weights.transpose() * residual.cwiseAbs2() * grid.weights)(0, 0);
  result.tail = result.tail_clamped ? 0.0 : std::sqrt(std::max(tail2, 0.0));
  return result;
}

TruncationResult truncate_kernel(const BivariateKernel& kernel, const BasisSpec& basis,
                                 const funcspace::Grid& grid, int N) {
  Eigen::MatrixXd table(grid.M, grid.M);
  for (int j = 0; j < grid.M; ++j)
    for (int i = 0; i < grid.M; ++i) table(i, j) = kernel(grid.nodes[i], grid.nodes[j]);
  return truncate_kernel(table, basis, grid, N);
}

}  // namespace injop::finite_rank
