#include "injop/funcspace.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "injop/error.hpp"

namespace injop::funcspace {

namespace {

constexpr const char* kModule = "funcspace";

void require_same_grid(const GridFunction& f, const GridFunction& g) {
  if (!f.grid || !g.grid || !f.grid->same_as(*g.grid) || f.size() != g.size())
    throw DimensionError(kModule, "functions live on different grids");
}

}  // namespace

Grid Grid::uniform(double a, double b, int M) {
  if (!(b > a)) throw PreconditionError(kModule, "grid needs b > a");
  if (M < 2) throw PreconditionError(kModule, "grid needs at least two nodes");
  Grid g;
  g.a = a;
  g.b = b;
  g.M = M;
  g.nodes.resize(M);
  g.weights.resize(M);
  const double h = (b - a) / (M - 1);
  for (int i = 0; i < M; ++i) {
    // Exact endpoints; a + i*h can overshoot b by an ulp.
    g.nodes[i] = (i == M - 1) ? b : a + i * h;
    g.weights[i] = h;
  }
  g.weights[0] = g.weights[M - 1] = 0.5 * h;
  return g;
}

GridPtr make_grid(double a, double b, int M) {
  return std::make_shared<const Grid>(Grid::uniform(a, b, M));
}

std::string to_string(BasisKind kind) {
  return kind == BasisKind::Fourier ? "fourier" : "stephaar";
}

BasisKind basis_kind_from_string(const std::string& name) {
  if (name == "fourier" || name == "Fourier") return BasisKind::Fourier;
  if (name == "stephaar" || name == "StepHaar") return BasisKind::StepHaar;
  throw FormatError(kModule, "unknown basis kind '" + name + "'");
}

double fourier_mode(const BasisSpec& basis, int k, double x) {
  const double L = basis.b - basis.a;
  const double t = (x - basis.a) / L;
  const double scale = 1.0 / std::sqrt(L);
  if (k == 0) return scale;
  const int freq = (k + 1) / 2;
  const double arg = 2.0 * std::numbers::pi * freq * t;
  return scale * std::numbers::sqrt2 * ((k % 2 == 1) ? std::cos(arg) : std::sin(arg));
}

Eigen::MatrixXd sample_basis(const BasisSpec& basis, const Grid& grid, int N) {
  if (!basis.matches(grid))
    throw DimensionError(kModule, "basis interval does not match grid interval");
  Eigen::MatrixXd phi(grid.M, N);
  if (basis.kind == BasisKind::Fourier) {
    for (int k = 0; k < N; ++k)
      for (int i = 0; i < grid.M; ++i) phi(i, k) = fourier_mode(basis, k, grid.nodes[i]);
    return phi;
  }

  if (N > basis.cells)
    throw PreconditionError(kModule, "StepHaar order exceeds its cell count");
  if (grid.M < basis.cells)
    throw PreconditionError(kModule, "StepHaar needs at least one node per cell");
  phi.setZero();
  const double L = grid.length();
  for (int i = 0; i < grid.M; ++i) {
    int cell = static_cast<int>(std::floor((grid.nodes[i] - grid.a) / L * basis.cells));
    cell = std::clamp(cell, 0, basis.cells - 1);
    if (cell < N) phi(i, cell) = 1.0;
  }
  for (int k = 0; k < N; ++k) {
    const double mass = grid.weights.dot(phi.col(k));
    if (mass <= 0.0) throw PreconditionError(kModule, "empty StepHaar cell");
    phi.col(k) /= std::sqrt(mass);
  }
  return phi;
}

GridFunction::GridFunction(GridPtr g, Eigen::MatrixXd v) : grid(std::move(g)), values(std::move(v)) {
  if (!grid) throw DimensionError(kModule, "grid function without grid");
  if (values.cols() != grid->M)
    throw DimensionError(kModule, "value array has " + std::to_string(values.cols()) +
                                      " samples, grid has " + std::to_string(grid->M));
}

GridFunction GridFunction::zeros(GridPtr g, int channels) {
  const int M = g->M;
  return GridFunction(std::move(g), Eigen::MatrixXd::Zero(channels, M));
}

SpectralCoeffs SpectralCoeffs::zeros(const BasisSpec& basis, int channels, int N) {
  return SpectralCoeffs(basis, Eigen::MatrixXd::Zero(channels, N));
}

Eigen::VectorXd SpectralCoeffs::stacked() const {
  // coeffs is column-major channels x N, which is exactly mode-major order.
  return Eigen::Map<const Eigen::VectorXd>(coeffs.data(), coeffs.size());
}

SpectralCoeffs SpectralCoeffs::from_stacked(const BasisSpec& basis, const Eigen::VectorXd& v,
                                            int channels, int N) {
  if (v.size() != static_cast<Eigen::Index>(channels) * N)
    throw DimensionError(kModule, "stacked vector length does not match channels x N");
  return SpectralCoeffs(basis, Eigen::Map<const Eigen::MatrixXd>(v.data(), channels, N));
}

SpectralCoeffs SpectralCoeffs::resized(int N) const {
  Eigen::MatrixXd out = Eigen::MatrixXd::Zero(channels(), N);
  const int keep = std::min(N, order());
  out.leftCols(keep) = coeffs.leftCols(keep);
  return SpectralCoeffs(basis, std::move(out));
}

void require_resolution(const Grid& grid, int N) {
  if (grid.M < kAliasingFactor * N)
    throw AliasingError(kModule, "grid with M=" + std::to_string(grid.M) +
                                     " cannot resolve order N=" + std::to_string(N) +
                                     " (needs M >= 8N)");
}

double inner_product(const GridFunction& f, const GridFunction& g) {
  require_same_grid(f, g);
  if (f.channels() != 1 || g.channels() != 1)
    throw DimensionError(kModule, "inner_product expects single-channel functions");
  return (f.values.row(0).array() * g.values.row(0).array() * f.grid->weights.transpose().array())
      .sum();
}

double l2_norm(const Grid& grid, const Eigen::VectorXd& u) {
  return std::sqrt(grid.weights.dot(u.cwiseAbs2()));
}

double h1_norm(const Grid& grid, const Eigen::VectorXd& u) {
  const double h = grid.spacing();
  const Eigen::Index n = u.size();
  const double grad = (u.tail(n - 1) - u.head(n - 1)).squaredNorm() / h;
  return std::sqrt(grid.weights.dot(u.cwiseAbs2()) + grad);
}

double l2_norm(const GridFunction& f) {
  double s = 0.0;
  for (int c = 0; c < f.channels(); ++c) {
    const double n = l2_norm(*f.grid, f.values.row(c).transpose());
    s += n * n;
  }
  return std::sqrt(s);
}

double h1_norm(const GridFunction& f) {
  double s = 0.0;
  for (int c = 0; c < f.channels(); ++c) {
    const double n = h1_norm(*f.grid, f.values.row(c).transpose());
    s += n * n;
  }
  return std::sqrt(s);
}

Transform::Transform(const BasisSpec& basis, GridPtr grid, int N)
    : basis_(basis), grid_(std::move(grid)), N_(N) {
  if (!grid_) throw DimensionError(kModule, "transform without grid");
  require_resolution(*grid_, N);
  phi_ = sample_basis(basis_, *grid_, N);
  weighted_phi_ = grid_->weights.asDiagonal() * phi_;
}

SpectralCoeffs Transform::analyze(const GridFunction& f) const {
  if (!f.grid || !f.grid->same_as(*grid_))
    throw DimensionError(kModule, "function grid does not match transform grid");
  return SpectralCoeffs(basis_, analyze(f.values));
}

GridFunction Transform::synthesize(const SpectralCoeffs& c) const {
  if (c.basis != basis_) throw DimensionError(kModule, "coefficient basis does not match transform");
  if (c.order() != N_) throw DimensionError(kModule, "coefficient order does not match transform");
  return GridFunction(grid_, synthesize(c.coeffs));
}

SpectralCoeffs to_spectral(const GridFunction& f, const BasisSpec& basis, int N) {
  if (!f.grid) throw DimensionError(kModule, "function without grid");
  return Transform(basis, f.grid, N).analyze(f);
}

GridFunction from_spectral(const SpectralCoeffs& c, GridPtr grid) {
  if (!grid) throw DimensionError(kModule, "synthesis without grid");
  if (!c.basis.matches(*grid))
    throw DimensionError(kModule, "basis interval does not match grid interval");
  const Eigen::MatrixXd phi = sample_basis(c.basis, *grid, c.order());
  return GridFunction(std::move(grid), c.coeffs * phi.transpose());
}

Eigen::MatrixXd gram(const BasisSpec& basis, const Grid& grid, int N) {
  const Eigen::MatrixXd phi = sample_basis(basis, grid, N);
  return phi.transpose() * grid.weights.asDiagonal() * phi;
}

}  // namespace injop::funcspace
