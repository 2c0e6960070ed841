#include <cmath>

#include <gtest/gtest.h>

#include "injop/error.hpp"
#include "injop/finite_rank.hpp"
#include "injop/rng.hpp"
#include "oracles.hpp"

using namespace injop;
using namespace injop::finite_rank;
using funcspace::GridFunction;
using funcspace::make_grid;

namespace {

const BasisSpec kFourier{funcspace::BasisKind::Fourier, 0.0, 1.0, 64};

FiniteRankLayer random_layer(std::uint64_t seed, int d_in, int d_out, int N, Activation act = Activation::identity()) {
  Rng rng = Rng::stream(seed, 0);
  FiniteRankLayer layer(kFourier, d_in, d_out, N, act);
  layer.set_blocks(rng.normal_matrix(N * d_out, N * d_in));
  layer.set_bias(rng.normal_matrix(d_out, N));
  return layer;
}

SpectralCoeffs random_coeffs(std::uint64_t seed, int channels, int N) {
  Rng rng = Rng::stream(seed, 1);
  return SpectralCoeffs(kFourier, rng.normal_matrix(channels, N));
}

}  // namespace

TEST(Activation, Definitions) {
  const auto relu = Activation::relu();
  EXPECT_EQ(relu(-1.5), 0.0);
  EXPECT_EQ(relu(2.0), 2.0);
  const auto leaky = Activation::leaky_relu(0.3);
  for (double s : {-2.0, -0.1, 0.0, 0.7, 3.0})
    EXPECT_DOUBLE_EQ(leaky(s), relu(s) - 0.3 * relu(-s));
  EXPECT_TRUE(Activation::leaky_relu(1.0).acts_as_identity());
  EXPECT_FALSE(relu.is_injective());
  EXPECT_THROW(Activation::leaky_relu(0.0), PreconditionError);
  EXPECT_NEAR(Activation::sigmoid()(0.0), 0.5, 1e-15);
  EXPECT_EQ(activation_kind_from_string(to_string(ActivationKind::LeakyReLU)), ActivationKind::LeakyReLU);
}

TEST(ApplyFiniteRank, IdentityAndZeroBlocks) {
  const int N = 5, d = 2;
  FiniteRankLayer layer(kFourier, d, d, N);
  for (int k = 0; k < N; ++k) layer.C(k, k).setIdentity();
  const SpectralCoeffs u = random_coeffs(3, d, N);
  EXPECT_EQ(apply_finite_rank(layer, u).coeffs, u.coeffs);
  EXPECT_EQ(block_matrix(layer), Eigen::MatrixXd::Identity(N * d, N * d));
  FiniteRankLayer zero(kFourier, d, d, N);
  EXPECT_EQ(apply_finite_rank(zero, u).coeffs.norm(), 0.0);
}

TEST(ApplyFiniteRank, HandExample) {
  // C_{1,1} = 2, C_{1,2} = 1 (1-based): phi_1 -> 2 phi_1 + phi_2.
  FiniteRankLayer layer(kFourier, 1, 1, 2);
  layer.C(0, 0)(0, 0) = 2.0;
  layer.C(0, 1)(0, 0) = 1.0;
  SpectralCoeffs u(kFourier, Eigen::MatrixXd::Zero(1, 2));
  u.coeffs(0, 0) = 1.0;
  const SpectralCoeffs out = apply_finite_rank(layer, u);
  EXPECT_DOUBLE_EQ(out.coeffs(0, 0), 2.0);
  EXPECT_DOUBLE_EQ(out.coeffs(0, 1), 1.0);
  Eigen::Matrix2d expected;
  expected << 2, 0, 1, 0;
  EXPECT_EQ(block_matrix(layer), Eigen::MatrixXd(expected));
  // Column j of the block matrix is the image of basis vector j.
  for (int j = 0; j < 2; ++j) {
    SpectralCoeffs e(kFourier, Eigen::MatrixXd::Zero(1, 2));
    e.coeffs(0, j) = 1.0;
    EXPECT_EQ(apply_finite_rank(layer, e).stacked(), block_matrix(layer).col(j));
  }
}

TEST(ApplyFiniteRank, BlockMatrixConsistency) {
  const FiniteRankLayer layer = random_layer(7, 2, 3, 6);
  const Eigen::MatrixXd B = block_matrix(layer);
  for (int s = 0; s < 100; ++s) {
    const SpectralCoeffs u = random_coeffs(100 + s, 2, 6);
    // Direct formula out[p] = sum_k C_{k,p} u[k].
    Eigen::MatrixXd direct = Eigen::MatrixXd::Zero(3, 6);
    for (int p = 0; p < 6; ++p)
      for (int k = 0; k < 6; ++k) direct.col(p) += layer.C(k, p) * u.coeffs.col(k);
    const SpectralCoeffs out = apply_finite_rank(layer, u);
    EXPECT_LE((out.coeffs - direct).cwiseAbs().maxCoeff(), 1e-12);
    EXPECT_LE((B * u.stacked() - out.stacked()).cwiseAbs().maxCoeff(), 1e-14 * (1 + out.stacked().norm()));
  }
}

TEST(ApplyFiniteRank, Linearity) {
  const FiniteRankLayer layer = random_layer(8, 2, 2, 4);
  const SpectralCoeffs u = random_coeffs(1, 2, 4), v = random_coeffs(2, 2, 4);
  const SpectralCoeffs mix(kFourier, 1.5 * u.coeffs - 0.25 * v.coeffs);
  const Eigen::MatrixXd lhs = apply_finite_rank(layer, mix).coeffs;
  const Eigen::MatrixXd rhs = 1.5 * apply_finite_rank(layer, u).coeffs - 0.25 * apply_finite_rank(layer, v).coeffs;
  EXPECT_LE((lhs - rhs).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(ApplyFiniteRank, DimensionMismatchThrows) {
  const FiniteRankLayer layer = random_layer(9, 2, 2, 4);
  EXPECT_THROW(apply_finite_rank(layer, random_coeffs(1, 3, 4)), DimensionError);
  EXPECT_THROW(apply_finite_rank(layer, random_coeffs(1, 2, 5)), DimensionError);
}

TEST(ApplyLayer, Examples) {
  const auto grid = make_grid();
  const Transform T(kFourier, grid, 4);
  FiniteRankLayer lin = random_layer(10, 1, 2, 4);
  const SpectralCoeffs u = random_coeffs(4, 1, 4);
  lin.set_bias(Eigen::MatrixXd::Zero(2, 4));
  EXPECT_EQ(apply_layer(lin, u, T).coeffs, apply_finite_rank(lin, u).coeffs);

  // K u + b = -2 everywhere: C = 0, b = -2 phi_1.
  FiniteRankLayer relu(kFourier, 1, 1, 4, Activation::relu());
  Eigen::MatrixXd b = Eigen::MatrixXd::Zero(1, 4);
  b(0, 0) = -2.0;
  relu.set_bias(b);
  EXPECT_LE(apply_layer(relu, u, T).coeffs.cwiseAbs().maxCoeff(), 1e-15);

  FiniteRankLayer leaky = random_layer(11, 1, 1, 4, Activation::leaky_relu(1.0));
  EXPECT_EQ(apply_layer(leaky, u, T).coeffs, apply_affine(leaky, u).coeffs);
}

TEST(ApplyLayer, AliasingGuard) {
  const auto grid = make_grid(0.0, 1.0, 30);
  EXPECT_THROW(Transform(kFourier, grid, 4), AliasingError);
}

TEST(ApplyNetwork, MatchesDenseProduct) {
  const auto grid = make_grid();
  FiniteRankNetwork net{kFourier, 5, {random_layer(20, 2, 3, 5), random_layer(21, 3, 1, 5)}};
  const Eigen::MatrixXd B0 = block_matrix(net.layers[0]);
  const Eigen::MatrixXd B1 = block_matrix(net.layers[1]);
  for (int s = 0; s < 10; ++s) {
    const SpectralCoeffs u = random_coeffs(200 + s, 2, 5);
    const Eigen::VectorXd hidden = B0 * u.stacked() + net.layers[0].bias_coeffs().stacked();
    const Eigen::VectorXd expected = B1 * hidden + net.layers[1].bias_coeffs().stacked();
    const Eigen::VectorXd got = apply_network(net, u, grid).stacked();
    EXPECT_LE((got - expected).cwiseAbs().maxCoeff(), 1e-12 * (1 + expected.norm()));
  }
  FiniteRankNetwork zero{kFourier, 5, {FiniteRankLayer(kFourier, 2, 2, 5, Activation::relu()),
                                        FiniteRankLayer(kFourier, 2, 1, 5)}};
  EXPECT_EQ(apply_network(zero, random_coeffs(5, 2, 5), grid).coeffs.norm(), 0.0);
}

TEST(ApplyNetwork, Validation) {
  FiniteRankNetwork bad_last{kFourier, 3, {random_layer(1, 1, 1, 3, Activation::relu())}};
  EXPECT_THROW(bad_last.validate(), PreconditionError);
  FiniteRankNetwork bad_channels{kFourier, 3, {random_layer(1, 1, 2, 3), random_layer(2, 3, 1, 3)}};
  EXPECT_THROW(bad_channels.validate(), DimensionError);
  FiniteRankNetwork bad_rank{kFourier, 3, {random_layer(1, 1, 1, 4)}};
  EXPECT_THROW(bad_rank.validate(), DimensionError);
}

TEST(ReluIdentityTrick, ReproducesInputOnGrid) {
  const int d = 2, N = 6;
  const auto grid = make_grid();
  FiniteRankLayer split(kFourier, d, 2 * d, N, Activation::relu());
  FiniteRankLayer merge(kFourier, 2 * d, d, N);
  for (int k = 0; k < N; ++k) {
    split.C(k, k).topRows(d).setIdentity();
    split.C(k, k).bottomRows(d) = -Eigen::MatrixXd::Identity(d, d);
    merge.C(k, k).leftCols(d).setIdentity();
    merge.C(k, k).rightCols(d) = -Eigen::MatrixXd::Identity(d, d);
  }
  FiniteRankNetwork net{kFourier, N, {split, merge}};
  double worst = 0.0;
  for (int s = 0; s < 100; ++s) {
    const SpectralCoeffs a = random_coeffs(300 + s, d, N);
    const GridFunction in = funcspace::from_spectral(a, grid);
    const GridFunction out = funcspace::from_spectral(apply_network(net, a, grid), grid);
    worst = std::max(worst, (out.values - in.values).cwiseAbs().maxCoeff());
  }
  EXPECT_LE(worst, 1e-12);
}

TEST(Truncation, RankOneBasisKernel) {
  const auto grid = make_grid();
  const auto r = truncate_kernel([](double, double) { return 1.0; }, kFourier, *grid, 4);
  EXPECT_NEAR(r.layer.C(0, 0)(0, 0), 1.0, 1e-8);
  Eigen::MatrixXd rest = r.layer.blocks();
  rest(0, 0) = 0.0;
  EXPECT_LE(rest.cwiseAbs().maxCoeff(), 1e-8);
  EXPECT_LE(r.tail, 1e-8);
}

TEST(Truncation, GeometricKernel) {
  const auto grid = make_grid();
  auto kernel = [](double x, double y) {
    double s = 0.0;
    for (int k = 1; k <= 3; ++k)
      for (int p = 1; p <= 3; ++p)
        s += std::pow(2.0, -(k + p)) * oracle::fourier(k - 1, 0, 1, y) * oracle::fourier(p - 1, 0, 1, x);
    return s;
  };
  const auto r = truncate_kernel(kernel, kFourier, *grid, 2);
  for (int k = 0; k < 2; ++k)
    for (int p = 0; p < 2; ++p) EXPECT_NEAR(r.layer.C(k, p)(0, 0), std::pow(2.0, -(k + p + 2)), 1e-8);
  EXPECT_NEAR(r.tail * r.tail, oracle::geometric_tail_sq(2, 3), 1e-8);
  double prev = std::numeric_limits<double>::infinity();
  for (int N = 1; N <= 8; ++N) {
    const double t = truncate_kernel(kernel, kFourier, *grid, N).tail;
    EXPECT_LE(t, prev + 1e-15);
    prev = t;
  }
}

TEST(Truncation, GaussianMatchesHighResolutionOracle) {
  auto kernel = [](double x, double y) { return std::exp(-(x - y) * (x - y)); };
  const auto grid = make_grid(0.0, 1.0, 2048);
  const auto r = truncate_kernel(kernel, kFourier, *grid, 8);
  for (int k = 0; k < 8; k += 3)
    for (int p = 0; p < 8; p += 2)
      EXPECT_NEAR(r.layer.C(k, p)(0, 0), oracle::kernel_coefficient(kernel, 0.0, 1.0, 4096, k, p), 1e-6)
          << k << "," << p;
}

TEST(Truncation, TableMustBeSquareOnGrid) {
  const auto grid = make_grid(0.0, 1.0, 64);
  EXPECT_THROW(truncate_kernel(Eigen::MatrixXd::Zero(64, 63), kFourier, *grid, 2), DimensionError);
}
