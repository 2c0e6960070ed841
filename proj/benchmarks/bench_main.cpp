#include <benchmark/benchmark.h>

#include "injop/atlas.hpp"
#include "injop/certify.hpp"
#include "injop/reduce.hpp"
#include "injop/rng.hpp"

using namespace injop;
using nonlin::BivariateField;
using nonlin::NonlinearIntegralOperator;
using nonlin::NonlinearKernel;

namespace {

const funcspace::BasisSpec kFourier{funcspace::BasisKind::Fourier, 0.0, 1.0, 64};

NonlinearIntegralOperator sigmoid_operator(int M) {
  const auto g = funcspace::make_grid(0.0, 1.0, M);
  return {g, Eigen::VectorXd((1.0 + 0.3 * g->nodes.array()).matrix()),
          NonlinearKernel::sigmoid_sum({{BivariateField::constant(0.5), BivariateField::constant(1.5),
                                         BivariateField::affine(-0.5, 1.0, 0.0)}})};
}

funcspace::GridFunction wave(const funcspace::GridPtr& g, double level) {
  return {g, (level + 0.3 * (6.0 * g->nodes.array()).sin()).matrix().transpose()};
}

}  // namespace

static void BM_Analyze(benchmark::State& state) {
  const int M = static_cast<int>(state.range(0)), N = 16;
  const auto g = funcspace::make_grid(0.0, 1.0, M);
  const funcspace::Transform T(kFourier, g, N);
  const auto f = wave(g, 0.0);
  for (auto _ : state) benchmark::DoNotOptimize(T.analyze(f));
}
BENCHMARK(BM_Analyze)->Arg(512)->Arg(2048);

static void BM_ApplyLayer(benchmark::State& state) {
  const int N = static_cast<int>(state.range(0)), d = 4;
  const auto g = funcspace::make_grid();
  const funcspace::Transform T(kFourier, g, N);
  Rng rng = Rng::stream(1, 0);
  finite_rank::FiniteRankLayer layer(kFourier, d, d, N, finite_rank::Activation::leaky_relu(0.2));
  layer.set_blocks(rng.normal_matrix(N * d, N * d));
  const funcspace::SpectralCoeffs u(kFourier, rng.normal_matrix(d, N));
  for (auto _ : state) benchmark::DoNotOptimize(finite_rank::apply_layer(layer, u, T));
}
BENCHMARK(BM_ApplyLayer)->Arg(4)->Arg(16);

static void BM_CertifyBijective(benchmark::State& state) {
  const int N = static_cast<int>(state.range(0)), d = 3;
  Rng rng = Rng::stream(2, 0);
  finite_rank::FiniteRankLayer layer(kFourier, d, d, N);
  layer.set_blocks(rng.normal_matrix(N * d, N * d));
  for (auto _ : state) benchmark::DoNotOptimize(certify::certify_bijective_activation(layer));
}
BENCHMARK(BM_CertifyBijective)->Arg(4)->Arg(16);

static void BM_CertifyReluDss(benchmark::State& state) {
  const int N = 4, d = 2;
  Rng rng = Rng::stream(3, 0);
  finite_rank::FiniteRankLayer layer(kFourier, d, 2 * d, N, finite_rank::Activation::relu());
  layer.set_blocks(rng.normal_matrix(N * 2 * d, N * d));
  const funcspace::Transform T(kFourier, funcspace::make_grid(), N);
  for (auto _ : state) benchmark::DoNotOptimize(certify::certify_relu_dss(layer, T, {200, 0, std::nullopt}));
}
BENCHMARK(BM_CertifyReluDss)->Unit(benchmark::kMillisecond);

static void BM_ProjectionPair(benchmark::State& state) {
  for (auto _ : state) benchmark::DoNotOptimize(reduce::build_projection_pair(3, 1, 8, 0.1));
}
BENCHMARK(BM_ProjectionPair)->Unit(benchmark::kMillisecond);

static void BM_OperatorApply(benchmark::State& state) {
  const auto F = sigmoid_operator(static_cast<int>(state.range(0)));
  const auto u = wave(F.grid(), 0.0);
  for (auto _ : state) benchmark::DoNotOptimize(F.apply(u));
}
BENCHMARK(BM_OperatorApply)->Arg(256)->Arg(512);

static void BM_EstimateContraction(benchmark::State& state) {
  const auto F = sigmoid_operator(256);
  for (auto _ : state) benchmark::DoNotOptimize(nonlin::estimate_contraction(F, 32, 0));
}
BENCHMARK(BM_EstimateContraction)->Unit(benchmark::kMillisecond);

static void BM_InvertBanach(benchmark::State& state) {
  const auto F = sigmoid_operator(512);
  const auto z = F.apply(wave(F.grid(), 0.2));
  for (auto _ : state) benchmark::DoNotOptimize(nonlin::invert_banach(F, z, 1e-10, 200));
}
BENCHMARK(BM_InvertBanach)->Unit(benchmark::kMillisecond);

static void BM_AtlasGlobalInvert(benchmark::State& state) {
  const auto F = sigmoid_operator(512);
  std::vector<funcspace::GridFunction> anchors;
  for (int j = 0; j < 4; ++j) anchors.push_back(wave(F.grid(), j - 1.5));
  const atlas::Atlas at = atlas::build_atlas(F, anchors, 4, 0.2);
  const auto z = F.apply(wave(F.grid(), 0.4));
  for (auto _ : state) benchmark::DoNotOptimize(atlas::global_invert(at, F, z, 1e-10, 100));
}
BENCHMARK(BM_AtlasGlobalInvert)->Unit(benchmark::kMillisecond);
BENCHMARK_MAIN();
