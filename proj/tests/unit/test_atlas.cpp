#include <cmath>
#include <random>

#include <gtest/gtest.h>

#include "injop/atlas.hpp"
#include "injop/error.hpp"
#include "oracles.hpp"

using namespace injop;
using namespace injop::atlas;
using funcspace::make_grid;
using nonlin::BivariateField;
using nonlin::NonlinearKernel;

namespace {

/// Discrete H1 norm written out: trapezoid L2 part plus forward differences.
double h1_oracle(const funcspace::Grid& g, const Eigen::VectorXd& u) {
  const Eigen::VectorXd w = oracle::trapezoid_weights(g.a, g.b, g.M);
  const double h = (g.b - g.a) / (g.M - 1);
  double s = w.dot(u.cwiseAbs2());
  for (int i = 0; i + 1 < g.M; ++i) s += (u(i + 1) - u(i)) * (u(i + 1) - u(i)) / h;
  return std::sqrt(s);
}

Eigen::VectorXd smooth(const funcspace::Grid& g, std::uint64_t seed, double scale) {
  std::mt19937_64 eng(seed);
  std::normal_distribution<double> nd;
  Eigen::VectorXd u = Eigen::VectorXd::Zero(g.M);
  for (int k = 0; k < 5; ++k) {
    const double c = nd(eng) / (1 + k * k);
    for (int i = 0; i < g.M; ++i) u(i) += c * oracle::fourier(k, g.a, g.b, g.nodes(i));
  }
  return scale * u / h1_oracle(g, u);
}

GridFunction gf(const GridPtr& g, const Eigen::VectorXd& v) { return GridFunction(g, v.transpose()); }

NonlinearIntegralOperator sigmoid_operator(const GridPtr& g, double c = 0.5) {
  return NonlinearIntegralOperator(
      g, Eigen::VectorXd((1.0 + 0.3 * g->nodes.array()).matrix()),
      NonlinearKernel::sigmoid_sum({{BivariateField::constant(c), BivariateField::constant(1.5),
                                     BivariateField::affine(-0.5, 1.0, 0.0)}}));
}

/// Chord slope about 0.31 at u = 0 while F has slope 1 far out: chord steps
/// from the anchor at 0 overshoot by a factor of about 2.2 each time.
NonlinearIntegralOperator divergent_operator(const GridPtr& g) {
  return NonlinearIntegralOperator(
      g, Eigen::VectorXd(Eigen::VectorXd::Ones(g->M)),
      NonlinearKernel::sigmoid_sum({{BivariateField::constant(-1.5), BivariateField::constant(1.0), BivariateField::constant(1.0)},
                                    {BivariateField::constant(1.5), BivariateField::constant(1.0), BivariateField::constant(-1.0)}}));
}

}  // namespace

TEST(Mask, Examples) {
  const auto g = make_grid(0.0, 1.0, 11);
  const GridFunction v = gf(g, Eigen::VectorXd::LinSpaced(11, 1.0, 2.0));
  Eigen::VectorXd w = Eigen::VectorXd::Zero(11);
  const double z = g->nodes(4), s = 0.75, h = 0.5;
  w(4) = s;
  EXPECT_EQ(mask_apply(z, s, h, v, gf(g, w)).values, v.values);
  w(4) = s - h / 2;
  EXPECT_EQ(mask_apply(z, s, h, v, gf(g, w)).values, v.values);
  w(4) = s + h / 2;
  EXPECT_EQ(mask_apply(z, s, h, v, gf(g, w)).values.norm(), 0.0);
  EXPECT_THROW(mask_apply(0.123, s, h, v, gf(g, w)), PreconditionError);
}

TEST(Mask, BinsPartitionTheLine) {
  std::mt19937_64 eng(3);
  std::uniform_real_distribution<double> ud(-50.0, 50.0);
  for (double eps : {0.1, 0.25, 0.3, 1.0 / 3.0}) {
    std::vector<double> values;
    for (int i = 0; i < 2000; ++i) values.push_back(ud(eng));
    for (long i = -20; i <= 20; ++i) {
      values.push_back((static_cast<double>(i) + 0.5) * eps);
      values.push_back(std::nextafter((static_cast<double>(i) + 0.5) * eps, -1e9));
    }
    for (double x : values) {
      const long c = cell_index(x, eps);
      int hits = 0;
      for (long i = c - 3; i <= c + 3; ++i) hits += in_cell_bin(x, i, eps);
      EXPECT_EQ(hits, 1) << x;
      EXPECT_TRUE(in_cell_bin(x, c, eps)) << x;
    }
  }
  EXPECT_THROW(cell_index(std::nan(""), 0.1), PreconditionError);
}

TEST(Mask, ComposedMasksMatchCellIndicator) {
  // ell0 = 4, every match/mismatch pattern over the probe points.
  const auto g = make_grid(0.0, 1.0, 65);
  Atlas atlas;
  atlas.eps1 = 0.25;
  atlas.probe_indices = probe_node_indices(g->M, 4);
  for (int i : atlas.probe_indices) atlas.probe_points.push_back(g->nodes(i));
  const CellKey key{1, -2, 0, 3};
  const GridFunction v = gf(g, Eigen::VectorXd::Constant(g->M, 2.0));
  for (int pattern = 0; pattern < 16; ++pattern) {
    Eigen::VectorXd w = Eigen::VectorXd::Zero(g->M);
    for (int l = 0; l < 4; ++l) {
      const double centre = key[l] * atlas.eps1;
      w(atlas.probe_indices[l]) = (pattern >> l & 1) ? centre + 0.1 : centre + 0.4;
    }
    GridFunction composed = v;
    for (int l = 0; l < 4; ++l)
      composed = mask_apply(atlas.probe_points[l], key[l] * atlas.eps1, atlas.eps1, composed, gf(g, w));
    const bool all = pattern == 15;
    EXPECT_EQ(composed.values.norm() > 0.0, all) << pattern;
    EXPECT_EQ(cell_mask(atlas, key, v, gf(g, w)).values, composed.values) << pattern;
    EXPECT_EQ(cell_key(atlas, gf(g, w)) == key, all) << pattern;
  }
}

TEST(Probes, InteriorEquispacedNodes) {
  EXPECT_EQ(probe_node_indices(512, 4), (std::vector<int>{102, 204, 307, 409}));
  EXPECT_EQ(probe_node_indices(11, 1), (std::vector<int>{5}));
  EXPECT_THROW(probe_node_indices(10, 0), PreconditionError);
}

TEST(H1, GramMatchesDirectNorm) {
  const auto g = make_grid(0.0, 2.0, 200);
  const Eigen::MatrixXd G = h1_gram(*g);
  for (int s = 0; s < 5; ++s) {
    const Eigen::VectorXd u = smooth(*g, s, 1.0 + s);
    EXPECT_NEAR(std::sqrt(u.dot(G * u)), h1_oracle(*g, u), 1e-12 * (1 + s));
    EXPECT_NEAR(funcspace::h1_norm(*g, u), h1_oracle(*g, u), 1e-12 * (1 + s));
  }
  EXPECT_NEAR(h1_inverse_norm(Eigen::MatrixXd::Identity(g->M, g->M), *g), 1.0, 1e-10);
  EXPECT_NEAR(h1_inverse_norm(4.0 * Eigen::MatrixXd::Identity(g->M, g->M), *g), 0.25, 1e-10);
}

TEST(Atlas, SingleAnchorOwnsEveryCell) {
  const auto g = make_grid(0.0, 1.0, 128);
  const auto F = sigmoid_operator(g);
  const Atlas atlas = build_atlas(F, {gf(g, smooth(*g, 1, 1.0))}, 4, 0.1);
  ASSERT_EQ(atlas.anchors.size(), 1u);
  for (const auto& [key, j] : atlas.cell_map) EXPECT_EQ(j, 0);
  const GridFunction target = F.apply(gf(g, smooth(*g, 1, 1.0) + 0.01 * smooth(*g, 2, 1.0)));
  const GlobalInversion glob = global_invert(atlas, F, target, 1e-10, 50);
  const LocalInversion loc = local_invert(F, atlas.anchors[0], target, 1e-10, 50);
  EXPECT_EQ(glob.anchor, 0);
  EXPECT_EQ(glob.u.values, loc.u.values);
  EXPECT_EQ(glob.trace.residual_h1, loc.trace.residual_h1);
}

TEST(Atlas, TwoAnchorsPartitionByProximity) {
  const auto g = make_grid(0.0, 1.0, 128);
  const auto F = sigmoid_operator(g);
  const std::vector<GridFunction> inputs{gf(g, Eigen::VectorXd::Zero(g->M)), gf(g, Eigen::VectorXd::Constant(g->M, 3.0))};
  const Atlas atlas = build_atlas(F, inputs, 3, 0.05);
  ASSERT_EQ(atlas.cell_map.size(), 2u);
  EXPECT_EQ(atlas.cell_map.at(cell_key(atlas, atlas.anchors[0].g)), 0);
  EXPECT_EQ(atlas.cell_map.at(cell_key(atlas, atlas.anchors[1].g)), 1);
  for (int s = 0; s < 40; ++s) {
    const double shift = (s % 2) ? 3.0 : 0.0;
    const Eigen::VectorXd u = Eigen::VectorXd::Constant(g->M, shift) + smooth(*g, 10 + s, 0.3);
    const GridFunction target = F.apply(gf(g, u));
    const GlobalInversion r = global_invert(atlas, F, target, 1e-10, 50);
    const double d0 = h1_oracle(*g, (target.values - atlas.anchors[0].g.values).transpose());
    const double d1 = h1_oracle(*g, (target.values - atlas.anchors[1].g.values).transpose());
    if (r.fallback) EXPECT_EQ(r.anchor, d0 <= d1 ? 0 : 1) << s;
    EXPECT_EQ(r.anchor, s % 2) << s;
    EXPECT_LE(h1_oracle(*g, r.u.values.transpose() - u), 1e-8) << s;
  }
}

TEST(Atlas, ConstantsSatisfyTheirInequalities) {
  const auto g = make_grid(0.0, 1.0, 128);
  for (double c : {0.2, 0.5, 1.0}) {
    const auto F = sigmoid_operator(g, c);
    const Atlas atlas = build_atlas(F, {gf(g, smooth(*g, 3, 1.0)), gf(g, smooth(*g, 4, 2.0))}, 4, 0.1);
    const AtlasConstants& k = atlas.constants;
    EXPECT_LT(k.eps0, k.eps0_bound);
    EXPECT_NEAR(k.eps0_bound, 1.0 / (8.0 * k.C_B) / (2.0 * k.C_H), 1e-15 * k.eps0_bound);
    EXPECT_EQ(k.r, std::min(1.0 / (2.0 * k.C_H), k.R2));
    EXPECT_LE(k.C_H * k.r, 0.5);
    EXPECT_NEAR(k.C_S, std::sqrt(2.0), 1e-15);
    double cb = 0.0;
    for (const auto& a : atlas.anchors) cb = std::max(cb, a.a_inv_norm_h1);
    EXPECT_EQ(k.C_B, cb);
  }
}

TEST(LocalInvert, AnchorTargetTakesOneStep) {
  const auto g = make_grid(0.0, 1.0, 128);
  const auto F = sigmoid_operator(g);
  const Anchor a = make_anchor(F, gf(g, smooth(*g, 5, 1.0)));
  const LocalInversion r = local_invert(F, a, a.g, 1e-12, 10);
  EXPECT_TRUE(r.trace.converged);
  EXPECT_EQ(r.trace.iterations, 1);
  EXPECT_EQ(r.u.values, a.v.values);
}

TEST(LocalInvert, ContractsNearTheAnchor) {
  const auto g = make_grid();
  const auto F = sigmoid_operator(g, 1.0);
  const Atlas atlas = build_atlas(F, {gf(g, smooth(*g, 6, 1.0))}, 4, 0.1);
  const Anchor& a = atlas.anchors[0];
  const double eps0 = atlas.constants.eps0;
  for (int s = 0; s < 10; ++s) {
    // Perturb g directly so that ||g - g_j||_{H1} <= 2 eps0.
    const Eigen::VectorXd dg = smooth(*g, 60 + s, 2.0 * eps0 * (s + 1) / 10.0);
    const GridFunction target(g, a.g.values + dg.transpose());
    const LocalInversion r = local_invert(F, a, target, 1e-12, 50);
    ASSERT_TRUE(r.trace.converged) << s;
    EXPECT_LE(r.trace.residual_h1.back(), 1e-7);
    for (std::size_t m = 1; m < r.trace.ratios.size(); ++m) EXPECT_LT(r.trace.ratios[m], 0.5) << s << " " << m;
  }
  // A larger smooth offset of the preimage converges too.
  const Eigen::VectorXd u = a.v.column() + smooth(*g, 99, 0.2);
  const LocalInversion r = local_invert(F, a, F.apply(gf(g, u)), 1e-10, 50);
  EXPECT_LE(h1_oracle(*g, r.u.values.transpose() - u), 1e-8);
  EXPECT_LE(r.trace.residual_h1.back(), 1e-7);
}

TEST(LocalInvert, FirstStepIsBoundedByInverseNorm) {
  const auto g = make_grid(0.0, 1.0, 256);
  const auto F = sigmoid_operator(g, 1.0);
  const Anchor a = make_anchor(F, gf(g, smooth(*g, 7, 1.0)));
  for (int s = 0; s < 10; ++s) {
    const Eigen::VectorXd dg = smooth(*g, 70 + s, 1e-3 * (s + 1));
    const GridFunction target(g, a.g.values + dg.transpose());
    const LocalInversion r = local_invert(F, a, target, 0.0, 1);
    EXPECT_LE(h1_oracle(*g, (r.u.values - a.v.values).transpose()), (a.a_inv_norm_h1 + 0.1) * h1_oracle(*g, dg));
  }
}

TEST(LocalInvert, OutOfBasin) {
  const auto g = make_grid(0.0, 1.0, 128);
  const auto F = divergent_operator(g);
  const Anchor a = make_anchor(F, GridFunction::zeros(g, 1));
  const GridFunction target = F.apply(gf(g, Eigen::VectorXd::Constant(g->M, 20.0)));
  try {
    local_invert(F, a, target, 1e-10, 200);
    FAIL() << "expected divergence";
  } catch (const DivergenceError& e) {
    EXPECT_NE(std::string(e.what()).find("out of basin"), std::string::npos) << e.what();
  }
}

TEST(GlobalInvert, RoundTripAndBanachAgreement) {
  const auto g = make_grid();
  const auto F = sigmoid_operator(g, 0.5);
  std::vector<GridFunction> anchors;
  for (int j = 0; j < 4; ++j) anchors.push_back(gf(g, Eigen::VectorXd::Constant(g->M, j - 1.5)));
  const Atlas atlas = build_atlas(F, anchors, 4, 0.2);
  for (int s = 0; s < 20; ++s) {
    const Eigen::VectorXd u = Eigen::VectorXd::Constant(g->M, (s % 4) - 1.5) + smooth(*g, 300 + s, 0.5);
    const GridFunction target = F.apply(gf(g, u));
    const GlobalInversion r = global_invert(atlas, F, target, 1e-10, 100);
    ASSERT_TRUE(r.trace.converged);
    EXPECT_LE(h1_oracle(*g, r.u.values.transpose() - u) / h1_oracle(*g, u), 1e-6) << s;
    const auto b = nonlin::invert_banach(F, target, 1e-11, 300);
    EXPECT_LE(funcspace::l2_norm(*g, (b.u.values - r.u.values).transpose()), 2e-10) << s;
  }
}

TEST(GlobalInvert, PropagatesDivergenceWithCell) {
  const auto g = make_grid(0.0, 1.0, 128);
  const auto F = divergent_operator(g);
  const Atlas atlas = build_atlas(F, {GridFunction::zeros(g, 1)}, 2, 0.1);
  const GridFunction target = F.apply(gf(g, Eigen::VectorXd::Constant(g->M, 20.0)));
  try {
    global_invert(atlas, F, target, 1e-10, 200);
    FAIL() << "expected divergence";
  } catch (const DivergenceError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("cell"), std::string::npos) << msg;
    EXPECT_NE(msg.find("anchor 0"), std::string::npos) << msg;
    EXPECT_EQ(msg.rfind("atlas: atlas:", 0), std::string::npos) << msg;
  }
  EXPECT_THROW(global_invert(Atlas{}, F, target, 1e-10, 10), PreconditionError);
}

TEST(Atlas, SingularAnchorRejected) {
  const auto g = make_grid(0.0, 1.0, 32);
  // W = 1 and k = -1 / |D|: A = I - (1/|D|) J kills constants on the full trapezoid grid.
  const NonlinearIntegralOperator F(g, Eigen::VectorXd(Eigen::VectorXd::Ones(g->M)),
                                    NonlinearKernel::linear(BivariateField::constant(-1.0)));
  EXPECT_THROW(make_anchor(F, GridFunction::zeros(g, 1)), SingularError);
}
