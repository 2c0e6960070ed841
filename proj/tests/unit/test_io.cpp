#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>

#include <gtest/gtest.h>

#include "injop/error.hpp"
#include "injop/io.hpp"
#include "injop/rng.hpp"

using namespace injop;
using funcspace::make_grid;
using nonlin::BivariateField;
using nonlin::NonlinearKernel;
namespace fs = std::filesystem;

namespace {

const funcspace::BasisSpec kFourier{funcspace::BasisKind::Fourier, 0.0, 1.0, 64};

fs::path scratch(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("injop_io_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

finite_rank::FiniteRankNetwork sample_network() {
  Rng rng = Rng::stream(12, 0);
  finite_rank::FiniteRankLayer a(kFourier, 2, 3, 4, finite_rank::Activation::leaky_relu(0.1));
  a.set_blocks(rng.normal_matrix(12, 8));
  a.set_bias(rng.normal_matrix(3, 4));
  finite_rank::FiniteRankLayer b(kFourier, 3, 1, 4);
  b.set_blocks(rng.normal_matrix(4, 12));
  return {kFourier, 4, {a, b}};
}

}  // namespace

TEST(Format, SeventeenSignificantDigits) {
  EXPECT_EQ(io::format_double(0.1), "0.10000000000000001");
  EXPECT_EQ(io::format_double(1.0), "1");
  EXPECT_EQ(io::format_double(-2.5e-300), "-2.5e-300");
  Rng rng = Rng::stream(1, 0);
  for (int i = 0; i < 1000; ++i) {
    const double v = rng.normal() * std::pow(10.0, rng.uniform(-20, 20));
    EXPECT_EQ(std::stod(io::format_double(v)), v);
  }
}

TEST(Format, DumpIsStable) {
  io::json doc;
  doc["b"] = 0.1;
  doc["a"] = io::json::array({1.0, 2.5, std::numeric_limits<double>::infinity()});
  doc["nested"]["k"] = "v";
  const std::string text = io::dump(doc);
  EXPECT_EQ(io::dump(io::json::parse(text)), text);
  EXPECT_NE(text.find("\"b\": 0.10000000000000001"), std::string::npos) << text;
  EXPECT_NE(text.find("[1, 2.5, null]"), std::string::npos) << text;
  EXPECT_LT(text.find("\"b\""), text.find("\"a\""));
}

TEST(Network, RoundTripIsBitExact) {
  const auto net = sample_network();
  const auto back = io::network_from_json(io::json::parse(io::dump(io::to_json(net))));
  ASSERT_EQ(back.layers.size(), net.layers.size());
  EXPECT_EQ(back.N, net.N);
  for (std::size_t l = 0; l < net.layers.size(); ++l) {
    EXPECT_EQ(back.layers[l].blocks(), net.layers[l].blocks());
    EXPECT_EQ(back.layers[l].bias(), net.layers[l].bias());
    EXPECT_EQ(back.layers[l].activation(), net.layers[l].activation());
  }
  EXPECT_EQ(io::dump(io::to_json(back)), io::dump(io::to_json(net)));
}

TEST(Network, MalformedInputIsFormatError) {
  io::json doc = io::to_json(sample_network());
  doc["layers"][0]["C"].erase(0);
  EXPECT_THROW(io::network_from_json(doc), FormatError);
  EXPECT_THROW(io::network_from_json(io::json::parse("{\"basis\": 3}")), FormatError);
  EXPECT_THROW(io::read_json("/nonexistent/net.json"), FormatError);
}

TEST(Operator, RoundTripAppliesIdentically) {
  const auto g = make_grid(0.0, 1.0, 128);
  Eigen::MatrixXd bias = Eigen::MatrixXd::Constant(1, g->M, 0.3);
  const std::vector<nonlin::NonlinearIntegralOperator> ops{
      {g, Eigen::VectorXd((1.0 + g->nodes.array()).matrix()),
       NonlinearKernel::sigmoid_sum({{BivariateField::gaussian(0.4, 0.2), BivariateField::constant(1.0),
                                      BivariateField::affine(0.1, 0.2, -0.3, 0.4)}}),
       bias},
      {g, Eigen::VectorXd(Eigen::VectorXd::Ones(g->M)),
       NonlinearKernel::volterra(BivariateField::constant(1.0), BivariateField::constant(0.2))},
      {g, Eigen::VectorXd(Eigen::VectorXd::Constant(g->M, 2.0)),
       NonlinearKernel::wire(3.0, {{BivariateField::constant(0.5), BivariateField::constant(1.0), BivariateField::constant(0.0)}})},
  };
  const Eigen::MatrixXd u = (3.0 * g->nodes.array()).sin().matrix().transpose();
  for (const auto& F : ops) {
    const auto back = io::operator_from_json(io::json::parse(io::dump(io::to_json(F))));
    EXPECT_EQ(back.apply(u), F.apply(u)) << nonlin::to_string(F.kernel().kind);
    EXPECT_EQ(io::dump(io::to_json(back)), io::dump(io::to_json(F)));
  }
}

TEST(Operator, ScalarAndNumberFieldsParse) {
  const io::json doc = io::json::parse(R"J({
    "grid": {"a": 0, "b": 1, "M": 64},
    "W": 1,
    "kernel": {"kind": "VolterraLipschitz", "signature": ["x", "y", "u(y)"], "kappa": 1}
  })J");
  const auto F = io::operator_from_json(doc);
  EXPECT_EQ(F.grid()->M, 64);
  EXPECT_TRUE(F.kernel().is_volterra());
  EXPECT_THROW(io::operator_from_json(io::json::parse(R"({"grid": {"a": 0, "b": 1, "M": 64}, "W": 1,
    "kernel": {"kind": "unknown"}})")), FormatError);
}

TEST(Csv, GridFunctionRoundTrip) {
  const fs::path dir = scratch("csv");
  const auto g = make_grid(-1.0, 2.0, 77);
  Eigen::MatrixXd values(2, g->M);
  values.row(0) = (g->nodes.array() * 1.7).exp().matrix().transpose();
  values.row(1) = (g->nodes.array() / 3.0).matrix().transpose();
  const funcspace::GridFunction f(g, values);
  io::write_grid_function_csv(dir / "f.csv", f);
  const auto back = io::read_grid_function_csv(dir / "f.csv");
  EXPECT_EQ(back.values, f.values);
  EXPECT_EQ(back.grid->M, 77);
  EXPECT_DOUBLE_EQ(back.grid->a, -1.0);
  EXPECT_EQ(io::read_grid_function_csv(dir / "f.csv", g).grid, g);
  EXPECT_THROW(io::read_grid_function_csv(dir / "f.csv", make_grid(0.0, 1.0, 77)), DimensionError);
}

TEST(Csv, TraceHeaderAndRows) {
  nonlin::InversionTrace t;
  t.residual_l2 = {1.0, 0.25};
  t.residual_h1 = {2.0, 0.5};
  t.ratios = {std::nan(""), 0.25};
  EXPECT_EQ(io::trace_csv(t), "iteration,residual_L2,residual_H1,ratio\n1,1,2,nan\n2,0.25,0.5,0.25\n");
}

TEST(Report, CertificationFields) {
  certify::CertReport r;
  r.verdict = certify::Verdict::CounterexampleFound;
  r.sigma_min = 0.0;
  r.sigma_max = 2.0;
  r.trials = 3;
  r.seed = 7;
  Eigen::MatrixXd c(1, 2);
  c << 0.0, 1.0;
  r.witness = certify::Witness{{kFourier, c}, {kFourier, -c}};
  const io::json j = io::to_json(r);
  EXPECT_EQ(j["verdict"], "CounterexampleFound");
  EXPECT_EQ(j["seed"], 7);
  ASSERT_TRUE(j.contains("witness"));
  EXPECT_EQ(j["witness"]["v2"][0][1], -1.0);
}

TEST(Atlas, SaveLoadRoundTrip) {
  const fs::path dir = scratch("atlas");
  const auto g = make_grid(0.0, 1.0, 128);
  const nonlin::NonlinearIntegralOperator F(
      g, Eigen::VectorXd(Eigen::VectorXd::Ones(g->M)),
      NonlinearKernel::sigmoid_sum({{BivariateField::constant(0.5), BivariateField::constant(1.0), BivariateField::constant(0.0)}}));
  std::vector<funcspace::GridFunction> inputs;
  for (int j = 0; j < 3; ++j)
    inputs.emplace_back(g, Eigen::RowVectorXd::Constant(g->M, j - 1.0) + 0.1 * g->nodes.transpose());
  const atlas::Atlas a = atlas::build_atlas(F, inputs, 3, 0.1);
  io::save_atlas(dir, a);
  EXPECT_TRUE(fs::exists(dir / "atlas.json"));
  EXPECT_TRUE(fs::exists(dir / "anchor_0002.csv"));
  const atlas::Atlas b = io::load_atlas(dir, F);
  EXPECT_EQ(b.cell_map, a.cell_map);
  EXPECT_EQ(b.probe_indices, a.probe_indices);
  EXPECT_EQ(b.eps1, a.eps1);
  ASSERT_EQ(b.anchors.size(), a.anchors.size());
  for (std::size_t j = 0; j < a.anchors.size(); ++j) {
    EXPECT_EQ(b.anchors[j].v.values, a.anchors[j].v.values);
    EXPECT_EQ(b.anchors[j].g.values, a.anchors[j].g.values);
  }
  EXPECT_EQ(io::dump(io::to_json(b.constants)), io::dump(io::to_json(a.constants)));
}
