#include "cli.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <limits>

#include <CLI11.hpp>

#include "injop/atlas.hpp"
#include "injop/certify.hpp"
#include "injop/error.hpp"
#include "injop/io.hpp"
#include "injop/reduce.hpp"
#include "injop/rng.hpp"

namespace injop::cli {

namespace fs = std::filesystem;
using io::json;

namespace {

constexpr int kMaxIter = 200;
constexpr int kClosenessSamples = 16;
constexpr int kAtlasProbes = 4;
constexpr double kAtlasBinWidth = 0.1;

void add_common(CLI::App* sub, RunConfig& c) {
  sub->add_option("--seed", c.seed, "Random seed")->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
  sub->add_option("--out-dir", c.out_dir, "Directory for report.json, trace.csv, result.csv")
      ->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
  sub->add_option("--grid-size", c.grid_size, "Number of grid nodes")
      ->check(CLI::Range(2, 1 << 20))
      ->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
}

template <class T>
CLI::Option* last_wins(CLI::App* sub, const std::string& name, T& target, const std::string& help) {
  return sub->add_option(name, target, help)->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
}

fs::path resolve(const fs::path& p) { return p.empty() ? p : fs::absolute(p).lexically_normal(); }

int verdict_rank(certify::Verdict v) {
  switch (v) {
    case certify::Verdict::CertifiedInjective:
      return 0;
    case certify::Verdict::NoCounterexampleFound:
      return 1;
    case certify::Verdict::CounterexampleFound:
      return 2;
  }
  return 1;
}

int run_certify(const RunConfig& c) {
  const auto net = io::network_from_json(io::read_json(c.net));
  const auto grid = funcspace::make_grid(net.basis.a, net.basis.b, c.grid_size);
  const funcspace::Transform transform(net.basis, grid, net.N);

  json layers = json::array();
  certify::Verdict overall = certify::Verdict::CertifiedInjective;
  double sigma_min = std::numeric_limits<double>::infinity();
  double sigma_max = 0.0;
  std::optional<std::pair<int, json>> first_witness;
  for (std::size_t l = 0; l < net.layers.size(); ++l) {
    const auto& layer = net.layers[l];
    const bool relu = layer.activation().kind == finite_rank::ActivationKind::ReLU;
    if (relu && c.mode == "bijective")
      throw PreconditionError("cli", "layer " + std::to_string(l) +
                                         " uses ReLU; the bijective certificate needs an injective activation");
    const certify::CertReport r = relu ? certify::certify_relu_dss(layer, transform, {c.trials, c.seed, std::nullopt})
                                       : certify::certify_bijective_activation(layer);
    json lj = io::to_json(r);
    lj["layer"] = static_cast<int>(l);
    lj["method"] = relu ? "dss" : "singular_values";
    if (verdict_rank(r.verdict) > verdict_rank(overall)) overall = r.verdict;
    sigma_min = std::min(sigma_min, r.sigma_min);
    sigma_max = std::max(sigma_max, r.sigma_max);
    if (r.witness && !first_witness) first_witness = {static_cast<int>(l), lj["witness"]};
    layers.push_back(std::move(lj));
  }
  json report{{"verdict", certify::to_string(overall)},
              {"sigma_min", sigma_min},
              {"sigma_max", sigma_max},
              {"trials", c.trials},
              {"seed", c.seed},
              {"mode", c.mode}};
  if (first_witness) {
    report["witness"] = first_witness->second;
    report["witness_layer"] = first_witness->first;
  }
  report["layers"] = std::move(layers);
  io::write_json(c.out_dir / "report.json", report);
  std::cout << "verdict: " << certify::to_string(overall) << "\n";
  return overall == certify::Verdict::CounterexampleFound ? kExitNegative : kExitOk;
}

int run_lift(const RunConfig& c) {
  const auto net = io::network_from_json(io::read_json(c.net));
  const auto grid = funcspace::make_grid(net.basis.a, net.basis.b, c.grid_size);
  reduce::LiftOptions opts;
  opts.mode = c.mode == "relu" ? reduce::LiftMode::ReLU : reduce::LiftMode::InjectiveActivation;
  opts.alpha = c.alpha;
  opts.seed = c.seed;
  if (c.rank > 0) {
    opts.reduction = reduce::ReductionKind::Randomized;
    opts.n_prime = c.rank;
  }
  const reduce::LiftResult lift = reduce::lift_to_injective(net, opts, grid);

  // Closeness of the lift to the original network at seeded inputs with |a| <= 1.
  json samples = json::array();
  bool all_ok = true;
  double worst = 0.0;
  for (int i = 0; i < kClosenessSamples; ++i) {
    Rng rng = Rng::stream(splitmix64(c.seed ^ 0x11f7), static_cast<std::uint64_t>(i));
    Eigen::MatrixXd coeffs = rng.normal_matrix(net.d_in(), net.N);
    coeffs *= rng.uniform() / coeffs.norm();
    const auto s = reduce::check_closeness(net, lift, funcspace::SpectralCoeffs(net.basis, coeffs), grid);
    all_ok = all_ok && s.ok;
    worst = std::max(worst, s.gap / s.bound);
    samples.push_back(json{{"gap", s.gap}, {"h_norm", s.h_norm}, {"bound", s.bound}, {"ok", s.ok}});
  }
  json report = io::to_json(lift);
  report["closeness"] = json{{"all_within_bound", all_ok}, {"max_gap_over_bound", worst}, {"samples", samples}};
  io::write_json(c.out_dir / "report.json", report);
  std::cout << "lifted rank " << lift.lifted_rank() << ", eps0 " << io::format_double(lift.eps0) << "\n";
  return kExitOk;
}

json inversion_summary(const nonlin::InversionTrace& t) {
  return json{{"converged", t.converged},
              {"iterations", t.iterations},
              {"residual_L2", t.residual_l2.empty() ? std::nan("") : t.residual_l2.back()},
              {"residual_H1", t.residual_h1.empty() ? std::nan("") : t.residual_h1.back()}};
}

std::vector<fs::path> anchor_files(const fs::path& dir) {
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.is_regular_file() && e.path().extension() == ".csv") files.push_back(e.path());
  std::sort(files.begin(), files.end());
  if (files.empty()) throw PreconditionError("cli", "no anchor CSV files in " + dir.string());
  return files;
}

int run_invert(const RunConfig& c) {
  const auto F = io::operator_from_json(io::read_json(c.op));
  const auto g = io::read_grid_function_csv(c.target, F.grid());
  json report{{"method", c.method}, {"tol", c.tol}};
  try {
    if (c.method == "banach") {
      const auto res = nonlin::invert_banach(F, g, c.tol, kMaxIter);
      report.update(inversion_summary(res.trace));
      io::write_grid_function_csv(c.out_dir / "result.csv", res.u);
      io::write_trace_csv(c.out_dir / "trace.csv", res.trace);
    } else {
      if (c.anchors.empty()) throw PreconditionError("cli", "--method atlas needs --anchors");
      atlas::Atlas at;
      if (fs::exists(c.anchors / "atlas.json")) {
        at = io::load_atlas(c.anchors, F);
      } else {
        std::vector<funcspace::GridFunction> inputs;
        for (const auto& f : anchor_files(c.anchors)) inputs.push_back(io::read_grid_function_csv(f, F.grid()));
        at = atlas::build_atlas(F, inputs, kAtlasProbes, kAtlasBinWidth);
      }
      const auto res = atlas::global_invert(at, F, g, c.tol, kMaxIter);
      report.update(inversion_summary(res.trace));
      report["anchor"] = res.anchor;
      report["cell"] = res.key;
      report["fallback"] = res.fallback;
      report["constants"] = io::to_json(at.constants);
      io::write_grid_function_csv(c.out_dir / "result.csv", res.u);
      io::write_trace_csv(c.out_dir / "trace.csv", res.trace);
    }
  } catch (const DivergenceError& e) {
    report["converged"] = false;
    report["error"] = e.what();
    io::write_json(c.out_dir / "report.json", report);
    std::cerr << "injop: " << e.what() << "\n";
    return kExitNegative;
  }
  io::write_json(c.out_dir / "report.json", report);
  std::cout << "converged: " << (report["converged"].get<bool>() ? "yes" : "no") << "\n";
  return report["converged"].get<bool>() ? kExitOk : kExitNegative;
}

int run_truncate(const RunConfig& c) {
  const auto F = io::operator_from_json(io::read_json(c.op));
  if (F.kernel().kind != nonlin::KernelKind::LinearTable)
    throw PreconditionError("cli", "truncate needs a LinearTable kernel");
  const funcspace::Grid& grid = *F.grid();
  const Eigen::MatrixXd table = F.kernel().table.sample(grid);
  const funcspace::BasisSpec basis{funcspace::BasisKind::Fourier, grid.a, grid.b, 64};
  const int N = c.rank > 0 ? c.rank : 8;
  json tails = json::array();
  finite_rank::TruncationResult last;
  for (int n = 1; n <= N; ++n) {
    last = finite_rank::truncate_kernel(table, basis, grid, n);
    tails.push_back(json{{"N", n}, {"tail", last.tail}, {"tail_clamped", last.tail_clamped}});
  }
  finite_rank::FiniteRankNetwork net{basis, N, {last.layer}};
  json report{{"N", N}, {"hs_norm", last.hs_norm}, {"tail", last.tail}, {"tails", tails}, {"network", io::to_json(net)}};
  io::write_json(c.out_dir / "report.json", report);
  std::cout << "HS tail at N=" << N << ": " << io::format_double(last.tail) << "\n";
  return kExitOk;
}

/// W = 1, k = 1_{y <= x} on [0, 1]: F(1) = 1 + x, so inverting 1 + x must give u = 1.
int run_demo_volterra(const RunConfig& c) {
  const auto grid = funcspace::make_grid(0.0, 1.0, c.grid_size);
  const nonlin::NonlinearIntegralOperator F(grid, Eigen::VectorXd(Eigen::VectorXd::Ones(grid->M)),
                                            nonlin::NonlinearKernel::volterra(nonlin::BivariateField::constant(1.0)));
  const funcspace::GridFunction z(grid, (grid->nodes.array() + 1.0).matrix().transpose());
  const double tol = std::max(c.tol, 1e-12);
  const auto res = nonlin::invert_banach(F, z, tol, kMaxIter);
  const double err = (res.u.values.array() - 1.0).abs().maxCoeff();
  const bool ok = res.trace.converged && err <= 1e-8;
  json report{{"demo", "volterra"}, {"target", "1 + x"}, {"expected", "u = 1"}, {"max_error", err}, {"passed", ok}};
  report.update(inversion_summary(res.trace));
  io::write_json(c.out_dir / "report.json", report);
  io::write_grid_function_csv(c.out_dir / "result.csv", res.u);
  io::write_trace_csv(c.out_dir / "trace.csv", res.trace);
  std::cout << "volterra demo: max |u - 1| = " << io::format_double(err) << (ok ? " (ok)" : " (FAILED)") << "\n";
  return ok ? kExitOk : kExitError;
}

}  // namespace

ParseResult parse_config(const std::vector<std::string>& args) {
  RunConfig cfg;
  CLI::App app{"Injective neural operators: certification, lifting and inversion", "injop"};
  app.require_subcommand(1, 1);

  auto* certify = app.add_subcommand("certify", "Certify layerwise injectivity of a network");
  last_wins(certify, "--net", cfg.net, "Network JSON")->required();
  last_wins(certify, "--mode", cfg.mode, "relu or bijective")->check(CLI::IsMember({"relu", "bijective"}));
  last_wins(certify, "--trials", cfg.trials, "DSS trials per ReLU layer")->check(CLI::PositiveNumber);
  add_common(certify, cfg);

  auto* lift = app.add_subcommand("lift", "Lift a network to an injective one");
  last_wins(lift, "--net", cfg.net, "Network JSON")->required();
  last_wins(lift, "--mode", cfg.mode, "relu or bijective")->check(CLI::IsMember({"relu", "bijective"}));
  last_wins(lift, "--alpha", cfg.alpha, "Projection-pair angle")->check(CLI::Range(0.0, 1.0));
  last_wins(lift, "--rank", cfg.rank, "Output rank N' (selects the randomized reduction)")->check(CLI::NonNegativeNumber);
  add_common(lift, cfg);

  auto* invert = app.add_subcommand("invert", "Invert a nonlinear integral operator at a target");
  last_wins(invert, "--op", cfg.op, "Operator JSON")->required();
  last_wins(invert, "--target", cfg.target, "Target CSV")->required();
  last_wins(invert, "--method", cfg.method, "banach or atlas")->check(CLI::IsMember({"banach", "atlas"}));
  last_wins(invert, "--anchors", cfg.anchors, "Directory of anchor CSVs or a saved atlas");
  last_wins(invert, "--tol", cfg.tol, "Residual tolerance")->check(CLI::PositiveNumber);
  add_common(invert, cfg);

  auto* truncate = app.add_subcommand("truncate", "Truncate a linear kernel to finite rank");
  last_wins(truncate, "--op", cfg.op, "Operator JSON with a LinearTable kernel")->required();
  last_wins(truncate, "--rank", cfg.rank, "Truncation order N")->check(CLI::NonNegativeNumber);
  add_common(truncate, cfg);

  auto* demo = app.add_subcommand("demo", "Run a built-in example");
  demo->add_option("name", cfg.demo, "Demo name")->required()->check(CLI::IsMember({"volterra"}));
  last_wins(demo, "--tol", cfg.tol, "Residual tolerance")->check(CLI::PositiveNumber);
  add_common(demo, cfg);

  ParseResult out;
  if (args.empty()) {
    out.exit_code = kExitUsage;
    out.message = app.help();
    return out;
  }
  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out.exit_code = kExitOk;
    out.message = app.help();
    return out;
  } catch (const CLI::CallForAllHelp&) {
    out.exit_code = kExitOk;
    out.message = app.help("", CLI::AppFormatMode::All);
    return out;
  } catch (const CLI::ParseError& e) {
    out.exit_code = kExitUsage;
    out.message = std::string(e.what()) + "\n\n" + app.help();
    return out;
  }

  if (certify->parsed()) cfg.command = Command::Certify;
  if (lift->parsed()) cfg.command = Command::Lift;
  if (invert->parsed()) cfg.command = Command::Invert;
  if (truncate->parsed()) cfg.command = Command::Truncate;
  if (demo->parsed()) cfg.command = Command::Demo;
  for (fs::path* p : {&cfg.net, &cfg.op, &cfg.target, &cfg.anchors, &cfg.out_dir}) *p = resolve(*p);
  out.config = cfg;
  return out;
}

int run(const RunConfig& config) {
  try {
    fs::create_directories(config.out_dir);
    switch (config.command) {
      case Command::Certify:
        return run_certify(config);
      case Command::Lift:
        return run_lift(config);
      case Command::Invert:
        return run_invert(config);
      case Command::Truncate:
        return run_truncate(config);
      case Command::Demo:
        return run_demo_volterra(config);
    }
  } catch (const Error& e) {
    std::cerr << "injop: " << e.what() << "\n";
  } catch (const std::exception& e) {
    std::cerr << "injop: " << e.what() << "\n";
  }
  return kExitError;
}

}  // namespace injop::cli
