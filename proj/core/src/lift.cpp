#include <algorithm>
#include <cmath>
#include <string>

#include "injop/error.hpp"
#include "injop/reduce.hpp"

namespace injop::reduce {

namespace {

constexpr const char* kModule = "reduce";

using finite_rank::Activation;
using finite_rank::ActivationKind;
using finite_rank::FiniteRankLayer;

/// The pathway carries the input either as is (Plain, d_in channels) or as
/// the pair (ReLU(x), ReLU(-x)) (Split, 2 d_in channels).
enum class Pathway { Plain, Split };

/// Channel map of the pathway for one layer, and the resulting state.
Eigen::MatrixXd pathway_map(int d_in, LiftMode mode, const Activation& act, Pathway in, Pathway& out) {
  const Eigen::MatrixXd I = Eigen::MatrixXd::Identity(d_in, d_in);
  if (mode == LiftMode::InjectiveActivation) {
    out = Pathway::Plain;
    return I;
  }
  if (act.kind == ActivationKind::ReLU) {
    out = Pathway::Split;
    if (in == Pathway::Plain) {
      Eigen::MatrixXd m(2 * d_in, d_in);
      m << I, -I;
      return m;
    }
    Eigen::MatrixXd m(2 * d_in, 2 * d_in);
    m << I, -I, -I, I;
    return m;
  }
  out = Pathway::Plain;
  if (in == Pathway::Plain) return I;
  Eigen::MatrixXd m(d_in, 2 * d_in);
  m << I, -I;
  return m;
}

int smallest_n_prime(int N, int d_in, int d_out) {
  int n = N;
  while (!dimension_gate_ok(N * d_in, n * d_out)) ++n;
  return n;
}

/// H: the original network widened by the injective pathway, at rank Nt.
FiniteRankNetwork build_augmented(const FiniteRankNetwork& net, LiftMode mode, int Nt,
                                  std::vector<Activation>& pathway_acts) {
  const int N = net.N;
  const int d_in = net.d_in();
  FiniteRankNetwork H;
  H.basis = net.basis;
  H.N = Nt;

  Pathway state = Pathway::Plain;
  for (std::size_t l = 0; l < net.layers.size(); ++l) {
    const FiniteRankLayer& orig = net.layers[l];
    Pathway next = state;
    const Eigen::MatrixXd pm = pathway_map(d_in, mode, orig.activation(), state, next);
    // Layer 0 reads the raw input, which both branches share.
    const bool first = (l == 0);
    const int w_in = first ? 0 : static_cast<int>(pm.cols());
    const int w_out = static_cast<int>(pm.rows());
    const int din = first ? d_in : w_in + orig.d_in();
    const int dout = w_out + orig.d_out();

    FiniteRankLayer layer(net.basis, din, dout, Nt, orig.activation());
    Eigen::MatrixXd blocks = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(Nt) * dout,
                                                   static_cast<Eigen::Index>(Nt) * din);
    for (int k = 0; k < N; ++k) {
      const Eigen::Index row = static_cast<Eigen::Index>(k) * dout;
      const Eigen::Index col = static_cast<Eigen::Index>(k) * din;
      blocks.block(row, col, w_out, pm.cols()) = pm;
      for (int p = 0; p < N; ++p)
        blocks.block(static_cast<Eigen::Index>(p) * dout + w_out, static_cast<Eigen::Index>(k) * din + w_in,
                     orig.d_out(), orig.d_in()) = orig.C(k, p);
    }
    layer.set_blocks(std::move(blocks));
    Eigen::MatrixXd bias = Eigen::MatrixXd::Zero(dout, Nt);
    bias.block(w_out, 0, orig.d_out(), N) = orig.bias();
    layer.set_bias(std::move(bias));
    H.layers.push_back(std::move(layer));

    if (mode == LiftMode::InjectiveActivation && !orig.activation().acts_as_identity())
      pathway_acts.push_back(orig.activation());
    state = next;
  }
  return H;
}

/// Replaces the last layer of H by B (after an optional embedding E) composed with it.
FiniteRankNetwork fold_reduction(const FiniteRankNetwork& H, const Eigen::MatrixXd& BE, int d_out) {
  FiniteRankNetwork G = H;
  const FiniteRankLayer& last = H.layers.back();
  FiniteRankLayer folded(H.basis, last.d_in(), d_out, H.N, last.activation());
  folded.set_blocks(BE * last.blocks());
  const Eigen::MatrixXd& b = last.bias();
  const Eigen::VectorXd bias = BE * Eigen::Map<const Eigen::VectorXd>(b.data(), b.size());
  folded.set_bias(Eigen::Map<const Eigen::MatrixXd>(bias.data(), d_out, H.N));
  G.layers.back() = std::move(folded);
  return G;
}

/// Solves P_N sigma(c) = y for one channel by damped Newton iteration.
Eigen::RowVectorXd invert_pathway_channel(const Eigen::RowVectorXd& y, const Activation& act,
                                          const Transform& t) {
  const Eigen::MatrixXd& phi = t.modes();
  const Eigen::VectorXd& w = t.grid()->weights;
  auto residual = [&](const Eigen::RowVectorXd& c) {
    Eigen::MatrixXd f = t.synthesize(Eigen::MatrixXd(c));
    f = f.unaryExpr([&act](double s) { return act(s); });
    return Eigen::RowVectorXd(t.analyze(f) - y);
  };

  Eigen::RowVectorXd c = y;
  Eigen::RowVectorXd r = residual(c);
  const double target = 1e-15 * (1.0 + y.norm());
  for (int it = 0; it < 200 && r.norm() > target; ++it) {
    const Eigen::RowVectorXd f = t.synthesize(Eigen::MatrixXd(c)).row(0);
    Eigen::VectorXd d(f.size());
    for (Eigen::Index i = 0; i < f.size(); ++i) d(i) = w(i) * act.derivative(f(i));
    const Eigen::MatrixXd J = phi.transpose() * d.asDiagonal() * phi;
    const Eigen::RowVectorXd step = J.ldlt().solve(r.transpose()).transpose();
    double s = 1.0;
    Eigen::RowVectorXd trial = c - step;
    Eigen::RowVectorXd rt = residual(trial);
    while (rt.norm() >= r.norm() && s > 1e-6) {
      s *= 0.5;
      trial = c - s * step;
      rt = residual(trial);
    }
    if (rt.norm() >= r.norm()) break;
    c = trial;
    r = rt;
  }
  return c;
}

}  // namespace

void check_lift_mode(const FiniteRankNetwork& net, LiftMode mode) {
  for (std::size_t l = 0; l + 1 < net.layers.size(); ++l) {
    const Activation& act = net.layers[l].activation();
    const bool ok = mode == LiftMode::ReLU
                        ? act.kind == ActivationKind::ReLU
                        : (act.kind == ActivationKind::Identity || act.kind == ActivationKind::LeakyReLU);
    if (!ok)
      throw PreconditionError(kModule, "layer " + std::to_string(l) + " has activation " +
                                           finite_rank::to_string(act.kind) + ", not allowed in " +
                                           (mode == LiftMode::ReLU ? "relu" : "injective-activation") +
                                           " lift mode");
  }
}

LiftResult lift_to_injective(const FiniteRankNetwork& net, const LiftOptions& options,
                             funcspace::GridPtr grid) {
  net.validate();
  check_lift_mode(net, options.mode);

  LiftResult result;
  result.mode = options.mode;
  result.N = net.N;
  result.d_in = net.d_in();
  result.d_out = net.d_out();
  const int N = net.N;
  const int d_in = result.d_in;
  const int d_out = result.d_out;
  const int m = d_in + d_out;

  if (options.reduction == ReductionKind::Explicit) {
    const int Nt = N * (1 + d_in);
    result.H = build_augmented(net, options.mode, Nt, result.pathway_activations);
    const ProjectionPair pair = build_projection_pair(m, d_out, N, options.alpha, options.mixing);
    result.reduction = build_reduction_explicit(pair);
    result.reduction.seed = options.seed;
    result.G = fold_reduction(result.H, result.reduction.B, d_out);
  } else {
    int Np = options.n_prime > 0 ? options.n_prime : smallest_n_prime(N, d_in, d_out);
    if (Np < N) throw DimensionError(kModule, "randomized lift needs N' >= N");
    if (!dimension_gate_ok(N * d_in, Np * d_out))
      throw DimensionError(kModule, "randomized lift needs N' d_out >= 2 N d_in + 1, got N'=" +
                                        std::to_string(Np) + ", d_out=" + std::to_string(d_out) +
                                        ", N=" + std::to_string(N) + ", d_in=" + std::to_string(d_in));
    if (!grid) throw PreconditionError(kModule, "randomized lift needs a grid to evaluate the network");
    result.H = build_augmented(net, options.mode, Np, result.pathway_activations);

    // E selects the pathway's first N modes and every output coordinate.
    const int n_in = N * d_in;
    const int out_modes = Np * d_out;
    Eigen::MatrixXd E = Eigen::MatrixXd::Zero(n_in + out_modes, static_cast<Eigen::Index>(m) * Np);
    for (int k = 0; k < N; ++k)
      for (int c = 0; c < d_in; ++c) E(k * d_in + c, static_cast<Eigen::Index>(k) * m + c) = 1.0;
    for (int k = 0; k < Np; ++k)
      for (int c = 0; c < d_out; ++c)
        E(n_in + k * d_out + c, static_cast<Eigen::Index>(k) * m + d_in + c) = 1.0;

    const Transform t(net.basis, grid, Np);
    const FiniteRankNetwork& H = result.H;
    const funcspace::BasisSpec basis = net.basis;
    CoeffMap T = [&](const Eigen::VectorXd& a) -> Eigen::VectorXd {
      const SpectralCoeffs in = SpectralCoeffs::from_stacked(basis, a, d_in, N).resized(Np);
      return E * finite_rank::apply_network(H, in, t).stacked();
    };
    RandomizedOptions ropt = options.randomized;
    ropt.alpha = options.alpha;
    result.reduction = build_reduction_randomized(T, n_in, out_modes, options.seed, ropt);
    result.G = fold_reduction(result.H, result.reduction.B * E, d_out);
  }
  result.eps0 = result.reduction.eps0;
  result.G.validate();
  return result;
}

SpectralCoeffs pad_input(const LiftResult& lift, const SpectralCoeffs& a) {
  if (a.channels() != lift.d_in || a.order() != lift.N)
    throw DimensionError(kModule, "input must have d_in channels of order N");
  return a.resized(lift.lifted_rank());
}

SpectralCoeffs recover_input(const LiftResult& lift, const SpectralCoeffs& h_out,
                             funcspace::GridPtr grid) {
  if (h_out.channels() != lift.d_in + lift.d_out || h_out.order() != lift.lifted_rank())
    throw DimensionError(kModule, "expected an output of the augmented network H");
  SpectralCoeffs c(h_out.basis, h_out.coeffs.topLeftCorner(lift.d_in, lift.N));
  if (lift.pathway_activations.empty()) return c;
  const Transform t(h_out.basis, std::move(grid), lift.N);
  for (auto it = lift.pathway_activations.rbegin(); it != lift.pathway_activations.rend(); ++it)
    for (int ch = 0; ch < lift.d_in; ++ch)
      c.coeffs.row(ch) = invert_pathway_channel(c.coeffs.row(ch), *it, t);
  return c;
}

ClosenessSample check_closeness(const FiniteRankNetwork& original, const LiftResult& lift,
                                const SpectralCoeffs& a, funcspace::GridPtr grid) {
  const Transform t_orig(original.basis, grid, original.N);
  const Transform t_lift(lift.G.basis, grid, lift.lifted_rank());
  const SpectralCoeffs target = finite_rank::apply_network(original, a, t_orig).resized(lift.lifted_rank());
  const SpectralCoeffs padded = pad_input(lift, a);
  const SpectralCoeffs g = finite_rank::apply_network(lift.G, padded, t_lift);
  const SpectralCoeffs h = finite_rank::apply_network(lift.H, padded, t_lift);
  ClosenessSample s;
  s.gap = (target.coeffs - g.coeffs).norm();
  s.h_norm = h.norm();
  s.bound = 5.0 * lift.eps0 * s.h_norm + 1e-8;
  s.ok = s.gap <= s.bound;
  return s;
}

}  // namespace injop::reduce
