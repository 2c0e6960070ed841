#include <algorithm>
#include <cmath>
#include <limits>

#include <Eigen/SVD>

#include "injop/error.hpp"
#include "injop/nonlin.hpp"
#include "injop/rng.hpp"

namespace injop::nonlin {

namespace {

constexpr const char* kModule = "nonlin";
constexpr int kSmoothModes = 8;
constexpr int kDivergenceWindow = 5;
constexpr int kPowerSteps = 6;
constexpr double kNearStep = 1e-4;
constexpr int kRefineRounds = 48;
constexpr std::uint64_t kRefineFamily = 0x5eed0f1a7e5ULL;

double l2(const Grid& g, const Eigen::MatrixXd& u) {
  double s = 0.0;
  for (Eigen::Index c = 0; c < u.rows(); ++c) s += g.weights.dot(u.row(c).transpose().cwiseAbs2());
  return std::sqrt(s);
}

double inner(const Grid& g, const Eigen::MatrixXd& u, const Eigen::MatrixXd& v) {
  double s = 0.0;
  for (Eigen::Index c = 0; c < u.rows(); ++c)
    s += (u.row(c).array() * v.row(c).array() * g.weights.transpose().array()).sum();
  return s;
}

double h1(const GridPtr& g, const Eigen::MatrixXd& u) { return funcspace::h1_norm(GridFunction(g, u)); }

Eigen::MatrixXd fourier_modes(const Grid& g) {
  const funcspace::BasisSpec basis{funcspace::BasisKind::Fourier, g.a, g.b, 64};
  return funcspace::sample_basis(basis, g, kSmoothModes);
}

/// Random smooth function with standard normal coefficients on the first modes.
Eigen::MatrixXd smooth_sample(Rng& rng, const Eigen::MatrixXd& modes, int channels) {
  Eigen::MatrixXd u(channels, modes.rows());
  for (int c = 0; c < channels; ++c) u.row(c) = (modes * rng.normal_vector(modes.cols())).transpose();
  return u;
}

/// sup over t of |d/dt [act(a t + b) t]| bounded in terms of |b| and omega.
double sigmoid_slope_bound(double b) {
  // |sigma(s) + (s - b) sigma'(s)| <= 1 + sup|s sigma'(s)| + |b| / 4
  return 1.0 + 0.2240 + std::abs(b) / 4.0;
}

double wire_slope_bound(double omega, double b) {
  // |sin| e^{-s^2} <= 1; |s sigma'(s)| <= (omega |s| + 2 s^2) e^{-s^2} <= 0.4289 omega + 2/e;
  // |sigma'(s)| <= (omega + 2|s|) e^{-s^2} <= omega + 0.8578
  return 1.0 + 0.4289 * std::abs(omega) + 0.7358 + std::abs(b) * (std::abs(omega) + 0.8578);
}

}  // namespace

CoercivityReport estimate_coercivity(const NonlinearIntegralOperator& F, double alpha, int ray_dirs,
                                     const std::vector<double>& radii, std::uint64_t seed) {
  if (!(alpha > 0.0 && alpha < 1.0)) throw PreconditionError(kModule, "alpha must lie in (0, 1)");
  if (ray_dirs < 1) throw PreconditionError(kModule, "need at least one ray");
  for (std::size_t i = 1; i < radii.size(); ++i)
    if (!(radii[i] > radii[i - 1])) throw PreconditionError(kModule, "radii must be increasing");

  const Grid& g = *F.grid();
  const Eigen::MatrixXd modes = fourier_modes(g);
  std::vector<Eigen::MatrixXd> dirs;
  for (int r = 0; r < ray_dirs; ++r) {
    Eigen::MatrixXd u;
    if (r < 2) {
      u = Eigen::MatrixXd::Constant(F.channels(), g.M, r == 0 ? 1.0 : -1.0);
    } else {
      Rng rng = Rng::stream(seed, static_cast<std::uint64_t>(r));
      u = smooth_sample(rng, modes, F.channels());
    }
    dirs.push_back(u / l2(g, u));
  }

  CoercivityReport rep;
  rep.radii = radii;
  for (double r : radii) {
    double mn = std::numeric_limits<double>::infinity();
    for (const auto& u : dirs) {
      const Eigen::MatrixXd ru = r * u;
      const Eigen::MatrixXd val = alpha * ru + F.apply_w_inverse(F.K(ru));
      mn = std::min(mn, inner(g, val, u));
    }
    rep.min_values.push_back(mn);
  }
  rep.monotone = std::is_sorted(rep.min_values.begin(), rep.min_values.end());
  if (F.kernel().kind == KernelKind::SigmoidSum)
    rep.analytic_slope = alpha - F.w_inverse_norm() * F.c_sup() * F.length();
  for (std::size_t i = radii.size(); i-- > 0;) {
    if (rep.min_values[i] < 0.5 * alpha * radii[i]) break;
    rep.half_alpha_threshold = radii[i];
  }
  return rep;
}

double estimate_contraction(const NonlinearIntegralOperator& F, int pair_samples, std::uint64_t seed) {
  const Grid& g = *F.grid();
  const Eigen::MatrixXd modes = fourier_modes(g);
  const int d = F.channels();
  auto wk = [&F](const Eigen::MatrixXd& u) { return F.apply_w_inverse(F.K(u)); };

  // Largest difference quotient over nearby pairs (u, u + h step). A few power
  // steps steer the offset towards the dominant direction of the local Jacobian.
  auto local_slope = [&](const Eigen::MatrixXd& u, const Eigen::MatrixXd& dir) {
    const Eigen::MatrixXd wu = wk(u);
    Eigen::MatrixXd step = dir / l2(g, dir);
    double best = 0.0;
    for (int p = 0; p < kPowerSteps; ++p) {
      const Eigen::MatrixXd diff = wk(u + kNearStep * step) - wu;
      const double nd = l2(g, diff);
      best = std::max(best, nd / kNearStep);
      if (!(nd > 0.0)) break;
      step = diff / nd;
    }
    return best;
  };

  double rho = 0.0;
  double best_slope = -1.0;
  Eigen::MatrixXd best_base;
  for (int i = 0; i < pair_samples; ++i) {
    Eigen::MatrixXd u = Eigen::MatrixXd::Zero(d, g.M);
    Eigen::MatrixXd v = u;
    if (i < kSmoothModes) {
      v.row(i % d) = modes.col(i).transpose();
    } else {
      Rng rng = Rng::stream(seed, static_cast<std::uint64_t>(i));
      u = smooth_sample(rng, modes, d);
      const Eigen::MatrixXd dir = smooth_sample(rng, modes, d);
      // Alternate far pairs and nearby pairs, which probe the local slope.
      if (i % 2 == 1) {
        v = dir;
      } else {
        u *= rng.uniform(0.0, 2.0);
        const double slope = local_slope(u, dir);
        rho = std::max(rho, slope);
        if (slope > best_slope) {
          best_slope = slope;
          best_base = u;
        }
        continue;
      }
    }
    const double du = l2(g, u - v);
    if (du <= 0.0) continue;
    rho = std::max(rho, l2(g, wk(u) - wk(v)) / du);
  }

  // Constant base points on a ladder of amplitudes: the kernel acts pointwise
  // in u(y), so the steepest slopes tend to sit near constants.
  for (int j = -4; j <= 8 && pair_samples > kSmoothModes; ++j)
    for (double sign : {1.0, -1.0}) {
      Rng rng = Rng::stream(seed ^ kRefineFamily, static_cast<std::uint64_t>(kRefineRounds + j + 4));
      const Eigen::MatrixXd u = Eigen::MatrixXd::Constant(d, g.M, sign * std::pow(2.0, 0.5 * j));
      const double slope = local_slope(u, smooth_sample(rng, modes, d));
      rho = std::max(rho, slope);
      if (slope > best_slope) {
        best_slope = slope;
        best_base = u;
      }
    }

  // Hill-climb the steepest base point with seeded smooth perturbations.
  if (best_slope >= 0.0) {
    double tau = 0.5 * l2(g, best_base) + 1.0;
    for (int r = 0; r < kRefineRounds; ++r) {
      Rng rng = Rng::stream(seed ^ kRefineFamily, static_cast<std::uint64_t>(r));
      const Eigen::MatrixXd kick = smooth_sample(rng, modes, d);
      const Eigen::MatrixXd cand = best_base + tau * kick / l2(g, kick);
      const double slope = local_slope(cand, smooth_sample(rng, modes, d));
      rho = std::max(rho, slope);
      if (slope > best_slope) {
        best_slope = slope;
        best_base = cand;
      } else {
        tau *= 0.7;
      }
    }
  }
  return rho;
}

std::optional<double> analytic_lipschitz_bound(const NonlinearIntegralOperator& F) {
  const NonlinearKernel& k = F.kernel();
  if (k.kind == KernelKind::SoftmaxAttention || k.signature != Signature::UY) return std::nullopt;
  const Grid& g = *F.grid();
  Eigen::MatrixXd L = Eigen::MatrixXd::Zero(g.M, g.M);
  switch (k.kind) {
    case KernelKind::SigmoidSum:
    case KernelKind::Wire:
      for (const auto& t : k.terms) {
        const Eigen::MatrixXd c = t.c.sample(g).cwiseAbs();
        const Eigen::MatrixXd b = t.b.sample(g);
        const bool wire = k.kind == KernelKind::Wire;
        const double omega = k.omega;
        L += c.cwiseProduct(b.unaryExpr(
            [wire, omega](double bv) { return wire ? wire_slope_bound(omega, bv) : sigmoid_slope_bound(bv); }));
      }
      break;
    case KernelKind::VolterraLipschitz:
      // d/dt[(kappa + lambda tanh t) t] = kappa + lambda (tanh t + t sech^2 t), and |tanh t + t sech^2 t| <= 1.45
      L = F.kernel_matrix(Eigen::VectorXd::Zero(g.M)).cwiseAbs() +
          1.45 * F.kernel_t_derivative(Eigen::VectorXd::Zero(g.M)).cwiseAbs();
      break;
    case KernelKind::LinearTable:
      L = F.kernel_matrix(Eigen::VectorXd::Zero(g.M)).cwiseAbs();
      break;
    case KernelKind::SoftmaxAttention:
      return std::nullopt;
  }
  // |W^{-1}(K(u) - K(v))|_i <= sum_j |W_i|^{-1} wq_ij L_ij |u_j - v_j|; take the
  // L2(quadrature) operator norm of that nonnegative matrix.
  const Eigen::VectorXd sw = g.weights.cwiseSqrt();
  Eigen::MatrixXd m = F.quadrature().cwiseProduct(L);
  m = F.w().cwiseAbs().cwiseInverse().asDiagonal() * m;
  m = sw.asDiagonal() * m * sw.cwiseInverse().asDiagonal();
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(m);
  return svd.singularValues()(0);
}

InversionResult invert_banach(const NonlinearIntegralOperator& F, const GridFunction& z, double tol,
                              int max_iter) {
  if (!z.grid || !z.grid->same_as(*F.grid())) throw DimensionError(kModule, "target lives on a different grid");
  if (z.channels() != F.channels()) throw DimensionError(kModule, "target has the wrong channel count");
  const Grid& g = *F.grid();
  const Eigen::MatrixXd rhs = z.values - F.bias();

  InversionResult out;
  Eigen::MatrixXd u = Eigen::MatrixXd::Zero(F.channels(), g.M);
  int increases = 0;
  for (int it = 1; it <= max_iter; ++it) {
    u = F.apply_w_inverse(rhs - F.K(u));
    const Eigen::MatrixXd r = F.apply(u) - z.values;
    const double res = l2(g, r);
    auto& tr = out.trace;
    tr.iterations = it;
    tr.residual_l2.push_back(res);
    tr.residual_h1.push_back(h1(F.grid(), r));
    const double prev = tr.residual_l2.size() > 1 ? tr.residual_l2[tr.residual_l2.size() - 2]
                                                   : std::numeric_limits<double>::quiet_NaN();
    tr.ratios.push_back(res / prev);
    if (!std::isfinite(res))
      throw DivergenceError(kModule, "Banach iteration produced a non-finite residual at iteration " +
                                         std::to_string(it));
    if (res <= tol) {
      tr.converged = true;
      break;
    }
    increases = (tr.residual_l2.size() > 1 && res > prev) ? increases + 1 : 0;
    if (increases >= kDivergenceWindow)
      throw DivergenceError(kModule, "Banach iteration diverged: residual grew " +
                                         std::to_string(kDivergenceWindow) +
                                         " times in a row (contraction hypothesis violated), residual " +
                                         std::to_string(res) + " at iteration " + std::to_string(it));
  }
  out.u = GridFunction(F.grid(), u);
  return out;
}

Eigen::MatrixXd frechet_derivative(const NonlinearIntegralOperator& F, const Eigen::VectorXd& u0) {
  if (!F.kernel().differentiable())
    throw PreconditionError(kModule, "not differentiable here: the derivative is implemented for scalar "
                                     "kernels k(x, y, u(y)) only, got " +
                                         to_string(F.kernel().kind) + " with signature " +
                                         to_string(F.kernel().signature));
  Eigen::MatrixXd k = F.kernel_matrix(u0);
  Eigen::MatrixXd dk = F.kernel_t_derivative(u0);
  dk.array().rowwise() *= u0.transpose().array();
  Eigen::MatrixXd A = F.quadrature().cwiseProduct(k + dk);
  A.diagonal() += F.w();
  return A;
}

Eigen::MatrixXd frechet_derivative(const NonlinearIntegralOperator& F, const GridFunction& u0) {
  if (!F.kernel().differentiable()) return frechet_derivative(F, Eigen::VectorXd());
  if (!u0.grid || !u0.grid->same_as(*F.grid())) throw DimensionError(kModule, "u0 lives on a different grid");
  if (u0.channels() != 1) throw DimensionError(kModule, "u0 must be single-channel");
  return frechet_derivative(F, u0.column());
}

Eigen::VectorXd solve_frechet(const Eigen::MatrixXd& A, const Eigen::VectorXd& rhs) {
  if (A.rows() != A.cols()) throw DimensionError(kModule, "Frechet derivative must be square");
  if (rhs.size() != A.rows()) throw DimensionError(kModule, "right-hand side has the wrong length");
  Eigen::BDCSVD<Eigen::MatrixXd> svd(A);
  const auto& sv = svd.singularValues();
  if (!(sv(sv.size() - 1) > 1e-10 * sv(0)))
    throw SingularError(kModule, "Fredholm injectivity violation: sigma_min(A) = " +
                                     std::to_string(sv(sv.size() - 1)) + " <= 1e-10 sigma_max = " +
                                     std::to_string(sv(0)));
  const Eigen::PartialPivLU<Eigen::MatrixXd> lu(A);
  Eigen::VectorXd w = lu.solve(rhs);
  w += lu.solve(rhs - A * w);
  return w;
}

GridFunction solve_frechet(const Eigen::MatrixXd& A, const GridFunction& rhs) {
  if (rhs.channels() != 1) throw DimensionError(kModule, "right-hand side must be single-channel");
  const Eigen::VectorXd w = solve_frechet(A, rhs.column());
  return GridFunction(rhs.grid, w.transpose());
}

}  // namespace injop::nonlin
