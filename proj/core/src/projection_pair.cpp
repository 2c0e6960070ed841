#include <cmath>

#include <Eigen/Eigenvalues>
#include <Eigen/SVD>

#include "injop/error.hpp"
#include "injop/reduce.hpp"

namespace injop::reduce {

namespace {

constexpr const char* kModule = "reduce";

}  // namespace

double op_norm(const Eigen::MatrixXd& m) {
  if (m.size() == 0) return 0.0;
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(m);
  return svd.singularValues()(0);
}

Eigen::MatrixXd v_alpha_basis(int m, int ell, int n_core, double alpha, Mixing mixing) {
  const int free = m - ell;
  const int n_total = n_core + n_core * free;
  const Eigen::Index dim = static_cast<Eigen::Index>(m) * n_total;
  double keep = 1.0;
  double tilt = 0.0;
  if (mixing == Mixing::Angle) {
    keep = std::sqrt(1.0 - alpha * alpha);
    tilt = alpha;
  } else {
    keep = std::sqrt(1.0 - alpha);
    tilt = std::sqrt(alpha);
  }

  Eigen::MatrixXd V = Eigen::MatrixXd::Zero(dim, static_cast<Eigen::Index>(n_total) * free);
  Eigen::Index col = 0;
  for (int k = 0; k < n_total; ++k) {
    for (int j = 0; j < free; ++j, ++col) {
      if (k < n_core) {
        const int xi_mode = n_core + k * free + j;
        V(static_cast<Eigen::Index>(k) * m + j, col) = keep;
        V(static_cast<Eigen::Index>(xi_mode) * m + (m - 1), col) = tilt;
      } else {
        V(static_cast<Eigen::Index>(k) * m + j, col) = 1.0;
      }
    }
  }
  return V;
}

Eigen::MatrixXd pair_rotation(const Eigen::MatrixXd& P, const Eigen::MatrixXd& P0) {
  const Eigen::Index n = P.rows();
  const Eigen::MatrixXd I = Eigen::MatrixXd::Identity(n, n);
  const Eigen::MatrixXd diff = P0 - P;
  Eigen::MatrixXd gap = I - diff * diff;
  gap = 0.5 * (gap + gap.transpose());
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(gap);
  const Eigen::VectorXd& lambda = eig.eigenvalues();
  if (lambda.minCoeff() <= 1e-12)
    throw SingularError(kModule, "projection pair is ill-conditioned: lambda_min(I - (P0 - P)^2) = " +
                                     std::to_string(lambda.minCoeff()));
  const Eigen::MatrixXd inv_sqrt =
      eig.eigenvectors() * lambda.cwiseSqrt().cwiseInverse().asDiagonal() * eig.eigenvectors().transpose();
  return (P0 * P + (I - P0) * (I - P)) * inv_sqrt;
}

ProjectionPair build_projection_pair(int m, int ell, int n_core, double alpha, Mixing mixing) {
  if (!(alpha > 0.0 && alpha < 0.5)) throw PreconditionError(kModule, "alpha must lie in (0, 1/2)");
  if (ell < 1 || ell >= m) throw PreconditionError(kModule, "need 1 <= ell < m");
  if (n_core < 1) throw PreconditionError(kModule, "need n_core >= 1");

  ProjectionPair pair;
  pair.alpha = alpha;
  pair.m = m;
  pair.ell = ell;
  pair.n_core = n_core;
  pair.n_total = n_core + n_core * (m - ell);
  pair.mixing = mixing;

  const Eigen::Index dim = pair.dim();
  const Eigen::MatrixXd I = Eigen::MatrixXd::Identity(dim, dim);
  const Eigen::MatrixXd Va = v_alpha_basis(m, ell, n_core, alpha, mixing);
  const Eigen::MatrixXd V0 = v_alpha_basis(m, ell, n_core, 0.0, Mixing::Angle);
  pair.P_alpha = I - Va * Va.transpose();
  pair.P_zero = I - V0 * V0.transpose();
  pair.Q = pair_rotation(pair.P_alpha, pair.P_zero);
  return pair;
}

ReductionMap build_reduction_explicit(const ProjectionPair& pair) {
  const Eigen::MatrixXd QP = pair.Q * pair.P_alpha;
  ReductionMap r;
  r.provenance = Provenance::ExplicitXi;
  r.alpha = pair.alpha;
  r.eps0 = op_norm(pair.P_alpha - pair.P_zero);
  r.B.resize(static_cast<Eigen::Index>(pair.ell) * pair.n_total, pair.dim());
  for (int k = 0; k < pair.n_total; ++k)
    for (int c = 0; c < pair.ell; ++c)
      r.B.row(static_cast<Eigen::Index>(k) * pair.ell + c) =
          QP.row(static_cast<Eigen::Index>(k) * pair.m + (pair.m - pair.ell + c));
  return r;
}

}  // namespace injop::reduce
