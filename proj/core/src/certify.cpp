#include "injop/certify.hpp"

#include <cmath>
#include <vector>

#include <Eigen/SVD>

#include "injop/error.hpp"
#include "injop/rng.hpp"

namespace injop::certify {

namespace {

constexpr const char* kModule = "certify";

struct Singulars {
  double min = 0.0;
  double max = 0.0;
};

/// Singular values relevant to injectivity: sigma_min is 0 when the matrix
/// has fewer rows than columns.
Singulars injectivity_singulars(const Eigen::MatrixXd& m) {
  Singulars s;
  if (m.size() == 0) return s;
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(m);
  const auto& sv = svd.singularValues();
  s.max = sv.size() ? sv(0) : 0.0;
  s.min = (m.rows() < m.cols() || sv.size() == 0) ? 0.0 : sv(sv.size() - 1);
  return s;
}

Eigen::VectorXd sample_trial(int index, int dim, const DssOptions& options) {
  Eigen::VectorXd v = Eigen::VectorXd::Zero(dim);
  if (index == 0) {
    // zero function: the S = empty regime
  } else if (index <= 2 * dim) {
    const int axis = (index - 1) / 2;
    v(axis) = (index % 2 == 1) ? 1.0 : -1.0;
  } else {
    Rng rng = Rng::stream(options.seed, static_cast<std::uint64_t>(index));
    v = rng.normal_vector(dim);
  }
  if (options.max_norm) {
    const double n = v.norm();
    if (n > *options.max_norm) v *= *options.max_norm / n;
  }
  return v;
}

/// Scales probed for a kernel direction: 2^0, 2^-1, 2^1, 2^-2, ... 2^+-8,
/// each positive before negative.
std::vector<double> probe_scales() {
  std::vector<double> scales;
  scales.reserve(34);
  for (int m = 0; m <= 16; ++m) {
    const int j = (m % 2 == 1) ? -(m + 1) / 2 : m / 2;
    const double t = std::ldexp(1.0, j);
    scales.push_back(t);
    scales.push_back(-t);
  }
  return scales;
}

/// X(v, T+b) membership of the direction t*u on the grid, for channels outside S.
bool in_cone(const Eigen::MatrixXd& z, const Eigen::MatrixXd& tu, const std::vector<bool>& in_s,
             double t) {
  for (Eigen::Index i = 0; i < z.rows(); ++i) {
    if (in_s[i]) continue;
    for (Eigen::Index x = 0; x < z.cols(); ++x) {
      const double step = t * tu(i, x);
      if (z(i, x) > 0.0) {
        if (std::abs(step) > kMembershipTol) return false;
      } else if (z(i, x) > step + kMembershipTol) {
        return false;
      }
    }
  }
  return true;
}

}  // namespace

std::string to_string(Verdict verdict) {
  switch (verdict) {
    case Verdict::CertifiedInjective:
      return "CertifiedInjective";
    case Verdict::CounterexampleFound:
      return "CounterexampleFound";
    case Verdict::NoCounterexampleFound:
      return "NoCounterexampleFound";
  }
  return "NoCounterexampleFound";
}

Verdict verdict_from_string(const std::string& name) {
  if (name == "CertifiedInjective") return Verdict::CertifiedInjective;
  if (name == "CounterexampleFound") return Verdict::CounterexampleFound;
  if (name == "NoCounterexampleFound") return Verdict::NoCounterexampleFound;
  throw FormatError(kModule, "unknown verdict '" + name + "'");
}

Eigen::MatrixXd null_space(const Eigen::MatrixXd& m, Eigen::Index cols) {
  if (m.rows() == 0) return Eigen::MatrixXd::Identity(cols, cols);
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(m, Eigen::ComputeFullV);
  const auto& sv = svd.singularValues();
  const double cutoff = kSigmaTau * (sv.size() ? sv(0) : 0.0);
  Eigen::Index rank = 0;
  while (rank < sv.size() && sv(rank) > cutoff) ++rank;
  return svd.matrixV().rightCols(cols - rank);
}

CertReport certify_bijective_activation(const FiniteRankLayer& layer) {
  if (!layer.activation().is_injective())
    throw PreconditionError(kModule, "matrix criterion needs an injective activation");
  const Eigen::MatrixXd C = finite_rank::block_matrix(layer);
  const Singulars s = injectivity_singulars(C);

  CertReport report;
  report.sigma_min = s.min;
  report.sigma_max = s.max;
  if (s.min > kSigmaTau * s.max) {
    report.verdict = Verdict::CertifiedInjective;
    report.bijective_on_span = C.rows() == C.cols();
    return report;
  }

  report.verdict = Verdict::CounterexampleFound;
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(C, Eigen::ComputeFullV);
  const Eigen::VectorXd direction = svd.matrixV().col(C.cols() - 1);
  const auto& basis = layer.basis();
  Witness w{SpectralCoeffs::zeros(basis, layer.d_in(), layer.rank()),
            SpectralCoeffs::from_stacked(basis, direction, layer.d_in(), layer.rank())};
  // Pre-activation gap of the witness; the outputs then differ by at most the
  // activation's Lipschitz constant times this.
  report.witness_residual = (C * direction).norm();
  report.witness = std::move(w);
  return report;
}

CertReport certify_relu_dss(const FiniteRankLayer& layer, const Transform& transform,
                            const DssOptions& options) {
  if (layer.activation().kind != finite_rank::ActivationKind::ReLU)
    throw PreconditionError(kModule, "DSS search needs a ReLU layer");
  if (options.trials < 0) throw PreconditionError(kModule, "trials must be non-negative");
  if (transform.order() != layer.rank() || transform.basis() != layer.basis())
    throw DimensionError(kModule, "transform does not match the layer's basis and rank");

  const int N = layer.rank();
  const int d_in = layer.d_in();
  const int d_out = layer.d_out();
  const int dim = N * d_in;
  const Eigen::MatrixXd C = finite_rank::block_matrix(layer);
  const Singulars s = injectivity_singulars(C);
  const std::vector<double> scales = probe_scales();

  CertReport report;
  report.seed = options.seed;
  report.sigma_min = s.min;
  report.sigma_max = s.max;
  report.verdict = Verdict::NoCounterexampleFound;

  for (int trial = 0; trial < options.trials; ++trial) {
    report.trials = trial + 1;
    const Eigen::VectorXd v = sample_trial(trial, dim, options);
    Eigen::VectorXd pre = C * v;
    Eigen::MatrixXd zc = Eigen::Map<const Eigen::MatrixXd>(pre.data(), d_out, N) + layer.bias();
    const Eigen::MatrixXd z = transform.synthesize(zc);

    std::vector<bool> in_s(d_out, false);
    std::vector<Eigen::Index> rows;
    for (int i = 0; i < d_out; ++i) {
      in_s[i] = z.row(i).minCoeff() > kPositivityMargin;
      if (!in_s[i]) continue;
      for (int p = 0; p < N; ++p) rows.push_back(static_cast<Eigen::Index>(p) * d_out + i);
    }
    Eigen::MatrixXd C_S(static_cast<Eigen::Index>(rows.size()), dim);
    for (std::size_t r = 0; r < rows.size(); ++r) C_S.row(static_cast<Eigen::Index>(r)) = C.row(rows[r]);
    const Eigen::MatrixXd kernel = null_space(C_S, dim);

    for (Eigen::Index col = 0; col < kernel.cols(); ++col) {
      const Eigen::VectorXd u = kernel.col(col);
      Eigen::VectorXd tu_c = C * u;
      const Eigen::MatrixXd tu =
          transform.synthesize(Eigen::Map<const Eigen::MatrixXd>(tu_c.data(), d_out, N).eval());
      for (double t : scales) {
        if (!in_cone(z, tu, in_s, t)) continue;
        Witness w{SpectralCoeffs::from_stacked(layer.basis(), v, d_in, N),
                  SpectralCoeffs::from_stacked(layer.basis(), v - t * u, d_in, N)};
        double residual = 0.0;
        if (!collision_confirmed(layer, w.v1, w.v2, transform, &residual)) continue;
        report.verdict = Verdict::CounterexampleFound;
        report.witness_residual = residual;
        report.witness = std::move(w);
        return report;
      }
    }
  }
  return report;
}

double verify_collision(const FiniteRankLayer& layer, const SpectralCoeffs& v1,
                        const SpectralCoeffs& v2, const Transform& transform) {
  if (v1.channels() != v2.channels() || v1.order() != v2.order())
    throw DimensionError(kModule, "witness functions have different shapes");
  if ((v1.coeffs - v2.coeffs).norm() <= 1e-12)
    throw PreconditionError(kModule, "degenerate witness: v1 and v2 coincide");
  const SpectralCoeffs o1 = finite_rank::apply_layer(layer, v1, transform);
  const SpectralCoeffs o2 = finite_rank::apply_layer(layer, v2, transform);
  // Outputs lie in the span of orthonormal modes, so the L2 norm is the
  // coefficient norm.
  return (o1.coeffs - o2.coeffs).norm();
}

bool collision_confirmed(const FiniteRankLayer& layer, const SpectralCoeffs& v1,
                         const SpectralCoeffs& v2, const Transform& transform, double* residual) {
  const double r = verify_collision(layer, v1, v2, transform);
  if (residual) *residual = r;
  const double out = finite_rank::apply_layer(layer, v1, transform).norm();
  return r <= kCollisionTol * (1.0 + out);
}

}  // namespace injop::certify
