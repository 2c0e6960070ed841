#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include <Eigen/SVD>
#include <unsupported/Eigen/MatrixFunctions>

#include "injop/certify.hpp"
#include "injop/error.hpp"
#include "injop/reduce.hpp"
#include "injop/rng.hpp"

namespace injop::reduce {

namespace {

constexpr const char* kModule = "reduce";
// Stream families for the rotation draw and for the verification samples.
constexpr std::uint64_t kRotationFamily = 0x5eed0001ULL;
constexpr std::uint64_t kProbeFamily = 0x5eed0002ULL;

Eigen::MatrixXd random_unit_skew(Rng& rng, Eigen::Index n) {
  const Eigen::MatrixXd A = rng.normal_matrix(n, n);
  Eigen::MatrixXd S = A - A.transpose();
  const double norm = op_norm(S);
  if (norm > 0.0) S /= norm;
  return S;
}

struct Verification {
  bool ok = false;
  std::string reason;
  double min_gap_ratio = std::numeric_limits<double>::infinity();
};

Verification verify(const Eigen::MatrixXd& B, const CoeffMap& T, int n_in, std::uint64_t stream_seed,
                    const RandomizedOptions& opt) {
  Verification v;
  auto BT = [&](const Eigen::VectorXd& a) -> Eigen::VectorXd { return B * T(a); };

  for (int i = 0; i < opt.jacobian_points; ++i) {
    Rng rng = Rng::stream(stream_seed, static_cast<std::uint64_t>(i));
    const Eigen::VectorXd a = opt.sample_scale * rng.normal_vector(n_in);
    Eigen::MatrixXd J(B.rows(), n_in);
    for (int j = 0; j < n_in; ++j) {
      Eigen::VectorXd e = Eigen::VectorXd::Zero(n_in);
      e(j) = opt.fd_step;
      J.col(j) = (BT(a + e) - BT(a - e)) / (2.0 * opt.fd_step);
    }
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(J);
    const auto& sv = svd.singularValues();
    const double smax = sv.size() ? sv(0) : 0.0;
    int rank = 0;
    for (Eigen::Index k = 0; k < sv.size(); ++k)
      if (sv(k) > opt.rank_tol * smax) ++rank;
    if (smax == 0.0 || rank != n_in) {
      v.reason = "Jacobian rank " + std::to_string(rank) + " < " + std::to_string(n_in) +
                 " at probe point " + std::to_string(i);
      return v;
    }
  }

  const std::uint64_t pair_base = static_cast<std::uint64_t>(opt.jacobian_points);
  for (int i = 0; i < opt.collision_pairs; ++i) {
    Rng rng = Rng::stream(stream_seed, pair_base + static_cast<std::uint64_t>(i));
    const Eigen::VectorXd a = opt.sample_scale * rng.normal_vector(n_in);
    const Eigen::VectorXd b = opt.sample_scale * rng.normal_vector(n_in);
    const Eigen::VectorXd ya = BT(a);
    const double gap = (ya - BT(b)).norm();
    const double input_gap = (a - b).norm();
    if (input_gap <= 1e-12) continue;
    if (gap <= certify::kCollisionTol * (1.0 + ya.norm())) {
      v.reason = "collision at pair " + std::to_string(i);
      return v;
    }
    v.min_gap_ratio = std::min(v.min_gap_ratio, gap / input_gap);
  }
  v.ok = true;
  return v;
}

}  // namespace

bool dimension_gate_ok(int n_in_modes, int out_modes) { return out_modes >= 2 * n_in_modes + 1; }

ReductionMap build_reduction_randomized(const CoeffMap& T, int n_in_modes, int out_modes,
                                        std::uint64_t seed, const RandomizedOptions& options) {
  if (n_in_modes < 1 || out_modes < 1) throw DimensionError(kModule, "mode counts must be positive");
  if (!dimension_gate_ok(n_in_modes, out_modes))
    throw DimensionError(kModule, "randomized reduction needs N' d_out >= 2 N d_in + 1, got " +
                                      std::to_string(out_modes) + " < " +
                                      std::to_string(2 * n_in_modes + 1));
  if (!(options.alpha > 0.0)) throw PreconditionError(kModule, "alpha must be positive");

  const Eigen::Index D = n_in_modes + out_modes;
  Eigen::MatrixXd P0 = Eigen::MatrixXd::Zero(D, D);
  P0.bottomRightCorner(out_modes, out_modes).setIdentity();

  std::string last_reason;
  for (int attempt = 0; attempt < options.max_attempts; ++attempt) {
    Rng rng = Rng::stream(seed ^ kRotationFamily, static_cast<std::uint64_t>(attempt));
    const Eigen::MatrixXd S = random_unit_skew(rng, D);
    const Eigen::MatrixXd R = (options.alpha * S).exp();
    Eigen::MatrixXd P = R * P0 * R.transpose();
    P = 0.5 * (P + P.transpose());
    const double eps0 = op_norm(P - P0);
    if (!(eps0 < 1.0)) {
      last_reason = "rotated projection too far from P0 (||P - P0|| = " + std::to_string(eps0) + ")";
      continue;
    }
    const Eigen::MatrixXd QP = pair_rotation(P, P0) * P;

    ReductionMap r;
    r.provenance = Provenance::Randomized;
    r.alpha = options.alpha;
    r.seed = seed;
    r.eps0 = eps0;
    r.attempts = attempt + 1;
    r.B = QP.bottomRows(out_modes);

    const std::uint64_t probe_seed = splitmix64(seed ^ kProbeFamily) + static_cast<std::uint64_t>(attempt);
    const Verification check = verify(r.B, T, n_in_modes, probe_seed, options);
    if (check.ok) {
      r.min_gap_ratio = check.min_gap_ratio;
      return r;
    }
    last_reason = check.reason;
  }
  throw VerificationError(kModule, "randomized reduction failed verification after " +
                                       std::to_string(options.max_attempts) + " attempts (" +
                                       last_reason + ")");
}

}  // namespace injop::reduce
