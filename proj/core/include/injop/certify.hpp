#pragma once

// Injectivity certification of finite-rank layers.
//
// Injective activations: the layer is injective on the rank-N span iff its
// block matrix is. ReLU: a randomized search for directed-spanning-set
// failures, which yields explicit collisions when it succeeds.

#include <cstdint>
#include <optional>
#include <string>

#include "injop/finite_rank.hpp"

namespace injop::certify {

using finite_rank::FiniteRankLayer;
using funcspace::SpectralCoeffs;
using funcspace::Transform;

/// Relative singular-value threshold for matrix injectivity.
inline constexpr double kSigmaTau = 1e-10;
/// Margin for "strictly positive at every node".
inline constexpr double kPositivityMargin = 1e-12;
/// Tolerance for the X(v, T+b) membership conditions.
inline constexpr double kMembershipTol = 1e-10;
/// A collision is confirmed when the residual is below this times (1 + |out|).
inline constexpr double kCollisionTol = 1e-10;

enum class Verdict { CertifiedInjective, CounterexampleFound, NoCounterexampleFound };

std::string to_string(Verdict verdict);
Verdict verdict_from_string(const std::string& name);

struct Witness {
  SpectralCoeffs v1;
  SpectralCoeffs v2;
};

struct CertReport {
  Verdict verdict = Verdict::NoCounterexampleFound;
  double sigma_min = 0.0;
  double sigma_max = 0.0;
  std::optional<Witness> witness;
  double witness_residual = 0.0;  // verify_collision of the witness, if any
  int trials = 0;
  std::uint64_t seed = 0;
  bool bijective_on_span = false;  // square block matrix, certified
};

/// Singular-value test of the block matrix. Requires an injective activation.
CertReport certify_bijective_activation(const FiniteRankLayer& layer);

struct DssOptions {
  int trials = 1000;
  std::uint64_t seed = 0;
  /// Rescale sampled coefficient vectors to at most this norm.
  std::optional<double> max_norm;
};

/// Falsifier for ReLU layers: samples v (zero, +-basis vectors, then standard
/// normal coefficients) and looks for u != 0 with ReLU(T(v-u)+b) = ReLU(Tv+b).
/// NoCounterexampleFound is not a proof of injectivity.
CertReport certify_relu_dss(const FiniteRankLayer& layer, const Transform& transform,
                            const DssOptions& options = {});

/// ||apply_layer(v1) - apply_layer(v2)||_{L2}. Throws if v1 and v2 coincide.
double verify_collision(const FiniteRankLayer& layer, const SpectralCoeffs& v1,
                        const SpectralCoeffs& v2, const Transform& transform);

/// verify_collision against the confirmation threshold.
bool collision_confirmed(const FiniteRankLayer& layer, const SpectralCoeffs& v1,
                         const SpectralCoeffs& v2, const Transform& transform,
                         double* residual = nullptr);

/// Orthonormal basis (columns) of the numerical null space of `m`, using the
/// relative threshold kSigmaTau. An empty row set yields the identity.
Eigen::MatrixXd null_space(const Eigen::MatrixXd& m, Eigen::Index cols);

}  // namespace injop::certify
