#pragma once

// Injective dimension reduction and injective lifting.
//
// A projection pair (P_alpha, P_0) of nearby orthogonal projections and the
// rotation Q with Q P_alpha = P_0 Q give the reduction B = pi o Q o P_alpha,
// which keeps an injective map injective after dropping channels. Lifting
// carries the input alongside a given network through an injective pathway
// and folds B into the last layer.

#include <cstdint>
#include <functional>
#include <vector>

#include <Eigen/Dense>

#include "injop/finite_rank.hpp"

namespace injop::reduce {

using finite_rank::FiniteRankNetwork;
using funcspace::SpectralCoeffs;
using funcspace::Transform;

/// Largest singular value.
double op_norm(const Eigen::MatrixXd& m);

/// Mixing weights of the tilted basis vectors phi^alpha_{k,j}.
///   Angle:   (sqrt(1 - alpha^2), alpha), so ||P_alpha - P_0|| = alpha.
///   Literal: (sqrt(1 - alpha), sqrt(alpha)), so ||P_alpha - P_0|| = sqrt(alpha).
enum class Mixing { Angle, Literal };

/// Projections on the stacked coefficient space of m channels with n_total
/// modes each (mode-major, index k * m + c).
///
/// V_0 holds the first m - ell channels. V_alpha tilts each of their first
/// n_core modes towards a distinct high mode xi of the last channel,
/// xi_{k (m - ell) + j} = phi_{n_core + k (m - ell) + j}. P_alpha and P_zero
/// project onto the orthogonal complements of V_alpha and V_0.
struct ProjectionPair {
  double alpha = 0.0;
  int m = 0;
  int ell = 0;
  int n_core = 0;
  int n_total = 0;
  Mixing mixing = Mixing::Angle;
  Eigen::MatrixXd P_alpha;
  Eigen::MatrixXd P_zero;
  Eigen::MatrixXd Q;

  int dim() const { return m * n_total; }
};

/// Orthonormal basis of V_alpha as columns (alpha = 0 gives V_0).
Eigen::MatrixXd v_alpha_basis(int m, int ell, int n_core, double alpha, Mixing mixing = Mixing::Angle);

ProjectionPair build_projection_pair(int m, int ell, int n_core, double alpha,
                                     Mixing mixing = Mixing::Angle);

/// Q = (P0 P + (I - P0)(I - P)) (I - (P0 - P)^2)^{-1/2}, mapping ran(P) onto
/// ran(P0). Throws SingularError when the pair is too far apart.
Eigen::MatrixXd pair_rotation(const Eigen::MatrixXd& P, const Eigen::MatrixXd& P0);

enum class Provenance { ExplicitXi, Randomized };

struct ReductionMap {
  Eigen::MatrixXd B;
  Provenance provenance = Provenance::ExplicitXi;
  double alpha = 0.0;
  std::uint64_t seed = 0;
  double eps0 = 0.0;          // ||P - P_0||_op of the pair behind B
  int attempts = 0;           // randomized: seeds tried until verification passed
  double min_gap_ratio = 0.0; // randomized: min |BT(a) - BT(b)| / |a - b| over checked pairs
};

/// B = (last ell channels) o Q o P_alpha.
ReductionMap build_reduction_explicit(const ProjectionPair& pair);

/// Black-box map on stacked coefficient vectors.
using CoeffMap = std::function<Eigen::VectorXd(const Eigen::VectorXd&)>;

struct RandomizedOptions {
  double alpha = 0.1;
  int jacobian_points = 32;
  int collision_pairs = 10000;
  int max_attempts = 8;
  double fd_step = 1e-5;
  double rank_tol = 1e-7;
  double sample_scale = 1.0;
};

/// out_modes >= 2 n_in + 1.
bool dimension_gate_ok(int n_in_modes, int out_modes);

/// T maps n_in_modes coordinates into an ambient space of n_in_modes +
/// out_modes coordinates whose last out_modes coordinates form V_0-perp.
/// Rotates V_0-perp by exp(alpha S) for a random unit skew S, builds B as in
/// the explicit case, then verifies Jacobian rank and absence of collisions
/// of B o T, retrying with fresh streams.
ReductionMap build_reduction_randomized(const CoeffMap& T, int n_in_modes, int out_modes,
                                        std::uint64_t seed, const RandomizedOptions& options = {});

enum class LiftMode { InjectiveActivation, ReLU };
enum class ReductionKind { Explicit, Randomized };

struct LiftOptions {
  LiftMode mode = LiftMode::InjectiveActivation;
  ReductionKind reduction = ReductionKind::Explicit;
  double alpha = 0.1;
  std::uint64_t seed = 0;
  Mixing mixing = Mixing::Angle;
  /// Randomized path: output rank N'. Zero picks the smallest admissible.
  int n_prime = 0;
  RandomizedOptions randomized;
};

struct LiftResult {
  FiniteRankNetwork G;  // injective network: H with B folded into its last layer
  FiniteRankNetwork H;  // augmented network (pathway channels first, then the original outputs)
  ReductionMap reduction;
  double eps0 = 0.0;
  LiftMode mode = LiftMode::InjectiveActivation;
  int N = 0;     // rank of the original network
  int d_in = 0;
  int d_out = 0;
  /// Activations applied to the pathway, in order (injective-activation mode).
  std::vector<finite_rank::Activation> pathway_activations;

  int lifted_rank() const { return G.N; }
};

/// Throws PreconditionError for activations not allowed in `mode`.
void check_lift_mode(const FiniteRankNetwork& net, LiftMode mode);

LiftResult lift_to_injective(const FiniteRankNetwork& net, const LiftOptions& options,
                             funcspace::GridPtr grid);

/// Embeds an input of the original network into the lifted rank.
SpectralCoeffs pad_input(const LiftResult& lift, const SpectralCoeffs& a);

/// Recovers the original input (order N) from H(a) via the pathway channels.
/// ReLU mode is an exact algebraic read-off; LeakyReLU pathways are inverted
/// by Newton's method on the monotone map c -> P_N sigma(c).
SpectralCoeffs recover_input(const LiftResult& lift, const SpectralCoeffs& h_out,
                             funcspace::GridPtr grid);

struct ClosenessSample {
  double gap = 0.0;     // |G_tilde(a) - G(a)|
  double h_norm = 0.0;  // |H(a)|
  double bound = 0.0;   // 5 eps0 |H(a)| + 1e-8
  bool ok = false;
};

/// Compares the original network and its injective lift at one input.
ClosenessSample check_closeness(const FiniteRankNetwork& original, const LiftResult& lift,
                                const SpectralCoeffs& a, funcspace::GridPtr grid);

}  // namespace injop::reduce
