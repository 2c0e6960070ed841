#pragma once

// Newton-type local inverses around anchor points and their gluing into a
// global inverse of F(u) = W u + K(u) + b through half-open bins of probe
// values g(y_l).

#include <map>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "injop/nonlin.hpp"

namespace injop::atlas {

using funcspace::GridFunction;
using funcspace::GridPtr;
using nonlin::InversionTrace;
using nonlin::NonlinearIntegralOperator;

using CellKey = std::vector<long>;

/// Returns v if s - h/2 <= w(z) < s + h/2, else the zero function. z must be a grid node.
GridFunction mask_apply(double z, double s, double h, const GridFunction& v, const GridFunction& w);

/// Bin i covers [(i - 1/2) eps, (i + 1/2) eps). Adjacent bins share their
/// edge value bit for bit, so the bins partition the real line.
bool in_cell_bin(double value, long i, double eps);
long cell_index(double value, double eps);

struct Anchor {
  GridFunction v;
  GridFunction g;  // F(v), stored as computed
  Eigen::MatrixXd A;
  Eigen::PartialPivLU<Eigen::MatrixXd> lu;
  double a_inv_norm_h1 = 0.0;
};

Anchor make_anchor(const NonlinearIntegralOperator& F, const GridFunction& v);

/// Quantities from the local inverse construction. Reported, never used to gate.
struct AtlasConstants {
  double C_S = 0.0;    // H1 -> C embedding constant on D
  double R2 = 0.0;     // max H1 norm over anchors
  double k_C2 = 0.0;   // kernel sup norms
  double k_C3 = 0.0;
  double C_L = 0.0;
  double C_B = 0.0;    // max measured ||A^{-1}||_{H1 -> H1}
  double C_A = 0.0;
  double C_0 = 0.0;
  double C_H = 0.0;
  double r = 0.0;
  double eps0 = 0.0;
  double eps0_bound = 0.0;  // 1 / (8 C_B) * 1 / (2 C_H)
  bool declared_bounds = false;
};

struct Atlas {
  std::vector<Anchor> anchors;
  std::vector<int> probe_indices;
  std::vector<double> probe_points;
  double eps1 = 0.0;
  std::map<CellKey, int> cell_map;
  AtlasConstants constants;
  std::vector<std::string> warnings;
};

CellKey cell_key(const Atlas& atlas, const GridFunction& g);

/// The cell indicator: v if every probe value of g falls in the bins of key, else 0.
GridFunction cell_mask(const Atlas& atlas, const CellKey& key, const GridFunction& v, const GridFunction& g);

/// Equispaced interior probe nodes.
std::vector<int> probe_node_indices(int M, int ell0);

/// H1 Gram matrix of the grid norm, ||u||_{H1}^2 = u^T G u.
Eigen::MatrixXd h1_gram(const funcspace::Grid& grid);

/// ||A^{-1}|| as an operator on the discrete H1 space.
double h1_inverse_norm(const Eigen::MatrixXd& A, const funcspace::Grid& grid);

Atlas build_atlas(const NonlinearIntegralOperator& F, const std::vector<GridFunction>& training_inputs, int ell0,
                  double eps1);

/// Recomputes anchors from their preimages; probe indices and cell map are taken as given.
Atlas rebuild_atlas(const NonlinearIntegralOperator& F, const std::vector<GridFunction>& anchor_inputs,
                    std::vector<int> probe_indices, double eps1, std::map<CellKey, int> cell_map);

struct LocalInversion {
  GridFunction u;
  InversionTrace trace;  // residuals of F(u) - g; ratios of successive H1 step sizes
};

/// Iterates u <- u - A^{-1}(F(u) - g) from u = v_j, converging on the H1 residual.
LocalInversion local_invert(const NonlinearIntegralOperator& F, const Anchor& anchor, const GridFunction& g,
                            double tol, int max_iter);

struct GlobalInversion {
  GridFunction u;
  InversionTrace trace;
  CellKey key;
  int anchor = -1;
  bool fallback = false;  // cell unseen at build time, nearest anchor used
};

GlobalInversion global_invert(const Atlas& atlas, const NonlinearIntegralOperator& F, const GridFunction& g,
                              double tol, int max_iter);

}  // namespace injop::atlas
