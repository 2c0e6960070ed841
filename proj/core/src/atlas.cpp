#include "injop/atlas.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <tuple>

#include <Eigen/SVD>

#include "injop/error.hpp"

namespace injop::atlas {

namespace {

constexpr const char* kModule = "atlas";
constexpr int kDivergenceWindow = 5;
constexpr int kSupSamples = 41;

void require_same_grid(const GridFunction& f, const GridPtr& grid, const char* what) {
  if (!f.grid || !f.grid->same_as(*grid)) throw DimensionError(kModule, std::string(what) + " lives on a different grid");
  if (f.channels() != 1) throw DimensionError(kModule, std::string(what) + " must be single-channel");
}

int node_index(const funcspace::Grid& grid, double z) {
  const double t = (z - grid.a) / grid.spacing();
  const long i = std::lround(t);
  if (i < 0 || i >= grid.M || std::abs(grid.nodes[i] - z) > 1e-12 * std::max(1.0, std::abs(z)))
    throw PreconditionError(kModule, "mask point " + std::to_string(z) + " is not a grid node");
  return static_cast<int>(i);
}

double h1_distance(const GridFunction& f, const GridFunction& g) {
  return funcspace::h1_norm(*f.grid, (f.values - g.values).row(0).transpose());
}

/// Sup norms of the kernel and its t-derivatives over the grid and |t| <= t_max.
/// First x and y differences of k and dk/dt are included; higher t-derivatives
/// come from central differences of dk/dt.
std::pair<double, double> kernel_sup_norms(const NonlinearIntegralOperator& F, double t_max) {
  const int M = F.grid()->M;
  const double h = F.grid()->spacing();
  const double dt = 1e-3;
  double c2 = 0.0;
  double c3 = 0.0;
  auto sup = [](const Eigen::MatrixXd& m) { return m.cwiseAbs().maxCoeff(); };
  auto dx = [h](const Eigen::MatrixXd& m) {
    return std::max(((m.bottomRows(m.rows() - 1) - m.topRows(m.rows() - 1)) / h).cwiseAbs().maxCoeff(),
                    ((m.rightCols(m.cols() - 1) - m.leftCols(m.cols() - 1)) / h).cwiseAbs().maxCoeff());
  };
  for (int s = 0; s < kSupSamples; ++s) {
    const double t = -t_max + 2.0 * t_max * s / (kSupSamples - 1);
    const Eigen::VectorXd u = Eigen::VectorXd::Constant(M, t);
    const Eigen::MatrixXd k = F.kernel_matrix(u);
    const Eigen::MatrixXd kt = F.kernel_t_derivative(u);
    const Eigen::MatrixXd ktp = F.kernel_t_derivative(Eigen::VectorXd::Constant(M, t + dt));
    const Eigen::MatrixXd ktm = F.kernel_t_derivative(Eigen::VectorXd::Constant(M, t - dt));
    const Eigen::MatrixXd ktt = (ktp - ktm) / (2.0 * dt);
    const Eigen::MatrixXd kttt = (ktp - 2.0 * kt + ktm) / (dt * dt);
    const double first = std::max({sup(k), sup(kt), dx(k), dx(kt)});
    c2 = std::max({c2, first, sup(ktt)});
    c3 = std::max({c3, first, sup(ktt), sup(kttt)});
  }
  return {c2, c3};
}

AtlasConstants compute_constants(const NonlinearIntegralOperator& F, const std::vector<Anchor>& anchors) {
  AtlasConstants c;
  const double L = F.length();
  c.C_S = std::sqrt(1.0 + 1.0 / L);
  for (const auto& a : anchors) {
    c.R2 = std::max(c.R2, funcspace::h1_norm(a.v));
    c.C_B = std::max(c.C_B, a.a_inv_norm_h1);
  }
  if (F.kernel().c0) {
    c.k_C2 = c.k_C3 = *F.kernel().c0;
    c.declared_bounds = true;
  } else {
    std::tie(c.k_C2, c.k_C3) = kernel_sup_norms(F, 2.0 * c.C_S * c.R2);
  }
  const double growth = 1.0 + 2.0 * c.C_S * c.R2;
  c.C_L = 2.0 * c.k_C2 * L * growth;
  c.C_A = c.C_B * c.C_B * c.C_L;
  c.C_0 = 3.0 * std::sqrt(L) * c.k_C3 * growth * c.C_S * c.C_S;
  c.C_H = 2.0 * c.C_B * c.C_0 + c.C_A * (c.C_B + 4.0 * c.C_0 * c.R2);
  c.r = c.C_H > 0.0 ? std::min(1.0 / (2.0 * c.C_H), c.R2) : c.R2;
  c.eps0_bound = c.C_H > 0.0 && c.C_B > 0.0 ? 1.0 / (8.0 * c.C_B) / (2.0 * c.C_H)
                                            : std::numeric_limits<double>::infinity();
  c.eps0 = 0.99 * c.eps0_bound;
  return c;
}

/// Anchor whose g is nearest in H1 to g; ties go to the smaller index.
int nearest_anchor(const std::vector<Anchor>& anchors, const std::vector<int>& candidates, const GridFunction& g) {
  int best = -1;
  double best_d = std::numeric_limits<double>::infinity();
  for (int j : candidates) {
    const double d = h1_distance(anchors[j].g, g);
    if (d < best_d) {
      best_d = d;
      best = j;
    }
  }
  return best;
}

}  // namespace

GridFunction mask_apply(double z, double s, double h, const GridFunction& v, const GridFunction& w) {
  const int i = node_index(*w.grid, z);
  const double wz = w.values(0, i);
  if (s - h / 2.0 <= wz && wz < s + h / 2.0) return v;
  return GridFunction::zeros(v.grid, v.channels());
}

bool in_cell_bin(double value, long i, double eps) {
  return (static_cast<double>(i) - 0.5) * eps <= value && value < (static_cast<double>(i) + 0.5) * eps;
}

long cell_index(double value, double eps) {
  if (!std::isfinite(value)) throw PreconditionError(kModule, "probe value is not finite");
  long i = static_cast<long>(std::floor(value / eps + 0.5));
  while (value < (static_cast<double>(i) - 0.5) * eps) --i;
  while (value >= (static_cast<double>(i) + 0.5) * eps) ++i;
  return i;
}

Anchor make_anchor(const NonlinearIntegralOperator& F, const GridFunction& v) {
  require_same_grid(v, F.grid(), "anchor input");
  Anchor a;
  a.v = v;
  a.g = F.apply(v);
  a.A = nonlin::frechet_derivative(F, v);
  a.lu = Eigen::PartialPivLU<Eigen::MatrixXd>(a.A);
  Eigen::BDCSVD<Eigen::MatrixXd> svd(a.A);
  const auto& sv = svd.singularValues();
  if (!(sv(sv.size() - 1) > 1e-10 * sv(0)))
    throw SingularError(kModule, "Fredholm injectivity violation at an anchor: derivative is singular");
  a.a_inv_norm_h1 = h1_inverse_norm(a.A, *F.grid());
  return a;
}

std::vector<int> probe_node_indices(int M, int ell0) {
  if (ell0 < 1 || ell0 > M) throw PreconditionError(kModule, "need 1 <= ell0 <= M probe points");
  std::vector<int> idx;
  for (int l = 0; l < ell0; ++l)
    idx.push_back(static_cast<int>(std::lround(static_cast<double>(l + 1) * (M - 1) / (ell0 + 1))));
  return idx;
}

Eigen::MatrixXd h1_gram(const funcspace::Grid& grid) {
  const int M = grid.M;
  Eigen::MatrixXd G = grid.weights.asDiagonal();
  const double ih = 1.0 / grid.spacing();
  for (int i = 0; i + 1 < M; ++i) {
    G(i, i) += ih;
    G(i + 1, i + 1) += ih;
    G(i, i + 1) -= ih;
    G(i + 1, i) -= ih;
  }
  return G;
}

double h1_inverse_norm(const Eigen::MatrixXd& A, const funcspace::Grid& grid) {
  // ||x||_{H1} = ||R x|| with G = R^T R, so the norm is ||R A^{-1} R^{-1}||_2.
  const Eigen::LLT<Eigen::MatrixXd> llt(h1_gram(grid));
  const Eigen::MatrixXd R = llt.matrixU();
  const Eigen::MatrixXd Rinv = llt.matrixU().solve(Eigen::MatrixXd::Identity(grid.M, grid.M));
  const Eigen::MatrixXd X = R * A.partialPivLu().solve(Rinv);
  Eigen::BDCSVD<Eigen::MatrixXd> svd(X);
  return svd.singularValues()(0);
}

CellKey cell_key(const Atlas& atlas, const GridFunction& g) {
  CellKey key;
  key.reserve(atlas.probe_indices.size());
  for (int i : atlas.probe_indices) key.push_back(cell_index(g.values(0, i), atlas.eps1));
  return key;
}

GridFunction cell_mask(const Atlas& atlas, const CellKey& key, const GridFunction& v, const GridFunction& g) {
  if (key.size() != atlas.probe_indices.size()) throw DimensionError(kModule, "cell key has the wrong length");
  for (std::size_t l = 0; l < key.size(); ++l)
    if (!in_cell_bin(g.values(0, atlas.probe_indices[l]), key[l], atlas.eps1))
      return GridFunction::zeros(v.grid, v.channels());
  return v;
}

Atlas build_atlas(const NonlinearIntegralOperator& F, const std::vector<GridFunction>& training_inputs, int ell0,
                  double eps1) {
  if (training_inputs.empty()) throw PreconditionError(kModule, "atlas needs at least one training input");
  if (!(eps1 > 0.0)) throw PreconditionError(kModule, "bin width eps1 must be positive");
  Atlas atlas;
  atlas.eps1 = eps1;
  atlas.probe_indices = probe_node_indices(F.grid()->M, ell0);
  for (int i : atlas.probe_indices) atlas.probe_points.push_back(F.grid()->nodes[i]);
  for (const auto& v : training_inputs) atlas.anchors.push_back(make_anchor(F, v));

  std::map<CellKey, std::vector<int>> members;
  for (int j = 0; j < static_cast<int>(atlas.anchors.size()); ++j)
    members[cell_key(atlas, atlas.anchors[j].g)].push_back(j);
  for (const auto& [key, js] : members) {
    if (js.size() == 1) {
      atlas.cell_map[key] = js.front();
      continue;
    }
    // Shared cell: pick the member nearest the members' centroid.
    GridFunction centroid = GridFunction::zeros(F.grid(), 1);
    for (int j : js) centroid.values += atlas.anchors[j].g.values;
    centroid.values /= static_cast<double>(js.size());
    const int chosen = nearest_anchor(atlas.anchors, js, centroid);
    atlas.cell_map[key] = chosen;
    atlas.warnings.push_back(std::to_string(js.size()) + " anchors share a cell; anchor " +
                             std::to_string(chosen) + " selected");
  }
  atlas.constants = compute_constants(F, atlas.anchors);
  return atlas;
}

Atlas rebuild_atlas(const NonlinearIntegralOperator& F, const std::vector<GridFunction>& anchor_inputs,
                    std::vector<int> probe_indices, double eps1, std::map<CellKey, int> cell_map) {
  if (anchor_inputs.empty()) throw PreconditionError(kModule, "atlas needs at least one anchor");
  Atlas atlas;
  atlas.eps1 = eps1;
  atlas.probe_indices = std::move(probe_indices);
  for (int i : atlas.probe_indices) {
    if (i < 0 || i >= F.grid()->M) throw FormatError(kModule, "probe index out of range");
    atlas.probe_points.push_back(F.grid()->nodes[i]);
  }
  for (const auto& v : anchor_inputs) atlas.anchors.push_back(make_anchor(F, v));
  for (const auto& [key, j] : cell_map) {
    if (j < 0 || j >= static_cast<int>(atlas.anchors.size()))
      throw FormatError(kModule, "cell map refers to a missing anchor");
    if (key.size() != atlas.probe_indices.size()) throw FormatError(kModule, "cell key has the wrong length");
  }
  atlas.cell_map = std::move(cell_map);
  atlas.constants = compute_constants(F, atlas.anchors);
  return atlas;
}

LocalInversion local_invert(const NonlinearIntegralOperator& F, const Anchor& anchor, const GridFunction& g,
                            double tol, int max_iter) {
  require_same_grid(g, F.grid(), "target");
  const funcspace::Grid& grid = *F.grid();
  Eigen::VectorXd u = anchor.v.column();
  const Eigen::VectorXd target = g.column();

  LocalInversion out;
  auto& tr = out.trace;
  double prev_step = std::numeric_limits<double>::quiet_NaN();
  int increases = 0;
  for (int it = 1; it <= max_iter; ++it) {
    const Eigen::VectorXd fu = F.apply(Eigen::MatrixXd(u.transpose())).row(0).transpose();
    const Eigen::VectorXd step = anchor.lu.solve(fu - target);
    u -= step;
    const Eigen::VectorXd r = F.apply(Eigen::MatrixXd(u.transpose())).row(0).transpose() - target;
    const double res_h1 = funcspace::h1_norm(grid, r);
    const double step_h1 = funcspace::h1_norm(grid, step);
    tr.iterations = it;
    tr.residual_l2.push_back(funcspace::l2_norm(grid, r));
    tr.residual_h1.push_back(res_h1);
    tr.ratios.push_back(step_h1 / prev_step);
    prev_step = step_h1;
    if (!std::isfinite(res_h1))
      throw DivergenceError(kModule, "out of basin: non-finite residual at iteration " + std::to_string(it));
    if (res_h1 <= tol) {
      tr.converged = true;
      break;
    }
    const std::size_t n = tr.residual_h1.size();
    increases = (n > 1 && res_h1 > tr.residual_h1[n - 2]) ? increases + 1 : 0;
    if (increases >= kDivergenceWindow)
      throw DivergenceError(kModule, "out of basin: H1 residual grew " + std::to_string(kDivergenceWindow) +
                                         " times in a row, residual " + std::to_string(res_h1) +
                                         " at iteration " + std::to_string(it));
  }
  out.u = GridFunction(F.grid(), u.transpose());
  return out;
}

GlobalInversion global_invert(const Atlas& atlas, const NonlinearIntegralOperator& F, const GridFunction& g,
                              double tol, int max_iter) {
  if (atlas.anchors.empty()) throw PreconditionError(kModule, "atlas has no anchors");
  require_same_grid(g, F.grid(), "target");
  GlobalInversion out;
  out.key = cell_key(atlas, g);
  const auto it = atlas.cell_map.find(out.key);
  if (it != atlas.cell_map.end()) {
    out.anchor = it->second;
  } else {
    std::vector<int> all(atlas.anchors.size());
    for (std::size_t j = 0; j < all.size(); ++j) all[j] = static_cast<int>(j);
    out.anchor = nearest_anchor(atlas.anchors, all, g);
    out.fallback = true;
  }
  try {
    LocalInversion local = local_invert(F, atlas.anchors[out.anchor], g, tol, max_iter);
    out.u = std::move(local.u);
    out.trace = std::move(local.trace);
  } catch (const DivergenceError& e) {
    std::string key;
    for (long i : out.key) key += (key.empty() ? "" : ",") + std::to_string(i);
    std::string detail = e.what();
    const std::string prefix = std::string(kModule) + ": ";
    if (detail.rfind(prefix, 0) == 0) detail.erase(0, prefix.size());
    throw DivergenceError(kModule, detail + " (cell [" + key + "], anchor " +
                                       std::to_string(out.anchor) + (out.fallback ? ", nearest-anchor fallback)" : ")"));
  }
  return out;
}

}  // namespace injop::atlas
