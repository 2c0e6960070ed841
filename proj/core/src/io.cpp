#include "injop/io.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "injop/error.hpp"

namespace injop::io {

namespace {

constexpr const char* kModule = "io";

json matrix_to_json(const Eigen::MatrixXd& m) {
  json rows = json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    json row = json::array();
    for (Eigen::Index j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
    rows.push_back(std::move(row));
  }
  return rows;
}

Eigen::MatrixXd matrix_from_json(const json& j, const std::string& what) {
  if (!j.is_array()) throw FormatError(kModule, what + " must be a nested array");
  const auto rows = static_cast<Eigen::Index>(j.size());
  const Eigen::Index cols = rows > 0 ? static_cast<Eigen::Index>(j[0].size()) : 0;
  Eigen::MatrixXd m(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i) {
    if (!j[i].is_array() || static_cast<Eigen::Index>(j[i].size()) != cols)
      throw FormatError(kModule, what + " is ragged");
    for (Eigen::Index c = 0; c < cols; ++c) m(i, c) = j[i][c].get<double>();
  }
  return m;
}

json vector_to_json(const Eigen::VectorXd& v) {
  json out = json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) out.push_back(v(i));
  return out;
}

template <class T>
T required(const json& j, const char* key) {
  if (!j.is_object() || !j.contains(key)) throw FormatError(kModule, std::string("missing field '") + key + "'");
  try {
    return j.at(key).get<T>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(kModule, std::string("field '") + key + "': " + e.what());
  }
}

json to_json(const funcspace::Grid& g) { return json{{"a", g.a}, {"b", g.b}, {"M", g.M}}; }

std::vector<std::string> split(const std::string& line, char sep) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream is(line);
  while (std::getline(is, cell, sep)) out.push_back(cell);
  return out;
}

double parse_double(const std::string& s, const fs::path& path, int line) {
  try {
    std::size_t pos = 0;
    const double v = std::stod(s, &pos);
    if (pos != s.size() && s.find_first_not_of(" \t\r", pos) != std::string::npos) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw FormatError(kModule, path.string() + ":" + std::to_string(line) + ": not a number '" + s + "'");
  }
}

}  // namespace

std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw FormatError(kModule, "cannot open " + path.string());
  try {
    return json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(kModule, path.string() + ": " + e.what());
  }
}

namespace {

void dump_value(const json& j, int depth, std::string& out) {
  const std::string pad(static_cast<std::size_t>(depth + 1) * 2, ' ');
  const std::string close(static_cast<std::size_t>(depth) * 2, ' ');
  switch (j.type()) {
    case json::value_t::object: {
      if (j.empty()) {
        out += "{}";
        return;
      }
      out += "{\n";
      bool first = true;
      for (const auto& [key, value] : j.items()) {
        if (!first) out += ",\n";
        first = false;
        out += pad + json(key).dump() + ": ";
        dump_value(value, depth + 1, out);
      }
      out += "\n" + close + "}";
      return;
    }
    case json::value_t::array: {
      if (j.empty()) {
        out += "[]";
        return;
      }
      // Arrays of scalars stay on one line.
      const bool flat = std::none_of(j.begin(), j.end(), [](const json& e) { return e.is_structured(); });
      out += flat ? "[" : "[\n";
      for (std::size_t i = 0; i < j.size(); ++i) {
        if (i > 0) out += flat ? ", " : ",\n";
        if (!flat) out += pad;
        dump_value(j[i], depth + 1, out);
      }
      out += flat ? "]" : "\n" + close + "]";
      return;
    }
    case json::value_t::number_float: {
      const double v = j.get<double>();
      out += std::isfinite(v) ? format_double(v) : "null";
      return;
    }
    default:
      out += j.dump();
  }
}

}  // namespace

std::string dump(const json& doc) {
  std::string out;
  dump_value(doc, 0, out);
  return out + "\n";
}

void write_json(const fs::path& path, const json& doc) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError(kModule, "cannot write " + path.string());
  out << dump(doc);
}

json to_json(const funcspace::BasisSpec& basis) {
  json j{{"kind", funcspace::to_string(basis.kind)}, {"a", basis.a}, {"b", basis.b}};
  if (basis.kind == funcspace::BasisKind::StepHaar) j["cells"] = basis.cells;
  return j;
}

funcspace::BasisSpec basis_from_json(const json& j) {
  funcspace::BasisSpec b;
  b.kind = funcspace::basis_kind_from_string(required<std::string>(j, "kind"));
  b.a = j.value("a", 0.0);
  b.b = j.value("b", 1.0);
  b.cells = j.value("cells", 64);
  if (!(b.b > b.a)) throw FormatError(kModule, "basis interval needs b > a");
  return b;
}

json to_json(const finite_rank::FiniteRankNetwork& net) {
  json layers = json::array();
  for (const auto& layer : net.layers) {
    json act{{"kind", finite_rank::to_string(layer.activation().kind)}};
    if (layer.activation().kind == finite_rank::ActivationKind::LeakyReLU) act["a"] = layer.activation().a;
    // C[k][p][i][j]
    json C = json::array();
    for (int k = 0; k < net.N; ++k) {
      json row = json::array();
      for (int p = 0; p < net.N; ++p) row.push_back(matrix_to_json(layer.C(k, p)));
      C.push_back(std::move(row));
    }
    layers.push_back(json{{"d_in", layer.d_in()},
                          {"d_out", layer.d_out()},
                          {"activation", std::move(act)},
                          {"C", std::move(C)},
                          {"bias", matrix_to_json(layer.bias())}});
  }
  return json{{"basis", to_json(net.basis)}, {"N", net.N}, {"layers", std::move(layers)}};
}

finite_rank::FiniteRankNetwork network_from_json(const json& j) {
  finite_rank::FiniteRankNetwork net;
  net.basis = basis_from_json(required<json>(j, "basis"));
  net.N = required<int>(j, "N");
  if (net.N <= 0) throw FormatError(kModule, "N must be positive");
  const json layers = required<json>(j, "layers");
  if (!layers.is_array() || layers.empty()) throw FormatError(kModule, "layers must be a nonempty array");
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const json& lj = layers[l];
    const std::string where = "layer " + std::to_string(l);
    const int d_in = required<int>(lj, "d_in");
    const int d_out = required<int>(lj, "d_out");
    const json aj = required<json>(lj, "activation");
    const auto kind = finite_rank::activation_kind_from_string(required<std::string>(aj, "kind"));
    finite_rank::Activation act{kind, 0.0};
    if (kind == finite_rank::ActivationKind::LeakyReLU) act = finite_rank::Activation::leaky_relu(required<double>(aj, "a"));
    finite_rank::FiniteRankLayer layer(net.basis, d_in, d_out, net.N, act);
    const json C = required<json>(lj, "C");
    if (!C.is_array() || static_cast<int>(C.size()) != net.N)
      throw FormatError(kModule, where + ": C must have N entries along k");
    for (int k = 0; k < net.N; ++k) {
      if (!C[k].is_array() || static_cast<int>(C[k].size()) != net.N)
        throw FormatError(kModule, where + ": C[k] must have N entries along p");
      for (int p = 0; p < net.N; ++p) {
        const Eigen::MatrixXd blk = matrix_from_json(C[k][p], where + " C block");
        if (blk.rows() != d_out || blk.cols() != d_in)
          throw FormatError(kModule, where + ": C blocks must be d_out x d_in");
        layer.C(k, p) = blk;
      }
    }
    if (lj.contains("bias")) {
      const Eigen::MatrixXd bias = matrix_from_json(lj["bias"], where + " bias");
      if (bias.rows() != d_out || bias.cols() != net.N) throw FormatError(kModule, where + ": bias must be d_out x N");
      layer.set_bias(bias);
    }
    net.layers.push_back(std::move(layer));
  }
  try {
    net.validate();
  } catch (const Error& e) {
    throw FormatError(kModule, std::string("network fails validation: ") + e.what());
  }
  return net;
}

json reduction_meta(const reduce::ReductionMap& map) {
  json j{{"provenance", map.provenance == reduce::Provenance::ExplicitXi ? "explicit" : "randomized"},
         {"alpha", map.alpha},
         {"seed", map.seed},
         {"eps0", map.eps0}};
  if (map.provenance == reduce::Provenance::Randomized) {
    j["attempts"] = map.attempts;
    j["min_gap_ratio"] = map.min_gap_ratio;
  }
  j["rows"] = map.B.rows();
  j["cols"] = map.B.cols();
  return j;
}

json to_json(const reduce::LiftResult& lift) {
  json j = to_json(lift.G);
  j["meta"] = json{{"mode", lift.mode == reduce::LiftMode::ReLU ? "relu" : "injective_activation"},
                   {"original_N", lift.N},
                   {"d_in", lift.d_in},
                   {"d_out", lift.d_out},
                   {"lifted_N", lift.lifted_rank()},
                   {"eps0", lift.eps0},
                   {"reduction", reduction_meta(lift.reduction)}};
  return j;
}

json to_json(const certify::CertReport& report) {
  json j{{"verdict", certify::to_string(report.verdict)},
         {"sigma_min", report.sigma_min},
         {"sigma_max", report.sigma_max},
         {"trials", report.trials},
         {"seed", report.seed},
         {"bijective_on_span", report.bijective_on_span}};
  if (report.witness) {
    j["witness"] = json{{"v1", matrix_to_json(report.witness->v1.coeffs)},
                        {"v2", matrix_to_json(report.witness->v2.coeffs)}};
    j["witness_residual"] = report.witness_residual;
  }
  return j;
}

json to_json(const nonlin::BivariateField& f) {
  using K = nonlin::BivariateField::Kind;
  switch (f.kind) {
    case K::Constant:
      return f.c0;
    case K::Affine:
      return json{{"kind", "affine"}, {"c0", f.c0}, {"cx", f.cx}, {"cy", f.cy}, {"cxy", f.cxy}};
    case K::Gaussian:
      return json{{"kind", "gaussian"}, {"amp", f.amp}, {"width", f.width}};
    case K::Table:
      return json{{"kind", "table"}, {"values", matrix_to_json(f.table)}};
  }
  return f.c0;
}

nonlin::BivariateField field_from_json(const json& j) {
  using nonlin::BivariateField;
  if (j.is_number()) return BivariateField::constant(j.get<double>());
  const auto kind = nonlin::field_kind_from_string(required<std::string>(j, "kind"));
  switch (kind) {
    case BivariateField::Kind::Constant:
      return BivariateField::constant(required<double>(j, "value"));
    case BivariateField::Kind::Affine:
      return BivariateField::affine(j.value("c0", 0.0), j.value("cx", 0.0), j.value("cy", 0.0), j.value("cxy", 0.0));
    case BivariateField::Kind::Gaussian:
      return BivariateField::gaussian(required<double>(j, "amp"), required<double>(j, "width"));
    case BivariateField::Kind::Table:
      return BivariateField::from_table(matrix_from_json(required<json>(j, "values"), "field table"));
  }
  throw FormatError(kModule, "unknown field kind");
}

json to_json(const nonlin::NonlinearKernel& k) {
  using nonlin::KernelKind;
  json j{{"kind", nonlin::to_string(k.kind)},
         {"signature", json::array({"x", "y", nonlin::to_string(k.signature)})}};
  switch (k.kind) {
    case KernelKind::Wire:
      j["omega"] = k.omega;
      [[fallthrough]];
    case KernelKind::SigmoidSum: {
      json terms = json::array();
      for (const auto& t : k.terms) terms.push_back(json{{"c", to_json(t.c)}, {"a", to_json(t.a)}, {"b", to_json(t.b)}});
      j["terms"] = std::move(terms);
      break;
    }
    case KernelKind::VolterraLipschitz:
      j["kappa"] = to_json(k.kappa);
      j["lambda"] = to_json(k.lambda);
      break;
    case KernelKind::LinearTable:
      j["table"] = to_json(k.table);
      break;
    case KernelKind::SoftmaxAttention:
      j["A"] = matrix_to_json(k.A);
      j["B"] = matrix_to_json(k.B);
      break;
  }
  if (k.c0) j["c0"] = *k.c0;
  return j;
}

nonlin::NonlinearKernel kernel_from_json(const json& j) {
  using nonlin::KernelKind;
  using nonlin::NonlinearKernel;
  const KernelKind kind = nonlin::kernel_kind_from_string(required<std::string>(j, "kind"));
  nonlin::Signature sig = nonlin::Signature::UY;
  if (j.contains("signature")) {
    const json& s = j["signature"];
    if (s.is_string()) {
      sig = nonlin::signature_from_string(s.get<std::string>());
    } else if (s.is_array() && !s.empty() && s.back().is_string()) {
      sig = nonlin::signature_from_string(s.back().get<std::string>());
    } else {
      throw FormatError(kModule, "signature must be a string or [\"x\", \"y\", \"u(y)\"]");
    }
  }
  auto terms = [&j]() {
    std::vector<nonlin::ActivatedTerm> out;
    for (const auto& t : required<json>(j, "terms"))
      out.push_back({field_from_json(required<json>(t, "c")), field_from_json(t.value("a", json(1.0))),
                     field_from_json(t.value("b", json(0.0)))});
    return out;
  };
  NonlinearKernel k;
  switch (kind) {
    case KernelKind::SigmoidSum:
      k = NonlinearKernel::sigmoid_sum(terms(), sig);
      break;
    case KernelKind::Wire:
      k = NonlinearKernel::wire(required<double>(j, "omega"), terms(), sig);
      break;
    case KernelKind::VolterraLipschitz:
      k = NonlinearKernel::volterra(field_from_json(required<json>(j, "kappa")),
                                    field_from_json(j.value("lambda", json(0.0))));
      break;
    case KernelKind::LinearTable:
      k = NonlinearKernel::linear(field_from_json(required<json>(j, "table")));
      break;
    case KernelKind::SoftmaxAttention:
      k = NonlinearKernel::attention(matrix_from_json(required<json>(j, "A"), "A"),
                                     matrix_from_json(required<json>(j, "B"), "B"));
      break;
  }
  if (j.contains("c0")) k.c0 = j["c0"].get<double>();
  return k;
}

json to_json(const nonlin::NonlinearIntegralOperator& F) {
  json j{{"grid", to_json(*F.grid())}};
  if (F.kernel().kind == nonlin::KernelKind::SoftmaxAttention) {
    j["W"] = matrix_to_json(F.w_matrix());
  } else if (F.w().size() > 0 && (F.w().array() == F.w()(0)).all()) {
    j["W"] = F.w()(0);
  } else {
    j["W"] = vector_to_json(F.w());
  }
  if (F.has_bias()) j["bias"] = matrix_to_json(F.bias());
  j["kernel"] = to_json(F.kernel());
  return j;
}

nonlin::NonlinearIntegralOperator operator_from_json(const json& j) {
  const json gj = required<json>(j, "grid");
  const auto grid = funcspace::make_grid(gj.value("a", 0.0), gj.value("b", 1.0),
                                         gj.value("M", funcspace::kDefaultGridSize));
  nonlin::NonlinearKernel kernel = kernel_from_json(required<json>(j, "kernel"));
  std::optional<Eigen::MatrixXd> bias;
  if (j.contains("bias")) bias = matrix_from_json(j["bias"], "bias");
  const json w = required<json>(j, "W");
  if (kernel.kind == nonlin::KernelKind::SoftmaxAttention) {
    Eigen::MatrixXd wm = w.is_number() ? Eigen::MatrixXd::Identity(kernel.A.rows(), kernel.A.rows()) * w.get<double>()
                                       : matrix_from_json(w, "W");
    return nonlin::NonlinearIntegralOperator(grid, std::move(wm), std::move(kernel), std::move(bias));
  }
  Eigen::VectorXd wv;
  if (w.is_number()) {
    wv = Eigen::VectorXd::Constant(grid->M, w.get<double>());
  } else {
    wv.resize(static_cast<Eigen::Index>(w.size()));
    for (std::size_t i = 0; i < w.size(); ++i) wv(static_cast<Eigen::Index>(i)) = w[i].get<double>();
  }
  return nonlin::NonlinearIntegralOperator(grid, std::move(wv), std::move(kernel), std::move(bias));
}

std::string grid_function_csv(const funcspace::GridFunction& f) {
  std::string out = "x";
  for (int c = 0; c < f.channels(); ++c) out += ",ch" + std::to_string(c);
  out += "\n";
  for (int i = 0; i < f.size(); ++i) {
    out += format_double(f.grid->nodes[i]);
    for (int c = 0; c < f.channels(); ++c) out += "," + format_double(f.values(c, i));
    out += "\n";
  }
  return out;
}

void write_grid_function_csv(const fs::path& path, const funcspace::GridFunction& f) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError(kModule, "cannot write " + path.string());
  out << grid_function_csv(f);
}

funcspace::GridFunction read_grid_function_csv(const fs::path& path, funcspace::GridPtr grid) {
  std::ifstream in(path);
  if (!in) throw FormatError(kModule, "cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw FormatError(kModule, path.string() + ": empty file");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  const auto header = split(line, ',');
  if (header.size() < 2 || header[0] != "x") throw FormatError(kModule, path.string() + ": header must be x,ch0,...");
  const int channels = static_cast<int>(header.size()) - 1;
  std::vector<double> xs;
  std::vector<std::vector<double>> rows;
  int lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto cells = split(line, ',');
    if (static_cast<int>(cells.size()) != channels + 1)
      throw FormatError(kModule, path.string() + ":" + std::to_string(lineno) + ": wrong column count");
    xs.push_back(parse_double(cells[0], path, lineno));
    std::vector<double> r;
    for (int c = 0; c < channels; ++c) r.push_back(parse_double(cells[c + 1], path, lineno));
    rows.push_back(std::move(r));
  }
  const int M = static_cast<int>(xs.size());
  if (M < 2) throw FormatError(kModule, path.string() + ": need at least two rows");
  if (!grid) grid = funcspace::make_grid(xs.front(), xs.back(), M);
  if (grid->M != M) throw DimensionError(kModule, path.string() + ": row count does not match the grid");
  const double tol = 1e-9 * std::max(1.0, grid->length());
  for (int i = 0; i < M; ++i)
    if (std::abs(xs[i] - grid->nodes[i]) > tol)
      throw DimensionError(kModule, path.string() + ": x column is not the expected uniform grid");
  Eigen::MatrixXd values(channels, M);
  for (int i = 0; i < M; ++i)
    for (int c = 0; c < channels; ++c) values(c, i) = rows[i][c];
  return funcspace::GridFunction(grid, std::move(values));
}

std::string trace_csv(const nonlin::InversionTrace& trace) {
  std::string out = "iteration,residual_L2,residual_H1,ratio\n";
  for (std::size_t i = 0; i < trace.residual_l2.size(); ++i) {
    out += std::to_string(i + 1) + "," + format_double(trace.residual_l2[i]) + "," +
           format_double(i < trace.residual_h1.size() ? trace.residual_h1[i] : std::nan("")) + "," +
           format_double(i < trace.ratios.size() ? trace.ratios[i] : std::nan("")) + "\n";
  }
  return out;
}

void write_trace_csv(const fs::path& path, const nonlin::InversionTrace& trace) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError(kModule, "cannot write " + path.string());
  out << trace_csv(trace);
}

json to_json(const atlas::AtlasConstants& c) {
  return json{{"C_S", c.C_S}, {"R2", c.R2},   {"k_C2", c.k_C2}, {"k_C3", c.k_C3},
              {"C_L", c.C_L}, {"C_B", c.C_B}, {"C_A", c.C_A},   {"C_0", c.C_0},
              {"C_H", c.C_H}, {"r", c.r},     {"eps0", c.eps0}, {"eps0_bound", c.eps0_bound},
              {"declared_bounds", c.declared_bounds}};
}

void save_atlas(const fs::path& dir, const atlas::Atlas& a) {
  fs::create_directories(dir);
  json anchors = json::array();
  for (std::size_t j = 0; j < a.anchors.size(); ++j) {
    char name[32];
    std::snprintf(name, sizeof name, "anchor_%04zu.csv", j);
    write_grid_function_csv(dir / name, a.anchors[j].v);
    anchors.push_back(name);
  }
  json cells = json::array();
  for (const auto& [key, j] : a.cell_map) cells.push_back(json{{"key", key}, {"anchor", j}});
  json doc{{"anchors", std::move(anchors)},
           {"probe_indices", a.probe_indices},
           {"eps1", a.eps1},
           {"cell_map", std::move(cells)},
           {"constants", to_json(a.constants)},
           {"warnings", a.warnings}};
  write_json(dir / "atlas.json", doc);
}

atlas::Atlas load_atlas(const fs::path& dir, const nonlin::NonlinearIntegralOperator& F) {
  const json doc = read_json(dir / "atlas.json");
  std::vector<funcspace::GridFunction> inputs;
  for (const auto& name : required<json>(doc, "anchors"))
    inputs.push_back(read_grid_function_csv(dir / name.get<std::string>(), F.grid()));
  std::map<atlas::CellKey, int> cell_map;
  for (const auto& e : required<json>(doc, "cell_map"))
    cell_map[required<atlas::CellKey>(e, "key")] = required<int>(e, "anchor");
  atlas::Atlas a = atlas::rebuild_atlas(F, inputs, required<std::vector<int>>(doc, "probe_indices"),
                                        required<double>(doc, "eps1"), std::move(cell_map));
  if (doc.contains("warnings")) a.warnings = doc["warnings"].get<std::vector<std::string>>();
  return a;
}

}  // namespace injop::io
