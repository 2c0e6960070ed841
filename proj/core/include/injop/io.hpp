#pragma once

// File formats: network, report, operator and atlas JSON; grid function and
// trace CSV. JSON objects keep insertion order so output is reproducible.

#include <filesystem>
#include <string>

#include <json.hpp>

#include "injop/atlas.hpp"
#include "injop/certify.hpp"
#include "injop/finite_rank.hpp"
#include "injop/nonlin.hpp"
#include "injop/reduce.hpp"

namespace injop::io {

using json = nlohmann::ordered_json;
namespace fs = std::filesystem;

json read_json(const fs::path& path);
/// Two-space indent, doubles at 17 significant digits, non-finite values as null.
void write_json(const fs::path& path, const json& doc);
std::string dump(const json& doc);

json to_json(const funcspace::BasisSpec& basis);
funcspace::BasisSpec basis_from_json(const json& j);

json to_json(const finite_rank::FiniteRankNetwork& net);
finite_rank::FiniteRankNetwork network_from_json(const json& j);

/// Provenance of a reduction, stored under "meta" of the lifted network.
json reduction_meta(const reduce::ReductionMap& map);
/// The lifted network G (reduction folded into its last layer) with a "meta" block.
json to_json(const reduce::LiftResult& lift);

json to_json(const certify::CertReport& report);

json to_json(const nonlin::BivariateField& field);
nonlin::BivariateField field_from_json(const json& j);
json to_json(const nonlin::NonlinearKernel& kernel);
nonlin::NonlinearKernel kernel_from_json(const json& j);

/// { "grid": {a, b, M}, "W": number | [M numbers] | [[d x d]], "bias"?: [[...]], "kernel": {...} }
json to_json(const nonlin::NonlinearIntegralOperator& F);
nonlin::NonlinearIntegralOperator operator_from_json(const json& j);

/// Header `x,ch0,ch1,...`, one row per node, 17 significant digits.
void write_grid_function_csv(const fs::path& path, const funcspace::GridFunction& f);
std::string grid_function_csv(const funcspace::GridFunction& f);
/// Reads a grid function; the grid is rebuilt from the x column, or checked against `grid` when given.
funcspace::GridFunction read_grid_function_csv(const fs::path& path, funcspace::GridPtr grid = nullptr);

/// Columns iteration, residual_L2, residual_H1, ratio.
void write_trace_csv(const fs::path& path, const nonlin::InversionTrace& trace);
std::string trace_csv(const nonlin::InversionTrace& trace);

json to_json(const atlas::AtlasConstants& c);
/// Writes atlas.json plus one CSV per anchor preimage into dir.
void save_atlas(const fs::path& dir, const atlas::Atlas& atlas);
/// Loads atlas.json from dir and recomputes the anchor factorizations.
atlas::Atlas load_atlas(const fs::path& dir, const nonlin::NonlinearIntegralOperator& F);

/// printf("%.17g").
std::string format_double(double v);

}  // namespace injop::io
