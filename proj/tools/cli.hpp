#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace injop::cli {

enum class Command { Certify, Lift, Invert, Truncate, Demo };

inline constexpr int kExitOk = 0;
inline constexpr int kExitError = 1;
inline constexpr int kExitNegative = 2;  // counterexample found or iteration diverged
inline constexpr int kExitUsage = 64;

struct RunConfig {
  Command command = Command::Certify;
  std::filesystem::path net;
  std::filesystem::path op;
  std::filesystem::path target;
  std::filesystem::path anchors;
  std::filesystem::path out_dir = ".";
  std::string mode = "relu";      // relu | bijective
  std::string method = "banach";  // banach | atlas
  std::string demo;               // demo name
  int trials = 1000;
  std::uint64_t seed = 0;
  double tol = 1e-10;
  int grid_size = 512;
  int rank = 0;  // 0: command default
  double alpha = 0.1;
};

struct ParseResult {
  std::optional<RunConfig> config;
  int exit_code = kExitOk;  // meaningful when config is empty
  std::string message;      // usage or help text
};

/// Repeated flags: the last occurrence wins. Paths are made absolute.
ParseResult parse_config(const std::vector<std::string>& args);

/// Runs one command, writing report.json / trace.csv / result.csv under out_dir.
int run(const RunConfig& config);

}  // namespace injop::cli
