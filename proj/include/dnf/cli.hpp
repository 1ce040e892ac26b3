#pragma once

// Command-line front end: `run`, `reference` and `baseline` subcommands,
// plus the writers and loaders for every file they produce.

#include "dnf/driver.hpp"

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

namespace dnf {

constexpr int kExitOk = 0;
constexpr int kExitInvalidConfig = 1;
constexpr int kExitRuntimeFailure = 2;

/// Default output directory when --out is not given.
constexpr const char* kOutDirEnv = "DNF_OUT_DIR";

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);
int run_cli(int argc, char** argv);

/// Direct Monte Carlo (reference) or LHS-surrogate (baseline) estimate as written to disk.
struct EstimateRecord {
  std::string kind;  // "reference" or "baseline"
  std::string problem;
  std::size_t n = 0;      // MC samples
  std::size_t n_max = 0;  // limit-state evaluations for the baseline, 0 for a reference
  std::uint64_t seed = 0;
  McEstimate estimate;
};

nlohmann::json to_json(const EstimateRecord& r);
EstimateRecord estimate_record_from_json(const nlohmann::json& j);

/// Surrogate values on a res x res grid over the first two box coordinates;
/// any further coordinates are held at the box centre.
struct GridSample {
  double x1 = 0.0;
  double x2 = 0.0;
  double value = 0.0;
};

std::vector<GridSample> surrogate_grid(const SurrogateModel& surrogate, const Box& box, int res);
void write_surrogate_grid_csv(std::ostream& os, const std::vector<GridSample>& grid);
std::vector<GridSample> read_surrogate_grid_csv(std::istream& is);

/// trace.json: {"config": ..., "trace": ...}.
struct TraceFile {
  nlohmann::json config;
  RunTrace trace;
};

TraceFile read_trace_file(const std::filesystem::path& path);
nlohmann::json read_json_file(const std::filesystem::path& path);

}  // namespace dnf
