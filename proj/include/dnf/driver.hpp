#pragma once

// The sequential design loop: train surrogate, fit a flow to the limit-state
// posterior, pick a batch of designs, evaluate, retrain, re-estimate, stop.

#include "dnf/designer.hpp"
#include "dnf/flow.hpp"
#include "dnf/mc.hpp"
#include "dnf/mlp.hpp"
#include "dnf/problems.hpp"

#include <iosfwd>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace dnf {

enum class InitialDesign { Grid, Lhs };
std::string to_string(InitialDesign m);
InitialDesign parse_initial_design(const std::string& s);

struct DnfConfig {
  std::size_t n_max = 95;
  std::size_t n0 = 25;
  std::size_t n_d = 2;
  double eps0 = 0.5;
  Criterion criterion = Criterion::NfbdAg;
  /// Stop when the relative change of the estimate drops below this. 0 never stops early.
  double tolerance = 0.10;
  std::size_t min_iterations = 3;
  std::size_t mc_samples = 100000;
  double lambda_fraction = 0.2;  // lambda = fraction * std of G under the prior
  std::size_t lambda_samples = 10000;
  std::size_t proposal_cap = kDefaultProposalCap;
  std::uint64_t seed = 1;
  InitialDesign initial_design = InitialDesign::Grid;
  TrainConfig surrogate{};
  FlowTrainConfig flow{};

  void validate() const;
};

/// Budget, batch size, eps0 and initial design used for each built-in problem.
DnfConfig default_config(const std::string& problem);

nlohmann::json to_json(const DnfConfig& c);
DnfConfig dnf_config_from_json(const nlohmann::json& j);

struct IterationCount {
  std::size_t t_max = 0;
  std::size_t last_batch = 0;
};

/// t_max = ceil((N_max - N0) / N_D); the last batch takes the remainder.
IterationCount iteration_count(std::size_t n_max, std::size_t n0, std::size_t n_d);

/// Grid: a ceil(N0^(1/d))-per-axis lattice over the box, thinned to N0 points
/// by taking evenly spaced lattice indices. LHS: lhs_sample over the box.
/// Every point is evaluated through the problem's metered limit state.
Dataset initial_design(const Problem& problem, std::size_t n0, InitialDesign mode, std::uint64_t seed);

/// Lattice points only (no evaluation).
std::vector<std::vector<double>> grid_design_points(const Box& box, std::size_t n0);

struct DesignRecord {
  std::vector<double> x;
  double y = 0.0;
  std::size_t iteration = 0;  // 0 for the initial design
  std::optional<double> threshold;
};

struct IterationRecord {
  std::size_t t = 0;
  std::size_t requested = 0;
  std::size_t cumulative_calls = 0;
  std::vector<DesignRecord> designs;
  double p_hat = 0.0;
  std::size_t failures = 0;
  std::optional<double> rel_change;
  double lambda = 0.0;
  bool lambda_degenerate = false;
  double flow_objective_start = 0.0;
  double flow_objective_end = 0.0;
  double surrogate_loss = 0.0;
  std::size_t proposals = 0;
  bool shortfall = false;
};

enum class StopReason { ToleranceMet, BudgetExhausted, Failed };
std::string to_string(StopReason r);
StopReason parse_stop_reason(const std::string& s);

struct RunTrace {
  std::string problem;
  Criterion criterion = Criterion::NfbdAg;
  std::vector<DesignRecord> initial_designs;
  double initial_estimate = 0.0;
  std::vector<IterationRecord> iterations;
  double final_estimate = 0.0;
  std::size_t total_calls = 0;
  StopReason stop_reason = StopReason::BudgetExhausted;
  std::string failure;  // non-empty when stop_reason == Failed

  std::vector<DesignRecord> all_designs() const;
};

struct DnfResult {
  RunTrace trace;
  SurrogateModel surrogate;
  std::optional<NormalizingFlow> flow;  // last flow fitted, if any iteration ran
};

/// Thrown when training diverges mid-run; carries the trace up to the failure.
class DnfAborted : public std::runtime_error {
 public:
  DnfAborted(const std::string& what, RunTrace partial) : std::runtime_error(what), trace(std::move(partial)) {}
  RunTrace trace;
};

/// Optional per-iteration callback, e.g. for progress output.
using IterationObserver = std::function<void(const IterationRecord&)>;

DnfResult run_dnf_full(const Problem& problem, const DnfConfig& config, const IterationObserver& observer = {});
RunTrace run_dnf(const Problem& problem, const DnfConfig& config);

/// Surrogate-based MC estimate on a fixed sample set (d x n).
McEstimate surrogate_estimate(const SurrogateModel& surrogate, const Eigen::MatrixXd& samples);

struct BaselineResult {
  McEstimate estimate;
  SurrogateModel surrogate;
};

/// Surrogate trained once on N_max LHS points over the box, then MC with n_mc prior samples.
BaselineResult lhs_baseline(const Problem& problem, std::size_t n_max, std::size_t n_mc, std::uint64_t seed,
                            const TrainConfig& train = {});

// Serialization.
nlohmann::json to_json(const RunTrace& trace);
RunTrace trace_from_json(const nlohmann::json& j);
void write_trace_csv(std::ostream& os, const RunTrace& trace);
struct TraceCsvRow {
  std::size_t iteration = 0;
  std::size_t cumulative_calls = 0;
  double p_hat = 0.0;
  std::optional<double> rel_change;
  std::string criterion;
};
std::vector<TraceCsvRow> read_trace_csv(std::istream& is);
void write_designs_csv(std::ostream& os, const RunTrace& trace, int dim);
std::vector<DesignRecord> read_designs_csv(std::istream& is);

/// Shortest round-trip decimal, locale independent.
std::string format_double(double v);
double parse_double(const std::string& s);

}  // namespace dnf
