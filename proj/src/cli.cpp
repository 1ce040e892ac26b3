#include "dnf/cli.hpp"

#include "dnf/posterior.hpp"
#include "dnf/random.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <sstream>

namespace dnf {

namespace fs = std::filesystem;

// ---------------------------------------------------------------- files

nlohmann::json to_json(const EstimateRecord& r) {
  return {{"format", "dnf-estimate"},
          {"version", 1},
          {"kind", r.kind},
          {"problem", r.problem},
          {"n", r.n},
          {"n_max", r.n_max},
          {"seed", r.seed},
          {"estimate", r.estimate.estimate},
          {"std_error", r.estimate.std_error},
          {"failures", r.estimate.failures},
          {"samples", r.estimate.samples}};
}

EstimateRecord estimate_record_from_json(const nlohmann::json& j) {
  if (j.value("format", "") != "dnf-estimate") throw std::invalid_argument("not an estimate document");
  EstimateRecord r;
  r.kind = j.at("kind").get<std::string>();
  r.problem = j.at("problem").get<std::string>();
  r.n = j.at("n").get<std::size_t>();
  r.n_max = j.at("n_max").get<std::size_t>();
  r.seed = j.at("seed").get<std::uint64_t>();
  r.estimate.estimate = j.at("estimate").get<double>();
  r.estimate.std_error = j.at("std_error").get<double>();
  r.estimate.failures = j.at("failures").get<std::size_t>();
  r.estimate.samples = j.at("samples").get<std::size_t>();
  return r;
}

std::vector<GridSample> surrogate_grid(const SurrogateModel& surrogate, const Box& box, int res) {
  if (res < 2) throw std::invalid_argument("grid-res must be at least 2");
  if (box.dim() < 2) throw std::invalid_argument("grid export needs at least two dimensions");
  const Eigen::VectorXd centre = 0.5 * (box.lower + box.upper);
  Eigen::MatrixXd x(box.dim(), static_cast<Eigen::Index>(res) * res);
  std::vector<GridSample> out(static_cast<std::size_t>(res) * static_cast<std::size_t>(res));
  for (int i = 0; i < res; ++i) {
    for (int j = 0; j < res; ++j) {
      const Eigen::Index c = static_cast<Eigen::Index>(i) * res + j;
      x.col(c) = centre;
      x(0, c) = box.lower(0) + (box.upper(0) - box.lower(0)) * i / (res - 1);
      x(1, c) = box.lower(1) + (box.upper(1) - box.lower(1)) * j / (res - 1);
    }
  }
  const Eigen::RowVectorXd v = surrogate.evaluate_batch(x);
  for (Eigen::Index c = 0; c < x.cols(); ++c) out[static_cast<std::size_t>(c)] = {x(0, c), x(1, c), v(c)};
  return out;
}

void write_surrogate_grid_csv(std::ostream& os, const std::vector<GridSample>& grid) {
  os << "x1,x2,surrogate\n";
  for (const auto& g : grid) os << format_double(g.x1) << ',' << format_double(g.x2) << ',' << format_double(g.value) << '\n';
}

std::vector<GridSample> read_surrogate_grid_csv(std::istream& is) {
  std::string line;
  if (!std::getline(is, line) || line != "x1,x2,surrogate") throw std::invalid_argument("grid CSV header mismatch");
  std::vector<GridSample> out;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::istringstream ss(line);
    std::string a, b, c;
    if (!std::getline(ss, a, ',') || !std::getline(ss, b, ',') || !std::getline(ss, c)) {
      throw std::invalid_argument("grid CSV row needs three fields");
    }
    out.push_back({parse_double(a), parse_double(b), parse_double(c)});
  }
  return out;
}

nlohmann::json read_json_file(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  return nlohmann::json::parse(in);
}

TraceFile read_trace_file(const fs::path& path) {
  const nlohmann::json j = read_json_file(path);
  return {j.at("config"), trace_from_json(j.at("trace"))};
}

namespace {

void write_file(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  out << text;
  out.close();
  if (!out) throw std::runtime_error("cannot write " + path.string());
}

template <class Fn>
void write_with(const fs::path& path, Fn&& fn) {
  std::ostringstream ss;
  fn(ss);
  write_file(path, ss.str());
}

// ---------------------------------------------------------------- options

struct CommonOptions {
  std::string problem;
  std::uint64_t seed = 1;
  std::size_t mc_n = 100000;
  std::string out;
  int darcy_grid = 31;
  std::string config;
};

struct RunOptions {
  std::string criterion = "nfbd-ag";
  std::size_t n0 = 0, nd = 0, nmax = 0;
  double eps0 = 0.0;
  double tolerance = 0.10;
  std::size_t min_iterations = 3;
  int grid_res = 0;
  std::string initial_design;
  std::size_t proposal_cap = kDefaultProposalCap;
  double lambda_fraction = kLambdaFraction;
  int surrogate_epochs = TrainConfig{}.epochs;
  int flow_steps = FlowTrainConfig{}.steps;
  int flow_batch = FlowTrainConfig{}.batch;
  int flow_layers = FlowTrainConfig{}.layers;
  int flow_width = FlowTrainConfig{}.hidden.front();
  double anneal_fraction = FlowTrainConfig{}.anneal_fraction;
};

void add_common(CLI::App* sub, CommonOptions& o, bool with_mc) {
  sub->add_option("--problem", o.problem, "four-branch | iso | darcy")->required();
  sub->add_option("--seed", o.seed, "master seed")->capture_default_str();
  if (with_mc) sub->add_option("--mc-n", o.mc_n, "Monte Carlo sample count")->capture_default_str();
  sub->add_option("--out", o.out, std::string("output directory (default: $") + kOutDirEnv + " or ./dnf-out)");
  sub->add_option("--darcy-grid", o.darcy_grid, "interior nodes per axis for the Darcy solver")->capture_default_str();
  sub->add_option("--config", o.config, "INI/TOML file with the same keys as the long flags; flags win");
}

bool has_flag(const std::vector<std::string>& tokens, const std::string& flag) {
  for (const auto& t : tokens)
    if (t == flag || t.starts_with(flag + "=")) return true;
  return false;
}

// CLI11 only reads config files for the top-level app, so a subcommand's file
// is expanded into flags before parsing. Flags already on the command line win.
std::vector<std::string> expand_config(CLI::App& app, std::vector<std::string> tokens) {
  if (tokens.empty()) return tokens;
  CLI::App* sub = app.get_subcommand_no_throw(tokens.front());
  if (sub == nullptr) return tokens;
  std::string path;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (tokens[i] == "--config" && i + 1 < tokens.size()) path = tokens[i + 1];
    if (tokens[i].starts_with("--config=")) path = tokens[i].substr(9);
  }
  if (path.empty()) return tokens;
  if (!fs::is_regular_file(path)) throw CLI::FileError::Missing(path);
  for (const CLI::ConfigItem& item : CLI::ConfigTOML().from_file(path)) {
    if (item.name == "++" || item.name == "--") continue;  // section markers
    const bool placed = item.parents.empty() || (item.parents.size() == 1 && item.parents.front() == sub->get_name());
    const std::string flag = "--" + item.name;
    if (!placed || item.name == "config" || sub->get_option_no_throw(flag) == nullptr) {
      throw CLI::ConfigError::Extras(item.fullname());
    }
    if (has_flag(tokens, flag)) continue;
    tokens.push_back(flag);
    tokens.insert(tokens.end(), item.inputs.begin(), item.inputs.end());
  }
  return tokens;
}

fs::path output_dir(const CommonOptions& o) {
  if (!o.out.empty()) return o.out;
  if (const char* env = std::getenv(kOutDirEnv); env && *env) return env;
  return "dnf-out";
}

fs::path prepare_output(const CommonOptions& o) {
  const fs::path dir = output_dir(o);
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) throw std::runtime_error("cannot create output directory " + dir.string());
  return dir;
}

Problem problem_from(const CommonOptions& o) {
  ProblemOptions po;
  if (o.darcy_grid < 8) throw std::invalid_argument("darcy-grid must be at least 8");
  po.darcy_grid = o.darcy_grid;
  return make_problem(o.problem, po);
}

DnfConfig config_from(const CLI::App& sub, const RunOptions& r, const CommonOptions& o) {
  auto set = [&](const char* flag) { return sub.get_option(flag)->count() > 0; };
  DnfConfig c = default_config(o.problem);
  c.criterion = parse_criterion(r.criterion);
  if (set("--n0")) c.n0 = r.n0;
  if (set("--nd")) c.n_d = r.nd;
  if (set("--nmax")) c.n_max = r.nmax;
  if (set("--eps0")) c.eps0 = r.eps0;
  if (set("--initial-design")) c.initial_design = parse_initial_design(r.initial_design);
  c.tolerance = r.tolerance;
  c.min_iterations = r.min_iterations;
  c.mc_samples = o.mc_n;
  c.lambda_samples = std::min<std::size_t>(c.lambda_samples, std::max<std::size_t>(o.mc_n, 100));
  c.lambda_fraction = r.lambda_fraction;
  c.proposal_cap = r.proposal_cap;
  c.seed = o.seed;
  c.surrogate.epochs = r.surrogate_epochs;
  c.flow.steps = r.flow_steps;
  c.flow.batch = r.flow_batch;
  c.flow.layers = r.flow_layers;
  c.flow.hidden = {r.flow_width, r.flow_width};
  c.flow.anneal_fraction = r.anneal_fraction;
  if (c.mc_samples < c.lambda_samples) throw std::invalid_argument("mc-n must be at least 100");
  c.validate();
  return c;
}

std::string sci(double v) {
  std::ostringstream ss;
  ss.precision(4);
  ss << std::scientific << v;
  return ss.str();
}

int cmd_run(const CLI::App& sub, const CommonOptions& o, const RunOptions& r, std::ostream& out, std::ostream& err) {
  DnfConfig config;
  std::optional<Problem> problem;
  try {
    problem.emplace(problem_from(o));
    config = config_from(sub, r, o);
    if (r.grid_res != 0 && (r.grid_res < 2 || problem->dim() < 2)) {
      throw std::invalid_argument("grid-res must be 0 (off) or at least 2");
    }
  } catch (const std::invalid_argument& e) {
    err << "invalid configuration: " << e.what() << '\n';
    return kExitInvalidConfig;
  }

  nlohmann::json echo = to_json(config);
  echo["problem"] = problem->name();
  echo["grid_res"] = r.grid_res;
  echo["darcy_grid"] = o.darcy_grid;

  fs::path dir;
  try {
    dir = prepare_output(o);
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitRuntimeFailure;
  }

  auto write_trace = [&](const RunTrace& trace) {
    write_file(dir / "trace.json", nlohmann::json{{"config", echo}, {"trace", to_json(trace)}}.dump(2) + "\n");
    write_with(dir / "trace.csv", [&](std::ostream& os) { write_trace_csv(os, trace); });
    write_with(dir / "designs.csv", [&](std::ostream& os) { write_designs_csv(os, trace, problem->dim()); });
  };

  try {
    out << problem->name() << " / " << to_string(config.criterion) << ": N0=" << config.n0 << " ND=" << config.n_d
        << " Nmax=" << config.n_max << " seed=" << config.seed << '\n';
    const DnfResult result = run_dnf_full(*problem, config, [&](const IterationRecord& it) {
      out << "  t=" << it.t << " calls=" << it.cumulative_calls << " p=" << sci(it.p_hat)
          << " rel=" << (it.rel_change ? sci(*it.rel_change) : std::string("-")) << '\n';
      out.flush();
    });
    write_trace(result.trace);
    write_file(dir / "surrogate.json", to_json(result.surrogate).dump() + "\n");
    if (result.flow) write_file(dir / "flow.json", to_json(*result.flow).dump() + "\n");
    if (r.grid_res > 0) {
      const auto grid = surrogate_grid(result.surrogate, problem->box(), r.grid_res);
      write_with(dir / "grid.csv", [&](std::ostream& os) { write_surrogate_grid_csv(os, grid); });
    }
    out << "p_hat = " << sci(result.trace.final_estimate) << " after " << result.trace.total_calls << " calls ("
        << to_string(result.trace.stop_reason) << ")\n";
    return kExitOk;
  } catch (const DnfAborted& e) {
    err << "run failed: " << e.what() << '\n';
    try {
      write_trace(e.trace);
    } catch (const std::exception& w) {
      err << "error: " << w.what() << '\n';
    }
    return kExitRuntimeFailure;
  } catch (const std::exception& e) {
    err << "run failed: " << e.what() << '\n';
    return kExitRuntimeFailure;
  }
}

int report_estimate(const EstimateRecord& rec, const CommonOptions& o, const std::string& file,
                    std::ostream& out, std::ostream& err) {
  try {
    const fs::path dir = prepare_output(o);
    write_file(dir / file, to_json(rec).dump(2) + "\n");
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitRuntimeFailure;
  }
  out << rec.problem << ' ' << rec.kind << ": p = " << sci(rec.estimate.estimate) << " +/- "
      << sci(rec.estimate.std_error) << " (n=" << rec.estimate.samples << ", failures=" << rec.estimate.failures
      << ")\n";
  return kExitOk;
}

int cmd_reference(const CommonOptions& o, std::ostream& out, std::ostream& err) {
  std::optional<Problem> problem;
  try {
    if (o.mc_n < 1) throw std::invalid_argument("mc-n must be positive");
    problem.emplace(problem_from(o));
  } catch (const std::invalid_argument& e) {
    err << "invalid configuration: " << e.what() << '\n';
    return kExitInvalidConfig;
  }
  EstimateRecord rec{"reference", problem->name(), o.mc_n, 0, o.seed, {}};
  try {
    rec.estimate = mc_failure_probability([&](std::span<const double> x) { return problem->g(x); },
                                          problem->density().sample, o.mc_n, o.seed);
  } catch (const std::exception& e) {
    err << "reference failed: " << e.what() << '\n';
    return kExitRuntimeFailure;
  }
  return report_estimate(rec, o, "reference.json", out, err);
}

int cmd_baseline(const CommonOptions& o, std::size_t n_max, int epochs, std::ostream& out, std::ostream& err) {
  std::optional<Problem> problem;
  TrainConfig train;
  try {
    if (o.mc_n < 1) throw std::invalid_argument("mc-n must be positive");
    if (n_max < 2) throw std::invalid_argument("nmax must be at least 2");
    problem.emplace(problem_from(o));
    train.epochs = epochs;
    train.validate();
  } catch (const std::invalid_argument& e) {
    err << "invalid configuration: " << e.what() << '\n';
    return kExitInvalidConfig;
  }
  EstimateRecord rec{"baseline", problem->name(), o.mc_n, n_max, o.seed, {}};
  try {
    BaselineResult b = lhs_baseline(*problem, n_max, o.mc_n, o.seed, train);
    rec.estimate = b.estimate;
    const fs::path dir = prepare_output(o);
    write_file(dir / "baseline_surrogate.json", to_json(b.surrogate).dump() + "\n");
  } catch (const std::exception& e) {
    err << "baseline failed: " << e.what() << '\n';
    return kExitRuntimeFailure;
  }
  return report_estimate(rec, o, "baseline.json", out, err);
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Reliability analysis with flow-based sequential design"};
  app.name("dnf");
  app.require_subcommand(1);

  CommonOptions run_common, ref_common, base_common;
  RunOptions run;
  std::size_t base_nmax = 95;
  int base_epochs = 3000;

  CLI::App* run_cmd = app.add_subcommand("run", "sequential design run with surrogate and flow");
  add_common(run_cmd, run_common, true);
  run_cmd->add_option("--criterion", run.criterion, "nfbd | nfbd-fg | nfbd-ag")->capture_default_str();
  run_cmd->add_option("--n0", run.n0, "initial design size (default: 25 four-branch, 5 iso/darcy)");
  run_cmd->add_option("--nd", run.nd, "designs per iteration (default: 2 four-branch, 1 iso, 5 darcy)");
  run_cmd->add_option("--nmax", run.nmax, "limit-state budget (default: 95 four-branch, 45 iso, 70 darcy)");
  run_cmd->add_option("--eps0", run.eps0, "separation threshold (default: 0.5, 0.25 for darcy)");
  run_cmd->add_option("--tolerance", run.tolerance, "relative-change stop tolerance, 0 disables")
      ->capture_default_str();
  run_cmd->add_option("--min-iterations", run.min_iterations, "earliest iteration the stop test may fire")
      ->capture_default_str();
  run_cmd->add_option("--grid-res", run.grid_res, "write grid.csv at this resolution, 0 for none")
      ->capture_default_str();
  run_cmd->add_option("--initial-design", run.initial_design, "grid | lhs (default: grid, lhs for darcy)");
  run_cmd->add_option("--proposal-cap", run.proposal_cap, "flow draws allowed per batch")->capture_default_str();
  run_cmd->add_option("--lambda-fraction", run.lambda_fraction, "posterior temperature as a fraction of std G")
      ->capture_default_str();
  run_cmd->add_option("--surrogate-epochs", run.surrogate_epochs, "Adam epochs per surrogate fit")
      ->capture_default_str();
  run_cmd->add_option("--flow-steps", run.flow_steps, "Adam steps per flow fit")->capture_default_str();
  run_cmd->add_option("--flow-batch", run.flow_batch, "base samples per flow step")->capture_default_str();
  run_cmd->add_option("--flow-layers", run.flow_layers, "coupling layers")->capture_default_str();
  run_cmd->add_option("--flow-width", run.flow_width, "units in each of the two conditioner hidden layers")
      ->capture_default_str();
  run_cmd->add_option("--anneal-fraction", run.anneal_fraction, "fraction of flow steps with a tempered target")
      ->capture_default_str();

  CLI::App* ref_cmd = app.add_subcommand("reference", "direct Monte Carlo against the true limit state");
  add_common(ref_cmd, ref_common, true);

  CLI::App* base_cmd = app.add_subcommand("baseline", "surrogate from one LHS design of nmax points");
  add_common(base_cmd, base_common, true);
  base_cmd->add_option("--nmax", base_nmax, "limit-state budget")->capture_default_str();
  base_cmd->add_option("--surrogate-epochs", base_epochs, "Adam epochs for the surrogate fit")->capture_default_str();

  try {
    std::vector<std::string> args = expand_config(app, {argv + 1, argv + argc});
    std::reverse(args.begin(), args.end());
    app.parse(args);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << e.what() << "\n\n";
    const auto subs = app.get_subcommands();
    err << (subs.empty() ? app.help() : subs.front()->help());
    return kExitInvalidConfig;
  }

  if (run_cmd->parsed()) return cmd_run(*run_cmd, run_common, run, out, err);
  if (ref_cmd->parsed()) return cmd_reference(ref_common, out, err);
  return cmd_baseline(base_common, base_nmax, base_epochs, out, err);
}

int run_cli(int argc, char** argv) { return run_cli(argc, argv, std::cout, std::cerr); }

}  // namespace dnf
