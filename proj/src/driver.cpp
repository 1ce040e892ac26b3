#include "dnf/driver.hpp"

#include "dnf/posterior.hpp"
#include "dnf/random.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <istream>
#include <limits>
#include <ostream>
#include <sstream>

namespace dnf {

namespace {

enum Stage : std::uint64_t { kSurrogate = 1, kFlow = 2, kSelect = 3, kMc = 4, kInitial = 5 };

std::vector<double> column(const Eigen::MatrixXd& m, Eigen::Index j) {
  return {m.col(j).data(), m.col(j).data() + m.rows()};
}

}  // namespace

std::string to_string(InitialDesign m) { return m == InitialDesign::Grid ? "grid" : "lhs"; }

InitialDesign parse_initial_design(const std::string& s) {
  if (s == "grid") return InitialDesign::Grid;
  if (s == "lhs" || s == "LHS") return InitialDesign::Lhs;
  throw std::invalid_argument("unknown initial design mode '" + s + "' (expected grid or lhs)");
}

std::string to_string(StopReason r) {
  switch (r) {
    case StopReason::ToleranceMet: return "tolerance-met";
    case StopReason::BudgetExhausted: return "budget-exhausted";
    case StopReason::Failed: return "failed";
  }
  return "?";
}

StopReason parse_stop_reason(const std::string& s) {
  if (s == "tolerance-met") return StopReason::ToleranceMet;
  if (s == "budget-exhausted") return StopReason::BudgetExhausted;
  if (s == "failed") return StopReason::Failed;
  throw std::invalid_argument("unknown stop reason '" + s + "'");
}

void DnfConfig::validate() const {
  if (n0 < 2) throw std::invalid_argument("n0 must be at least 2");
  if (n_d < 1 || n_max < n0 + n_d) throw std::invalid_argument("need 1 <= nd <= nmax - n0");
  if (!(tolerance >= 0.0)) throw std::invalid_argument("tolerance must be non-negative");
  if (criterion != Criterion::Nfbd && !(eps0 > 0.0)) throw std::invalid_argument("eps0 must be positive");
  if (mc_samples < 1) throw std::invalid_argument("mc-n must be positive");
  if (!(lambda_fraction > 0.0)) throw std::invalid_argument("lambda fraction must be positive");
  if (lambda_samples < 100) throw std::invalid_argument("lambda rule needs at least 100 samples");
  if (proposal_cap < 1) throw std::invalid_argument("proposal cap must be positive");
  surrogate.validate();
  flow.validate();
}

DnfConfig default_config(const std::string& problem) {
  DnfConfig c;
  if (problem == "darcy") {
    c.n0 = 5;
    c.n_d = 5;
    c.n_max = 70;
    c.eps0 = 0.25;
    c.initial_design = InitialDesign::Lhs;
  } else if (problem == "iso" || problem == "iso-probability") {
    c.n0 = 5;
    c.n_d = 1;
    c.n_max = 45;
  } else if (problem != "four-branch") {
    throw std::invalid_argument("unknown problem '" + problem + "'");
  }
  return c;
}

IterationCount iteration_count(std::size_t n_max, std::size_t n0, std::size_t n_d) {
  if (n_d < 1 || n_max < n0 + 1) throw std::invalid_argument("iteration_count: need nd >= 1 and nmax > n0");
  const std::size_t adaptive = n_max - n0;
  IterationCount c;
  c.t_max = (adaptive + n_d - 1) / n_d;
  c.last_batch = adaptive - (c.t_max - 1) * n_d;
  return c;
}

std::vector<std::vector<double>> grid_design_points(const Box& box, std::size_t n0) {
  if (n0 < 1) throw std::invalid_argument("grid design needs at least one point");
  const int d = box.dim();
  auto per_axis = static_cast<std::size_t>(std::ceil(std::pow(static_cast<double>(n0), 1.0 / d) - 1e-9));
  while (static_cast<double>(std::pow(static_cast<double>(per_axis), d)) < static_cast<double>(n0)) ++per_axis;
  std::size_t total = 1;
  for (int i = 0; i < d; ++i) total *= per_axis;

  auto lattice_point = [&](std::size_t idx) {
    std::vector<double> p(static_cast<std::size_t>(d));
    for (int i = d - 1; i >= 0; --i) {
      const std::size_t k = idx % per_axis;
      idx /= per_axis;
      const double frac = per_axis == 1 ? 0.5 : static_cast<double>(k) / static_cast<double>(per_axis - 1);
      p[static_cast<std::size_t>(i)] = box.lower(i) + frac * (box.upper(i) - box.lower(i));
    }
    return p;
  };

  std::vector<std::vector<double>> out;
  out.reserve(n0);
  for (std::size_t q = 0; q < n0; ++q) {
    const std::size_t idx =
        n0 == 1 ? total / 2
                : static_cast<std::size_t>(std::llround(static_cast<double>(q) * static_cast<double>(total - 1) /
                                                        static_cast<double>(n0 - 1)));
    out.push_back(lattice_point(idx));
  }
  return out;
}

Dataset initial_design(const Problem& problem, std::size_t n0, InitialDesign mode, std::uint64_t seed) {
  if (n0 < 2) throw std::invalid_argument("initial design needs at least two points");
  std::vector<std::vector<double>> pts;
  if (mode == InitialDesign::Grid) {
    pts = grid_design_points(problem.box(), n0);
  } else {
    const Eigen::MatrixXd m = lhs_sample(n0, problem.box(), seed);
    for (Eigen::Index j = 0; j < m.cols(); ++j) pts.push_back(column(m, j));
  }
  Dataset data(problem.dim());
  for (auto& p : pts) {
    if (data.contains(p)) continue;
    const double y = problem.g(p);
    data.add(std::move(p), y);
  }
  return data;
}

McEstimate surrogate_estimate(const SurrogateModel& surrogate, const Eigen::MatrixXd& samples) {
  return mc_failure_probability_batch([&](const Eigen::MatrixXd& x) { return surrogate.evaluate_batch(x); },
                                      samples);
}

std::vector<DesignRecord> RunTrace::all_designs() const {
  std::vector<DesignRecord> out = initial_designs;
  for (const auto& it : iterations) out.insert(out.end(), it.designs.begin(), it.designs.end());
  return out;
}

DnfResult run_dnf_full(const Problem& problem, const DnfConfig& config, const IterationObserver& observer) {
  config.validate();
  const std::size_t start_calls = problem.calls();
  auto calls_used = [&] { return problem.calls() - start_calls; };

  DnfResult result;
  RunTrace& trace = result.trace;
  trace.problem = problem.name();
  trace.criterion = config.criterion;

  const Eigen::MatrixXd mc_samples = problem.sample_prior(config.mc_samples, derive_seed(config.seed, {kMc}));
  const Eigen::MatrixXd lambda_samples =
      mc_samples.leftCols(static_cast<Eigen::Index>(std::min(config.lambda_samples, config.mc_samples)));
  const DesignCriterion criterion{config.criterion, config.eps0, config.proposal_cap};
  const LogPdf log_pdf = [&problem](std::span<const double> x) { return problem.log_pdf(x); };

  Dataset data = initial_design(problem, config.n0, config.initial_design, derive_seed(config.seed, {kInitial}));
  for (std::size_t i = 0; i < data.size(); ++i) trace.initial_designs.push_back({data.inputs()[i], data.outputs()[i], 0, {}});

  auto train = [&](std::size_t t) {
    TrainConfig tc = config.surrogate;
    tc.seed = derive_seed(config.seed, {t, kSurrogate});
    return train_surrogate(data, tc);
  };

  auto abort = [&](const std::exception& e) {
    trace.stop_reason = StopReason::Failed;
    trace.failure = e.what();
    trace.total_calls = calls_used();
    throw DnfAborted(e.what(), trace);
  };

  try {
    result.surrogate = train(0);
  } catch (const ad::NumericalFailure& e) {
    abort(e);
  }
  trace.initial_estimate = surrogate_estimate(result.surrogate, mc_samples).estimate;
  double previous = trace.initial_estimate;
  trace.final_estimate = previous;
  trace.stop_reason = StopReason::BudgetExhausted;

  const IterationCount count = iteration_count(config.n_max, data.size(), config.n_d);
  for (std::size_t t = 1; t <= count.t_max; ++t) {
    std::size_t n_t = t < count.t_max ? config.n_d : count.last_batch;
    n_t = std::min(n_t, config.n_max - std::min(config.n_max, calls_used()));
    if (n_t == 0) break;

    IterationRecord rec;
    rec.t = t;
    rec.requested = n_t;
    try {
      const LambdaChoice lam = default_lambda(
          [&](const Eigen::MatrixXd& x) { return result.surrogate.evaluate_batch(x); }, lambda_samples);
      rec.lambda = lam.lambda * (config.lambda_fraction / kLambdaFraction);
      rec.lambda_degenerate = lam.degenerate;
      const LimitStatePosterior posterior(result.surrogate, rec.lambda, problem.box());

      FlowTrainConfig fc = config.flow;
      fc.seed = derive_seed(config.seed, {t, kFlow});
      FlowTrainResult fit = train_flow(posterior.training_target(), problem.dim(), fc,
                                       OutputMap::for_box(problem.box().lower, problem.box().upper));
      rec.flow_objective_start = fit.initial_objective_mean();
      rec.flow_objective_end = fit.final_objective_mean();

      const DesignBatch batch = select_designs(criterion, fit.flow, data.inputs(), n_t, log_pdf, problem.box(),
                                               derive_seed(config.seed, {t, kSelect}));
      result.flow = std::move(fit.flow);
      rec.proposals = batch.proposals;
      rec.shortfall = batch.shortfall;
      for (std::size_t i = 0; i < batch.points.size(); ++i) {
        if (data.contains(batch.points[i])) continue;
        const double y = problem.g(batch.points[i]);
        data.add(batch.points[i], y);
        DesignRecord d{batch.points[i], y, t, {}};
        if (i < batch.thresholds.size() && config.criterion != Criterion::Nfbd) d.threshold = batch.thresholds[i];
        rec.designs.push_back(std::move(d));
      }
      result.surrogate = train(t);
    } catch (const ad::NumericalFailure& e) {
      abort(e);
    } catch (const std::runtime_error& e) {
      abort(e);
    }

    rec.cumulative_calls = calls_used();
    rec.surrogate_loss = result.surrogate.info.final_loss;
    const McEstimate est = surrogate_estimate(result.surrogate, mc_samples);
    rec.p_hat = est.estimate;
    rec.failures = est.failures;
    if (previous > 0.0) rec.rel_change = std::abs(est.estimate - previous) / previous;
    trace.iterations.push_back(rec);
    trace.final_estimate = est.estimate;
    if (observer) observer(trace.iterations.back());

    if (t >= config.min_iterations && rec.rel_change && *rec.rel_change < config.tolerance) {
      trace.stop_reason = StopReason::ToleranceMet;
      break;
    }
    previous = est.estimate;
  }
  trace.total_calls = calls_used();
  return result;
}

RunTrace run_dnf(const Problem& problem, const DnfConfig& config) { return run_dnf_full(problem, config).trace; }

BaselineResult lhs_baseline(const Problem& problem, std::size_t n_max, std::size_t n_mc, std::uint64_t seed,
                            const TrainConfig& train) {
  if (n_max < 2) throw std::invalid_argument("baseline needs at least two evaluations");
  if (n_mc < 1) throw std::invalid_argument("baseline needs at least one MC sample");
  Dataset data = initial_design(problem, n_max, InitialDesign::Lhs, derive_seed(seed, {kInitial}));
  TrainConfig tc = train;
  tc.seed = derive_seed(seed, {0, kSurrogate});
  BaselineResult r{{}, train_surrogate(data, tc)};
  r.estimate = surrogate_estimate(r.surrogate, problem.sample_prior(n_mc, derive_seed(seed, {kMc})));
  return r;
}

// ---------------------------------------------------------------- config JSON

nlohmann::json to_json(const DnfConfig& c) {
  return {{"n_max", c.n_max},
          {"n0", c.n0},
          {"n_d", c.n_d},
          {"eps0", c.eps0},
          {"criterion", to_string(c.criterion)},
          {"tolerance", c.tolerance},
          {"min_iterations", c.min_iterations},
          {"mc_samples", c.mc_samples},
          {"lambda_fraction", c.lambda_fraction},
          {"lambda_samples", c.lambda_samples},
          {"proposal_cap", c.proposal_cap},
          {"seed", c.seed},
          {"initial_design", to_string(c.initial_design)},
          {"surrogate",
           {{"hidden", c.surrogate.hidden},
            {"learning_rate", c.surrogate.adam.learning_rate},
            {"beta1", c.surrogate.adam.beta1},
            {"beta2", c.surrogate.adam.beta2},
            {"epsilon", c.surrogate.adam.epsilon},
            {"batch_size", c.surrogate.batch_size},
            {"epochs", c.surrogate.epochs}}},
          {"flow",
           {{"layers", c.flow.layers},
            {"hidden", c.flow.hidden},
            {"batch", c.flow.batch},
            {"steps", c.flow.steps},
            {"learning_rate", c.flow.adam.learning_rate},
            {"s_max", c.flow.s_max},
            {"anneal_fraction", c.flow.anneal_fraction},
            {"anneal_start", c.flow.anneal_start}}}};
}

DnfConfig dnf_config_from_json(const nlohmann::json& j) {
  DnfConfig c;
  c.n_max = j.at("n_max").get<std::size_t>();
  c.n0 = j.at("n0").get<std::size_t>();
  c.n_d = j.at("n_d").get<std::size_t>();
  c.eps0 = j.at("eps0").get<double>();
  c.criterion = parse_criterion(j.at("criterion").get<std::string>());
  c.tolerance = j.at("tolerance").is_null() ? std::numeric_limits<double>::infinity() : j.at("tolerance").get<double>();
  c.min_iterations = j.at("min_iterations").get<std::size_t>();
  c.mc_samples = j.at("mc_samples").get<std::size_t>();
  c.lambda_fraction = j.at("lambda_fraction").get<double>();
  c.lambda_samples = j.at("lambda_samples").get<std::size_t>();
  c.proposal_cap = j.at("proposal_cap").get<std::size_t>();
  c.seed = j.at("seed").get<std::uint64_t>();
  c.initial_design = parse_initial_design(j.at("initial_design").get<std::string>());
  const auto& s = j.at("surrogate");
  c.surrogate.hidden = s.at("hidden").get<std::vector<int>>();
  c.surrogate.adam.learning_rate = s.at("learning_rate").get<double>();
  c.surrogate.adam.beta1 = s.at("beta1").get<double>();
  c.surrogate.adam.beta2 = s.at("beta2").get<double>();
  c.surrogate.adam.epsilon = s.at("epsilon").get<double>();
  c.surrogate.batch_size = s.at("batch_size").get<int>();
  c.surrogate.epochs = s.at("epochs").get<int>();
  const auto& f = j.at("flow");
  c.flow.layers = f.at("layers").get<int>();
  c.flow.hidden = f.at("hidden").get<std::vector<int>>();
  c.flow.batch = f.at("batch").get<int>();
  c.flow.steps = f.at("steps").get<int>();
  c.flow.adam.learning_rate = f.at("learning_rate").get<double>();
  c.flow.s_max = f.at("s_max").get<double>();
  c.flow.anneal_fraction = f.at("anneal_fraction").get<double>();
  c.flow.anneal_start = f.at("anneal_start").get<double>();
  return c;
}

// ---------------------------------------------------------------- trace JSON

namespace {

nlohmann::json design_json(const DesignRecord& d) {
  nlohmann::json j = {{"x", d.x}, {"y", d.y}, {"iteration", d.iteration}};
  j["threshold"] = d.threshold ? nlohmann::json(*d.threshold) : nlohmann::json(nullptr);
  return j;
}

DesignRecord design_from_json(const nlohmann::json& j) {
  DesignRecord d;
  d.x = j.at("x").get<std::vector<double>>();
  d.y = j.at("y").get<double>();
  d.iteration = j.at("iteration").get<std::size_t>();
  if (!j.at("threshold").is_null()) d.threshold = j.at("threshold").get<double>();
  return d;
}

}  // namespace

nlohmann::json to_json(const RunTrace& trace) {
  nlohmann::json its = nlohmann::json::array();
  for (const auto& r : trace.iterations) {
    nlohmann::json designs = nlohmann::json::array();
    for (const auto& d : r.designs) designs.push_back(design_json(d));
    its.push_back({{"t", r.t},
                   {"requested", r.requested},
                   {"cumulative_calls", r.cumulative_calls},
                   {"designs", designs},
                   {"p_hat", r.p_hat},
                   {"failures", r.failures},
                   {"rel_change", r.rel_change ? nlohmann::json(*r.rel_change) : nlohmann::json(nullptr)},
                   {"lambda", r.lambda},
                   {"lambda_degenerate", r.lambda_degenerate},
                   {"flow_objective_start", r.flow_objective_start},
                   {"flow_objective_end", r.flow_objective_end},
                   {"surrogate_loss", r.surrogate_loss},
                   {"proposals", r.proposals},
                   {"shortfall", r.shortfall}});
  }
  nlohmann::json init = nlohmann::json::array();
  for (const auto& d : trace.initial_designs) init.push_back(design_json(d));
  nlohmann::json j = {{"format", "dnf-trace"},
                      {"version", 1},
                      {"problem", trace.problem},
                      {"criterion", to_string(trace.criterion)},
                      {"initial_designs", init},
                      {"initial_estimate", trace.initial_estimate},
                      {"iterations", its},
                      {"final_estimate", trace.final_estimate},
                      {"total_calls", trace.total_calls},
                      {"stop_reason", to_string(trace.stop_reason)}};
  if (!trace.failure.empty()) j["failure"] = trace.failure;
  return j;
}

RunTrace trace_from_json(const nlohmann::json& j) {
  if (j.value("format", "") != "dnf-trace") throw std::invalid_argument("not a trace document");
  RunTrace t;
  t.problem = j.at("problem").get<std::string>();
  t.criterion = parse_criterion(j.at("criterion").get<std::string>());
  for (const auto& d : j.at("initial_designs")) t.initial_designs.push_back(design_from_json(d));
  t.initial_estimate = j.at("initial_estimate").get<double>();
  for (const auto& rj : j.at("iterations")) {
    IterationRecord r;
    r.t = rj.at("t").get<std::size_t>();
    r.requested = rj.at("requested").get<std::size_t>();
    r.cumulative_calls = rj.at("cumulative_calls").get<std::size_t>();
    for (const auto& d : rj.at("designs")) r.designs.push_back(design_from_json(d));
    r.p_hat = rj.at("p_hat").get<double>();
    r.failures = rj.at("failures").get<std::size_t>();
    if (!rj.at("rel_change").is_null()) r.rel_change = rj.at("rel_change").get<double>();
    r.lambda = rj.at("lambda").get<double>();
    r.lambda_degenerate = rj.at("lambda_degenerate").get<bool>();
    r.flow_objective_start = rj.at("flow_objective_start").get<double>();
    r.flow_objective_end = rj.at("flow_objective_end").get<double>();
    r.surrogate_loss = rj.at("surrogate_loss").get<double>();
    r.proposals = rj.at("proposals").get<std::size_t>();
    r.shortfall = rj.at("shortfall").get<bool>();
    t.iterations.push_back(std::move(r));
  }
  t.final_estimate = j.at("final_estimate").get<double>();
  t.total_calls = j.at("total_calls").get<std::size_t>();
  t.stop_reason = parse_stop_reason(j.at("stop_reason").get<std::string>());
  t.failure = j.value("failure", "");
  return t;
}

// ---------------------------------------------------------------- CSV

std::string format_double(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return {buf, res.ptr};
}

double parse_double(const std::string& s) {
  double v = 0.0;
  const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size()) {
    throw std::invalid_argument("not a number: '" + s + "'");
  }
  return v;
}

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream ss(line);
  while (std::getline(ss, cell, ',')) out.push_back(cell);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

std::size_t parse_size(const std::string& s) {
  std::size_t v = 0;
  const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size()) throw std::invalid_argument("not a count: '" + s + "'");
  return v;
}

}  // namespace

void write_trace_csv(std::ostream& os, const RunTrace& trace) {
  os << "iteration,cumulative_calls,p_hat,rel_change,criterion\n";
  const std::string crit = to_string(trace.criterion);
  os << "0," << trace.initial_designs.size() << ',' << format_double(trace.initial_estimate) << ",," << crit << '\n';
  for (const auto& r : trace.iterations) {
    os << r.t << ',' << r.cumulative_calls << ',' << format_double(r.p_hat) << ','
       << (r.rel_change ? format_double(*r.rel_change) : std::string()) << ',' << crit << '\n';
  }
}

std::vector<TraceCsvRow> read_trace_csv(std::istream& is) {
  std::string line;
  if (!std::getline(is, line) || line != "iteration,cumulative_calls,p_hat,rel_change,criterion") {
    throw std::invalid_argument("trace CSV header mismatch");
  }
  std::vector<TraceCsvRow> rows;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    const auto cells = split_csv_line(line);
    if (cells.size() != 5) throw std::invalid_argument("trace CSV row has " + std::to_string(cells.size()) + " fields");
    TraceCsvRow r;
    r.iteration = parse_size(cells[0]);
    r.cumulative_calls = parse_size(cells[1]);
    r.p_hat = parse_double(cells[2]);
    if (!cells[3].empty()) r.rel_change = parse_double(cells[3]);
    r.criterion = cells[4];
    rows.push_back(std::move(r));
  }
  return rows;
}

void write_designs_csv(std::ostream& os, const RunTrace& trace, int dim) {
  for (int i = 0; i < dim; ++i) os << 'x' << (i + 1) << ',';
  os << "y,iteration,threshold\n";
  for (const auto& d : trace.all_designs()) {
    for (double v : d.x) os << format_double(v) << ',';
    os << format_double(d.y) << ',' << d.iteration << ',' << (d.threshold ? format_double(*d.threshold) : "") << '\n';
  }
}

std::vector<DesignRecord> read_designs_csv(std::istream& is) {
  std::string line;
  if (!std::getline(is, line)) throw std::invalid_argument("empty designs CSV");
  const auto header = split_csv_line(line);
  if (header.size() < 4 || header[header.size() - 3] != "y") throw std::invalid_argument("designs CSV header mismatch");
  const std::size_t dim = header.size() - 3;
  std::vector<DesignRecord> out;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    const auto cells = split_csv_line(line);
    if (cells.size() != dim + 3) throw std::invalid_argument("designs CSV row has wrong field count");
    DesignRecord d;
    for (std::size_t i = 0; i < dim; ++i) d.x.push_back(parse_double(cells[i]));
    d.y = parse_double(cells[dim]);
    d.iteration = parse_size(cells[dim + 1]);
    if (!cells[dim + 2].empty()) d.threshold = parse_double(cells[dim + 2]);
    out.push_back(std::move(d));
  }
  return out;
}

}  // namespace dnf
