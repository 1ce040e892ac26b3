// Acceptance checks. Usage: dnf_acceptance <id>... | all
// Prints one PASS/FAIL line per check and exits non-zero if any failed.

#include "dnf/darcy.hpp"
#include "dnf/designer.hpp"
#include "dnf/driver.hpp"
#include "dnf/flow.hpp"
#include "dnf/mc.hpp"
#include "dnf/mlp.hpp"
#include "dnf/problems.hpp"
#include "dnf/random.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

using namespace dnf;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

McEstimate reference(const Problem& p, std::size_t n, std::uint64_t seed) {
  return mc_failure_probability([&](std::span<const double> x) { return p.g_unmetered(x); }, p.density().sample, n,
                                seed);
}

double four_branch_reference() {
  const Problem p = make_problem("four-branch");
  double sum = 0.0;
  for (std::uint64_t s = 1; s <= 3; ++s) sum += reference(p, 100000, s).estimate;
  return sum / 3.0;
}

struct SeedRun {
  double p_hat = 0.0;
  double rel_error = 0.0;
  std::size_t calls = 0;
  double seconds = 0.0;
};

SeedRun dnf_seed_run(const Problem& p, DnfConfig cfg, double p_ref) {
  const auto t0 = Clock::now();
  p.reset_meter();
  const RunTrace t = run_dnf(p, cfg);
  SeedRun r;
  r.p_hat = t.final_estimate;
  r.rel_error = std::abs(t.final_estimate - p_ref) / p_ref;
  r.calls = p.calls();
  r.seconds = seconds_since(t0);
  std::printf("    %s %s seed=%llu p=%.4e rel=%.3f calls=%zu %.0fs\n", p.name().c_str(),
              to_string(cfg.criterion).c_str(), static_cast<unsigned long long>(cfg.seed), r.p_hat, r.rel_error,
              r.calls, r.seconds);
  std::fflush(stdout);
  return r;
}

// Runs `seeds` seeds and counts how many land within `tol` relative error.
struct SeedSummary {
  int within = 0;
  double max_seconds = 0.0;
  bool budget_ok = true;
  std::string errors;
};

SeedSummary seed_sweep(const Problem& p, DnfConfig cfg, double p_ref, int seeds, double tol) {
  SeedSummary s;
  for (int k = 1; k <= seeds; ++k) {
    cfg.seed = static_cast<std::uint64_t>(k);
    const SeedRun r = dnf_seed_run(p, cfg, p_ref);
    s.within += r.rel_error <= tol;
    s.max_seconds = std::max(s.max_seconds, r.seconds);
    s.budget_ok = s.budget_ok && r.calls <= cfg.n_max;
    s.errors += fmt("%s%.3f", k == 1 ? "" : "/", r.rel_error);
  }
  return s;
}

Outcome c1_reference_four_branch() {
  const auto t0 = Clock::now();
  const double p = four_branch_reference();
  const double secs = seconds_since(t0);
  return {p >= 1.6e-3 && p <= 2.5e-3 && secs < 10.0, fmt("p=%.4e (3 seeds, n=1e5) in [1.6e-3, 2.5e-3], %.1fs < 10s", p, secs)};
}

Outcome c2_reference_iso() {
  const auto t0 = Clock::now();
  const double p = reference(make_problem("iso-probability"), 100000, 1).estimate;
  const double secs = seconds_since(t0);
  return {p >= 2.5e-3 && p <= 3.5e-3 && secs < 10.0, fmt("p=%.4e (n=1e5) in [2.5e-3, 3.5e-3], %.1fs < 10s", p, secs)};
}

Outcome c3_dnf_four_branch() {
  const double p_ref = four_branch_reference();
  std::printf("    p_ref=%.4e\n", p_ref);
  const Problem p = make_problem("four-branch");
  bool pass = true;
  std::string detail;
  for (Criterion c : {Criterion::Nfbd, Criterion::NfbdFg, Criterion::NfbdAg}) {
    DnfConfig cfg = default_config("four-branch");
    cfg.tolerance = 0.0;
    cfg.criterion = c;
    const SeedSummary s = seed_sweep(p, cfg, p_ref, 5, 0.25);
    pass = pass && s.within >= 3 && s.max_seconds < 900.0 && s.budget_ok;
    detail += fmt("%s %d/5 within 25%% [%s] max %.0fs; ", to_string(c).c_str(), s.within, s.errors.c_str(),
                  s.max_seconds);
  }
  return {pass, detail + "need >=3/5 each, <900s per run"};
}

Outcome c4_dnf_iso() {
  const Problem p = make_problem("iso-probability");
  const double p_ref = reference(p, 100000, 1).estimate;
  DnfConfig cfg = default_config("iso-probability");
  cfg.tolerance = 0.0;
  cfg.criterion = Criterion::NfbdAg;
  const auto t0 = Clock::now();
  const SeedSummary s = seed_sweep(p, cfg, p_ref, 5, 0.25);
  const double secs = seconds_since(t0);
  return {s.within >= 3 && secs < 900.0 && s.budget_ok,
          fmt("p_ref=%.4e nfbd-ag %d/5 within 25%% [%s], need >=3; %.0fs < 900s", p_ref, s.within,
              s.errors.c_str(), secs)};
}

Outcome c5_darcy() {
  const auto t0 = Clock::now();
  const Problem p = make_problem("darcy");
  const double p_ref = reference(p, 20000, 1).estimate;
  std::printf("    p_ref=%.4e (%.0fs)\n", p_ref, seconds_since(t0));
  DnfConfig cfg = default_config("darcy");
  cfg.tolerance = 0.0;
  cfg.criterion = Criterion::NfbdAg;
  const SeedSummary s = seed_sweep(p, cfg, p_ref, 3, 0.30);
  const double secs = seconds_since(t0);
  return {s.within >= 2 && secs < 3600.0 && s.budget_ok,
          fmt("p_ref=%.4e nfbd-ag %d/3 within 30%% [%s], need >=2; %.0fs < 3600s", p_ref, s.within,
              s.errors.c_str(), secs)};
}

Outcome c6_gradient_oracle() {
  const auto t0 = Clock::now();
  Rng rng(2024);
  std::normal_distribution<double> normal;
  std::uniform_int_distribution<int> pick(1, 4);
  double worst = 0.0;
  std::size_t checked = 0;
  for (int net = 0; net < 20; ++net) {
    const int dim = pick(rng);
    std::vector<int> hidden(static_cast<std::size_t>(pick(rng)));
    for (int& h : hidden) h = 1 + pick(rng) * 2;
    MlpParams p = init_mlp(dim, hidden, 1, rng);
    Dataset data(dim);
    for (int i = 0; i < 8; ++i) {
      std::vector<double> x(static_cast<std::size_t>(dim));
      for (double& v : x) v = normal(rng);
      data.add(x, normal(rng));
    }
    const Eigen::VectorXd g = mse_loss_grad(p, data).gradient.flatten();
    const Eigen::VectorXd theta = p.flatten();
    for (Eigen::Index i = 0; i < theta.size(); ++i) {
      const double h = 1e-5;
      Eigen::VectorXd tp = theta, tm = theta;
      tp(i) += h;
      tm(i) -= h;
      MlpParams pp = p, pm = p;
      pp.assign(tp);
      pm.assign(tm);
      const double fd = (mse_loss(pp, data) - mse_loss(pm, data)) / (2.0 * h);
      // Error relative to the allowed band max(1e-8, 1e-5 |fd|); <= 1 passes.
      worst = std::max(worst, std::abs(g(i) - fd) / std::max(1e-8, 1e-5 * std::abs(fd)));
      ++checked;
    }
  }
  const double secs = seconds_since(t0);
  return {worst <= 1.0 && secs < 10.0,
          fmt("%zu parameters over 20 nets, worst error/band=%.3f <= 1, %.1fs < 10s", checked, worst, secs)};
}

NormalizingFlow random_flow(int dim, std::uint64_t seed) {
  FlowTrainConfig cfg;
  cfg.layers = 6;
  cfg.hidden = {16, 16};
  NormalizingFlow f = make_identity_flow(dim, cfg, OutputMap::identity(dim));
  Rng rng(seed);
  std::uniform_real_distribution<double> u(-0.5, 0.5);
  Eigen::VectorXd theta(static_cast<Eigen::Index>(f.parameter_count()));
  for (Eigen::Index i = 0; i < theta.size(); ++i) theta(i) = u(rng);
  f.assign(theta);
  return f;
}

Outcome c7_flow_invertibility() {
  const auto t0 = Clock::now();
  double worst_trip = 0.0, worst_logdet = 0.0;
  for (int dim : {2, 4}) {
    const NormalizingFlow f = random_flow(dim, 100 + static_cast<std::uint64_t>(dim));
    const Eigen::MatrixXd z = gaussian_sample(1000, dim, 7);
    const FlowBatch fwd = flow_forward_batch(f, z);
    const FlowBatch inv = flow_inverse_batch(f, fwd.points);
    worst_trip = std::max(worst_trip, (inv.points - z).cwiseAbs().maxCoeff());
    for (Eigen::Index j = 0; j < z.cols(); ++j) {
      Eigen::MatrixXd jac(dim, dim);
      const double h = 1e-6;
      for (int i = 0; i < dim; ++i) {
        Eigen::MatrixXd zp = z.col(j), zm = z.col(j);
        zp(i) += h;
        zm(i) -= h;
        jac.col(i) = (flow_forward_batch(f, zp).points - flow_forward_batch(f, zm).points) / (2.0 * h);
      }
      const double numeric = std::log(std::abs(jac.determinant()));
      const double rel = std::abs(numeric - fwd.log_det(j)) / std::max(1.0, std::abs(fwd.log_det(j)));
      worst_logdet = std::max(worst_logdet, rel);
    }
  }
  const double secs = seconds_since(t0);
  return {worst_trip < 1e-9 && worst_logdet < 1e-5 && secs < 30.0,
          fmt("round trip sup-error %.2e < 1e-9, log-det rel error %.2e < 1e-5, %.1fs < 30s", worst_trip,
              worst_logdet, secs)};
}

LogTarget gaussian_target(double m0, double m1, double sd) {
  return [=](const Eigen::MatrixXd& x, Eigen::RowVectorXd& v, Eigen::MatrixXd& g) {
    Eigen::MatrixXd r = x;
    r.row(0).array() -= m0;
    r.row(1).array() -= m1;
    r /= sd;
    v = (-0.5 * r.colwise().squaredNorm().array() - std::log(2.0 * M_PI * sd * sd)).matrix();
    g = -r / sd;
  };
}

FlowTrainConfig sanity_flow_config() {
  FlowTrainConfig cfg;
  cfg.steps = 1000;
  cfg.batch = 128;
  cfg.hidden = {32, 32};
  cfg.seed = 3;
  return cfg;
}

Outcome c8_flow_normalization() {
  const auto t0 = Clock::now();
  // A correlated, non-axis-aligned target so the coupling layers do real work.
  const LogTarget banana = [](const Eigen::MatrixXd& x, Eigen::RowVectorXd& v, Eigen::MatrixXd& g) {
    const Eigen::ArrayXXd a = x.array();
    const Eigen::ArrayXd u = a.row(0).transpose();
    const Eigen::ArrayXd w = (a.row(1).transpose() - 0.3 * u.square() + 0.5) / 0.8;
    v = (-0.5 * u.square() - 0.5 * w.square()).matrix().transpose();
    g.resize(2, x.cols());
    g.row(0) = (-u + w * 0.6 * u / 0.8).matrix().transpose();
    g.row(1) = (-w / 0.8).matrix().transpose();
  };
  const FlowTrainResult r = train_flow(banana, 2, sanity_flow_config());
  const int n = 200;
  const double h = 12.0 / n;
  Eigen::MatrixXd grid(2, n * n);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) grid.col(i * n + j) << -6.0 + (i + 0.5) * h, -6.0 + (j + 0.5) * h;
  const double mass = flow_log_density_batch(r.flow, grid).array().exp().sum() * h * h;
  const double secs = seconds_since(t0);
  return {std::abs(mass - 1.0) <= 0.02 && secs < 60.0,
          fmt("integral over [-6,6]^2 = %.4f, |mass-1| <= 0.02, %.1fs < 60s", mass, secs)};
}

Outcome c9_flow_fitting() {
  const auto t0 = Clock::now();
  const FlowTrainConfig cfg = sanity_flow_config();
  const FlowTrainResult std_fit = train_flow(gaussian_target(0.0, 0.0, 1.0), 2, cfg);
  // KL(q || p) = E_q[log q - log p] on fresh draws.
  const Eigen::MatrixXd z = gaussian_sample(100000, 2, 99);
  const FlowBatch fb = flow_forward_batch(std_fit.flow, z);
  Eigen::RowVectorXd logp;
  Eigen::MatrixXd grad;
  gaussian_target(0.0, 0.0, 1.0)(fb.points, logp, grad);
  const Eigen::RowVectorXd logq =
      (-0.5 * z.colwise().squaredNorm().array() - std::log(2.0 * M_PI)).matrix() - fb.log_det;
  const double kl = (logq - logp).mean();

  const FlowTrainResult shifted = train_flow(gaussian_target(3.0, 0.0, 1.0), 2, cfg);
  const Eigen::Vector2d mean = flow_forward_batch(shifted.flow, gaussian_sample(20000, 2, 5)).points.rowwise().mean();
  const double secs = seconds_since(t0);
  const bool pass = kl < 0.05 && std::abs(mean(0) - 3.0) <= 0.2 && std::abs(mean(1)) <= 0.2 && secs < 120.0;
  return {pass, fmt("KL=%.4f < 0.05 nats; shifted mean (%.3f, %.3f) within 0.2 of (3,0); %.1fs < 120s", kl, mean(0),
                    mean(1), secs)};
}

Outcome c10_fg_separation() {
  const auto t0 = Clock::now();
  const Box box = Box::cube(2, -10.0, 10.0);
  double worst_margin = std::numeric_limits<double>::infinity();
  bool thresholds_ok = true;
  int batches = 0;
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    NormalizingFlow flow = random_flow(2, seed);
    flow.output = OutputMap::for_box(box.lower, box.upper);
    const Eigen::MatrixXd d = lhs_sample(20, box, seed);
    Points data;
    for (Eigen::Index j = 0; j < d.cols(); ++j) data.emplace_back(d.col(j).data(), d.col(j).data() + 2);
    for (double eps0 : {0.2, 0.5, 1.0, 2.0}) {
      const DesignBatch fg = nfbd_fg_select(flow, data, 15, eps0, box, seed * 31);
      Points all = data;
      all.insert(all.end(), fg.points.begin(), fg.points.end());
      for (std::size_t i = 0; i < all.size(); ++i)
        for (std::size_t j = std::max(i + 1, data.size()); j < all.size(); ++j) {
          double dist = 0.0;
          for (int k = 0; k < 2; ++k) dist = std::max(dist, std::abs(all[i][k] - all[j][k]));
          worst_margin = std::min(worst_margin, dist - eps0);
        }
      const LogPdf normal = [](std::span<const double> x) { return -0.5 * (x[0] * x[0] + x[1] * x[1]); };
      const DesignBatch ag = nfbd_ag_select(flow, data, 15, eps0, normal, box, seed * 37);
      for (double t : ag.thresholds) thresholds_ok = thresholds_ok && t >= 0.1 * eps0 && t <= 10.0 * eps0;
      batches += 2;
    }
  }
  const double secs = seconds_since(t0);
  return {worst_margin >= 0.0 && thresholds_ok && secs < 5.0,
          fmt("%d batches; min pairwise L-inf minus eps0 = %.3e >= 0; AG thresholds in [0.1,10] eps0: %s; %.1fs < 5s",
              batches, worst_margin, thresholds_ok ? "yes" : "no", secs)};
}

Outcome c11_mc_oracle() {
  const auto t0 = Clock::now();
  const McEstimate e =
      mc_failure_probability([](std::span<const double> x) { return 2.0 - x[0]; },
                             [](std::size_t n, std::uint64_t s) { return gaussian_sample(n, 1, s); }, 1000000, 11);
  const double exact = 0.5 * std::erfc(2.0 / std::sqrt(2.0));
  const double z = std::abs(e.estimate - exact) / e.std_error;
  const double secs = seconds_since(t0);
  return {z <= 3.0 && secs < 10.0,
          fmt("p=%.6f vs Phi(-2)=%.7f, %.2f standard errors <= 3, %.1fs < 10s", e.estimate, exact, z, secs)};
}

Outcome c12_darcy_oracle() {
  const auto t0 = Clock::now();
  const DarcyGrid grid(63);
  const Eigen::MatrixXd a = Eigen::MatrixXd::Ones(grid.nodes(), grid.nodes());
  const Eigen::MatrixXd u = darcy_solve(a, grid);
  const double umax = u.maxCoeff();
  // Discrete maximum principle for -div(a grad u) = 1 >= 0 with u = 0 on the boundary:
  // u is non-negative and every interior node is at least the minimum of its neighbours.
  bool max_principle = true;
  for (int i = 1; i <= grid.m; ++i)
    for (int j = 1; j <= grid.m; ++j) {
      const double nb = std::min({u(i - 1, j), u(i + 1, j), u(i, j - 1), u(i, j + 1)});
      max_principle = max_principle && u(i, j) >= 0.0 && u(i, j) >= nb;
    }
  const double rel = std::abs(umax - 0.07367) / 0.07367;
  const double secs = seconds_since(t0);
  return {rel <= 0.01 && max_principle && secs < 30.0,
          fmt("max u = %.5f vs 0.07367 (rel %.2e <= 1e-2); maximum principle %s; %.1fs < 30s", umax, rel,
              max_principle ? "holds" : "violated", secs)};
}

Outcome c13_budget_and_reproducibility() {
  const auto t0 = Clock::now();
  bool pass = true;
  int runs = 0;
  for (const char* name : {"four-branch", "iso-probability", "darcy"}) {
    ProblemOptions po;
    po.darcy_grid = 15;
    for (Criterion c : {Criterion::Nfbd, Criterion::NfbdFg, Criterion::NfbdAg}) {
      DnfConfig cfg = default_config(name);
      cfg.criterion = c;
      cfg.n_max = cfg.n0 + 3 * cfg.n_d + 1;  // uneven final batch
      cfg.tolerance = 0.0;
      cfg.mc_samples = 20000;
      cfg.lambda_samples = 5000;
      cfg.surrogate.epochs = 300;
      cfg.flow.steps = 100;
      cfg.flow.batch = 64;
      cfg.flow.hidden = {16, 16};
      cfg.seed = 7;
      std::string first;
      for (int rep = 0; rep < 2; ++rep) {
        const Problem p = make_problem(name, po);
        const RunTrace t = run_dnf(p, cfg);
        const std::string bytes = to_json(t).dump();
        const bool budget = p.calls() <= cfg.n_max && t.total_calls == p.calls();
        const bool same = rep == 0 || bytes == first;
        if (!budget || !same)
          std::printf("    %s %s: calls=%zu nmax=%zu identical=%s\n", name, to_string(c).c_str(), p.calls(),
                      cfg.n_max, same ? "yes" : "no");
        pass = pass && budget && same;
        first = bytes;
        ++runs;
      }
    }
  }
  return {pass, fmt("%d runs (3 problems x 3 criteria x 2): calls <= N_max and identical traces; %.0fs", runs,
                    seconds_since(t0))};
}

struct Criterion_ {
  const char* title;
  std::function<Outcome()> run;
};

const std::map<int, Criterion_>& checks() {
  static const std::map<int, Criterion_> m{
      {1, {"reference MC, four-branch", c1_reference_four_branch}},
      {2, {"reference MC, iso-probability", c2_reference_iso}},
      {3, {"DNF, four-branch, all criteria", c3_dnf_four_branch}},
      {4, {"DNF, iso-probability, NFBD-AG", c4_dnf_iso}},
      {5, {"DNF, Darcy, NFBD-AG", c5_darcy}},
      {6, {"network gradient oracle", c6_gradient_oracle}},
      {7, {"flow invertibility and log-det", c7_flow_invertibility}},
      {8, {"flow normalization", c8_flow_normalization}},
      {9, {"flow fitting sanity", c9_flow_fitting}},
      {10, {"FG separation and AG threshold range", c10_fg_separation}},
      {11, {"MC estimator oracle", c11_mc_oracle}},
      {12, {"Darcy solver oracle", c12_darcy_oracle}},
      {13, {"budget safety and reproducibility", c13_budget_and_reproducibility}},
  };
  return m;
}

}  // namespace

int main(int argc, char** argv) {
  std::vector<int> ids;
  for (int i = 1; i < argc; ++i) {
    const std::string a = argv[i];
    if (a == "all") {
      for (const auto& [id, c] : checks()) ids.push_back(id);
    } else {
      try {
        ids.push_back(std::stoi(a));
      } catch (const std::exception&) {
        ids.push_back(-1);
      }
      if (!checks().contains(ids.back())) {
        std::cerr << "unknown check '" << a << "'\n";
        return 2;
      }
    }
  }
  if (ids.empty()) {
    std::cerr << "usage: dnf_acceptance <id>... | all\n";
    return 2;
  }
  int failed = 0;
  for (int id : ids) {
    const Criterion_& c = checks().at(id);
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    std::printf("[%s] %2d %s: %s\n", o.pass ? "PASS" : "FAIL", id, c.title, o.detail.c_str());
    std::fflush(stdout);
    failed += !o.pass;
  }
  return failed == 0 ? 0 : 1;
}
