#pragma once

// Reliability problems: limit state, input density, design box, and a call meter.

#include "dnf/box.hpp"
#include "dnf/mc.hpp"

#include <atomic>
#include <memory>
#include <string>

namespace dnf {

/// Input density p_X with a sampler and log-pdf.
struct InputDensity {
  std::function<Eigen::MatrixXd(std::size_t n, std::uint64_t seed)> sample;
  std::function<double(std::span<const double>)> log_pdf;

  static InputDensity standard_normal(int dim);
};

class Problem {
 public:
  Problem(std::string name, int dim, Box box, InputDensity density, PointFunction limit_state);

  const std::string& name() const { return name_; }
  int dim() const { return dim_; }
  const Box& box() const { return box_; }
  const InputDensity& density() const { return density_; }

  /// Metered limit-state evaluation: every call counts once.
  double g(std::span<const double> x) const;
  /// Unmetered access for reference computations that are not part of a budgeted run.
  double g_unmetered(std::span<const double> x) const { return limit_state_(x); }

  std::size_t calls() const { return meter_->load(); }
  void reset_meter() const { meter_->store(0); }

  double log_pdf(std::span<const double> x) const { return density_.log_pdf(x); }
  Eigen::MatrixXd sample_prior(std::size_t n, std::uint64_t seed) const { return density_.sample(n, seed); }

  /// Fraction of n prior samples that fall inside the box.
  double box_mass(std::size_t n, std::uint64_t seed) const;

 private:
  std::string name_;
  int dim_;
  Box box_;
  InputDensity density_;
  PointFunction limit_state_;
  std::shared_ptr<std::atomic<std::size_t>> meter_;
};

double four_branch_g(std::span<const double> x);

/// b - x2 - k (x1 - e)^2 with b = 5, k = 0.5, e = 0.1.
double iso_probability_g(std::span<const double> x);

struct ProblemOptions {
  int darcy_grid = 31;  // interior nodes per axis
};

/// "four-branch", "iso-probability" (or "iso"), "darcy". Throws std::invalid_argument otherwise.
Problem make_problem(const std::string& name, const ProblemOptions& options = {});

}  // namespace dnf
