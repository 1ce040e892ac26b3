#include "dnf/problems.hpp"

#include "dnf/darcy.hpp"
#include "dnf/flow.hpp"
#include "dnf/mc.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <optional>

namespace dnf {

InputDensity InputDensity::standard_normal(int dim) {
  InputDensity d;
  d.sample = [dim](std::size_t n, std::uint64_t seed) { return gaussian_sample(n, dim, seed); };
  d.log_pdf = [](std::span<const double> x) { return standard_normal_log_pdf(x); };
  return d;
}

Problem::Problem(std::string name, int dim, Box box, InputDensity density, PointFunction limit_state)
    : name_(std::move(name)),
      dim_(dim),
      box_(std::move(box)),
      density_(std::move(density)),
      limit_state_(std::move(limit_state)),
      meter_(std::make_shared<std::atomic<std::size_t>>(0)) {
  if (dim_ < 1 || box_.dim() != dim_) throw std::invalid_argument("problem dimension does not match its box");
  if (!limit_state_ || !density_.sample || !density_.log_pdf) throw std::invalid_argument("incomplete problem");
}

double Problem::g(std::span<const double> x) const {
  if (static_cast<int>(x.size()) != dim_) throw std::invalid_argument("limit-state input has wrong dimension");
  meter_->fetch_add(1);
  return limit_state_(x);
}

double Problem::box_mass(std::size_t n, std::uint64_t seed) const {
  const Eigen::MatrixXd x = sample_prior(n, seed);
  std::size_t inside = 0;
  for (Eigen::Index j = 0; j < x.cols(); ++j) inside += box_.contains(Eigen::VectorXd(x.col(j))) ? 1 : 0;
  return static_cast<double>(inside) / static_cast<double>(n);
}

double four_branch_g(std::span<const double> x) {
  const double x1 = x[0];
  const double x2 = x[1];
  const double r2 = std::numbers::sqrt2;
  const double d = x1 - x2;
  const double s = (x1 + x2) / r2;
  const double b1 = 3.0 + 0.1 * d * d - s;
  const double b2 = 3.0 + 0.1 * d * d + s;
  const double b3 = d + 7.0 / r2;
  const double b4 = -d + 7.0 / r2;
  return std::min({b1, b2, b3, b4});
}

double iso_probability_g(std::span<const double> x) {
  constexpr double b = 5.0;
  constexpr double k = 0.5;
  constexpr double e = 0.1;
  return b - x[1] - k * (x[0] - e) * (x[0] - e);
}

Problem make_problem(const std::string& name, const ProblemOptions& options) {
  std::optional<Problem> p;
  if (name == "four-branch") {
    p.emplace(name, 2, Box::cube(2, -10.0, 10.0), InputDensity::standard_normal(2), four_branch_g);
  } else if (name == "iso-probability" || name == "iso") {
    p.emplace("iso-probability", 2, Box::cube(2, -10.0, 10.0), InputDensity::standard_normal(2), iso_probability_g);
  } else if (name == "darcy") {
    auto model = std::make_shared<const DarcyModel>(4, options.darcy_grid);
    p.emplace(name, 4, Box::cube(4, -5.0, 5.0), InputDensity::standard_normal(4),
              [model](std::span<const double> x) { return model->limit_state(x); });
  } else {
    throw std::invalid_argument("unknown problem '" + name + "' (expected four-branch, iso-probability, darcy)");
  }
  if (p->box_mass(10000, 0x5eed) < 0.999) throw std::logic_error("design box misses prior mass");
  return std::move(*p);
}

}  // namespace dnf
