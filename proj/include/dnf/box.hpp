#pragma once

#include <Eigen/Dense>

#include <span>
#include <stdexcept>

namespace dnf {

/// Axis-aligned design box, lower < upper in every coordinate.
struct Box {
  Eigen::VectorXd lower;
  Eigen::VectorXd upper;

  Box() = default;
  Box(Eigen::VectorXd lo, Eigen::VectorXd hi) : lower(std::move(lo)), upper(std::move(hi)) {
    if (lower.size() != upper.size() || lower.size() == 0) throw std::invalid_argument("box bounds must match");
    if (((upper - lower).array() <= 0.0).any()) throw std::invalid_argument("box lower bound must be below upper");
  }
  static Box cube(int dim, double lo, double hi) {
    return {Eigen::VectorXd::Constant(dim, lo), Eigen::VectorXd::Constant(dim, hi)};
  }

  int dim() const { return static_cast<int>(lower.size()); }

  bool contains(std::span<const double> x) const {
    for (int i = 0; i < dim(); ++i)
      if (!(x[i] >= lower(i) && x[i] <= upper(i))) return false;
    return true;
  }
  bool contains(const Eigen::VectorXd& x) const { return contains(std::span<const double>(x.data(), x.size())); }
};

}  // namespace dnf
