#pragma once

// Indicator-based Monte Carlo failure probability and space-filling samplers.

#include "dnf/box.hpp"

#include <cstdint>
#include <functional>
#include <span>

namespace dnf {

/// Failure indicator: 1 when y <= 0.
inline int indicator(double y) { return y <= 0.0 ? 1 : 0; }

struct McEstimate {
  double estimate = 0.0;
  std::size_t samples = 0;
  std::size_t failures = 0;
  double std_error = 0.0;

  static McEstimate from_counts(std::size_t failures, std::size_t samples);
  double coefficient_of_variation() const { return estimate > 0.0 ? std_error / estimate : 0.0; }
};

using Sampler = std::function<Eigen::MatrixXd(std::size_t n, std::uint64_t seed)>;
using PointFunction = std::function<double(std::span<const double>)>;
using BatchFunction = std::function<Eigen::RowVectorXd(const Eigen::MatrixXd&)>;

/// Counts failures among already-computed limit-state values.
/// Throws std::domain_error naming the first non-finite index.
McEstimate estimate_from_values(const Eigen::RowVectorXd& values);

McEstimate mc_failure_probability(const PointFunction& g, const Sampler& sampler, std::size_t n, std::uint64_t seed);
McEstimate mc_failure_probability_batch(const BatchFunction& g, const Eigen::MatrixXd& samples,
                                        std::size_t chunk = 8192);

/// Latin hypercube design on the box, (d x n).
Eigen::MatrixXd lhs_sample(std::size_t n, const Box& box, std::uint64_t seed);

/// i.i.d. standard normal vectors, (d x n).
Eigen::MatrixXd gaussian_sample(std::size_t n, int dim, std::uint64_t seed);

}  // namespace dnf
