#pragma once

// Unnormalized limit-state posterior exp(-|G(x)| / lambda) truncated to the design box.

#include "dnf/box.hpp"
#include "dnf/flow.hpp"
#include "dnf/mlp.hpp"

namespace dnf {

/// Log-target assigned to points outside the box when a finite value is required.
constexpr double kOutsideBoxPenalty = -1e6;

class LimitStatePosterior {
 public:
  LimitStatePosterior(const SurrogateModel& surrogate, double lambda, Box box);

  double lambda() const { return lambda_; }
  const Box& box() const { return box_; }

  /// -|G(x)|/lambda inside the box, -infinity outside.
  double log_unnormalized(std::span<const double> x) const;

  /// Finite flow-training target. Outside the box the value is the surrogate
  /// term minus a quadratic pull back toward the box, floored at kOutsideBoxPenalty.
  LogTarget training_target() const;

 private:
  const SurrogateModel* surrogate_;
  double lambda_;
  Box box_;
};

struct LambdaChoice {
  double lambda = 0.0;
  bool degenerate = false;  // spread was zero and the floor was used
};

constexpr double kLambdaFraction = 0.2;
constexpr double kLambdaFloor = 1e-6;

/// kLambdaFraction * std of G over the given prior samples (d x n, n >= 100), floored at 1e-6.
LambdaChoice default_lambda(const SurrogateModel& surrogate, const Eigen::MatrixXd& prior_samples);

/// Same as above with an arbitrary batch evaluator in place of a trained surrogate.
LambdaChoice default_lambda(const std::function<Eigen::RowVectorXd(const Eigen::MatrixXd&)>& g,
                            const Eigen::MatrixXd& prior_samples);

}  // namespace dnf
