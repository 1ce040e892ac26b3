#include "dnf/posterior.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>

namespace dnf {

namespace {
// Weight of the squared box overshoot, measured in box half-widths.
constexpr double kBoxPull = 1e4;
}  // namespace

LimitStatePosterior::LimitStatePosterior(const SurrogateModel& surrogate, double lambda, Box box)
    : surrogate_(&surrogate), lambda_(lambda), box_(std::move(box)) {
  if (!(lambda_ > 0.0) || !std::isfinite(lambda_)) throw std::invalid_argument("lambda must be positive");
  if (box_.dim() != surrogate.dim()) throw std::invalid_argument("box dimension does not match surrogate");
}

double LimitStatePosterior::log_unnormalized(std::span<const double> x) const {
  if (!box_.contains(x)) return -std::numeric_limits<double>::infinity();
  return -std::abs(surrogate_->evaluate(x)) / lambda_;
}

LogTarget LimitStatePosterior::training_target() const {
  const SurrogateModel* model = surrogate_;
  const double lambda = lambda_;
  const Box box = box_;
  const Eigen::VectorXd half = 0.5 * (box.upper - box.lower);
  return [model, lambda, box, half](const Eigen::MatrixXd& x, Eigen::RowVectorXd& values, Eigen::MatrixXd& grads) {
    Eigen::RowVectorXd g;
    model->evaluate_with_gradient(x, g, grads);
    values.resize(x.cols());
    for (Eigen::Index j = 0; j < x.cols(); ++j) {
      const double sign = g(j) > 0.0 ? 1.0 : (g(j) < 0.0 ? -1.0 : 0.0);
      values(j) = -std::abs(g(j)) / lambda;
      grads.col(j) *= -sign / lambda;
      double over2 = 0.0;
      for (Eigen::Index i = 0; i < x.rows(); ++i) {
        double over = 0.0;
        if (x(i, j) < box.lower(i)) over = (x(i, j) - box.lower(i)) / half(i);
        if (x(i, j) > box.upper(i)) over = (x(i, j) - box.upper(i)) / half(i);
        if (over != 0.0) {
          over2 += over * over;
          grads(i, j) -= 2.0 * kBoxPull * over / half(i);
        }
      }
      if (over2 > 0.0) {
        values(j) -= kBoxPull * over2;
        if (values(j) < kOutsideBoxPenalty) {
          values(j) = kOutsideBoxPenalty;
          grads.col(j).setZero();
        }
      }
    }
  };
}

LambdaChoice default_lambda(const std::function<Eigen::RowVectorXd(const Eigen::MatrixXd&)>& g,
                            const Eigen::MatrixXd& prior_samples) {
  if (prior_samples.cols() < 100) throw std::invalid_argument("lambda rule needs at least 100 prior samples");
  const Eigen::RowVectorXd v = g(prior_samples);
  const double mean = v.mean();
  const double sd = std::sqrt((v.array() - mean).square().sum() / static_cast<double>(v.size() - 1));
  const double lam = kLambdaFraction * sd;
  if (!(lam > kLambdaFloor) || !std::isfinite(lam)) return {kLambdaFloor, true};
  return {lam, false};
}

LambdaChoice default_lambda(const SurrogateModel& surrogate, const Eigen::MatrixXd& prior_samples) {
  return default_lambda([&](const Eigen::MatrixXd& x) { return surrogate.evaluate_batch(x); }, prior_samples);
}

}  // namespace dnf
