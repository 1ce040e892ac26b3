#include "dnf/mc.hpp"

#include "dnf/random.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

namespace dnf {

McEstimate McEstimate::from_counts(std::size_t failures, std::size_t samples) {
  if (samples == 0) throw std::invalid_argument("Monte Carlo estimate needs at least one sample");
  McEstimate e;
  e.samples = samples;
  e.failures = failures;
  e.estimate = static_cast<double>(failures) / static_cast<double>(samples);
  e.std_error = std::sqrt(e.estimate * (1.0 - e.estimate) / static_cast<double>(samples));
  return e;
}

McEstimate estimate_from_values(const Eigen::RowVectorXd& values) {
  std::size_t failures = 0;
  for (Eigen::Index i = 0; i < values.size(); ++i) {
    if (!std::isfinite(values(i))) {
      throw std::domain_error("non-finite limit-state value at sample index " + std::to_string(i));
    }
    failures += static_cast<std::size_t>(indicator(values(i)));
  }
  return McEstimate::from_counts(failures, static_cast<std::size_t>(values.size()));
}

McEstimate mc_failure_probability(const PointFunction& g, const Sampler& sampler, std::size_t n,
                                  std::uint64_t seed) {
  if (n == 0) throw std::invalid_argument("Monte Carlo estimate needs at least one sample");
  const Eigen::MatrixXd x = sampler(n, seed);
  if (static_cast<std::size_t>(x.cols()) != n) throw std::invalid_argument("sampler returned the wrong count");
  Eigen::RowVectorXd values(x.cols());
  for (Eigen::Index j = 0; j < x.cols(); ++j) {
    values(j) = g(std::span<const double>(x.col(j).data(), static_cast<std::size_t>(x.rows())));
  }
  return estimate_from_values(values);
}

McEstimate mc_failure_probability_batch(const BatchFunction& g, const Eigen::MatrixXd& samples, std::size_t chunk) {
  if (samples.cols() == 0) throw std::invalid_argument("Monte Carlo estimate needs at least one sample");
  if (chunk == 0) chunk = static_cast<std::size_t>(samples.cols());
  Eigen::RowVectorXd values(samples.cols());
  for (Eigen::Index start = 0; start < samples.cols(); start += static_cast<Eigen::Index>(chunk)) {
    const Eigen::Index len = std::min<Eigen::Index>(static_cast<Eigen::Index>(chunk), samples.cols() - start);
    values.segment(start, len) = g(samples.middleCols(start, len));
  }
  return estimate_from_values(values);
}

Eigen::MatrixXd lhs_sample(std::size_t n, const Box& box, std::uint64_t seed) {
  if (n == 0) throw std::invalid_argument("LHS needs at least one point");
  Rng rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const int d = box.dim();
  Eigen::MatrixXd out(d, static_cast<Eigen::Index>(n));
  std::vector<std::size_t> perm(n);
  for (int i = 0; i < d; ++i) {
    std::iota(perm.begin(), perm.end(), std::size_t{0});
    std::shuffle(perm.begin(), perm.end(), rng);
    const double width = (box.upper(i) - box.lower(i)) / static_cast<double>(n);
    for (std::size_t j = 0; j < n; ++j) {
      // stay strictly inside the bin so its index is recoverable from the value
      double offset = unit(rng);
      double v = box.lower(i) + (static_cast<double>(perm[j]) + offset) * width;
      const double bin_hi = box.lower(i) + static_cast<double>(perm[j] + 1) * width;
      if (v >= bin_hi) v = std::nextafter(bin_hi, box.lower(i));
      out(i, static_cast<Eigen::Index>(j)) = v;
    }
  }
  return out;
}

Eigen::MatrixXd gaussian_sample(std::size_t n, int dim, std::uint64_t seed) {
  if (dim < 1) throw std::invalid_argument("dimension must be positive");
  Rng rng(seed);
  std::normal_distribution<double> normal;
  Eigen::MatrixXd out(dim, static_cast<Eigen::Index>(n));
  for (Eigen::Index j = 0; j < out.cols(); ++j)
    for (Eigen::Index i = 0; i < out.rows(); ++i) out(i, j) = normal(rng);
  return out;
}

}  // namespace dnf
