#include "dnf/mc.hpp"
#include "dnf/problems.hpp"

#include <doctest.h>

#include <algorithm>
#include <cmath>

using namespace dnf;

namespace {

double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::sqrt(2.0)); }

Sampler standard_normal(int d) {
  return [d](std::size_t n, std::uint64_t seed) { return gaussian_sample(n, d, seed); };
}

}  // namespace

TEST_CASE("indicator convention") {
  CHECK(indicator(-0.5) == 1);
  CHECK(indicator(0.0) == 1);
  CHECK(indicator(0.3) == 0);
}

TEST_CASE("estimator on constant evaluators") {
  const auto all = mc_failure_probability([](std::span<const double>) { return -1.0; }, standard_normal(2), 500, 1);
  CHECK(all.estimate == 1.0);
  CHECK(all.std_error == 0.0);
  const auto none = mc_failure_probability([](std::span<const double>) { return 1.0; }, standard_normal(2), 500, 1);
  CHECK(none.estimate == 0.0);
  CHECK(none.failures == 0);
  CHECK(none.samples == 500);
}

TEST_CASE("estimator against the Gaussian tail") {
  const PointFunction g = [](std::span<const double> x) { return 2.0 - x[0]; };
  const McEstimate e = mc_failure_probability(g, standard_normal(1), 1000000, 42);
  const double exact = normal_cdf(-2.0);
  CHECK(exact == doctest::Approx(0.0227501).epsilon(1e-5));
  CHECK(std::abs(e.estimate - exact) <= 3.0 * e.std_error);
  CHECK(e.std_error == doctest::Approx(std::sqrt(e.estimate * (1 - e.estimate) / 1e6)).epsilon(1e-12));

  // Pooled over independent seeds the mean sits on the exact value.
  double sum = 0.0;
  for (std::uint64_t s = 0; s < 50; ++s) sum += mc_failure_probability(g, standard_normal(1), 10000, 100 + s).estimate;
  const double pooled_se = std::sqrt(exact * (1 - exact) / (50.0 * 10000.0));
  CHECK(std::abs(sum / 50.0 - exact) <= 3.0 * pooled_se);
}

TEST_CASE("estimate is invariant to positive scaling of g") {
  const auto samples = gaussian_sample(20000, 2, 3);
  auto g = [](double c) {
    return BatchFunction([c](const Eigen::MatrixXd& x) -> Eigen::RowVectorXd {
      return (c * (1.5 - x.row(0).array() - 0.5 * x.row(1).array())).matrix();
    });
  };
  CHECK(mc_failure_probability_batch(g(1.0), samples).failures == mc_failure_probability_batch(g(37.0), samples).failures);
}

TEST_CASE("non-finite evaluations name the sample") {
  const PointFunction g = [](std::span<const double> x) { return x[0] > 1.0 ? std::nan("") : 1.0; };
  try {
    mc_failure_probability(g, standard_normal(1), 1000, 1);
    FAIL("expected an error");
  } catch (const std::domain_error& e) {
    CHECK(std::string(e.what()).find("index") != std::string::npos);
  }
}

TEST_CASE("latin hypercube stratification") {
  const Box box = Box::cube(3, -2.0, 6.0);
  for (std::size_t n : {1u, 4u, 17u, 200u}) {
    const Eigen::MatrixXd s = lhs_sample(n, box, 9);
    REQUIRE(s.cols() == static_cast<Eigen::Index>(n));
    for (int i = 0; i < 3; ++i) {
      std::vector<long> bins;
      for (Eigen::Index j = 0; j < s.cols(); ++j) {
        const double frac = (s(i, j) - box.lower(i)) / (box.upper(i) - box.lower(i));
        bins.push_back(static_cast<long>(std::floor(frac * static_cast<double>(n))));
      }
      std::sort(bins.begin(), bins.end());
      for (std::size_t k = 0; k < n; ++k) CHECK(bins[k] == static_cast<long>(k));
    }
  }
  CHECK(lhs_sample(10, box, 4) == lhs_sample(10, box, 4));
  CHECK(lhs_sample(10, box, 4) != lhs_sample(10, box, 5));
}

TEST_CASE("gaussian sampler moments") {
  const std::size_t n = 100000;
  const Eigen::MatrixXd s = gaussian_sample(n, 3, 11);
  for (int i = 0; i < 3; ++i) {
    const double mean = s.row(i).mean();
    const double var = (s.row(i).array() - mean).square().sum() / (n - 1.0);
    CHECK(std::abs(mean) < 4.0 / std::sqrt(static_cast<double>(n)));
    CHECK(std::abs(var - 1.0) < 0.1);
  }
  CHECK(gaussian_sample(5, 2, 8) == gaussian_sample(5, 2, 8));
}

TEST_CASE("four-branch limit state") {
  CHECK(four_branch_g(std::vector<double>{0.0, 0.0}) == doctest::Approx(3.0));
  CHECK(four_branch_g(std::vector<double>{5.0, 5.0}) == doctest::Approx(3.0 - 10.0 / std::sqrt(2.0)));
  CHECK(four_branch_g(std::vector<double>{5.0, 5.0}) == doctest::Approx(-4.0711).epsilon(1e-4));
  const Eigen::MatrixXd pts = Eigen::MatrixXd::Random(2, 200) * 8.0;
  for (Eigen::Index j = 0; j < pts.cols(); ++j) {
    const std::vector<double> a{pts(0, j), pts(1, j)}, b{pts(1, j), pts(0, j)};
    CHECK(four_branch_g(a) == doctest::Approx(four_branch_g(b)).epsilon(1e-14));
  }
}

TEST_CASE("iso-probability limit state") {
  CHECK(iso_probability_g(std::vector<double>{0.1, 5.0}) == 0.0);
  CHECK(iso_probability_g(std::vector<double>{0.0, 0.0}) == doctest::Approx(4.995).epsilon(1e-14));
  CHECK(iso_probability_g(std::vector<double>{0.1, 6.0}) == doctest::Approx(-1.0));
}

TEST_CASE("built-in problems") {
  const Problem fb = make_problem("four-branch");
  CHECK(fb.dim() == 2);
  CHECK(fb.box().lower(0) == -10.0);
  CHECK(fb.box().upper(1) == 10.0);
  CHECK(make_problem("iso").name() == "iso-probability");
  CHECK(make_problem("iso-probability").dim() == 2);
  const Problem darcy = make_problem("darcy", ProblemOptions{15});
  CHECK(darcy.dim() == 4);
  CHECK(darcy.box().lower(3) == -5.0);
  CHECK(darcy.box_mass(20000, 1) >= 0.999);
  CHECK_THROWS_AS(make_problem("five-branch"), std::invalid_argument);
  CHECK(fb.log_pdf(std::vector<double>{0.0, 0.0}) == doctest::Approx(-std::log(2.0 * M_PI)));
}

TEST_CASE("limit-state meter counts every call") {
  const Problem p = make_problem("four-branch");
  const Problem copy = p;
  CHECK(p.calls() == 0);
  for (int i = 0; i < 7; ++i) p.g(std::vector<double>{0.1 * i, 0.0});
  copy.g(std::vector<double>{1.0, 1.0});
  CHECK(p.calls() == 8);
  p.g_unmetered(std::vector<double>{0.0, 0.0});
  CHECK(p.calls() == 8);
  p.reset_meter();
  CHECK(copy.calls() == 0);
}

TEST_CASE("reference failure probabilities") {
  const Problem fb = make_problem("four-branch");
  const McEstimate a = mc_failure_probability([&](std::span<const double> x) { return fb.g_unmetered(x); },
                                              fb.density().sample, 100000, 1);
  CHECK(a.estimate >= 1.6e-3);
  CHECK(a.estimate <= 2.5e-3);
  const Problem iso = make_problem("iso");
  const McEstimate b = mc_failure_probability([&](std::span<const double> x) { return iso.g_unmetered(x); },
                                              iso.density().sample, 100000, 1);
  CHECK(b.estimate >= 2.5e-3);
  CHECK(b.estimate <= 3.5e-3);
}
