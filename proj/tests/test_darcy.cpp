#include "dnf/darcy.hpp"

#include <doctest.h>

#include <cmath>
#include <numbers>
#include <sstream>

using namespace dnf;

namespace {

// Series solution of -Laplace u = 1 on the unit square with zero boundary, at the centre.
double poisson_centre_value() {
  const double pi = std::numbers::pi;
  double sum = 0.0;
  for (int m = 1; m < 4000; m += 2) {
    for (int n = 1; n < 4000; n += 2) {
      const double sign = (((m - 1) / 2 + (n - 1) / 2) % 2 == 0) ? 1.0 : -1.0;
      sum += sign / (m * n * (static_cast<double>(m) * m + static_cast<double>(n) * n));
    }
  }
  return 16.0 / std::pow(pi, 4) * sum;
}

}  // namespace

TEST_CASE("KL eigenvalues and ordering") {
  const KlBasis b = kl_basis(4);
  REQUIRE(b.dim() == 4);
  CHECK(b.modes[0].eigenvalue == doctest::Approx(1.0 / 81.0).epsilon(1e-14));
  CHECK(b.modes[1].eigenvalue == doctest::Approx(2.8087e-3).epsilon(1e-4));
  CHECK(b.modes[1].eigenvalue == b.modes[2].eigenvalue);
  CHECK(((b.modes[1].j == 0 && b.modes[1].k == 1) || (b.modes[1].j == 1 && b.modes[1].k == 0)));
  CHECK(b.modes[1].j + b.modes[1].k == 1);
  CHECK(b.modes[2].j + b.modes[2].k == 1);
  CHECK(b.modes[1].j != b.modes[2].j);
  CHECK(b.modes[3].j == 1);
  CHECK(b.modes[3].k == 1);
  const KlBasis big = kl_basis(16);
  for (int i = 1; i < 16; ++i) CHECK(big.modes[i - 1].eigenvalue >= big.modes[i].eigenvalue);
  CHECK_THROWS_AS(kl_basis(0), std::invalid_argument);
  CHECK_THROWS_AS(kl_basis(17), std::invalid_argument);
}

TEST_CASE("KL modes are orthonormal on the grid") {
  const KlBasis b = kl_basis(8);
  const DarcyGrid grid(63);
  for (int i = 0; i < b.dim(); ++i)
    for (int j = 0; j < b.dim(); ++j)
      CHECK(std::abs(kl_inner_product(b.modes[i], b.modes[j], grid) - (i == j ? 1.0 : 0.0)) < 1e-3);
}

TEST_CASE("KL expansion") {
  const KlBasis b = kl_basis(4);
  const DarcyGrid grid(15);
  CHECK(kl_expand(std::vector<double>{0, 0, 0, 0}, b, grid).cwiseAbs().maxCoeff() == 0.0);
  const Eigen::MatrixXd c = kl_expand(std::vector<double>{2.7, 0, 0, 0}, b, grid);
  CHECK((c.array() - 2.7 / 9.0).abs().maxCoeff() < 1e-15);
  const std::vector<double> x{0.3, -1.0, 2.0, 0.5}, y{-1.1, 0.4, 0.2, 1.5};
  std::vector<double> xy(4);
  for (int i = 0; i < 4; ++i) xy[i] = x[i] + y[i];
  CHECK((kl_expand(xy, b, grid) - kl_expand(x, b, grid) - kl_expand(y, b, grid)).cwiseAbs().maxCoeff() < 1e-14);
  CHECK_THROWS_AS(kl_expand(std::vector<double>{1.0}, b, grid), std::invalid_argument);
}

TEST_CASE("Poisson solve against the series solution") {
  const double oracle = poisson_centre_value();
  CHECK(oracle == doctest::Approx(0.07367).epsilon(1e-4));
  const DarcyGrid grid(63);
  const Eigen::MatrixXd one = Eigen::MatrixXd::Ones(grid.nodes(), grid.nodes());
  const Eigen::MatrixXd u = darcy_solve(one, grid);
  CHECK(std::abs(u.maxCoeff() - oracle) / oracle < 0.01);
  CHECK(darcy_relative_residual(one, u, grid) < 1e-10);
  CHECK(u.block(1, 1, grid.m, grid.m).minCoeff() > 0.0);
  CHECK(u.row(0).cwiseAbs().maxCoeff() == 0.0);
  CHECK(u.col(grid.nodes() - 1).cwiseAbs().maxCoeff() == 0.0);

  const Eigen::MatrixXd u2 = darcy_solve(2.0 * one, grid);
  CHECK((u2 - 0.5 * u).cwiseAbs().maxCoeff() < 1e-8 * u.maxCoeff());

  const DarcyGrid coarse(31);
  const double coarse_max = darcy_solve(Eigen::MatrixXd::Ones(coarse.nodes(), coarse.nodes()), coarse).maxCoeff();
  CHECK(std::abs(coarse_max - u.maxCoeff()) / u.maxCoeff() < 0.02);
}

TEST_CASE("solver symmetry and monotonicity") {
  const DarcyGrid grid(31);
  Eigen::MatrixXd a(grid.nodes(), grid.nodes());
  for (int i = 0; i < grid.nodes(); ++i)
    for (int j = 0; j < grid.nodes(); ++j) a(i, j) = std::exp(std::sin(3.0 * grid.coord(i)) * std::sin(3.0 * grid.coord(j)) + grid.coord(i) + grid.coord(j));
  const Eigen::MatrixXd u = darcy_solve(a, grid);
  CHECK((u - u.transpose()).cwiseAbs().maxCoeff() < 1e-8 * u.maxCoeff());
  CHECK(u.block(1, 1, grid.m, grid.m).minCoeff() > 0.0);
  CHECK(darcy_solve(1.5 * a, grid).maxCoeff() < u.maxCoeff());

  Eigen::MatrixXd bad = a;
  bad(4, 5) = 0.0;
  CHECK_THROWS_AS(darcy_solve(bad, grid), std::invalid_argument);
  CHECK_THROWS_AS(DarcyGrid(7), std::invalid_argument);
}

TEST_CASE("Darcy limit state") {
  const DarcyModel model(4, 31);
  const double g0 = model.limit_state(std::vector<double>{0, 0, 0, 0});
  const DarcyGrid grid(31);
  const double umax = darcy_solve(Eigen::MatrixXd::Ones(grid.nodes(), grid.nodes()), grid).maxCoeff();
  CHECK(g0 == doctest::Approx(kDarcyThreshold - umax).epsilon(1e-12));
  CHECK(g0 > 0.0);
  CHECK(g0 == doctest::Approx(0.0083).epsilon(0.1));
  CHECK(model.limit_state(std::vector<double>{-5, 0, 0, 0}) < 0.0);
  CHECK(model.limit_state(std::vector<double>{5, 0, 0, 0}) > g0);

  std::ostringstream os;
  write_grid_csv(os, model.field(std::vector<double>{0, 0, 0, 0}), model.grid());
  const std::string text = os.str();
  CHECK(text.rfind("xi1,xi2,value\n", 0) == 0);
  CHECK(std::count(text.begin(), text.end(), '\n') == 1 + 33 * 33);
}
