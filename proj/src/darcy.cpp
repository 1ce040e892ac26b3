#include "dnf/darcy.hpp"

#include <Eigen/IterativeLinearSolvers>
#include <Eigen/Sparse>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <ostream>
#include <stdexcept>
#include <tuple>

namespace dnf {

namespace {

double cosine_factor(int order, double xi) {
  return order == 0 ? 1.0 : std::numbers::sqrt2 * std::cos(order * std::numbers::pi * xi);
}

double face_coefficient(double a, double b) { return 2.0 * a * b / (a + b); }

}  // namespace

DarcyGrid::DarcyGrid(int interior) : m(interior) {
  if (m < 8) throw std::invalid_argument("Darcy grid needs at least 8 interior nodes per axis");
}

double KlMode::eval(double xi1, double xi2) const { return cosine_factor(j, xi1) * cosine_factor(k, xi2); }

KlBasis kl_basis(int d) {
  if (d < 1 || d > 16) throw std::invalid_argument("KL truncation must lie in [1, 16]");
  std::vector<KlMode> all;
  constexpr int kMaxOrder = 16;
  for (int j = 0; j <= kMaxOrder; ++j) {
    for (int k = 0; k <= kMaxOrder; ++k) {
      const double lam = std::numbers::pi * std::numbers::pi * (j * j + k * k) + 9.0;
      all.push_back({j, k, 1.0 / (lam * lam)});
    }
  }
  std::stable_sort(all.begin(), all.end(), [](const KlMode& a, const KlMode& b) {
    if (a.eigenvalue != b.eigenvalue) return a.eigenvalue > b.eigenvalue;
    return std::tie(a.j, a.k) < std::tie(b.j, b.k);
  });
  all.resize(static_cast<std::size_t>(d));
  return {all};
}

Eigen::MatrixXd kl_expand(std::span<const double> x, const KlBasis& basis, const DarcyGrid& grid) {
  if (static_cast<int>(x.size()) != basis.dim()) throw std::invalid_argument("KL coefficient count mismatch");
  const int n = grid.nodes();
  Eigen::MatrixXd out = Eigen::MatrixXd::Zero(n, n);
  for (int q = 0; q < basis.dim(); ++q) {
    const KlMode& mode = basis.modes[static_cast<std::size_t>(q)];
    const double c = std::sqrt(mode.eigenvalue) * x[static_cast<std::size_t>(q)];
    if (c == 0.0) continue;
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j) out(i, j) += c * mode.eval(grid.coord(i), grid.coord(j));
  }
  return out;
}

double kl_inner_product(const KlMode& a, const KlMode& b, const DarcyGrid& grid) {
  const int n = grid.nodes();
  const double h = grid.h();
  double sum = 0.0;
  for (int i = 0; i < n; ++i) {
    const double wi = (i == 0 || i == n - 1) ? 0.5 : 1.0;
    for (int j = 0; j < n; ++j) {
      const double wj = (j == 0 || j == n - 1) ? 0.5 : 1.0;
      const double x1 = grid.coord(i);
      const double x2 = grid.coord(j);
      sum += wi * wj * a.eval(x1, x2) * b.eval(x1, x2);
    }
  }
  return sum * h * h;
}

namespace {

Eigen::SparseMatrix<double> assemble(const Eigen::MatrixXd& a, const DarcyGrid& grid) {
  const int m = grid.m;
  const double inv_h2 = 1.0 / (grid.h() * grid.h());
  auto index = [m](int i, int j) { return (i - 1) + (j - 1) * m; };
  std::vector<Eigen::Triplet<double>> trip;
  trip.reserve(static_cast<std::size_t>(5 * m * m));
  for (int j = 1; j <= m; ++j) {
    for (int i = 1; i <= m; ++i) {
      const int row = index(i, j);
      double diag = 0.0;
      const int nbr[4][2] = {{i - 1, j}, {i + 1, j}, {i, j - 1}, {i, j + 1}};
      for (const auto& nb : nbr) {
        const double c = face_coefficient(a(i, j), a(nb[0], nb[1])) * inv_h2;
        diag += c;
        const bool interior = nb[0] >= 1 && nb[0] <= m && nb[1] >= 1 && nb[1] <= m;
        if (interior) trip.emplace_back(row, index(nb[0], nb[1]), -c);
      }
      trip.emplace_back(row, row, diag);
    }
  }
  Eigen::SparseMatrix<double> A(m * m, m * m);
  A.setFromTriplets(trip.begin(), trip.end());
  return A;
}

void check_field(const Eigen::MatrixXd& a, const DarcyGrid& grid) {
  if (a.rows() != grid.nodes() || a.cols() != grid.nodes()) throw std::invalid_argument("field does not match grid");
  if (!a.allFinite() || (a.array() <= 0.0).any()) throw std::invalid_argument("diffusion field must be positive");
}

}  // namespace

Eigen::MatrixXd darcy_solve(const Eigen::MatrixXd& a, const DarcyGrid& grid) {
  check_field(a, grid);
  const int m = grid.m;
  const Eigen::SparseMatrix<double> A = assemble(a, grid);
  const Eigen::VectorXd f = Eigen::VectorXd::Ones(m * m);
  Eigen::ConjugateGradient<Eigen::SparseMatrix<double>, Eigen::Lower | Eigen::Upper,
                           Eigen::DiagonalPreconditioner<double>>
      cg;
  cg.setTolerance(1e-10);
  cg.setMaxIterations(20 * m * m);
  cg.compute(A);
  const Eigen::VectorXd u = cg.solve(f);
  if (cg.info() != Eigen::Success) throw std::runtime_error("Darcy CG solve did not converge");
  Eigen::MatrixXd out = Eigen::MatrixXd::Zero(grid.nodes(), grid.nodes());
  out.block(1, 1, m, m) = u.reshaped(m, m);
  return out;
}

double darcy_relative_residual(const Eigen::MatrixXd& a, const Eigen::MatrixXd& u, const DarcyGrid& grid) {
  check_field(a, grid);
  const int m = grid.m;
  const Eigen::SparseMatrix<double> A = assemble(a, grid);
  const Eigen::MatrixXd inner = u.block(1, 1, m, m);
  const Eigen::VectorXd uv = inner.reshaped();
  const Eigen::VectorXd f = Eigen::VectorXd::Ones(m * m);
  return (A * uv - f).norm() / f.norm();
}

DarcyModel::DarcyModel(int d, int interior_nodes) : basis_(kl_basis(d)), grid_(interior_nodes) {}

Eigen::MatrixXd DarcyModel::field(std::span<const double> x) const {
  return kl_expand(x, basis_, grid_).array().exp().matrix();
}

Eigen::MatrixXd DarcyModel::solve(std::span<const double> x) const { return darcy_solve(field(x), grid_); }

double DarcyModel::limit_state(std::span<const double> x) const { return kDarcyThreshold - solve(x).maxCoeff(); }

void write_grid_csv(std::ostream& os, const Eigen::MatrixXd& values, const DarcyGrid& grid) {
  const auto old = os.precision(17);
  os << "xi1,xi2,value\n";
  for (int j = 0; j < grid.nodes(); ++j)
    for (int i = 0; i < grid.nodes(); ++i) os << grid.coord(i) << ',' << grid.coord(j) << ',' << values(i, j) << '\n';
  os.precision(old);
}

}  // namespace dnf
