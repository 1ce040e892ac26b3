#pragma once

// Log-normal Darcy benchmark on the unit square: KL field, finite-difference
// solve with zero Dirichlet boundary, and the max-pressure limit state.

#include <Eigen/Dense>

#include <iosfwd>
#include <span>
#include <vector>

namespace dnf {

/// Node grid on [0,1]^2 with m interior nodes per axis, spacing h = 1/(m+1).
/// Fields are stored on all (m+2)^2 nodes, boundary included, as (m+2) x (m+2)
/// matrices indexed (i, j) <-> (xi1 = i h, xi2 = j h).
struct DarcyGrid {
  int m = 31;

  explicit DarcyGrid(int interior);
  int nodes() const { return m + 2; }
  double h() const { return 1.0 / (m + 1); }
  double coord(int i) const { return i * h(); }
};

struct KlMode {
  int j = 0;  // cosine order along xi1
  int k = 0;  // cosine order along xi2
  double eigenvalue = 0.0;

  double eval(double xi1, double xi2) const;
};

/// Leading eigenpairs of (-Laplace + 9 I)^{-2} with zero Neumann conditions on [0,1]^2.
struct KlBasis {
  std::vector<KlMode> modes;  // eigenvalue descending
  int dim() const { return static_cast<int>(modes.size()); }
};

KlBasis kl_basis(int d);

/// ln a on every grid node for coefficients x (zero mean).
Eigen::MatrixXd kl_expand(std::span<const double> x, const KlBasis& basis, const DarcyGrid& grid);

/// Trapezoid-rule L2 inner product of two modes on the grid nodes.
double kl_inner_product(const KlMode& a, const KlMode& b, const DarcyGrid& grid);

/// Solves -div(a grad u) = f with f = 1 and zero Dirichlet boundary.
/// `a` is given on all nodes; the returned u has zero boundary rows/columns.
/// Harmonic averaging at cell faces, diagonally preconditioned CG to 1e-10 relative residual.
Eigen::MatrixXd darcy_solve(const Eigen::MatrixXd& a, const DarcyGrid& grid);

/// ||A u - f|| / ||f|| for the discrete system, interior nodes only.
double darcy_relative_residual(const Eigen::MatrixXd& a, const Eigen::MatrixXd& u, const DarcyGrid& grid);

constexpr double kDarcyThreshold = 0.082;

/// x -> eps - max u(x). Failure (<= 0) means the peak pressure reaches the threshold.
class DarcyModel {
 public:
  DarcyModel(int d, int interior_nodes);

  const KlBasis& basis() const { return basis_; }
  const DarcyGrid& grid() const { return grid_; }

  Eigen::MatrixXd field(std::span<const double> x) const;  // a = exp(ln a)
  Eigen::MatrixXd solve(std::span<const double> x) const;
  double limit_state(std::span<const double> x) const;

 private:
  KlBasis basis_;
  DarcyGrid grid_;
};

/// Writes "xi1,xi2,value" rows for every node.
void write_grid_csv(std::ostream& os, const Eigen::MatrixXd& values, const DarcyGrid& grid);

}  // namespace dnf
