#pragma once

// Reverse-mode automatic differentiation over dense matrix values.
//
// Every node holds an Eigen matrix. Columns are samples, rows are features,
// so a batch of B points in d dimensions is a d x B node. The tape records
// nodes in creation order and backward() walks them in reverse.

#include <Eigen/Dense>

#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

namespace dnf::ad {

class NumericalFailure : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class Tape;

/// Handle to a node on a Tape. Cheap to copy.
struct Var {
  int id = -1;
};

class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var leaf(Eigen::MatrixXd value, bool requires_grad);
  Var scalar(double value, bool requires_grad) {
    return leaf(Eigen::MatrixXd::Constant(1, 1, value), requires_grad);
  }

  const Eigen::MatrixXd& value(Var v) const { return nodes_.at(v.id).value; }
  /// Gradient accumulated by backward(). Zero matrix when nothing flowed in.
  Eigen::MatrixXd grad(Var v) const;
  bool requires_grad(Var v) const { return nodes_.at(v.id).requires_grad; }

  // Linear algebra.
  Var matmul(Var a, Var b);
  /// x (n x B) plus column vector b (n x 1) broadcast over columns.
  Var add_bias(Var x, Var b);
  Var add(Var a, Var b);
  Var sub(Var a, Var b);
  Var mul(Var a, Var b);
  Var scale(Var a, double c);
  Var add_constant(Var a, double c);
  /// Row-wise affine map with constant coefficients: out(r, :) = x(r, :) * s(r) + t(r).
  Var affine_rows(Var x, const Eigen::VectorXd& s, const Eigen::VectorXd& t);

  // Elementwise nonlinearities.
  Var swish(Var a);
  Var tanh(Var a);
  Var exp(Var a);
  Var square(Var a);

  // Reductions.
  Var sum(Var a);
  Var mean(Var a);
  /// Column sums: n x B -> 1 x B.
  Var sum_rows(Var a);

  // Row selection for coupling layers.
  Var select_rows(Var a, const std::vector<int>& rows);
  /// Builds an n-row matrix whose rows `rows_a` come from a and `rows_b` from b.
  Var merge_rows(Var a, const std::vector<int>& rows_a, Var b, const std::vector<int>& rows_b, int n);

  /// Attaches an externally differentiated function f: R^n -> R applied per
  /// column. `values` is 1 x B, `jacobian` is n x B holding df/dx per column.
  Var external(Var x, Eigen::MatrixXd values, Eigen::MatrixXd jacobian);

  /// Propagates d(out)/d(node) for every node that requires a gradient.
  /// `out` must be 1 x 1. Throws NumericalFailure on non-finite values.
  void backward(Var out);

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Eigen::MatrixXd value;
    Eigen::MatrixXd grad;
    bool requires_grad = false;
    std::function<void(Tape&, const Eigen::MatrixXd&)> backprop;
  };

  Var push(Eigen::MatrixXd value, bool requires_grad,
           std::function<void(Tape&, const Eigen::MatrixXd&)> backprop);
  void accumulate(int id, const Eigen::MatrixXd& g);
  template <class Product>
  void accumulate_product(int id, const Product& p) {
    Node& n = nodes_[id];
    if (!n.requires_grad) return;
    if (n.grad.size() == 0) {
      n.grad = p;
    } else {
      n.grad.noalias() += p;
    }
  }
  bool any_requires(std::initializer_list<Var> vs) const;

  std::vector<Node> nodes_;
};

inline double swish(double z) { return z / (1.0 + std::exp(-z)); }

}  // namespace dnf::ad
