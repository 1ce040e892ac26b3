#include "dnf/tape.hpp"

#include <cmath>

namespace dnf::ad {

namespace {

Eigen::MatrixXd sigmoid(const Eigen::MatrixXd& z) {
  return (1.0 + (-z.array()).exp()).inverse().matrix();
}

void check_same_shape(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw std::invalid_argument(std::string("shape mismatch in ") + op);
  }
}

}  // namespace

Var Tape::push(Eigen::MatrixXd value, bool requires_grad,
               std::function<void(Tape&, const Eigen::MatrixXd&)> backprop) {
  Node n;
  n.value = std::move(value);
  n.requires_grad = requires_grad;
  if (requires_grad) n.backprop = std::move(backprop);
  nodes_.push_back(std::move(n));
  return Var{static_cast<int>(nodes_.size()) - 1};
}

bool Tape::any_requires(std::initializer_list<Var> vs) const {
  for (Var v : vs) {
    if (nodes_.at(v.id).requires_grad) return true;
  }
  return false;
}

void Tape::accumulate(int id, const Eigen::MatrixXd& g) {
  Node& n = nodes_[id];
  if (!n.requires_grad) return;
  if (n.grad.size() == 0) {
    n.grad = g;
  } else {
    n.grad += g;
  }
}

Eigen::MatrixXd Tape::grad(Var v) const {
  const Node& n = nodes_.at(v.id);
  if (n.grad.size() == 0) return Eigen::MatrixXd::Zero(n.value.rows(), n.value.cols());
  return n.grad;
}

Var Tape::leaf(Eigen::MatrixXd value, bool requires_grad) {
  return push(std::move(value), requires_grad, {});
}

Var Tape::matmul(Var a, Var b) {
  const auto& va = value(a);
  const auto& vb = value(b);
  if (va.cols() != vb.rows()) throw std::invalid_argument("shape mismatch in matmul");
  return push(va * vb, any_requires({a, b}), [a, b](Tape& t, const Eigen::MatrixXd& g) {
    if (t.requires_grad(a)) t.accumulate_product(a.id, g * t.value(b).transpose());
    if (t.requires_grad(b)) t.accumulate_product(b.id, t.value(a).transpose() * g);
  });
}

Var Tape::add_bias(Var x, Var b) {
  const auto& vx = value(x);
  const auto& vb = value(b);
  if (vb.cols() != 1 || vb.rows() != vx.rows()) throw std::invalid_argument("shape mismatch in add_bias");
  Eigen::MatrixXd out = vx.colwise() + vb.col(0);
  return push(std::move(out), any_requires({x, b}), [x, b](Tape& t, const Eigen::MatrixXd& g) {
    t.accumulate(x.id, g);
    if (t.requires_grad(b)) t.accumulate(b.id, g.rowwise().sum());
  });
}

Var Tape::add(Var a, Var b) {
  check_same_shape(value(a), value(b), "add");
  return push(value(a) + value(b), any_requires({a, b}), [a, b](Tape& t, const Eigen::MatrixXd& g) {
    t.accumulate(a.id, g);
    t.accumulate(b.id, g);
  });
}

Var Tape::sub(Var a, Var b) {
  check_same_shape(value(a), value(b), "sub");
  return push(value(a) - value(b), any_requires({a, b}), [a, b](Tape& t, const Eigen::MatrixXd& g) {
    t.accumulate(a.id, g);
    if (t.requires_grad(b)) t.accumulate(b.id, -g);
  });
}

Var Tape::mul(Var a, Var b) {
  check_same_shape(value(a), value(b), "mul");
  Eigen::MatrixXd out = value(a).cwiseProduct(value(b));
  return push(std::move(out), any_requires({a, b}), [a, b](Tape& t, const Eigen::MatrixXd& g) {
    if (t.requires_grad(a)) t.accumulate(a.id, g.cwiseProduct(t.value(b)));
    if (t.requires_grad(b)) t.accumulate(b.id, g.cwiseProduct(t.value(a)));
  });
}

Var Tape::scale(Var a, double c) {
  return push(value(a) * c, any_requires({a}), [a, c](Tape& t, const Eigen::MatrixXd& g) {
    t.accumulate(a.id, g * c);
  });
}

Var Tape::add_constant(Var a, double c) {
  Eigen::MatrixXd out = value(a).array() + c;
  return push(std::move(out), any_requires({a}), [a](Tape& t, const Eigen::MatrixXd& g) {
    t.accumulate(a.id, g);
  });
}

Var Tape::affine_rows(Var x, const Eigen::VectorXd& s, const Eigen::VectorXd& shift) {
  const auto& vx = value(x);
  if (s.size() != vx.rows() || shift.size() != vx.rows()) {
    throw std::invalid_argument("shape mismatch in affine_rows");
  }
  Eigen::MatrixXd out = (s.asDiagonal() * vx).colwise() + shift;
  return push(std::move(out), any_requires({x}), [x, s](Tape& t, const Eigen::MatrixXd& g) {
    t.accumulate(x.id, s.asDiagonal() * g);
  });
}

Var Tape::swish(Var a) {
  const auto& z = value(a);
  Eigen::MatrixXd sig = sigmoid(z);
  Eigen::MatrixXd out = z.cwiseProduct(sig);
  // d/dz z*s(z) = s + z*s*(1-s)
  Eigen::MatrixXd deriv = (sig.array() + z.array() * sig.array() * (1.0 - sig.array())).matrix();
  return push(std::move(out), any_requires({a}),
              [a, deriv = std::move(deriv)](Tape& t, const Eigen::MatrixXd& g) {
                t.accumulate(a.id, g.cwiseProduct(deriv));
              });
}

Var Tape::tanh(Var a) {
  Eigen::MatrixXd out = value(a).array().tanh().matrix();
  Var r = push(out, any_requires({a}), {});
  if (requires_grad(r)) {
    nodes_[r.id].backprop = [a, r](Tape& t, const Eigen::MatrixXd& g) {
      const auto& y = t.value(r);
      t.accumulate(a.id, (g.array() * (1.0 - y.array().square())).matrix());
    };
  }
  return r;
}

Var Tape::exp(Var a) {
  Eigen::MatrixXd out = value(a).array().exp().matrix();
  Var r = push(out, any_requires({a}), {});
  if (requires_grad(r)) {
    nodes_[r.id].backprop = [a, r](Tape& t, const Eigen::MatrixXd& g) {
      t.accumulate(a.id, g.cwiseProduct(t.value(r)));
    };
  }
  return r;
}

Var Tape::square(Var a) {
  Eigen::MatrixXd out = value(a).array().square().matrix();
  return push(std::move(out), any_requires({a}), [a](Tape& t, const Eigen::MatrixXd& g) {
    t.accumulate(a.id, 2.0 * g.cwiseProduct(t.value(a)));
  });
}

Var Tape::sum(Var a) {
  const auto& va = value(a);
  const Eigen::Index r = va.rows();
  const Eigen::Index c = va.cols();
  return push(Eigen::MatrixXd::Constant(1, 1, va.sum()), any_requires({a}),
              [a, r, c](Tape& t, const Eigen::MatrixXd& g) {
                t.accumulate(a.id, Eigen::MatrixXd::Constant(r, c, g(0, 0)));
              });
}

Var Tape::mean(Var a) {
  const double n = static_cast<double>(value(a).size());
  if (n == 0) throw std::invalid_argument("mean of empty node");
  return scale(sum(a), 1.0 / n);
}

Var Tape::sum_rows(Var a) {
  const Eigen::Index r = value(a).rows();
  Eigen::MatrixXd out = value(a).colwise().sum();
  return push(std::move(out), any_requires({a}), [a, r](Tape& t, const Eigen::MatrixXd& g) {
    t.accumulate(a.id, g.replicate(r, 1));
  });
}

Var Tape::select_rows(Var a, const std::vector<int>& rows) {
  const auto& va = value(a);
  Eigen::MatrixXd out(static_cast<Eigen::Index>(rows.size()), va.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) out.row(i) = va.row(rows[i]);
  const Eigen::Index nr = va.rows();
  return push(std::move(out), any_requires({a}), [a, rows, nr](Tape& t, const Eigen::MatrixXd& g) {
    Eigen::MatrixXd full = Eigen::MatrixXd::Zero(nr, g.cols());
    for (std::size_t i = 0; i < rows.size(); ++i) full.row(rows[i]) += g.row(i);
    t.accumulate(a.id, full);
  });
}

Var Tape::merge_rows(Var a, const std::vector<int>& rows_a, Var b, const std::vector<int>& rows_b, int n) {
  const auto& va = value(a);
  const auto& vb = value(b);
  if (va.cols() != vb.cols() || static_cast<std::size_t>(va.rows()) != rows_a.size() ||
      static_cast<std::size_t>(vb.rows()) != rows_b.size() ||
      rows_a.size() + rows_b.size() != static_cast<std::size_t>(n)) {
    throw std::invalid_argument("shape mismatch in merge_rows");
  }
  Eigen::MatrixXd out(n, va.cols());
  for (std::size_t i = 0; i < rows_a.size(); ++i) out.row(rows_a[i]) = va.row(i);
  for (std::size_t i = 0; i < rows_b.size(); ++i) out.row(rows_b[i]) = vb.row(i);
  return push(std::move(out), any_requires({a, b}),
              [a, b, rows_a, rows_b](Tape& t, const Eigen::MatrixXd& g) {
                if (t.requires_grad(a)) {
                  Eigen::MatrixXd ga(rows_a.size(), g.cols());
                  for (std::size_t i = 0; i < rows_a.size(); ++i) ga.row(i) = g.row(rows_a[i]);
                  t.accumulate(a.id, ga);
                }
                if (t.requires_grad(b)) {
                  Eigen::MatrixXd gb(rows_b.size(), g.cols());
                  for (std::size_t i = 0; i < rows_b.size(); ++i) gb.row(i) = g.row(rows_b[i]);
                  t.accumulate(b.id, gb);
                }
              });
}

Var Tape::external(Var x, Eigen::MatrixXd values, Eigen::MatrixXd jacobian) {
  const auto& vx = value(x);
  if (values.rows() != 1 || values.cols() != vx.cols()) {
    throw std::invalid_argument("external: values must be 1 x B");
  }
  check_same_shape(vx, jacobian, "external");
  return push(std::move(values), any_requires({x}),
              [x, jac = std::move(jacobian)](Tape& t, const Eigen::MatrixXd& g) {
                // g is 1 x B; scale each column of the jacobian.
                t.accumulate(x.id, jac * g.row(0).asDiagonal());
              });
}

void Tape::backward(Var out) {
  Node& root = nodes_.at(out.id);
  if (root.value.size() != 1) throw std::invalid_argument("backward() needs a scalar output");
  if (!std::isfinite(root.value(0, 0))) {
    throw NumericalFailure("non-finite loss value in backward pass");
  }
  for (auto& n : nodes_) n.grad.resize(0, 0);
  if (!root.requires_grad) return;
  root.grad = Eigen::MatrixXd::Constant(1, 1, 1.0);
  for (int i = out.id; i >= 0; --i) {
    Node& n = nodes_[i];
    if (!n.requires_grad || n.grad.size() == 0 || !n.backprop) continue;
    // backprop only accumulates into earlier nodes, so n.grad stays valid.
    n.backprop(*this, n.grad);
  }
  // Non-finite values propagate, so checking the leaves is enough.
  for (std::size_t i = 0; i < nodes_.size(); ++i) {
    const Node& n = nodes_[i];
    if (!n.backprop && n.grad.size() > 0 && !n.grad.allFinite()) {
      throw NumericalFailure("non-finite gradient at tape leaf " + std::to_string(i));
    }
  }
}

}  // namespace dnf::ad
