#pragma once

#include <Eigen/Cholesky>
#include <Eigen/Dense>
#include <deque>
#include <functional>
#include <vector>

namespace pigpvae {

// Reverse-mode autodiff over dense matrices. A Tape owns the operation
// graph for one objective evaluation; Var is a cheap handle to a node.
// Creation order is a topological order, so backward() is a single reverse
// sweep. Constants are not tracked; gradient closures are only recorded on
// paths that reach a tracked leaf.
//
// The sym_* linear-algebra ops assume their matrix argument is
// symmetric-valued; their gradients are exact for inputs built from
// symmetric expressions (kernel matrices plus diagonals), which is the only
// way they are used here.

class Tape;

struct Node {
  Eigen::MatrixXd value;
  Eigen::MatrixXd grad;
  std::function<void(Node&)> back;
  bool requires_grad = false;
  bool has_grad = false;
  Tape* tape = nullptr;
};

class Var {
 public:
  Var() = default;

  const Eigen::MatrixXd& value() const { return node_->value; }
  // Valid after Tape::backward; zero-shaped if the node was never reached.
  Eigen::MatrixXd grad_or_zero() const;
  double scalar() const;

  Eigen::Index rows() const { return node_->value.rows(); }
  Eigen::Index cols() const { return node_->value.cols(); }
  bool defined() const { return node_ != nullptr; }
  bool requires_grad() const { return node_->requires_grad; }

  Node* node() const { return node_; }

 private:
  friend class Tape;
  explicit Var(Node* n) : node_(n) {}
  Node* node_ = nullptr;
};

class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Eigen::MatrixXd v);
  Var constant_scalar(double v);
  Var leaf(const Eigen::MatrixXd& v);  // tracked parameter leaf
  Var make(Eigen::MatrixXd v, bool requires_grad, std::function<void(Node&)> back);

  // Seeds d(loss)/d(loss) = 1 and runs one reverse sweep. loss must be 1x1.
  void backward(Var loss);

  std::size_t size() const { return nodes_.size(); }

 private:
  std::deque<Node> nodes_;
};

// -- elementwise binary ops; shapes must match or either side may be 1x1 --
Var operator+(Var a, Var b);
Var operator-(Var a, Var b);
Var operator*(Var a, Var b);  // cwise product
Var operator/(Var a, Var b);  // cwise quotient

// a * v + b, elementwise with double coefficients (single fused node)
Var scale_shift(Var v, double a, double b);
inline Var operator*(double c, Var v) { return scale_shift(v, c, 0.0); }
inline Var operator*(Var v, double c) { return scale_shift(v, c, 0.0); }
inline Var operator+(Var v, double c) { return scale_shift(v, 1.0, c); }
inline Var operator+(double c, Var v) { return scale_shift(v, 1.0, c); }
inline Var operator-(Var v, double c) { return scale_shift(v, 1.0, -c); }
inline Var operator-(double c, Var v) { return scale_shift(v, -1.0, c); }
inline Var operator-(Var v) { return scale_shift(v, -1.0, 0.0); }

// -- elementwise unary --
Var exp(Var v);
Var log(Var v);
Var tanh(Var v);
Var relu(Var v);
Var softplus(Var v);  // log(1 + e^x), numerically stable
Var square(Var v);
Var sqrt(Var v);

// -- structure --
Var matmul(Var a, Var b);
Var transpose(Var v);
Var add_colvec(Var m, Var v);  // broadcast column vector across columns
Var sum(Var v);                // 1x1
Var mean(Var v);               // 1x1
Var block(Var v, Eigen::Index i, Eigen::Index j, Eigen::Index p, Eigen::Index q);
Var reshape(Var v, Eigen::Index r, Eigen::Index c);  // column-major relayout
Var hstack(const std::vector<Var>& parts);
Var vstack(const std::vector<Var>& parts);
Var add_n(const std::vector<Var>& parts);  // same-shape sum
Var diagmat(Var v);    // column vector -> diagonal matrix
Var diagonal(Var m);   // square matrix -> column vector of its diagonal

// -- symmetric positive-definite linear algebra --
// Factorization retries once with 10x jitter; a second failure throws
// NumericalError naming the offending leading minor.
Var sym_solve(Var a, Var b, double jitter = 1e-6);   // a^{-1} b
Var sym_logdet(Var a, double jitter = 1e-6);         // log det a
Var chol_lower(Var a, double jitter = 1e-6);         // lower Cholesky factor

// Non-tape helper shared with the plain GP API: Cholesky with one jitter
// escalation; throws NumericalError on the second failure.
Eigen::LLT<Eigen::MatrixXd> factor_pd(const Eigen::MatrixXd& a, double jitter);

}  // namespace pigpvae
