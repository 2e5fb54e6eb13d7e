#include "pigpvae/tensor.hpp"

#include <cmath>
#include <memory>
#include <string>

#include "pigpvae/errors.hpp"

namespace pigpvae {

namespace {

bool scalar_shaped(const Node* n) {
  return n->value.rows() == 1 && n->value.cols() == 1;
}

void require_same_tape(Var a, Var b) {
  if (a.node()->tape != b.node()->tape)
    throw UsageError("operands belong to different tapes");
}

// Accumulates an expression into a node's gradient, allocating on first use.
template <typename Expr>
void accum(Node* n, const Expr& e) {
  if (!n->requires_grad) return;
  if (!n->has_grad) {
    n->grad = e;
    n->has_grad = true;
  } else {
    n->grad += e;
  }
}

void accum_zero_init(Node* n) {
  if (!n->has_grad) {
    n->grad = Eigen::MatrixXd::Zero(n->value.rows(), n->value.cols());
    n->has_grad = true;
  }
}

// For broadcast ops: reduce gradient g to the parent's shape.
void accum_bcast(Node* n, const Eigen::MatrixXd& g) {
  if (!n->requires_grad) return;
  if (n->value.rows() == g.rows() && n->value.cols() == g.cols()) {
    accum(n, g);
  } else {
    // parent was a broadcast 1x1 scalar
    accum(n, Eigen::MatrixXd::Constant(1, 1, g.sum()));
  }
}

void check_binary_shapes(Var a, Var b, const char* op) {
  bool ok = (a.rows() == b.rows() && a.cols() == b.cols()) ||
            (a.rows() == 1 && a.cols() == 1) || (b.rows() == 1 && b.cols() == 1);
  if (!ok)
    throw ShapeError(std::string(op) + ": incompatible shapes " +
                     std::to_string(a.rows()) + "x" + std::to_string(a.cols()) +
                     " vs " + std::to_string(b.rows()) + "x" +
                     std::to_string(b.cols()));
}

template <typename F>
Eigen::MatrixXd bcast_apply(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b,
                            F&& f) {
  if (a.rows() == b.rows() && a.cols() == b.cols())
    return a.binaryExpr(b, std::forward<F>(f));
  if (a.size() == 1) {
    double s = a(0, 0);
    return b.unaryExpr([&](double x) { return f(s, x); });
  }
  double s = b(0, 0);
  return a.unaryExpr([&](double x) { return f(x, s); });
}

double stable_softplus(double x) {
  if (x > 30.0) return x;
  if (x < -30.0) return std::exp(x);
  return std::log1p(std::exp(x));
}

double stable_sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  double e = std::exp(x);
  return e / (1.0 + e);
}

// Lower triangle with halved diagonal (the Cholesky pullback projector).
Eigen::MatrixXd phi_lower(const Eigen::MatrixXd& m) {
  Eigen::MatrixXd out = m.triangularView<Eigen::Lower>();
  out.diagonal() *= 0.5;
  return out;
}

}  // namespace

Eigen::MatrixXd Var::grad_or_zero() const {
  if (node_->has_grad) return node_->grad;
  return Eigen::MatrixXd::Zero(node_->value.rows(), node_->value.cols());
}

double Var::scalar() const {
  if (node_->value.size() != 1) throw ShapeError("scalar() on non-1x1 value");
  return node_->value(0, 0);
}

Var Tape::constant(Eigen::MatrixXd v) {
  nodes_.push_back(Node{std::move(v), {}, nullptr, false, false, this});
  return Var(&nodes_.back());
}

Var Tape::constant_scalar(double v) {
  return constant(Eigen::MatrixXd::Constant(1, 1, v));
}

Var Tape::leaf(const Eigen::MatrixXd& v) {
  nodes_.push_back(Node{v, {}, nullptr, true, false, this});
  return Var(&nodes_.back());
}

Var Tape::make(Eigen::MatrixXd v, bool requires_grad,
               std::function<void(Node&)> back) {
  nodes_.push_back(Node{std::move(v), {}, requires_grad ? std::move(back) : nullptr,
                        requires_grad, false, this});
  return Var(&nodes_.back());
}

void Tape::backward(Var loss) {
  if (loss.node()->value.size() != 1)
    throw ShapeError("backward: loss must be 1x1");
  Node* ln = loss.node();
  if (!ln->requires_grad)
    throw UsageError("backward: loss does not depend on any tracked leaf");
  ln->grad = Eigen::MatrixXd::Constant(1, 1, 1.0);
  ln->has_grad = true;
  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
    if (it->has_grad && it->back) it->back(*it);
  }
}

// ---------------------------------------------------------------- binary ops

Var operator+(Var a, Var b) {
  require_same_tape(a, b);
  check_binary_shapes(a, b, "add");
  Node* pa = a.node();
  Node* pb = b.node();
  Eigen::MatrixXd val = bcast_apply(pa->value, pb->value,
                                    [](double x, double y) { return x + y; });
  bool rg = pa->requires_grad || pb->requires_grad;
  return pa->tape->make(std::move(val), rg, [pa, pb](Node& self) {
    accum_bcast(pa, self.grad);
    accum_bcast(pb, self.grad);
  });
}

Var operator-(Var a, Var b) {
  require_same_tape(a, b);
  check_binary_shapes(a, b, "sub");
  Node* pa = a.node();
  Node* pb = b.node();
  Eigen::MatrixXd val = bcast_apply(pa->value, pb->value,
                                    [](double x, double y) { return x - y; });
  bool rg = pa->requires_grad || pb->requires_grad;
  return pa->tape->make(std::move(val), rg, [pa, pb](Node& self) {
    accum_bcast(pa, self.grad);
    accum_bcast(pb, -self.grad);
  });
}

Var operator*(Var a, Var b) {
  require_same_tape(a, b);
  check_binary_shapes(a, b, "mul");
  Node* pa = a.node();
  Node* pb = b.node();
  Eigen::MatrixXd val = bcast_apply(pa->value, pb->value,
                                    [](double x, double y) { return x * y; });
  bool rg = pa->requires_grad || pb->requires_grad;
  return pa->tape->make(std::move(val), rg, [pa, pb](Node& self) {
    const Eigen::MatrixXd& g = self.grad;
    if (scalar_shaped(pa)) {
      accum(pa, Eigen::MatrixXd::Constant(1, 1, (g.array() * pb->value.array()).sum()));
      accum(pb, (pa->value(0, 0) * g.array()).matrix());
    } else if (scalar_shaped(pb)) {
      accum(pa, (pb->value(0, 0) * g.array()).matrix());
      accum(pb, Eigen::MatrixXd::Constant(1, 1, (g.array() * pa->value.array()).sum()));
    } else {
      accum(pa, (g.array() * pb->value.array()).matrix());
      accum(pb, (g.array() * pa->value.array()).matrix());
    }
  });
}

Var operator/(Var a, Var b) {
  require_same_tape(a, b);
  check_binary_shapes(a, b, "div");
  Node* pa = a.node();
  Node* pb = b.node();
  Eigen::MatrixXd val = bcast_apply(pa->value, pb->value,
                                    [](double x, double y) { return x / y; });
  bool rg = pa->requires_grad || pb->requires_grad;
  return pa->tape->make(std::move(val), rg, [pa, pb](Node& self) {
    const Eigen::MatrixXd& g = self.grad;
    if (scalar_shaped(pa) && !scalar_shaped(pb)) {
      accum(pa, Eigen::MatrixXd::Constant(1, 1, (g.array() / pb->value.array()).sum()));
      accum(pb, (-pa->value(0, 0) * g.array() / pb->value.array().square()).matrix());
    } else if (scalar_shaped(pb) && !scalar_shaped(pa)) {
      double bv = pb->value(0, 0);
      accum(pa, (g.array() / bv).matrix());
      accum(pb, Eigen::MatrixXd::Constant(
                    1, 1, -(g.array() * pa->value.array()).sum() / (bv * bv)));
    } else {
      accum(pa, (g.array() / pb->value.array()).matrix());
      accum(pb, (-g.array() * pa->value.array() / pb->value.array().square()).matrix());
    }
  });
}

Var scale_shift(Var v, double a, double b) {
  Node* p = v.node();
  Eigen::MatrixXd val = (a * p->value.array() + b).matrix();
  return p->tape->make(std::move(val), p->requires_grad, [p, a](Node& self) {
    accum(p, (a * self.grad.array()).matrix());
  });
}

// ----------------------------------------------------------------- unary ops

Var exp(Var v) {
  Node* p = v.node();
  Eigen::MatrixXd val = p->value.array().exp().matrix();
  return p->tape->make(std::move(val), p->requires_grad, [p](Node& self) {
    accum(p, (self.grad.array() * self.value.array()).matrix());
  });
}

Var log(Var v) {
  Node* p = v.node();
  Eigen::MatrixXd val = p->value.array().log().matrix();
  return p->tape->make(std::move(val), p->requires_grad, [p](Node& self) {
    accum(p, (self.grad.array() / p->value.array()).matrix());
  });
}

Var tanh(Var v) {
  Node* p = v.node();
  Eigen::MatrixXd val = p->value.array().tanh().matrix();
  return p->tape->make(std::move(val), p->requires_grad, [p](Node& self) {
    accum(p, (self.grad.array() * (1.0 - self.value.array().square())).matrix());
  });
}

Var relu(Var v) {
  Node* p = v.node();
  Eigen::MatrixXd val = p->value.array().max(0.0).matrix();
  return p->tape->make(std::move(val), p->requires_grad, [p](Node& self) {
    accum(p, (self.grad.array() * (p->value.array() > 0.0).cast<double>()).matrix());
  });
}

Var softplus(Var v) {
  Node* p = v.node();
  Eigen::MatrixXd val = p->value.unaryExpr(&stable_softplus);
  return p->tape->make(std::move(val), p->requires_grad, [p](Node& self) {
    accum(p, (self.grad.array() *
              p->value.unaryExpr(&stable_sigmoid).array()).matrix());
  });
}

Var square(Var v) {
  Node* p = v.node();
  Eigen::MatrixXd val = p->value.array().square().matrix();
  return p->tape->make(std::move(val), p->requires_grad, [p](Node& self) {
    accum(p, (2.0 * self.grad.array() * p->value.array()).matrix());
  });
}

Var sqrt(Var v) {
  Node* p = v.node();
  Eigen::MatrixXd val = p->value.array().sqrt().matrix();
  return p->tape->make(std::move(val), p->requires_grad, [p](Node& self) {
    accum(p, (0.5 * self.grad.array() / self.value.array()).matrix());
  });
}

// ----------------------------------------------------------------- structure

Var matmul(Var a, Var b) {
  require_same_tape(a, b);
  if (a.cols() != b.rows())
    throw ShapeError("matmul: inner dimensions disagree (" +
                     std::to_string(a.cols()) + " vs " + std::to_string(b.rows()) + ")");
  Node* pa = a.node();
  Node* pb = b.node();
  Eigen::MatrixXd val = pa->value * pb->value;
  bool rg = pa->requires_grad || pb->requires_grad;
  return pa->tape->make(std::move(val), rg, [pa, pb](Node& self) {
    accum(pa, self.grad * pb->value.transpose());
    accum(pb, pa->value.transpose() * self.grad);
  });
}

Var transpose(Var v) {
  Node* p = v.node();
  Eigen::MatrixXd val = p->value.transpose();
  return p->tape->make(std::move(val), p->requires_grad, [p](Node& self) {
    accum(p, self.grad.transpose());
  });
}

Var add_colvec(Var m, Var v) {
  require_same_tape(m, v);
  if (v.cols() != 1 || v.rows() != m.rows())
    throw ShapeError("add_colvec: vector must be rows(m) x 1");
  Node* pm = m.node();
  Node* pv = v.node();
  Eigen::MatrixXd val = pm->value.colwise() + Eigen::VectorXd(pv->value.col(0));
  bool rg = pm->requires_grad || pv->requires_grad;
  return pm->tape->make(std::move(val), rg, [pm, pv](Node& self) {
    accum(pm, self.grad);
    accum(pv, Eigen::MatrixXd(self.grad.rowwise().sum()));
  });
}

Var sum(Var v) {
  Node* p = v.node();
  Eigen::MatrixXd val = Eigen::MatrixXd::Constant(1, 1, p->value.sum());
  return p->tape->make(std::move(val), p->requires_grad, [p](Node& self) {
    accum(p, Eigen::MatrixXd::Constant(p->value.rows(), p->value.cols(),
                                       self.grad(0, 0)));
  });
}

Var mean(Var v) {
  Node* p = v.node();
  double n = static_cast<double>(p->value.size());
  Eigen::MatrixXd val = Eigen::MatrixXd::Constant(1, 1, p->value.sum() / n);
  return p->tape->make(std::move(val), p->requires_grad, [p, n](Node& self) {
    accum(p, Eigen::MatrixXd::Constant(p->value.rows(), p->value.cols(),
                                       self.grad(0, 0) / n));
  });
}

Var block(Var v, Eigen::Index i, Eigen::Index j, Eigen::Index p, Eigen::Index q) {
  Node* pn = v.node();
  if (i < 0 || j < 0 || p < 1 || q < 1 || i + p > v.rows() || j + q > v.cols())
    throw ShapeError("block: out of range");
  Eigen::MatrixXd val = pn->value.block(i, j, p, q);
  return pn->tape->make(std::move(val), pn->requires_grad, [pn, i, j, p, q](Node& self) {
    if (!pn->requires_grad) return;
    accum_zero_init(pn);
    pn->grad.block(i, j, p, q) += self.grad;
  });
}

Var reshape(Var v, Eigen::Index r, Eigen::Index c) {
  Node* p = v.node();
  if (r * c != p->value.size()) throw ShapeError("reshape: size mismatch");
  Eigen::MatrixXd val = Eigen::Map<const Eigen::MatrixXd>(p->value.data(), r, c);
  return p->tape->make(std::move(val), p->requires_grad, [p](Node& self) {
    accum(p, Eigen::MatrixXd(Eigen::Map<const Eigen::MatrixXd>(
                 self.grad.data(), p->value.rows(), p->value.cols())));
  });
}

Var hstack(const std::vector<Var>& parts) {
  if (parts.empty()) throw ShapeError("hstack: empty");
  Eigen::Index r = parts[0].rows();
  Eigen::Index c = 0;
  bool rg = false;
  for (const Var& v : parts) {
    if (v.rows() != r) throw ShapeError("hstack: row counts disagree");
    c += v.cols();
    rg = rg || v.requires_grad();
  }
  Eigen::MatrixXd val(r, c);
  std::vector<Node*> ps;
  ps.reserve(parts.size());
  Eigen::Index off = 0;
  for (const Var& v : parts) {
    val.middleCols(off, v.cols()) = v.value();
    ps.push_back(v.node());
    off += v.cols();
  }
  return parts[0].node()->tape->make(std::move(val), rg, [ps](Node& self) {
    Eigen::Index off2 = 0;
    for (Node* p : ps) {
      accum(p, Eigen::MatrixXd(self.grad.middleCols(off2, p->value.cols())));
      off2 += p->value.cols();
    }
  });
}

Var vstack(const std::vector<Var>& parts) {
  if (parts.empty()) throw ShapeError("vstack: empty");
  Eigen::Index c = parts[0].cols();
  Eigen::Index r = 0;
  bool rg = false;
  for (const Var& v : parts) {
    if (v.cols() != c) throw ShapeError("vstack: column counts disagree");
    r += v.rows();
    rg = rg || v.requires_grad();
  }
  Eigen::MatrixXd val(r, c);
  std::vector<Node*> ps;
  ps.reserve(parts.size());
  Eigen::Index off = 0;
  for (const Var& v : parts) {
    val.middleRows(off, v.rows()) = v.value();
    ps.push_back(v.node());
    off += v.rows();
  }
  return parts[0].node()->tape->make(std::move(val), rg, [ps](Node& self) {
    Eigen::Index off2 = 0;
    for (Node* p : ps) {
      accum(p, Eigen::MatrixXd(self.grad.middleRows(off2, p->value.rows())));
      off2 += p->value.rows();
    }
  });
}

Var add_n(const std::vector<Var>& parts) {
  if (parts.empty()) throw ShapeError("add_n: empty");
  Eigen::Index r = parts[0].rows();
  Eigen::Index c = parts[0].cols();
  bool rg = false;
  Eigen::MatrixXd val = Eigen::MatrixXd::Zero(r, c);
  std::vector<Node*> ps;
  ps.reserve(parts.size());
  for (const Var& v : parts) {
    if (v.rows() != r || v.cols() != c) throw ShapeError("add_n: shapes disagree");
    val += v.value();
    ps.push_back(v.node());
    rg = rg || v.requires_grad();
  }
  return parts[0].node()->tape->make(std::move(val), rg, [ps](Node& self) {
    for (Node* p : ps) accum(p, self.grad);
  });
}

Var diagmat(Var v) {
  if (v.cols() != 1) throw ShapeError("diagmat: expects a column vector");
  Node* p = v.node();
  Eigen::MatrixXd val = Eigen::VectorXd(p->value.col(0)).asDiagonal();
  return p->tape->make(std::move(val), p->requires_grad, [p](Node& self) {
    accum(p, Eigen::MatrixXd(self.grad.diagonal()));
  });
}

Var diagonal(Var m) {
  if (m.rows() != m.cols()) throw ShapeError("diagonal: expects a square matrix");
  Node* p = m.node();
  Eigen::MatrixXd val = p->value.diagonal();
  return p->tape->make(std::move(val), p->requires_grad, [p](Node& self) {
    if (!p->requires_grad) return;
    accum_zero_init(p);
    p->grad.diagonal() += self.grad.col(0);
  });
}

// ----------------------------------------------------- PD linear algebra

Eigen::LLT<Eigen::MatrixXd> factor_pd(const Eigen::MatrixXd& a, double jitter) {
  Eigen::LLT<Eigen::MatrixXd> llt(a);
  if (llt.info() == Eigen::Success) return llt;
  Eigen::MatrixXd bumped =
      a + 10.0 * jitter * Eigen::MatrixXd::Identity(a.rows(), a.cols());
  llt.compute(bumped);
  if (llt.info() == Eigen::Success) return llt;
  // locate the failing leading minor for the error message
  Eigen::Index n = a.rows();
  Eigen::MatrixXd l = Eigen::MatrixXd::Zero(n, n);
  for (Eigen::Index j = 0; j < n; ++j) {
    double d = bumped(j, j) - l.row(j).head(j).squaredNorm();
    if (!(d > 0.0)) {
      throw NumericalError("cholesky failed: leading minor of order " +
                           std::to_string(j + 1) + " is not positive definite");
    }
    l(j, j) = std::sqrt(d);
    for (Eigen::Index i = j + 1; i < n; ++i) {
      l(i, j) = (bumped(i, j) - l.row(i).head(j).dot(l.row(j).head(j))) / l(j, j);
    }
  }
  throw NumericalError("cholesky failed for a matrix that passes the pivot scan");
}

Var sym_solve(Var a, Var b, double jitter) {
  require_same_tape(a, b);
  if (a.rows() != a.cols() || a.rows() != b.rows())
    throw ShapeError("sym_solve: shape mismatch");
  Node* pa = a.node();
  Node* pb = b.node();
  auto llt = std::make_shared<Eigen::LLT<Eigen::MatrixXd>>(factor_pd(pa->value, jitter));
  Eigen::MatrixXd x = llt->solve(pb->value);
  bool rg = pa->requires_grad || pb->requires_grad;
  return pa->tape->make(std::move(x), rg, [pa, pb, llt](Node& self) {
    Eigen::MatrixXd gb = llt->solve(self.grad);
    accum(pb, gb);
    accum(pa, Eigen::MatrixXd(-gb * self.value.transpose()));
  });
}

Var sym_logdet(Var a, double jitter) {
  if (a.rows() != a.cols()) throw ShapeError("sym_logdet: expects square matrix");
  Node* pa = a.node();
  auto llt = std::make_shared<Eigen::LLT<Eigen::MatrixXd>>(factor_pd(pa->value, jitter));
  double ld = 2.0 * Eigen::MatrixXd(llt->matrixL()).diagonal().array().log().sum();
  return pa->tape->make(Eigen::MatrixXd::Constant(1, 1, ld), pa->requires_grad,
                        [pa, llt](Node& self) {
    Eigen::Index n = pa->value.rows();
    Eigen::MatrixXd ainv = llt->solve(Eigen::MatrixXd::Identity(n, n));
    accum(pa, Eigen::MatrixXd(self.grad(0, 0) * ainv));
  });
}

Var chol_lower(Var a, double jitter) {
  if (a.rows() != a.cols()) throw ShapeError("chol_lower: expects square matrix");
  Node* pa = a.node();
  auto llt = std::make_shared<Eigen::LLT<Eigen::MatrixXd>>(factor_pd(pa->value, jitter));
  Eigen::MatrixXd l = llt->matrixL();
  return pa->tape->make(std::move(l), pa->requires_grad, [pa](Node& self) {
    // Reverse of sigma = L L^T restricted to the lower triangle, with the
    // symmetrized pullback for symmetric-valued inputs.
    const Eigen::MatrixXd& l2 = self.value;
    Eigen::MatrixXd gl = self.grad.triangularView<Eigen::Lower>();
    Eigen::MatrixXd p = phi_lower(l2.transpose() * gl);
    Eigen::MatrixXd tmp =
        l2.transpose().triangularView<Eigen::Upper>().solve(p);  // L^{-T} P
    Eigen::MatrixXd s =
        l2.transpose().triangularView<Eigen::Upper>().solve(tmp.transpose()).transpose();
    accum(pa, Eigen::MatrixXd(0.5 * (s + s.transpose())));
  });
}

}  // namespace pigpvae
