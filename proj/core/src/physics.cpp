#include "pigpvae/physics.hpp"

#include <cmath>

#include "pigpvae/errors.hpp"

namespace pigpvae {

double softplus_scalar(double x) {
  if (x > 30.0) return x;
  if (x < -30.0) return std::exp(x);
  return std::log1p(std::exp(x));
}

double softplus_inv(double y) {
  if (!(y > 0.0)) throw DomainError("softplus_inv requires a positive argument");
  if (y > 30.0) return y;
  return std::log(std::expm1(y));
}

void PhysicalPrior::validate() const {
  if (!(sigma > 0.0)) throw DomainError("physical prior sigma must be positive");
}

Eigen::VectorXd newton_solution(const Eigen::VectorXd& t, double t0, double ts,
                                double k) {
  if (k < 0.0) throw DomainError("newton_solution: k must be >= 0");
  return ((t0 - ts) * (-k * t.array()).exp() + ts).matrix();
}

Var newton_solution_op(Tape& tape, const Eigen::VectorXd& t, double t0,
                       double ts, Var k) {
  Var tv = tape.constant(t);
  return scale_shift(exp(tv * (-k)), t0 - ts, ts);
}

double kl_gauss_gauss(const DiagGaussian& q, const PhysicalPrior& p) {
  p.validate();
  if (q.mean.size() != q.sd.size())
    throw ShapeError("kl_gauss_gauss: mean/sd sizes disagree");
  if ((q.sd.array() <= 0.0).any())
    throw DomainError("kl_gauss_gauss: q sd must be positive");
  double total = 0.0;
  const double inv2p2 = 1.0 / (2.0 * p.sigma * p.sigma);
  for (Eigen::Index i = 0; i < q.mean.size(); ++i) {
    double dm = q.mean[i] - p.mu;
    total += std::log(p.sigma / q.sd[i]) +
             (q.sd[i] * q.sd[i] + dm * dm) * inv2p2 - 0.5;
  }
  return total;
}

Var kl_gauss_gauss_op(Tape& tape, Var mu_q, Var sd_q, double mu_p, double sd_p) {
  (void)tape;
  if (!(sd_p > 0.0)) throw DomainError("kl_gauss_gauss_op: prior sd must be positive");
  const double inv2p2 = 1.0 / (2.0 * sd_p * sd_p);
  Var logterm = scale_shift(log(sd_q), -1.0, std::log(sd_p));
  Var quad = scale_shift(square(sd_q) + square(mu_q - mu_p), inv2p2, -0.5);
  return sum(logterm + quad);
}

Eigen::VectorXd physical_decode(double z_phy, const Eigen::VectorXd& t,
                                double t0, double ts) {
  return newton_solution(t, t0, ts, softplus_scalar(z_phy));
}

}  // namespace pigpvae
