#pragma once

#include <Eigen/Dense>

#include "pigpvae/tensor.hpp"

namespace pigpvae {

double softplus_scalar(double x);
double softplus_inv(double y);  // inverse of softplus on y > 0

// Gaussian prior over the unconstrained rate latent; the decoded rate is
// k = softplus(z_phy), so the KL stays the exact Gaussian formula while k
// stays positive.
struct PhysicalPrior {
  double mu = 1.8545865421312108;  // softplus_inv(2.0)
  double sigma = 0.5;

  void validate() const;
};

struct DiagGaussian {
  Eigen::VectorXd mean;
  Eigen::VectorXd sd;
};

// T(t) = (T0 - Ts) exp(-k t) + Ts. Total for k >= 0.
Eigen::VectorXd newton_solution(const Eigen::VectorXd& t, double t0, double ts,
                                double k);
Var newton_solution_op(Tape& tape, const Eigen::VectorXd& t, double t0,
                       double ts, Var k);

// KL(N(mu_q, sd_q^2) || N(mu_p, sd_p^2)) summed over dimensions.
double kl_gauss_gauss(const DiagGaussian& q, const PhysicalPrior& p);
// Elementwise over equally-shaped mu_q / sd_q nodes; returns the 1x1 sum.
Var kl_gauss_gauss_op(Tape& tape, Var mu_q, Var sd_q, double mu_p, double sd_p);

// newton_solution at k = softplus(z_phy), in degrees C.
Eigen::VectorXd physical_decode(double z_phy, const Eigen::VectorXd& t,
                                double t0, double ts);

}  // namespace pigpvae
