#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <utility>
#include <vector>

#include "pigpvae/tensor.hpp"

namespace pigpvae {

// Squared-exponential kernel hyperparameters on the normalized time grid.
struct KernelParams {
  double lengthscale = 0.2;
  double variance = 1.0;
  double jitter = 1e-6;

  void validate() const;
};

// Encoder outputs treated as noisy regression targets: per-channel
// per-timestep means and heteroscedastic noise standard deviations.
struct PseudoObservations {
  Eigen::MatrixXd targets;   // L x T
  Eigen::MatrixXd noise_sd;  // L x T, elementwise >= 1e-6

  void validate(Eigen::Index t_len) const;
  Eigen::Index channels() const { return targets.rows(); }
};

// Exact GP posterior per latent channel; full covariance is kept so
// posterior draws carry the right temporal correlation.
struct GpPosterior {
  Eigen::MatrixXd mean;               // L x T
  std::vector<Eigen::MatrixXd> cov;   // L matrices, each T x T
};

// K[i][j] = s^2 exp(-(t_i - t_j)^2 / (2 l^2)) + jitter * 1{i=j}
Eigen::MatrixXd kernel_matrix(const Eigen::VectorXd& time_grid,
                              const KernelParams& params);

// Solves K x = b and returns log det K via Cholesky.
std::pair<Eigen::MatrixXd, double> chol_solve(const Eigen::MatrixXd& k_pd,
                                              const Eigen::MatrixXd& b,
                                              double jitter = 1e-6);

GpPosterior gp_posterior(const Eigen::VectorXd& time_grid,
                         const PseudoObservations& pseudo,
                         const KernelParams& params);

// sum_l log N(x~_l ; 0, K + D_l) with D_l = diag(noise_sd_l^2)
double gp_log_marginal(const Eigen::VectorXd& time_grid,
                       const PseudoObservations& pseudo,
                       const KernelParams& params);

Eigen::MatrixXd sample_prior(const Eigen::VectorXd& time_grid,
                             const KernelParams& params, int channels,
                             std::uint64_t seed);

Eigen::MatrixXd sample_posterior(const GpPosterior& posterior, double jitter,
                                 std::uint64_t seed);

// ---- tape builders (differentiable w.r.t. log-hyperparameters and
// pseudo-observations); shared by the model objectives ----

// log_ell and log_s2 are 1x1 nodes; jitter enters as a fixed diagonal.
Var kernel_matrix_op(Tape& tape, const Eigen::VectorXd& time_grid, Var log_ell,
                     Var log_s2, double jitter);

// One latent channel of exact GP regression on pseudo-observations.
struct GpChannelOps {
  Var mean;        // T x 1
  Var cov;         // T x T
  Var marginal_var;  // T x 1 (diagonal of cov)
  Var log_z;       // 1x1
};
GpChannelOps gp_channel_op(Tape& tape, Var kernel, Var target, Var noise_sd,
                           double jitter);

// Closed-form E_q[log q*] for one channel given posterior marginals.
Var gp_entropy_term_op(Tape& tape, Var post_mean, Var post_var, Var target,
                       Var noise_sd);

}  // namespace pigpvae
