#include "pigpvae/gp.hpp"

#include <cmath>
#include <numbers>
#include <string>

#include "pigpvae/errors.hpp"
#include "pigpvae/rng.hpp"

namespace pigpvae {

namespace {
constexpr double kLog2Pi = 1.8378770664093454836;  // log(2*pi)

void require_ascending(const Eigen::VectorXd& grid) {
  for (Eigen::Index i = 1; i < grid.size(); ++i)
    if (!(grid[i] > grid[i - 1]))
      throw DomainError("time grid must be strictly increasing");
}
}  // namespace

void KernelParams::validate() const {
  if (!(lengthscale > 0.0) || !(variance > 0.0) || !(jitter > 0.0))
    throw DomainError("kernel parameters must be strictly positive");
  if (jitter > 1e-3) throw DomainError("kernel jitter must be <= 1e-3");
}

void PseudoObservations::validate(Eigen::Index t_len) const {
  if (targets.rows() != noise_sd.rows() || targets.cols() != noise_sd.cols())
    throw ShapeError("pseudo-observations: targets and noise_sd shapes disagree");
  if (targets.cols() != t_len)
    throw ShapeError("pseudo-observations: column count must match the time grid");
  if ((noise_sd.array() < 1e-6).any())
    throw DomainError("pseudo-observation noise sd below the 1e-6 floor");
}

Eigen::MatrixXd kernel_matrix(const Eigen::VectorXd& time_grid,
                              const KernelParams& params) {
  params.validate();
  require_ascending(time_grid);
  const Eigen::Index t = time_grid.size();
  Eigen::MatrixXd k(t, t);
  const double inv2l2 = 1.0 / (2.0 * params.lengthscale * params.lengthscale);
  for (Eigen::Index j = 0; j < t; ++j) {
    for (Eigen::Index i = 0; i < t; ++i) {
      double d = time_grid[i] - time_grid[j];
      k(i, j) = params.variance * std::exp(-d * d * inv2l2);
    }
  }
  k.diagonal().array() += params.jitter;
  return k;
}

std::pair<Eigen::MatrixXd, double> chol_solve(const Eigen::MatrixXd& k_pd,
                                              const Eigen::MatrixXd& b,
                                              double jitter) {
  if (k_pd.rows() != k_pd.cols()) throw ShapeError("chol_solve: matrix not square");
  if (k_pd.rows() != b.rows()) throw ShapeError("chol_solve: rhs rows disagree");
  auto llt = factor_pd(k_pd, jitter);
  double logdet = 2.0 * Eigen::MatrixXd(llt.matrixL()).diagonal().array().log().sum();
  return {llt.solve(b), logdet};
}

GpPosterior gp_posterior(const Eigen::VectorXd& time_grid,
                         const PseudoObservations& pseudo,
                         const KernelParams& params) {
  pseudo.validate(time_grid.size());
  const Eigen::MatrixXd k = kernel_matrix(time_grid, params);
  const Eigen::Index l_count = pseudo.channels();
  const Eigen::Index t = time_grid.size();

  GpPosterior post;
  post.mean.resize(l_count, t);
  post.cov.reserve(static_cast<std::size_t>(l_count));
  for (Eigen::Index l = 0; l < l_count; ++l) {
    Eigen::MatrixXd a = k;
    a.diagonal() += pseudo.noise_sd.row(l).array().square().matrix().transpose();
    auto llt = factor_pd(a, params.jitter);
    Eigen::MatrixXd kinv_k = llt.solve(k);              // (K+D)^{-1} K
    Eigen::VectorXd m = kinv_k.transpose() * pseudo.targets.row(l).transpose();
    Eigen::MatrixXd cov = k - k * kinv_k;
    cov = 0.5 * (cov + cov.transpose());
    post.mean.row(l) = m.transpose();
    post.cov.push_back(std::move(cov));
  }
  return post;
}

double gp_log_marginal(const Eigen::VectorXd& time_grid,
                       const PseudoObservations& pseudo,
                       const KernelParams& params) {
  pseudo.validate(time_grid.size());
  const Eigen::MatrixXd k = kernel_matrix(time_grid, params);
  const Eigen::Index t = time_grid.size();
  double total = 0.0;
  for (Eigen::Index l = 0; l < pseudo.channels(); ++l) {
    Eigen::MatrixXd a = k;
    a.diagonal() += pseudo.noise_sd.row(l).array().square().matrix().transpose();
    Eigen::VectorXd y = pseudo.targets.row(l).transpose();
    auto [ainv_y, logdet] = chol_solve(a, y, params.jitter);
    total += -0.5 * y.dot(ainv_y.col(0)) - 0.5 * logdet -
             0.5 * static_cast<double>(t) * kLog2Pi;
  }
  return total;
}

Eigen::MatrixXd sample_prior(const Eigen::VectorXd& time_grid,
                             const KernelParams& params, int channels,
                             std::uint64_t seed) {
  if (channels < 1) throw DomainError("sample_prior: channels must be >= 1");
  const Eigen::MatrixXd k = kernel_matrix(time_grid, params);
  auto llt = factor_pd(k, params.jitter);
  Eigen::MatrixXd l = llt.matrixL();
  Rng rng(seed);
  const Eigen::Index t = time_grid.size();
  Eigen::MatrixXd out(channels, t);
  for (int c = 0; c < channels; ++c) {
    Eigen::VectorXd eps(t);
    for (Eigen::Index i = 0; i < t; ++i) eps[i] = rng.normal();
    out.row(c) = (l * eps).transpose();
  }
  return out;
}

Eigen::MatrixXd sample_posterior(const GpPosterior& posterior, double jitter,
                                 std::uint64_t seed) {
  const Eigen::Index l_count = posterior.mean.rows();
  const Eigen::Index t = posterior.mean.cols();
  Rng rng(seed);
  Eigen::MatrixXd out(l_count, t);
  for (Eigen::Index l = 0; l < l_count; ++l) {
    Eigen::MatrixXd c = posterior.cov[static_cast<std::size_t>(l)];
    c.diagonal().array() += jitter;
    auto llt = factor_pd(c, jitter);
    Eigen::MatrixXd fac = llt.matrixL();
    Eigen::VectorXd eps(t);
    for (Eigen::Index i = 0; i < t; ++i) eps[i] = rng.normal();
    out.row(l) = posterior.mean.row(l) + (fac * eps).transpose();
  }
  return out;
}

// --------------------------------------------------------------- tape ops

Var kernel_matrix_op(Tape& tape, const Eigen::VectorXd& time_grid, Var log_ell,
                     Var log_s2, double jitter) {
  require_ascending(time_grid);
  const Eigen::Index t = time_grid.size();
  Eigen::MatrixXd neg_half_d2(t, t);
  for (Eigen::Index j = 0; j < t; ++j)
    for (Eigen::Index i = 0; i < t; ++i) {
      double d = time_grid[i] - time_grid[j];
      neg_half_d2(i, j) = -0.5 * d * d;
    }
  Var d2 = tape.constant(std::move(neg_half_d2));
  // s^2 * exp(-d^2 / (2 l^2)) with l^2 = exp(2 log_ell)
  Var inv_l2 = exp(scale_shift(log_ell, -2.0, 0.0));
  Var k = exp(log_s2) * exp(d2 * inv_l2);
  Eigen::MatrixXd jit = jitter * Eigen::MatrixXd::Identity(t, t);
  return k + tape.constant(std::move(jit));
}

GpChannelOps gp_channel_op(Tape& tape, Var kernel, Var target, Var noise_sd,
                           double jitter) {
  (void)tape;
  const Eigen::Index t = kernel.rows();
  if (target.rows() != t || target.cols() != 1)
    throw ShapeError("gp_channel_op: target must be T x 1");
  Var a = kernel + diagmat(square(noise_sd));
  Var kinv_k = sym_solve(a, kernel, jitter);           // (K+D)^{-1} K
  Var m = matmul(transpose(kinv_k), target);           // K (K+D)^{-1} x~
  Var cov = kernel - matmul(kernel, kinv_k);
  Var ainv_y = sym_solve(a, target, jitter);
  Var quad = sum(target * ainv_y);
  Var logdet = sym_logdet(a, jitter);
  Var log_z = scale_shift(quad + logdet, -0.5,
                          -0.5 * static_cast<double>(t) * kLog2Pi);
  return {m, cov, diagonal(cov), log_z};
}

Var gp_entropy_term_op(Tape& tape, Var post_mean, Var post_var, Var target,
                       Var noise_sd) {
  (void)tape;
  // sum_t [ log N(m_t ; x~_t, sd_t^2) - s_t^2 / (2 sd_t^2) ]
  Var var2 = scale_shift(square(noise_sd), 2.0, 0.0);
  Var quad = (square(post_mean - target) + post_var) / var2;
  Var logc = scale_shift(log(noise_sd), -1.0, -0.5 * kLog2Pi);
  return sum(logc - quad);
}

}  // namespace pigpvae
