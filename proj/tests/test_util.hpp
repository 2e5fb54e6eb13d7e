#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <functional>
#include <vector>

#include "pigpvae/nets.hpp"
#include "pigpvae/rng.hpp"
#include "pigpvae/tensor.hpp"

namespace testutil {

// Independent central-difference gradient of a scalar objective over a
// ParamStore. Deliberately separate from the library's grad_check so the
// two can cross-check each other.
inline double fd_max_rel_err(
    const std::function<pigpvae::Var(pigpvae::Tape&, const pigpvae::BoundParams&)>& objective,
    pigpvae::ParamStore& params, double h = 1e-5, double floor = 1e-6) {
  std::vector<Eigen::MatrixXd> analytic(params.size());
  {
    pigpvae::Tape tape;
    pigpvae::BoundParams bound = pigpvae::bind_params(tape, params);
    pigpvae::Var v = objective(tape, bound);
    tape.backward(v);
    for (std::size_t p = 0; p < params.size(); ++p)
      analytic[p] = bound.vars[p].grad_or_zero();
  }
  auto eval = [&]() {
    pigpvae::Tape tape;
    pigpvae::BoundParams bound = pigpvae::bind_params(tape, params);
    return objective(tape, bound).scalar();
  };
  double worst = 0.0;
  for (std::size_t p = 0; p < params.size(); ++p) {
    Eigen::MatrixXd& w = params.matrix(p);
    for (Eigen::Index i = 0; i < w.rows(); ++i) {
      for (Eigen::Index j = 0; j < w.cols(); ++j) {
        const double saved = w(i, j);
        w(i, j) = saved + h;
        const double up = eval();
        w(i, j) = saved - h;
        const double down = eval();
        w(i, j) = saved;
        const double numeric = (up - down) / (2.0 * h);
        const double a = analytic[p](i, j);
        const double rel =
            std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), floor});
        worst = std::max(worst, rel);
      }
    }
  }
  return worst;
}

inline Eigen::MatrixXd random_matrix(pigpvae::Rng& rng, Eigen::Index r,
                                     Eigen::Index c, double scale = 1.0) {
  Eigen::MatrixXd m(r, c);
  for (Eigen::Index i = 0; i < r; ++i)
    for (Eigen::Index j = 0; j < c; ++j) m(i, j) = scale * rng.normal();
  return m;
}

inline Eigen::MatrixXd random_pd(pigpvae::Rng& rng, Eigen::Index n) {
  Eigen::MatrixXd a = random_matrix(rng, n, n);
  return a * a.transpose() + 0.5 * Eigen::MatrixXd::Identity(n, n);
}

}  // namespace testutil
