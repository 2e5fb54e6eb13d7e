#include <doctest.h>

#include <Eigen/Dense>
#include <cmath>

#include "pigpvae/errors.hpp"
#include "pigpvae/physics.hpp"
#include "test_util.hpp"

using namespace pigpvae;

namespace {

// RK4 integration of dT/dt = -k (T - Ts), the independent oracle for the
// closed-form solution.
double rk4_newton(double t_end, double t0, double ts, double k, int steps = 20000) {
  double t = 0.0;
  double temp = t0;
  const double h = t_end / steps;
  auto f = [&](double x) { return -k * (x - ts); };
  for (int i = 0; i < steps; ++i) {
    double k1 = f(temp);
    double k2 = f(temp + 0.5 * h * k1);
    double k3 = f(temp + 0.5 * h * k2);
    double k4 = f(temp + h * k3);
    temp += h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    t += h;
  }
  (void)t;
  return temp;
}

// Gauss-Legendre quadrature of the KL integrand, the independent oracle for
// the closed-form Gaussian KL.
double kl_quadrature(double mu_q, double sd_q, double mu_p, double sd_p) {
  // 2000-node midpoint rule over +-12 sd of q; integrand decays like the
  // q density so the truncation error is far below 1e-8
  const int n = 2000;
  const double lo = mu_q - 12.0 * sd_q;
  const double hi = mu_q + 12.0 * sd_q;
  const double h = (hi - lo) / n;
  auto logpdf = [](double x, double mu, double sd) {
    double z = (x - mu) / sd;
    return -0.5 * z * z - std::log(sd) - 0.5 * std::log(2.0 * M_PI);
  };
  double total = 0.0;
  for (int i = 0; i < n; ++i) {
    double x = lo + (i + 0.5) * h;
    double lq = logpdf(x, mu_q, sd_q);
    total += std::exp(lq) * (lq - logpdf(x, mu_p, sd_p));
  }
  return total * h;
}

}  // namespace

TEST_CASE("newton solution worked values") {
  Eigen::VectorXd t = Eigen::VectorXd::LinSpaced(24, 0.0, 10.0);

  // equilibrium: t0 == ts
  Eigen::VectorXd eq = newton_solution(t, 20.0, 20.0, 0.5);
  CHECK((eq.array() - 20.0).abs().maxCoeff() == 0.0);

  // no heat exchange: k = 0
  Eigen::VectorXd frozen = newton_solution(t, 30.0, 20.0, 0.0);
  CHECK((frozen.array() - 30.0).abs().maxCoeff() == 0.0);

  // worked value cross-checked against numeric integration
  Eigen::VectorXd single(1);
  single << 10.0;
  double v = newton_solution(single, 30.0, 20.0, 0.1)[0];
  CHECK(v == doctest::Approx(20.0 + 10.0 * std::exp(-1.0)).epsilon(1e-12));
  CHECK(v == doctest::Approx(23.678794411714423).epsilon(1e-10));
  CHECK(v == doctest::Approx(rk4_newton(10.0, 30.0, 20.0, 0.1)).epsilon(1e-10));

  CHECK_THROWS_AS(newton_solution(t, 30.0, 20.0, -0.5), DomainError);
}

TEST_CASE("newton ODE residual via central differences") {
  // On a grid of spacing h the central-difference residual is O(h^2 k^3 |dT|),
  // so the grid is refined until the 1e-5 bound is guaranteed with margin.
  Rng rng(7);
  for (int rep = 0; rep < 20; ++rep) {
    double k = 0.1 + 2.4 * rng.uniform();
    double t0 = 25.0 + 10.0 * rng.uniform();
    double ts = 15.0;
    double delta = std::abs(t0 - ts);
    double h_needed = std::sqrt(6.0 * 1e-6 / (k * k * k * delta));
    int t_len = std::max(24, static_cast<int>(std::ceil(1.0 / h_needed)) + 1);
    Eigen::VectorXd grid = Eigen::VectorXd::LinSpaced(t_len, 0.0, 1.0);
    Eigen::VectorXd curve = newton_solution(grid, t0, ts, k);
    double h = grid[1] - grid[0];
    double worst = 0.0;
    for (int i = 1; i + 1 < t_len; ++i) {
      double lhs = (curve[i + 1] - curve[i - 1]) / (2.0 * h);
      double rhs = -k * (curve[i] - ts);
      worst = std::max(worst, std::abs(lhs - rhs));
    }
    CHECK(worst <= 1e-5);
  }
}

TEST_CASE("kl_gauss_gauss worked values and quadrature oracle") {
  PhysicalPrior p;

  SUBCASE("identical distributions") {
    p.mu = 0.7;
    p.sigma = 1.3;
    DiagGaussian q{Eigen::VectorXd::Constant(1, 0.7),
                   Eigen::VectorXd::Constant(1, 1.3)};
    CHECK(std::abs(kl_gauss_gauss(q, p)) < 1e-12);
  }

  SUBCASE("KL(N(0,1) || N(1,1)) = 1/2") {
    p.mu = 1.0;
    p.sigma = 1.0;
    DiagGaussian q{Eigen::VectorXd::Zero(1), Eigen::VectorXd::Ones(1)};
    CHECK(kl_gauss_gauss(q, p) == doctest::Approx(0.5).epsilon(1e-12));
    CHECK(kl_gauss_gauss(q, p) == doctest::Approx(kl_quadrature(0, 1, 1, 1)).epsilon(1e-8));
  }

  SUBCASE("KL(N(0,4) || N(0,1))") {
    p.mu = 0.0;
    p.sigma = 1.0;
    DiagGaussian q{Eigen::VectorXd::Zero(1), Eigen::VectorXd::Constant(1, 2.0)};
    double expected = std::log(0.5) + 2.0 - 0.5;
    CHECK(kl_gauss_gauss(q, p) == doctest::Approx(expected).epsilon(1e-12));
    CHECK(expected == doctest::Approx(0.8068528194400547).epsilon(1e-10));
    CHECK(kl_gauss_gauss(q, p) == doctest::Approx(kl_quadrature(0, 2, 0, 1)).epsilon(1e-7));
  }

  SUBCASE("random parameter sets against quadrature") {
    Rng rng(23);
    for (int rep = 0; rep < 50; ++rep) {
      double mu_q = 2.0 * rng.normal();
      double sd_q = 0.3 + rng.uniform();
      p.mu = 2.0 * rng.normal();
      p.sigma = 0.3 + rng.uniform();
      DiagGaussian q{Eigen::VectorXd::Constant(1, mu_q),
                     Eigen::VectorXd::Constant(1, sd_q)};
      double closed = kl_gauss_gauss(q, p);
      double numeric = kl_quadrature(mu_q, sd_q, p.mu, p.sigma);
      CHECK(std::abs(closed - numeric) < 1e-6);
    }
  }

  SUBCASE("domain errors") {
    DiagGaussian q{Eigen::VectorXd::Zero(1), Eigen::VectorXd::Constant(1, -1.0)};
    CHECK_THROWS_AS(kl_gauss_gauss(q, p), DomainError);
  }
}

TEST_CASE("kl is nonnegative and zero only at equality") {
  Rng rng(29);
  for (int rep = 0; rep < 50; ++rep) {
    PhysicalPrior p;
    p.mu = rng.normal();
    p.sigma = 0.3 + rng.uniform();
    DiagGaussian q{Eigen::VectorXd::Constant(1, p.mu),
                   Eigen::VectorXd::Constant(1, p.sigma)};
    CHECK(std::abs(kl_gauss_gauss(q, p)) < 1e-12);
    DiagGaussian q2{Eigen::VectorXd::Constant(1, p.mu + 1e-3),
                    Eigen::VectorXd::Constant(1, p.sigma)};
    CHECK(kl_gauss_gauss(q2, p) > 0.0);
    DiagGaussian q3{Eigen::VectorXd::Constant(1, rng.normal()),
                    Eigen::VectorXd::Constant(1, 0.2 + rng.uniform())};
    CHECK(kl_gauss_gauss(q3, p) >= 0.0);
  }
}

TEST_CASE("kl reduces to the standard-normal VAE formula at a unit prior") {
  // (sd^2 + mu^2 - 1 - log sd^2) / 2 must agree with the general formula
  PhysicalPrior unit;
  unit.mu = 0.0;
  unit.sigma = 1.0;
  Rng rng(31);
  for (int rep = 0; rep < 30; ++rep) {
    double mu = 2.0 * rng.normal();
    double sd = 0.2 + 2.0 * rng.uniform();
    DiagGaussian q{Eigen::VectorXd::Constant(1, mu),
                   Eigen::VectorXd::Constant(1, sd)};
    double vae_form = 0.5 * (sd * sd + mu * mu - 1.0 - std::log(sd * sd));
    CHECK(kl_gauss_gauss(q, unit) == doctest::Approx(vae_form).epsilon(1e-12));
  }
}

TEST_CASE("physical_decode limits") {
  Eigen::VectorXd t = Eigen::VectorXd::LinSpaced(24, 0.0, 1.0);

  // softplus lower limit: k ~ 0, constant t0
  Eigen::VectorXd frozen = physical_decode(-40.0, t, 30.0, 20.0);
  CHECK((frozen.array() - 30.0).abs().maxCoeff() < 1e-12);

  // heating: nondecreasing and bounded above by ts
  Eigen::VectorXd heat = physical_decode(1.2, t, 18.0, 27.0);
  for (int i = 1; i < 24; ++i) CHECK(heat[i] >= heat[i - 1]);
  CHECK(heat.maxCoeff() <= 27.0);

  // z = 0 gives k = ln 2; at t = 1 with (30, 20): 20 + 10 e^{-ln 2} = 25
  Eigen::VectorXd single(1);
  single << 1.0;
  CHECK(physical_decode(0.0, single, 30.0, 20.0)[0] ==
        doctest::Approx(25.0).epsilon(1e-12));
}

TEST_CASE("softplus_inv inverts softplus") {
  for (double y : {1e-4, 0.1, 0.6931, 2.0, 10.0, 35.0})
    CHECK(softplus_scalar(softplus_inv(y)) == doctest::Approx(y).epsilon(1e-10));
  CHECK_THROWS_AS(softplus_inv(-1.0), DomainError);
}

TEST_CASE("newton and kl tape ops match finite differences") {
  Eigen::VectorXd grid = Eigen::VectorXd::LinSpaced(8, 0.0, 1.0);
  ParamStore params;
  params.add("z", Eigen::MatrixXd::Constant(1, 1, 0.4));
  params.add("mu", Eigen::MatrixXd::Constant(1, 3, 0.2));
  params.add("sd_raw", Eigen::MatrixXd::Constant(1, 3, -0.3));

  auto objective = [grid](Tape& tape, const BoundParams& p) {
    Var k = softplus(p.at("z"));
    Var curve = newton_solution_op(tape, grid, 30.0, 20.0, k);
    Var sd = scale_shift(softplus(p.at("sd_raw")), 1.0, 1e-6);
    Var kl = kl_gauss_gauss_op(tape, p.at("mu"), sd, 1.2, 0.6);
    return sum(square(curve)) * 1e-3 + kl;
  };
  CHECK(testutil::fd_max_rel_err(objective, params, 1e-6) < 1e-4);
}
