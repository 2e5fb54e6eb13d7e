#include <doctest.h>

#include <Eigen/Dense>
#include <cmath>

#include "pigpvae/data.hpp"
#include "pigpvae/errors.hpp"
#include "pigpvae/metrics.hpp"
#include "test_util.hpp"

using namespace pigpvae;

namespace {

// Literal transcriptions of the estimator definitions, kept independent of
// the library implementations.
double mmd_bruteforce(const Eigen::MatrixXd& x, const Eigen::MatrixXd& y,
                      double sigma) {
  auto k = [sigma](const Eigen::RowVectorXd& a, const Eigen::RowVectorXd& b) {
    return std::exp(-(a - b).squaredNorm() / (2.0 * sigma * sigma));
  };
  const Eigen::Index n = x.rows(), m = y.rows();
  double xx = 0, yy = 0, xy = 0;
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < n; ++j)
      if (i != j) xx += k(x.row(i), x.row(j));
  for (Eigen::Index i = 0; i < m; ++i)
    for (Eigen::Index j = 0; j < m; ++j)
      if (i != j) yy += k(y.row(i), y.row(j));
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < m; ++j) xy += k(x.row(i), y.row(j));
  return xx / (double(n) * (n - 1)) + yy / (double(m) * (m - 1)) -
         2.0 * xy / (double(n) * m);
}

double pearson(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
  double ma = a.mean(), mb = b.mean();
  double num = ((a.array() - ma) * (b.array() - mb)).sum();
  double da = std::sqrt((a.array() - ma).square().sum());
  double db = std::sqrt((b.array() - mb).square().sum());
  return num / (da * db);
}

double cd_bruteforce(const Eigen::MatrixXd& x, const Eigen::MatrixXd& y) {
  double total = 0.0;
  for (Eigen::Index i = 0; i < x.cols(); ++i)
    for (Eigen::Index j = 0; j < x.cols(); ++j)
      total += std::abs(pearson(x.col(i), x.col(j)) - pearson(y.col(i), y.col(j)));
  return total;
}

double mdd_bruteforce(const Eigen::MatrixXd& x, const Eigen::MatrixXd& y,
                      int bins) {
  double total = 0.0;
  for (Eigen::Index j = 0; j < x.cols(); ++j) {
    double lo = std::min(x.col(j).minCoeff(), y.col(j).minCoeff());
    double hi = std::max(x.col(j).maxCoeff(), y.col(j).maxCoeff());
    if (!(hi > lo)) continue;
    double w = (hi - lo) / bins;
    std::vector<double> p(bins, 0.0), q(bins, 0.0);
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
      int b = std::min(bins - 1, std::max(0, int((x(i, j) - lo) / w)));
      p[b] += 1.0 / x.rows();
    }
    for (Eigen::Index i = 0; i < y.rows(); ++i) {
      int b = std::min(bins - 1, std::max(0, int((y(i, j) - lo) / w)));
      q[b] += 1.0 / y.rows();
    }
    double d = 0.0;
    for (int b = 0; b < bins; ++b) d += std::abs(p[b] - q[b]);
    total += d / bins;
  }
  return total / x.cols();
}

SeriesBatch gen_batch(int n, std::uint64_t seed) {
  SurrogateSpec spec;
  spec.n = n;
  spec.seed = seed;
  return synthesize_surrogate(spec);
}

}  // namespace

TEST_CASE("mmd on identical sets equals 2(kbar - 1)/m") {
  Rng rng(3);
  Eigen::MatrixXd x = testutil::random_matrix(rng, 6, 4);
  MmdResult res = mmd2_unbiased(x, x, 1.5);
  // off-diagonal mean of the within-set kernel
  double kbar = 0.0;
  int count = 0;
  for (int i = 0; i < 6; ++i)
    for (int j = 0; j < 6; ++j)
      if (i != j) {
        kbar += std::exp(-(x.row(i) - x.row(j)).squaredNorm() / (2.0 * 1.5 * 1.5));
        ++count;
      }
  kbar /= count;
  double expected = 2.0 * (kbar - 1.0) / 6.0;
  CHECK(res.mmd2 == doctest::Approx(expected).epsilon(1e-12));
  CHECK(res.mmd2 <= 0.0);  // unbiased estimator is negative on identical sets
}

TEST_CASE("mmd matches the brute-force double loop") {
  Rng rng(5);
  for (int rep = 0; rep < 10; ++rep) {
    Eigen::MatrixXd x = testutil::random_matrix(rng, 7, 5);
    Eigen::MatrixXd y = testutil::random_matrix(rng, 9, 5, 1.3);
    MmdResult res = mmd2_unbiased(x, y);
    CHECK(res.bandwidth > 0.0);
    CHECK(res.mmd2 ==
          doctest::Approx(mmd_bruteforce(x, y, res.bandwidth)).epsilon(1e-12));
  }
}

TEST_CASE("mmd null calibration over bootstrap repetitions") {
  Rng rng(7);
  const int reps = 200;
  std::vector<double> estimates;
  estimates.reserve(reps);
  for (int r = 0; r < reps; ++r) {
    Eigen::MatrixXd x = testutil::random_matrix(rng, 20, 6);
    Eigen::MatrixXd y = testutil::random_matrix(rng, 20, 6);
    estimates.push_back(mmd2_unbiased(x, y, 2.0).mmd2);
  }
  double mean = 0.0;
  for (double e : estimates) mean += e / reps;
  double var = 0.0;
  for (double e : estimates) var += (e - mean) * (e - mean) / (reps - 1.0);
  double se = std::sqrt(var / reps);
  CHECK(std::abs(mean) < 3.0 * se);
}

TEST_CASE("mmd input validation and bandwidth floor") {
  Eigen::MatrixXd one = Eigen::MatrixXd::Zero(1, 3);
  Eigen::MatrixXd two = Eigen::MatrixXd::Zero(2, 3);
  CHECK_THROWS_AS(mmd2_unbiased(one, two), UsageError);
  CHECK_THROWS_AS(mmd2_unbiased(two, two, -1.0), DomainError);
  // all points identical: zero median distance floors the bandwidth
  MmdResult res = mmd2_unbiased(two, two);
  CHECK(res.bandwidth == 1e-6);
}

TEST_CASE("correlation difference worked example and properties") {
  // T = 2: x perfectly correlated, y perfectly anticorrelated
  Eigen::MatrixXd x(3, 2), y(3, 2);
  x << 0, 0, 1, 1, 2, 2;
  y << 0, 2, 1, 1, 2, 0;
  CdResult res = correlation_difference(x, y);
  CHECK(res.value == doctest::Approx(4.0).epsilon(1e-12));
  CHECK(res.skipped_pairs == 0);

  CHECK(correlation_difference(y, x).value ==
        doctest::Approx(res.value).epsilon(1e-15));
  CHECK(correlation_difference(x, x).value == 0.0);
  CHECK_THROWS_AS(correlation_difference(x.topRows(2), y), UsageError);
}

TEST_CASE("correlation difference matches brute force and skips constants") {
  Rng rng(9);
  Eigen::MatrixXd x = testutil::random_matrix(rng, 8, 5);
  Eigen::MatrixXd y = testutil::random_matrix(rng, 10, 5);
  CdResult res = correlation_difference(x, y);
  CHECK(res.value == doctest::Approx(cd_bruteforce(x, y)).epsilon(1e-12));

  // one constant column in x: every pair touching column 2 is skipped
  Eigen::MatrixXd xc = x;
  xc.col(2).setConstant(3.0);
  CdResult skipped = correlation_difference(xc, y);
  CHECK(skipped.skipped_pairs == 9);  // row 2 and column 2 of a 5x5 grid
}

TEST_CASE("marginal distribution difference worked cases") {
  SUBCASE("identical sets give zero") {
    Rng rng(11);
    Eigen::MatrixXd x = testutil::random_matrix(rng, 12, 4);
    CHECK(marginal_distribution_difference(x, x, 50).value == 0.0);
  }

  SUBCASE("fully disjoint supports give 2/bins") {
    Eigen::MatrixXd x = Eigen::MatrixXd::Random(10, 3);
    Eigen::MatrixXd y = (Eigen::MatrixXd::Random(10, 3).array() + 100.0).matrix();
    for (int bins : {10, 50}) {
      MddResult res = marginal_distribution_difference(x, y, bins);
      CHECK(res.value == doctest::Approx(2.0 / bins).epsilon(1e-12));
    }
  }

  SUBCASE("affine-equivariant bin construction") {
    Rng rng(13);
    Eigen::MatrixXd x = testutil::random_matrix(rng, 9, 4);
    Eigen::MatrixXd y = testutil::random_matrix(rng, 11, 4);
    MddResult full = marginal_distribution_difference(x, y, 25);
    MddResult half = marginal_distribution_difference(0.5 * x, 0.5 * y, 25);
    CHECK(full.value == half.value);
  }

  SUBCASE("degenerate pooled range counts and contributes zero") {
    Eigen::MatrixXd x = Eigen::MatrixXd::Constant(4, 2, 1.0);
    Eigen::MatrixXd y = Eigen::MatrixXd::Constant(5, 2, 1.0);
    MddResult res = marginal_distribution_difference(x, y, 10);
    CHECK(res.value == 0.0);
    CHECK(res.degenerate_timesteps == 2);
  }

  SUBCASE("matches brute force on random data") {
    Rng rng(15);
    Eigen::MatrixXd x = testutil::random_matrix(rng, 14, 6);
    Eigen::MatrixXd y = testutil::random_matrix(rng, 9, 6);
    MddResult res = marginal_distribution_difference(x, y, 17);
    CHECK(res.value == doctest::Approx(mdd_bruteforce(x, y, 17)).epsilon(1e-12));
  }

  SUBCASE("bounded by 2/bins") {
    Rng rng(17);
    for (int rep = 0; rep < 20; ++rep) {
      Eigen::MatrixXd x = testutil::random_matrix(rng, 8, 3);
      Eigen::MatrixXd y = testutil::random_matrix(rng, 6, 3);
      MddResult res = marginal_distribution_difference(x, y, 20);
      CHECK(res.value >= 0.0);
      CHECK(res.value <= 2.0 / 20 + 1e-12);
    }
  }
}

TEST_CASE("pca projection properties") {
  SUBCASE("rank-1 data explains everything with one component") {
    Eigen::VectorXd dir(4);
    dir << 1, 2, 3, 4;
    Eigen::MatrixXd x(5, 4), y(3, 4);
    for (int i = 0; i < 5; ++i) x.row(i) = (i + 1.0) * dir.transpose();
    for (int i = 0; i < 3; ++i) y.row(i) = (i - 2.0) * dir.transpose();
    PcaProjection pca = pca_project(x, y, 1);
    CHECK(pca.explained_variance_ratio[0] == doctest::Approx(1.0).epsilon(1e-10));
    CHECK_THROWS_WITH_AS(pca_project(x, y, 2), doctest::Contains("rank 1"),
                         DomainError);
  }

  SUBCASE("full-dimensional projection preserves pairwise distances") {
    Rng rng(19);
    Eigen::MatrixXd x = testutil::random_matrix(rng, 8, 4);
    Eigen::MatrixXd y = testutil::random_matrix(rng, 6, 4);
    PcaProjection pca = pca_project(x, y, 4);
    for (int i = 0; i < 8; ++i)
      for (int j = 0; j < 8; ++j) {
        double orig = (x.row(i) - x.row(j)).norm();
        double proj = (pca.real_proj.row(i) - pca.real_proj.row(j)).norm();
        CHECK(orig == doctest::Approx(proj).epsilon(1e-10));
      }
  }

  SUBCASE("reconstruction error equals the discarded eigenvalue mass") {
    Rng rng(21);
    Eigen::MatrixXd x = testutil::random_matrix(rng, 20, 5);
    Eigen::MatrixXd y = testutil::random_matrix(rng, 10, 5);
    const int dims = 2;
    PcaProjection pca = pca_project(x, y, dims);

    Eigen::MatrixXd pooled(30, 5);
    pooled << x, y;
    Eigen::RowVectorXd mean = pooled.colwise().mean();
    Eigen::MatrixXd centered = pooled.rowwise() - mean;
    // project onto the top-dims subspace and measure what is lost
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(centered, Eigen::ComputeThinV);
    Eigen::MatrixXd v = svd.matrixV().leftCols(dims);
    Eigen::MatrixXd recon = centered * v * v.transpose();
    double err = (centered - recon).squaredNorm() / 30.0;
    double discarded = pca.explained_variance.tail(5 - dims).sum();
    CHECK(err == doctest::Approx(discarded).epsilon(1e-10));
  }

  SUBCASE("deterministic sign convention") {
    Rng rng(23);
    Eigen::MatrixXd x = testutil::random_matrix(rng, 7, 3);
    Eigen::MatrixXd y = testutil::random_matrix(rng, 7, 3);
    PcaProjection a = pca_project(x, y, 2);
    PcaProjection b = pca_project(x, y, 2);
    CHECK((a.real_proj - b.real_proj).cwiseAbs().maxCoeff() == 0.0);
  }
}

TEST_CASE("evaluate aggregates repeated generation runs") {
  SeriesBatch real = gen_batch(10, 25);
  ModelConfig cfg;
  cfg.kind = ModelKind::pivae;
  cfg.hidden = {6};
  ModelState state = init_model(cfg, real.time_grid, 3);
  state.normalizer = fit_normalizer(real);
  state.mode = real.mode;
  state.trained = true;

  SUBCASE("runs = 1 omits sd fields") {
    EvalReport r = evaluate(state, real, 1, 42);
    CHECK_FALSE(r.mmd2_sd.has_value());
    CHECK_FALSE(r.cd_sd.has_value());
    CHECK(r.mmd2_runs.size() == 1);
    std::string doc = eval_report_json(r);
    CHECK(doc.find("\"sd\"") == std::string::npos);
  }

  SUBCASE("same seed reproduces the report byte for byte") {
    EvalReport a = evaluate(state, real, 3, 42);
    EvalReport b = evaluate(state, real, 3, 42);
    CHECK(eval_report_json(a) == eval_report_json(b));
    CHECK(a.mmd2_sd.has_value());
  }

  SUBCASE("means lie within the per-run extremes") {
    EvalReport r = evaluate(state, real, 5, 43);
    auto in_range = [](double v, const std::vector<double>& runs) {
      double lo = *std::min_element(runs.begin(), runs.end());
      double hi = *std::max_element(runs.begin(), runs.end());
      return v >= lo && v <= hi;
    };
    CHECK(in_range(r.mmd2_mean, r.mmd2_runs));
    CHECK(in_range(r.cd_mean, r.cd_runs));
    CHECK(in_range(r.mdd_mean, r.mdd_runs));
  }

  SUBCASE("untrained state is rejected") {
    ModelState untrained = init_model(cfg, real.time_grid, 3);
    untrained.normalizer = fit_normalizer(real);
    CHECK_THROWS_AS(evaluate(untrained, real, 2, 1), UsageError);
  }
}

TEST_CASE("resampled conditioning respects the mode ordering") {
  SeriesBatch batch = gen_batch(8, 27);
  auto pairs = resample_conditioning(batch, 50, 5);
  CHECK(pairs.size() == 50);
  for (const auto& [t0, ts] : pairs) CHECK(ts >= t0);  // heating
  auto again = resample_conditioning(batch, 50, 5);
  CHECK(pairs == again);
}
