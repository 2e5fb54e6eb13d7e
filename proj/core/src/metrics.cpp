#include "pigpvae/metrics.hpp"

#include <algorithm>
#include <cmath>

#include <nlohmann/json.hpp>

#include "pigpvae/errors.hpp"
#include "pigpvae/io.hpp"
#include "pigpvae/rng.hpp"

namespace pigpvae {

using json = nlohmann::ordered_json;

namespace {

double median_pairwise_distance(const Eigen::MatrixXd& pooled) {
  const Eigen::Index n = pooled.rows();
  std::vector<double> dists;
  dists.reserve(static_cast<std::size_t>(n * (n - 1) / 2));
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = i + 1; j < n; ++j)
      dists.push_back((pooled.row(i) - pooled.row(j)).norm());
  if (dists.empty()) return 0.0;
  std::sort(dists.begin(), dists.end());
  const std::size_t m = dists.size();
  if (m % 2 == 1) return dists[m / 2];
  return 0.5 * (dists[m / 2 - 1] + dists[m / 2]);
}

double sample_sd(const std::vector<double>& v) {
  const double n = static_cast<double>(v.size());
  double mean = 0.0;
  for (double x : v) mean += x;
  mean /= n;
  double ss = 0.0;
  for (double x : v) ss += (x - mean) * (x - mean);
  return std::sqrt(ss / (n - 1.0));
}

double vec_mean(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

}  // namespace

MmdResult mmd2_unbiased(const Eigen::MatrixXd& x, const Eigen::MatrixXd& y,
                        std::optional<double> bandwidth) {
  const Eigen::Index n = x.rows();
  const Eigen::Index m = y.rows();
  if (n < 2 || m < 2)
    throw UsageError("mmd2_unbiased needs at least 2 curves per set");
  if (x.cols() != y.cols()) throw ShapeError("mmd2_unbiased: dimensions disagree");

  double sigma;
  if (bandwidth) {
    if (!(*bandwidth > 0.0)) throw DomainError("mmd bandwidth must be positive");
    sigma = *bandwidth;
  } else {
    Eigen::MatrixXd pooled(n + m, x.cols());
    pooled << x, y;
    sigma = median_pairwise_distance(pooled);
    if (sigma <= 0.0) {
      log_warn("mmd: zero median pairwise distance, flooring bandwidth at 1e-6");
      sigma = 1e-6;
    }
  }
  const double inv2s2 = 1.0 / (2.0 * sigma * sigma);
  auto kernel = [inv2s2](const Eigen::RowVectorXd& a, const Eigen::RowVectorXd& b) {
    return std::exp(-(a - b).squaredNorm() * inv2s2);
  };

  double xx = 0.0;
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < n; ++j)
      if (i != j) xx += kernel(x.row(i), x.row(j));
  xx /= static_cast<double>(n) * static_cast<double>(n - 1);

  double yy = 0.0;
  for (Eigen::Index i = 0; i < m; ++i)
    for (Eigen::Index j = 0; j < m; ++j)
      if (i != j) yy += kernel(y.row(i), y.row(j));
  yy /= static_cast<double>(m) * static_cast<double>(m - 1);

  double xy = 0.0;
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < m; ++j) xy += kernel(x.row(i), y.row(j));
  xy *= 2.0 / (static_cast<double>(n) * static_cast<double>(m));

  return {xx + yy - xy, sigma};
}

namespace {

// Pearson correlation matrix across curves; entries for constant columns
// are marked undefined.
void correlation_matrix(const Eigen::MatrixXd& x, Eigen::MatrixXd& rho,
                        std::vector<bool>& defined) {
  const Eigen::Index n = x.rows();
  const Eigen::Index t = x.cols();
  Eigen::RowVectorXd mean = x.colwise().mean();
  Eigen::MatrixXd centered = x.rowwise() - mean;
  Eigen::VectorXd ss = centered.array().square().colwise().sum();
  defined.assign(static_cast<std::size_t>(t), true);
  for (Eigen::Index j = 0; j < t; ++j)
    if (ss[j] == 0.0) defined[static_cast<std::size_t>(j)] = false;
  rho.resize(t, t);
  for (Eigen::Index i = 0; i < t; ++i) {
    for (Eigen::Index j = 0; j < t; ++j) {
      if (!defined[static_cast<std::size_t>(i)] ||
          !defined[static_cast<std::size_t>(j)]) {
        rho(i, j) = std::numeric_limits<double>::quiet_NaN();
        continue;
      }
      double c = (centered.col(i).array() * centered.col(j).array()).sum();
      rho(i, j) = c / std::sqrt(ss[i] * ss[j]);
    }
  }
  (void)n;
}

}  // namespace

CdResult correlation_difference(const Eigen::MatrixXd& x,
                                const Eigen::MatrixXd& y) {
  if (x.rows() < 3 || y.rows() < 3)
    throw UsageError("correlation_difference needs at least 3 curves per set");
  if (x.cols() != y.cols())
    throw ShapeError("correlation_difference: timestep counts disagree");
  Eigen::MatrixXd rx, ry;
  std::vector<bool> dx, dy;
  correlation_matrix(x, rx, dx);
  correlation_matrix(y, ry, dy);
  CdResult out;
  const Eigen::Index t = x.cols();
  for (Eigen::Index i = 0; i < t; ++i) {
    for (Eigen::Index j = 0; j < t; ++j) {
      bool ok = dx[static_cast<std::size_t>(i)] && dx[static_cast<std::size_t>(j)] &&
                dy[static_cast<std::size_t>(i)] && dy[static_cast<std::size_t>(j)];
      if (!ok) {
        ++out.skipped_pairs;
        continue;
      }
      out.value += std::abs(rx(i, j) - ry(i, j));
    }
  }
  return out;
}

MddResult marginal_distribution_difference(const Eigen::MatrixXd& x,
                                           const Eigen::MatrixXd& y, int bins) {
  if (x.rows() < 1 || y.rows() < 1)
    throw UsageError("marginal_distribution_difference needs non-empty sets");
  if (x.cols() != y.cols())
    throw ShapeError("marginal_distribution_difference: timestep counts disagree");
  if (bins < 1) throw DomainError("bins must be >= 1");

  MddResult out;
  const Eigen::Index t = x.cols();
  double total = 0.0;
  for (Eigen::Index j = 0; j < t; ++j) {
    double lo = std::min(x.col(j).minCoeff(), y.col(j).minCoeff());
    double hi = std::max(x.col(j).maxCoeff(), y.col(j).maxCoeff());
    if (!(hi > lo)) {
      ++out.degenerate_timesteps;
      continue;  // distance 0 for this timestep
    }
    const double width = (hi - lo) / static_cast<double>(bins);
    Eigen::VectorXd p = Eigen::VectorXd::Zero(bins);
    Eigen::VectorXd q = Eigen::VectorXd::Zero(bins);
    auto bin_of = [&](double v) {
      int b = static_cast<int>((v - lo) / width);
      return std::clamp(b, 0, bins - 1);
    };
    for (Eigen::Index i = 0; i < x.rows(); ++i) p[bin_of(x(i, j))] += 1.0;
    for (Eigen::Index i = 0; i < y.rows(); ++i) q[bin_of(y(i, j))] += 1.0;
    p /= static_cast<double>(x.rows());
    q /= static_cast<double>(y.rows());
    total += (p - q).cwiseAbs().sum() / static_cast<double>(bins);
  }
  if (out.degenerate_timesteps > 0)
    log_warn("mdd: " + std::to_string(out.degenerate_timesteps) +
             " timestep(s) had a degenerate pooled range");
  out.value = total / static_cast<double>(t);
  return out;
}

PcaProjection pca_project(const Eigen::MatrixXd& x_real,
                          const Eigen::MatrixXd& x_gen, int dims) {
  if (x_real.cols() != x_gen.cols())
    throw ShapeError("pca_project: dimensions disagree");
  const Eigen::Index n = x_real.rows() + x_gen.rows();
  if (n < dims) throw DomainError("pca_project: fewer pooled rows than dims");
  Eigen::MatrixXd pooled(n, x_real.cols());
  pooled << x_real, x_gen;
  Eigen::RowVectorXd mean = pooled.colwise().mean();
  Eigen::MatrixXd centered = pooled.rowwise() - mean;

  Eigen::JacobiSVD<Eigen::MatrixXd> svd(centered,
                                        Eigen::ComputeThinU | Eigen::ComputeThinV);
  const Eigen::VectorXd& sv = svd.singularValues();
  const double tol = std::max(1e-12 * sv[0], 1e-14);
  int rank = 0;
  for (Eigen::Index i = 0; i < sv.size(); ++i)
    if (sv[i] > tol) ++rank;
  if (rank < dims)
    throw DomainError("pca_project: data rank " + std::to_string(rank) +
                      " is below the requested " + std::to_string(dims) +
                      " components");

  Eigen::MatrixXd components = svd.matrixV().leftCols(dims);
  // deterministic sign: largest-magnitude loading positive
  for (int c = 0; c < dims; ++c) {
    Eigen::Index imax = 0;
    components.col(c).cwiseAbs().maxCoeff(&imax);
    if (components(imax, c) < 0.0) components.col(c) = -components.col(c);
  }

  PcaProjection out;
  out.real_proj = (x_real.rowwise() - mean) * components;
  out.gen_proj = (x_gen.rowwise() - mean) * components;
  out.explained_variance =
      sv.array().square().matrix() / static_cast<double>(n);
  out.explained_variance_ratio =
      out.explained_variance / out.explained_variance.sum();
  return out;
}

std::vector<std::pair<double, double>> resample_conditioning(
    const SeriesBatch& batch, int count, std::uint64_t seed, double jitter_sd) {
  Rng rng(derive_seed(seed, "xc-resample"));
  std::vector<std::pair<double, double>> out;
  out.reserve(static_cast<std::size_t>(count));
  for (int i = 0; i < count; ++i) {
    const Eigen::Index idx =
        static_cast<Eigen::Index>(rng.next_u64() % static_cast<std::uint64_t>(batch.n()));
    double t0 = batch.t0[idx] + jitter_sd * rng.normal();
    double ts = batch.ts[idx] + jitter_sd * rng.normal();
    if (batch.mode == Mode::heating) ts = std::max(ts, t0);
    if (batch.mode == Mode::cooling) ts = std::min(ts, t0);
    out.emplace_back(t0, ts);
  }
  return out;
}

EvalReport evaluate(const ModelState& state, const SeriesBatch& real, int runs,
                    std::uint64_t seed, int bins) {
  if (!state.trained) throw UsageError("evaluate requires a trained state");
  if (runs < 1) throw DomainError("evaluate: runs must be >= 1");
  real.validate();

  EvalReport report;
  report.runs = runs;
  report.seed = seed;
  report.bins = bins;
  bool warned_unconditional = false;

  for (int run = 0; run < runs; ++run) {
    const std::uint64_t run_seed = derive_seed(seed, "eval-run", run);
    std::vector<std::pair<double, double>> x_c = resample_conditioning(
        real, static_cast<int>(real.n()), run_seed);
    GenerateResult gen = generate(state, x_c, 1, run_seed);
    if (!warned_unconditional)
      for (const std::string& w : gen.warnings)
        if (w.find("unconditional") != std::string::npos) {
          report.warnings.push_back(w);
          warned_unconditional = true;
        }

    MmdResult mmd = mmd2_unbiased(real.values, gen.batch.values);
    CdResult cd = correlation_difference(real.values, gen.batch.values);
    MddResult mdd =
        marginal_distribution_difference(real.values, gen.batch.values, bins);
    report.mmd2_runs.push_back(mmd.mmd2);
    report.bandwidth_runs.push_back(mmd.bandwidth);
    report.cd_runs.push_back(cd.value);
    report.mdd_runs.push_back(mdd.value);
    report.cd_skipped_total += cd.skipped_pairs;
    report.mdd_degenerate_total += mdd.degenerate_timesteps;
  }

  report.mmd2_mean = vec_mean(report.mmd2_runs);
  report.cd_mean = vec_mean(report.cd_runs);
  report.mdd_mean = vec_mean(report.mdd_runs);
  report.mmd_bandwidth_mean = vec_mean(report.bandwidth_runs);
  if (runs > 1) {
    report.mmd2_sd = sample_sd(report.mmd2_runs);
    report.cd_sd = sample_sd(report.cd_runs);
    report.mdd_sd = sample_sd(report.mdd_runs);
  }
  return report;
}

std::string eval_report_json(const EvalReport& report) {
  json doc;
  doc["runs"] = report.runs;
  doc["seed"] = report.seed;
  doc["bins"] = report.bins;
  json metrics;
  metrics["mmd2"] = {{"mean", report.mmd2_mean}};
  if (report.mmd2_sd) metrics["mmd2"]["sd"] = *report.mmd2_sd;
  metrics["mmd2"]["runs"] = report.mmd2_runs;
  metrics["cd"] = {{"mean", report.cd_mean}};
  if (report.cd_sd) metrics["cd"]["sd"] = *report.cd_sd;
  metrics["cd"]["runs"] = report.cd_runs;
  metrics["mdd"] = {{"mean", report.mdd_mean}};
  if (report.mdd_sd) metrics["mdd"]["sd"] = *report.mdd_sd;
  metrics["mdd"]["runs"] = report.mdd_runs;
  doc["metrics"] = std::move(metrics);
  doc["mmd_bandwidth_mean"] = report.mmd_bandwidth_mean;
  doc["mmd_bandwidth_runs"] = report.bandwidth_runs;
  doc["cd_skipped_pairs"] = report.cd_skipped_total;
  doc["mdd_degenerate_timesteps"] = report.mdd_degenerate_total;
  doc["estimators"] = {
      {"mmd", "unbiased, gaussian kernel, median-heuristic bandwidth over the pooled set"},
      {"cd", "sum of |rho - rho_hat| over cross-timestep pearson correlation pairs"},
      {"mdd", "mean abs difference of normalized histograms on pooled shared edges"}};
  doc["warnings"] = report.warnings;
  return doc.dump(2) + "\n";
}

}  // namespace pigpvae
