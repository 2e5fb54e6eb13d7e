#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "pigpvae/data.hpp"
#include "pigpvae/models.hpp"

namespace pigpvae {

struct MmdResult {
  double mmd2 = 0.0;       // unbiased, may be negative, never clamped
  double bandwidth = 0.0;  // the sigma actually used
};

// Unbiased MMD^2 with the Gaussian kernel exp(-|x-y|^2 / (2 sigma^2)).
// Curves enter flattened as T-dimensional points. Without an explicit
// bandwidth the median pairwise distance of the pooled set is used.
MmdResult mmd2_unbiased(const Eigen::MatrixXd& x, const Eigen::MatrixXd& y,
                        std::optional<double> bandwidth = std::nullopt);

struct CdResult {
  double value = 0.0;
  int skipped_pairs = 0;  // pairs involving a constant timestep column
};

// Sum of |rho_ij - rho_hat_ij| over timestep pairs, where rho is the Pearson
// correlation between timestep columns computed across curves.
CdResult correlation_difference(const Eigen::MatrixXd& x,
                                const Eigen::MatrixXd& y);

struct MddResult {
  double value = 0.0;
  int degenerate_timesteps = 0;  // pooled min == max
};

// Mean over timesteps of the mean absolute difference between normalized
// histograms on shared equal-width bins spanning the pooled range.
MddResult marginal_distribution_difference(const Eigen::MatrixXd& x,
                                           const Eigen::MatrixXd& y,
                                           int bins = 50);

struct PcaProjection {
  Eigen::MatrixXd real_proj;  // n x dims
  Eigen::MatrixXd gen_proj;   // m x dims
  Eigen::VectorXd explained_variance;        // all eigenvalues, descending
  Eigen::VectorXd explained_variance_ratio;  // sums to 1
};

// PCA fitted on the pooled mean-centered rows; components sign-fixed so the
// largest-magnitude loading is positive.
PcaProjection pca_project(const Eigen::MatrixXd& x_real,
                          const Eigen::MatrixXd& x_gen, int dims = 2);

struct EvalReport {
  int runs = 0;
  std::uint64_t seed = 0;
  int bins = 50;
  std::vector<double> mmd2_runs, cd_runs, mdd_runs, bandwidth_runs;
  double mmd2_mean = 0.0, cd_mean = 0.0, mdd_mean = 0.0;
  double mmd_bandwidth_mean = 0.0;
  std::optional<double> mmd2_sd, cd_sd, mdd_sd;  // present iff runs > 1
  int cd_skipped_total = 0;
  int mdd_degenerate_total = 0;
  std::vector<std::string> warnings;
};

// Repeated generation against a fixed reference batch. Per run, |real|
// curves are generated (conditioning resampled from the reference batch
// with 0.25 degC jitter for the physics-conditioned kinds) and all three
// metrics computed against the full reference batch.
EvalReport evaluate(const ModelState& state, const SeriesBatch& real, int runs,
                    std::uint64_t seed, int bins = 50);

std::string eval_report_json(const EvalReport& report);

// Conditioning pairs resampled from an observed batch with Gaussian jitter,
// clamped to preserve the mode ordering.
std::vector<std::pair<double, double>> resample_conditioning(
    const SeriesBatch& batch, int count, std::uint64_t seed,
    double jitter_sd = 0.25);

}  // namespace pigpvae
