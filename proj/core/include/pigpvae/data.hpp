#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace pigpvae {

enum class Mode { heating, cooling };

Mode mode_from_string(const std::string& s);
std::string to_string(Mode m);

// Fixed-length univariate temperature curves with per-curve conditioning.
// t0 is always the first sample of each curve; ts is the scalarized
// system temperature the curve approaches.
struct SeriesBatch {
  Eigen::MatrixXd values;    // n x T, degrees C (rows are curves)
  Eigen::VectorXd time_grid; // T ascending points normalized to [0, 1]
  Eigen::VectorXd t0;        // n
  Eigen::VectorXd ts;        // n
  Mode mode = Mode::heating;
  std::vector<std::string> ids;  // optional, used for CSV round trips

  Eigen::Index n() const { return values.rows(); }
  Eigen::Index timesteps() const { return values.cols(); }
  void validate() const;
};

struct Normalizer {
  double shift = 0.0;
  double scale = 1.0;
  std::string fitted_on;

  Eigen::MatrixXd apply(const Eigen::MatrixXd& values) const;
  Eigen::MatrixXd invert(const Eigen::MatrixXd& values) const;
  double apply(double v) const { return (v - shift) / scale; }
  double invert(double v) const { return v * scale + shift; }
};

struct SplitSpec {
  double train_fraction = 0.7;
  std::uint64_t seed = 0;
  std::optional<double> ood_cutoff;  // degrees C on t0
};

struct Dataset {
  std::optional<SeriesBatch> heating;
  std::optional<SeriesBatch> cooling;

  const SeriesBatch& require(Mode m) const;
};

struct GpNoiseConfig {
  double lengthscale = 0.3;
  double amplitude = 0.5;  // standard deviation of the distortion, degrees C
};

struct SurrogateSpec {
  int n = 29;
  int timesteps = 24;
  Mode mode = Mode::heating;
  double k_mean = 2.0;
  double k_sd = 0.3;
  double t0_low = 14.0;
  double t0_high = 26.0;
  double gap_low = 6.0;   // |ts - t0| range
  double gap_high = 12.0;
  GpNoiseConfig noise;
  std::uint64_t seed = 0;
};

// Long-format CSV with header series_id,t_index,temperature,system_temperature.
// Produces one batch per mode present; mode is inferred per series from the
// sign of (mean system temperature - first value), erroring on exact ties.
Dataset load_csv(const std::filesystem::path& path);

void save_csv(const std::filesystem::path& path,
              const std::vector<const SeriesBatch*>& batches);
void save_csv(const std::filesystem::path& path, const SeriesBatch& batch);

// Newton curves with GP-distorted dynamics so the discrepancy branch has
// signal to learn. Reproducible under spec.seed.
SeriesBatch synthesize_surrogate(const SurrogateSpec& spec);

// Without a cutoff: train is a uniformly random subset of round(fraction*n)
// curves. With a cutoff: candidates are restricted to t0 >= cutoff before
// the fraction applies. eval is always the full batch.
std::pair<SeriesBatch, SeriesBatch> split(const SeriesBatch& batch,
                                          const SplitSpec& spec);

Normalizer fit_normalizer(const SeriesBatch& batch);

SeriesBatch concat(const SeriesBatch& a, const SeriesBatch& b);

// Row subset, preserving order of `rows`.
SeriesBatch take_rows(const SeriesBatch& batch, const std::vector<int>& rows);

std::string dataset_fingerprint(const SeriesBatch& batch);

}  // namespace pigpvae
