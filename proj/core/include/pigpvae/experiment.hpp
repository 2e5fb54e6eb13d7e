#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "pigpvae/data.hpp"
#include "pigpvae/metrics.hpp"
#include "pigpvae/models.hpp"
#include "pigpvae/training.hpp"

namespace pigpvae {

enum class ExperimentCase { in_dist, out_dist };

ExperimentCase experiment_case_from_string(const std::string& s);
std::string to_string(ExperimentCase c);

struct ExperimentConfig {
  ExperimentCase kase = ExperimentCase::in_dist;
  double cutoff = 20.0;                  // degrees C on t0 (out_dist only)
  std::optional<double> train_fraction;  // defaults: 0.7 in_dist, 1.0 out_dist
  int seeds = 5;
  int eval_runs = 10;
  std::vector<ModelKind> models = {ModelKind::gpvae, ModelKind::pivae,
                                   ModelKind::pigpvae};
  std::vector<Mode> modes = {Mode::heating, Mode::cooling};

  double effective_fraction() const {
    if (train_fraction) return *train_fraction;
    return kase == ExperimentCase::in_dist ? 0.7 : 1.0;
  }
};

struct CellSummary {
  Mode mode = Mode::heating;
  ModelKind kind = ModelKind::gpvae;
  std::vector<EvalReport> per_seed;
  double mmd_mean = 0.0, cd_mean = 0.0, mdd_mean = 0.0;
  std::optional<double> mmd_sd, cd_sd, mdd_sd;
  bool can_condition = false;
  std::optional<double> ood_requested_t0;
  std::string error;  // non-empty if the cell failed
};

struct ExperimentInputs {
  Dataset data;
  ExperimentConfig experiment;
  ModelConfig model;  // base config; kind is overridden per cell
  TrainConfig train;  // base config; seed is overridden per cell
  int eval_bins = 50;
  std::uint64_t seed = 0;
  int workers = 0;  // 0 = hardware concurrency
  std::filesystem::path output_dir;
};

struct ExperimentReport {
  std::vector<CellSummary> cells;
};

// Runs every (mode, model) cell over `seeds` training seeds: split, train,
// evaluate, and export per-cell artifacts plus the summary table. Cells run
// in parallel up to `workers`; outputs are independent per cell so results
// are identical regardless of scheduling. A failing cell records its error
// and does not void the others.
ExperimentReport run_experiment(const ExperimentInputs& inputs,
                                std::vector<std::string>& manifest_files);

// Figure-data exports shared with cmd_evaluate.
void write_curves_csv(const std::filesystem::path& path, const SeriesBatch& real,
                      const SeriesBatch& generated);
void write_pca_csv(const std::filesystem::path& path, const SeriesBatch& real,
                   const SeriesBatch& generated);
void write_densities_csv(const std::filesystem::path& path,
                         const SeriesBatch& real, const SeriesBatch& generated,
                         int bins);
void write_reconstruction_csv(const std::filesystem::path& path,
                              const SeriesBatch& batch,
                              const ReconstructResult& recon);

std::string experiment_table_json(const ExperimentReport& report);
std::string experiment_table_csv(const ExperimentReport& report);

}  // namespace pigpvae
