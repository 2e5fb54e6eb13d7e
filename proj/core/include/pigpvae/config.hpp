#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "pigpvae/data.hpp"
#include "pigpvae/experiment.hpp"
#include "pigpvae/models.hpp"
#include "pigpvae/training.hpp"

namespace pigpvae {

struct SurrogateRanges {
  int n = 29;
  double t0_low = 14.0;
  double t0_high = 26.0;
  double gap_low = 6.0;
  double gap_high = 12.0;
};

struct SurrogateSection {
  bool present = false;
  int timesteps = 24;
  std::optional<std::uint64_t> seed;  // defaults to a stream derived from the run seed
  double k_mean = 2.0;
  double k_sd = 0.3;
  GpNoiseConfig noise;
  std::optional<SurrogateRanges> heating;
  std::optional<SurrogateRanges> cooling;
};

struct DataSection {
  std::optional<std::filesystem::path> path;
  Mode mode = Mode::heating;
  std::optional<double> split_fraction;  // optional pre-training split
  std::optional<double> split_cutoff;
  SurrogateSection surrogate;
};

struct GenerateSection {
  std::string checkpoint;
  std::vector<std::pair<double, double>> x_c;
  int n_per_cond = 1;
  bool add_observation_noise = false;
};

struct EvalSection {
  std::string checkpoint;
  int runs = 10;
  int bins = 50;
};

// Parsed and validated CLI configuration. Unknown keys anywhere in the
// document are rejected.
struct RunConfig {
  std::uint64_t seed = 0;
  std::filesystem::path output_dir = "out";
  int workers = 0;
  DataSection data;
  ModelConfig model;
  TrainConfig train;
  GenerateSection generate;
  EvalSection eval;
  ExperimentConfig experiment;
};

RunConfig parse_run_config(const std::string& text);
RunConfig load_run_config(const std::filesystem::path& path);

// Fully-resolved copy (defaults applied) written next to every run's outputs.
std::string run_config_json(const RunConfig& cfg);

// Builds the dataset a command works on: CSV when data.path is set,
// otherwise the configured surrogate modes.
Dataset make_dataset(const RunConfig& cfg);

}  // namespace pigpvae
