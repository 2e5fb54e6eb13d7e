#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "pigpvae/data.hpp"
#include "pigpvae/gp.hpp"
#include "pigpvae/nets.hpp"
#include "pigpvae/physics.hpp"
#include "pigpvae/tensor.hpp"

namespace pigpvae {

enum class ModelKind { vae, gpvae, pivae, pigpvae };

ModelKind model_kind_from_string(const std::string& s);
std::string to_string(ModelKind k);

enum class AlphaMode { fixed, trainable };

struct ModelConfig {
  ModelKind kind = ModelKind::pigpvae;
  // Latent width: VAE latent size, or number of GP channels. PIGPVAE with
  // latent_dim == 0 disables the discrepancy branch entirely.
  int latent_dim = 3;
  std::vector<int> hidden = {64, 64};
  Activation activation = Activation::tanh;
  double sigma_obs_init = 0.1;  // decoder observation sd, normalized units
  int elbo_samples = 1;
  KernelParams kernel;          // initialization of the trained log-params
  bool per_channel_kernel = false;
  PhysicalPrior prior;
  AlphaMode alpha_mode = AlphaMode::fixed;
  double alpha_value = 1.0;     // effective weight in fixed mode, init in trainable
  double alpha_floor = 0.1;     // lower bound of the effective weight when trainable

  void validate() const;
};

// Itemized objective terms. `total` is the maximized objective:
//   vae:      recon - kl_phys                   (kl_phys = standard-normal KL)
//   gpvae:    recon - gp_entropy_term + log_z
//   pivae:    recon - kl_phys
//   pigpvae:  recon - gp_entropy_term + log_z - kl_phys - reg
// Parts that do not apply to a kind are exactly zero.
struct LossBreakdown {
  double total = 0.0;
  double recon = 0.0;
  double kl_phys = 0.0;
  double gp_entropy_term = 0.0;
  double log_z = 0.0;
  double reg = 0.0;
};

struct ModelState {
  ModelConfig cfg;
  ParamStore params;
  Normalizer normalizer;
  Mode mode = Mode::heating;
  Eigen::VectorXd time_grid;
  std::uint64_t seed = 0;
  bool trained = false;

  ModelKind kind() const { return cfg.kind; }
  double sigma_obs() const;          // 1e-4 + softplus(raw)
  double alpha_effective() const;
  KernelParams kernel_effective(int channel = 0) const;
};

// Seeded initialization: weights ~ N(0, 1/fan_in) per component stream.
ModelState init_model(const ModelConfig& cfg, const Eigen::VectorXd& time_grid,
                      std::uint64_t seed);

// Objective graph on a caller-provided tape (training path). noise_seed
// fixes every reparameterization draw.
struct ObjectiveVars {
  Var total, recon, kl_phys, gp_entropy_term, log_z, reg;
  LossBreakdown values() const;
};
ObjectiveVars build_objective(Tape& tape, const BoundParams& bound,
                              const ModelState& state, const SeriesBatch& batch,
                              std::uint64_t noise_seed);

// Per-kind objective evaluation (throws UsageError on a kind mismatch).
LossBreakdown vae_elbo(const ModelState&, const SeriesBatch&, std::uint64_t seed);
LossBreakdown gpvae_elbo(const ModelState&, const SeriesBatch&, std::uint64_t seed);
LossBreakdown pivae_elbo(const ModelState&, const SeriesBatch&, std::uint64_t seed);
LossBreakdown pigpvae_loss(const ModelState&, const SeriesBatch&, std::uint64_t seed);

// Physical + discrepancy decoder composition in normalized units.
// Returns (x_hat, x_hat_phy).
std::pair<Eigen::VectorXd, Eigen::VectorXd> pigpvae_decode(
    const ModelState& state, double z_phy, const Eigen::MatrixXd& z_delta,
    double t0, double ts);

struct GenerateOptions {
  bool add_observation_noise = false;
};

struct GenerateResult {
  SeriesBatch batch;  // degrees C
  std::vector<std::string> warnings;
};

// Conditional generation for pivae/pigpvae (z_phy from the physical prior,
// z_delta from the GP prior under the trained kernel); unconditional prior
// sampling for vae/gpvae, which ignore x_c with a warning.
GenerateResult generate(const ModelState& state,
                        const std::vector<std::pair<double, double>>& x_c,
                        int n_per_cond, std::uint64_t seed,
                        const GenerateOptions& opts = {});

struct ReconstructResult {
  Eigen::MatrixXd x_hat;                      // n x T, degrees C
  std::optional<Eigen::MatrixXd> x_hat_phy;   // pigpvae decomposition
};

// Posterior-mean latents decoded.
ReconstructResult reconstruct(const ModelState& state, const SeriesBatch& batch,
                              std::uint64_t seed);

std::string checkpoint_json(const ModelState& state);
ModelState state_from_checkpoint_json(const std::string& text);
void save_checkpoint(const std::filesystem::path& path, const ModelState& state);
ModelState load_checkpoint(const std::filesystem::path& path);

}  // namespace pigpvae
