#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "pigpvae/models.hpp"

namespace pigpvae {

struct TrainConfig {
  int epochs = 3000;
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::uint64_t seed = 0;
  double clip_norm = 10.0;  // global gradient norm
  int log_every = 0;        // 0 disables progress logging

  void validate() const;
};

struct TrainTrace {
  std::vector<LossBreakdown> history;  // one entry per epoch
  std::vector<double> grad_norms;      // pre-clip global norm per epoch
  ModelState final_state;
  double wall_seconds = 0.0;
};

// Full-batch Adam ascent on the kind's objective. Deterministic under
// (config, batch, seed): initialization, reparameterization noise and the
// update order are all seeded. Fits the normalizer on `batch` first.
// Aborts with NumericalError on a non-finite loss term or gradient.
TrainTrace train(const ModelConfig& model_cfg, const SeriesBatch& batch,
                 const TrainConfig& train_cfg);

// epoch,total,recon,kl_phys,gp_entropy_term,log_z,reg
void save_trace_csv(const std::filesystem::path& path, const TrainTrace& trace);

// Central-difference check of a scalar objective against the tape gradient.
struct GradCheckReport {
  double max_rel_err = 0.0;
  std::string worst_param;  // e.g. "enc.W0[2,3]"
  double analytic_at_worst = 0.0;
  double numeric_at_worst = 0.0;
};

using ObjectiveFn = std::function<Var(Tape&, const BoundParams&)>;

GradCheckReport grad_check(const ObjectiveFn& objective, ParamStore& params,
                           double h = 1e-5);

}  // namespace pigpvae
