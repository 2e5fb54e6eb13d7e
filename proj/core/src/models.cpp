#include "pigpvae/models.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include <nlohmann/json.hpp>

#include "pigpvae/errors.hpp"
#include "pigpvae/io.hpp"
#include "pigpvae/rng.hpp"

namespace pigpvae {

using json = nlohmann::ordered_json;

namespace {

constexpr double kLog2Pi = 1.8378770664093454836;
constexpr double kSigmaObsFloor = 1e-4;

std::vector<int> with_hidden(int in, const std::vector<int>& hidden, int out) {
  std::vector<int> w;
  w.push_back(in);
  w.insert(w.end(), hidden.begin(), hidden.end());
  w.push_back(out);
  return w;
}

bool has_gp_branch(const ModelConfig& cfg) {
  return cfg.kind == ModelKind::gpvae ||
         (cfg.kind == ModelKind::pigpvae && cfg.latent_dim > 0);
}

bool has_phys_branch(const ModelConfig& cfg) {
  return cfg.kind == ModelKind::pivae || cfg.kind == ModelKind::pigpvae;
}

Mlp gp_encoder_net(const ModelConfig& cfg, int t) {
  return Mlp{with_hidden(t, cfg.hidden, 2 * cfg.latent_dim * t), cfg.activation,
             "enc."};
}

Mlp vae_encoder_net(const ModelConfig& cfg, int t) {
  return Mlp{with_hidden(t, cfg.hidden, 2 * cfg.latent_dim), cfg.activation,
             "enc."};
}

Mlp vae_decoder_net(const ModelConfig& cfg, int t) {
  return Mlp{with_hidden(cfg.latent_dim, cfg.hidden, t), cfg.activation, "dec."};
}

Mlp gp_decoder_net(const ModelConfig& cfg) {
  return Mlp{with_hidden(cfg.latent_dim, cfg.hidden, 1), cfg.activation, "dec."};
}

Mlp phys_encoder_net(const ModelConfig& cfg, int t) {
  return Mlp{with_hidden(t, cfg.hidden, 2), cfg.activation, "phys_enc."};
}

Mlp delta_decoder_net(const ModelConfig& cfg) {
  return Mlp{with_hidden(cfg.latent_dim + 1, cfg.hidden, 1), cfg.activation,
             "delta_dec."};
}

int kernel_count(const ModelConfig& cfg) {
  if (!has_gp_branch(cfg)) return 0;
  return cfg.per_channel_kernel ? cfg.latent_dim : 1;
}

std::string kernel_param_name(const ModelConfig& cfg, const char* which, int c) {
  if (cfg.per_channel_kernel)
    return std::string("kernel.") + which + "." + std::to_string(c);
  return std::string("kernel.") + which;
}

// Gaussian log-likelihood of a zero-residual-sse node with scalar sd sigma:
// -count/2 log 2pi - count log sigma - sse / (2 sigma^2)
Var gaussian_ll(Var sse, double count, Var sigma) {
  Var t2 = scale_shift(log(sigma), -count, -0.5 * count * kLog2Pi);
  return t2 - sse / scale_shift(square(sigma), 2.0, 0.0);
}

struct GraphContext {
  Tape* tape;
  const BoundParams* bound;
  const ModelState* state;
  Eigen::MatrixXd xn;        // T x n normalized values
  Var xn_const;
  Eigen::Index t = 0, n = 0;

  Var sigma_obs() const {
    return scale_shift(softplus(bound->at("sigma_obs.raw")), 1.0, kSigmaObsFloor);
  }
};

GraphContext make_context(Tape& tape, const BoundParams& bound,
                          const ModelState& state, const SeriesBatch& batch) {
  if (state.normalizer.scale <= 0.0)
    throw UsageError("model state has no fitted normalizer");
  if (batch.timesteps() != state.time_grid.size())
    throw ShapeError("batch timestep count disagrees with the model time grid");
  GraphContext ctx;
  ctx.tape = &tape;
  ctx.bound = &bound;
  ctx.state = &state;
  ctx.xn = state.normalizer.apply(batch.values).transpose();
  ctx.xn_const = tape.constant(ctx.xn);
  ctx.t = batch.timesteps();
  ctx.n = batch.n();
  return ctx;
}

Eigen::MatrixXd draw_matrix(Rng& rng, Eigen::Index r, Eigen::Index c) {
  Eigen::MatrixXd m(r, c);
  for (Eigen::Index i = 0; i < r; ++i)
    for (Eigen::Index j = 0; j < c; ++j) m(i, j) = rng.normal();
  return m;
}

Eigen::MatrixXd posterior_means(const ModelState& state,
                                const PseudoObservations& pseudo) {
  if (!state.cfg.per_channel_kernel)
    return gp_posterior(state.time_grid, pseudo, state.kernel_effective()).mean;
  Eigen::MatrixXd means(pseudo.channels(), state.time_grid.size());
  for (Eigen::Index l = 0; l < pseudo.channels(); ++l) {
    PseudoObservations one;
    one.targets = pseudo.targets.row(l);
    one.noise_sd = pseudo.noise_sd.row(l);
    means.row(l) =
        gp_posterior(state.time_grid, one, state.kernel_effective(static_cast<int>(l)))
            .mean.row(0);
  }
  return means;
}

// Normalized physical reconstruction columns for one latent-rate row
// (1 x n, unconstrained); returns T x n.
Var physical_columns(GraphContext& ctx, Var z_phy_row, const SeriesBatch& batch) {
  const Normalizer& norm = ctx.state->normalizer;
  Var k_row = softplus(z_phy_row);
  std::vector<Var> cols;
  cols.reserve(static_cast<std::size_t>(ctx.n));
  for (Eigen::Index i = 0; i < ctx.n; ++i) {
    Var k_i = block(k_row, 0, i, 1, 1);
    Var curve = newton_solution_op(*ctx.tape, ctx.state->time_grid, batch.t0[i],
                                   batch.ts[i], k_i);
    cols.push_back(scale_shift(curve, 1.0 / norm.scale, -norm.shift / norm.scale));
  }
  return hstack(cols);
}

struct GpBranch {
  Var log_z;           // 1x1 summed over curves and channels
  Var entropy;         // 1x1
  // posterior samples per ELBO sample: [s][i] is L x T for curve i
  std::vector<std::vector<Var>> samples;
};

GpBranch build_gp_branch(GraphContext& ctx, Rng& eps_rng, int elbo_samples) {
  const ModelConfig& cfg = ctx.state->cfg;
  const int l_count = cfg.latent_dim;
  const double jitter = cfg.kernel.jitter;
  Tape& tape = *ctx.tape;

  std::vector<Var> kernels;
  for (int c = 0; c < kernel_count(cfg); ++c) {
    Var log_ell = ctx.bound->at(kernel_param_name(cfg, "log_ell", c));
    Var log_s2 = ctx.bound->at(kernel_param_name(cfg, "log_s2", c));
    kernels.push_back(
        kernel_matrix_op(tape, ctx.state->time_grid, log_ell, log_s2, jitter));
  }
  Var jit_eye = tape.constant(jitter *
                              Eigen::MatrixXd::Identity(ctx.t, ctx.t));

  Mlp enc = gp_encoder_net(cfg, static_cast<int>(ctx.t));
  Var enc_out = enc.forward(tape, *ctx.bound, ctx.xn_const);  // 2LT x n

  GpBranch branch;
  std::vector<Var> logz_parts, ent_parts;
  branch.samples.assign(static_cast<std::size_t>(elbo_samples), {});
  for (auto& s : branch.samples) s.reserve(static_cast<std::size_t>(ctx.n));

  // Fixed draw order: curve-major, then channel, then sample.
  for (Eigen::Index i = 0; i < ctx.n; ++i) {
    std::vector<std::vector<Var>> rows(static_cast<std::size_t>(elbo_samples));
    for (int l = 0; l < l_count; ++l) {
      Var target = block(enc_out, l * ctx.t, i, ctx.t, 1);
      Var sd_raw = block(enc_out, (l_count + l) * ctx.t, i, ctx.t, 1);
      Var sd = scale_shift(softplus(sd_raw), 1.0, kSdFloor);
      Var kernel = kernels[cfg.per_channel_kernel ? l : 0];
      GpChannelOps ch = gp_channel_op(tape, kernel, target, sd, jitter);
      logz_parts.push_back(ch.log_z);
      ent_parts.push_back(gp_entropy_term_op(tape, ch.mean, ch.marginal_var,
                                             target, sd));
      Var chol = chol_lower(ch.cov + jit_eye, jitter);
      for (int s = 0; s < elbo_samples; ++s) {
        Var eps = tape.constant(draw_matrix(eps_rng, ctx.t, 1));
        Var z = ch.mean + matmul(chol, eps);
        rows[static_cast<std::size_t>(s)].push_back(transpose(z));  // 1 x T
      }
    }
    for (int s = 0; s < elbo_samples; ++s)
      branch.samples[static_cast<std::size_t>(s)].push_back(
          vstack(rows[static_cast<std::size_t>(s)]));  // L x T
  }
  branch.log_z = add_n(logz_parts);
  branch.entropy = add_n(ent_parts);
  return branch;
}

Var average(Tape& tape, const std::vector<Var>& parts) {
  (void)tape;
  if (parts.size() == 1) return parts[0];
  return scale_shift(add_n(parts), 1.0 / static_cast<double>(parts.size()), 0.0);
}

ObjectiveVars build_vae(GraphContext& ctx, const SeriesBatch& batch,
                        std::uint64_t noise_seed) {
  (void)batch;
  const ModelConfig& cfg = ctx.state->cfg;
  Tape& tape = *ctx.tape;
  const int l_count = cfg.latent_dim;

  Mlp enc = vae_encoder_net(cfg, static_cast<int>(ctx.t));
  Mlp dec = vae_decoder_net(cfg, static_cast<int>(ctx.t));
  Var enc_out = enc.forward(tape, *ctx.bound, ctx.xn_const);  // 2L x n
  Var mu = block(enc_out, 0, 0, l_count, ctx.n);
  Var sd = scale_shift(softplus(block(enc_out, l_count, 0, l_count, ctx.n)), 1.0,
                       kSdFloor);

  // 1/2 sum(sd^2 + mu^2 - 1 - log sd^2)
  Var kl = scale_shift(
      sum(square(sd) + square(mu) - scale_shift(log(sd), 2.0, 1.0)), 0.5, 0.0);

  Rng eps_rng(derive_seed(noise_seed, "eps-gp"));
  Var sigma = ctx.sigma_obs();
  std::vector<Var> recon_parts;
  for (int s = 0; s < cfg.elbo_samples; ++s) {
    Var eps = tape.constant(draw_matrix(eps_rng, l_count, ctx.n));
    Var z = mu + sd * eps;
    Var xhat = dec.forward(tape, *ctx.bound, z);
    Var sse = sum(square(ctx.xn_const - xhat));
    recon_parts.push_back(
        gaussian_ll(sse, static_cast<double>(ctx.t * ctx.n), sigma));
  }
  Var recon = average(tape, recon_parts);

  ObjectiveVars out;
  out.recon = recon;
  out.kl_phys = kl;
  out.gp_entropy_term = tape.constant_scalar(0.0);
  out.log_z = tape.constant_scalar(0.0);
  out.reg = tape.constant_scalar(0.0);
  out.total = recon - kl;
  return out;
}

ObjectiveVars build_gpvae(GraphContext& ctx, const SeriesBatch& batch,
                          std::uint64_t noise_seed) {
  (void)batch;
  const ModelConfig& cfg = ctx.state->cfg;
  Tape& tape = *ctx.tape;

  Rng eps_rng(derive_seed(noise_seed, "eps-gp"));
  GpBranch branch = build_gp_branch(ctx, eps_rng, cfg.elbo_samples);

  Mlp dec = gp_decoder_net(cfg);
  Var sigma = ctx.sigma_obs();
  std::vector<Var> recon_parts;
  for (int s = 0; s < cfg.elbo_samples; ++s) {
    Var din = hstack(branch.samples[static_cast<std::size_t>(s)]);  // L x nT
    Var xhat = reshape(dec.forward(tape, *ctx.bound, din), ctx.t, ctx.n);
    Var sse = sum(square(ctx.xn_const - xhat));
    recon_parts.push_back(
        gaussian_ll(sse, static_cast<double>(ctx.t * ctx.n), sigma));
  }
  Var recon = average(tape, recon_parts);

  ObjectiveVars out;
  out.recon = recon;
  out.kl_phys = tape.constant_scalar(0.0);
  out.gp_entropy_term = branch.entropy;
  out.log_z = branch.log_z;
  out.reg = tape.constant_scalar(0.0);
  out.total = recon - branch.entropy + branch.log_z;
  return out;
}

ObjectiveVars build_pivae(GraphContext& ctx, const SeriesBatch& batch,
                          std::uint64_t noise_seed) {
  const ModelConfig& cfg = ctx.state->cfg;
  Tape& tape = *ctx.tape;

  Mlp enc = phys_encoder_net(cfg, static_cast<int>(ctx.t));
  Var enc_out = enc.forward(tape, *ctx.bound, ctx.xn_const);  // 2 x n
  Var mu = block(enc_out, 0, 0, 1, ctx.n);
  Var sd = scale_shift(softplus(block(enc_out, 1, 0, 1, ctx.n)), 1.0, kSdFloor);
  Var kl = kl_gauss_gauss_op(tape, mu, sd, cfg.prior.mu, cfg.prior.sigma);

  Rng eps_rng(derive_seed(noise_seed, "eps-phys"));
  Var sigma = ctx.sigma_obs();
  std::vector<Var> recon_parts;
  for (int s = 0; s < cfg.elbo_samples; ++s) {
    Var eps = tape.constant(draw_matrix(eps_rng, 1, ctx.n));
    Var z_row = mu + sd * eps;
    Var xphy = physical_columns(ctx, z_row, batch);
    Var sse = sum(square(ctx.xn_const - xphy));
    recon_parts.push_back(
        gaussian_ll(sse, static_cast<double>(ctx.t * ctx.n), sigma));
  }
  Var recon = average(tape, recon_parts);

  ObjectiveVars out;
  out.recon = recon;
  out.kl_phys = kl;
  out.gp_entropy_term = tape.constant_scalar(0.0);
  out.log_z = tape.constant_scalar(0.0);
  out.reg = tape.constant_scalar(0.0);
  out.total = recon - kl;
  return out;
}

ObjectiveVars build_pigpvae(GraphContext& ctx, const SeriesBatch& batch,
                            std::uint64_t noise_seed) {
  const ModelConfig& cfg = ctx.state->cfg;
  Tape& tape = *ctx.tape;
  const bool with_delta = cfg.latent_dim > 0;

  Mlp phys_enc = phys_encoder_net(cfg, static_cast<int>(ctx.t));
  Var pe_out = phys_enc.forward(tape, *ctx.bound, ctx.xn_const);
  Var mu = block(pe_out, 0, 0, 1, ctx.n);
  Var sd = scale_shift(softplus(block(pe_out, 1, 0, 1, ctx.n)), 1.0, kSdFloor);
  Var kl = kl_gauss_gauss_op(tape, mu, sd, cfg.prior.mu, cfg.prior.sigma);

  Rng phys_rng(derive_seed(noise_seed, "eps-phys"));
  Rng gp_rng(derive_seed(noise_seed, "eps-gp"));

  GpBranch branch;
  if (with_delta) branch = build_gp_branch(ctx, gp_rng, cfg.elbo_samples);

  Mlp delta_dec = delta_decoder_net(cfg);
  Var sigma = ctx.sigma_obs();
  std::vector<Var> recon_parts, reg_sse_parts;
  for (int s = 0; s < cfg.elbo_samples; ++s) {
    Var eps = tape.constant(draw_matrix(phys_rng, 1, ctx.n));
    Var z_row = mu + sd * eps;
    Var xphy = physical_columns(ctx, z_row, batch);  // T x n

    Var xhat = xphy;
    if (with_delta) {
      // Pointwise decoder input per curve: rows = z channels plus the
      // physical reconstruction, columns = timesteps.
      std::vector<Var> din_parts;
      din_parts.reserve(static_cast<std::size_t>(ctx.n));
      const auto& zs = branch.samples[static_cast<std::size_t>(s)];
      for (Eigen::Index i = 0; i < ctx.n; ++i) {
        Var phys_row = transpose(block(xphy, 0, i, ctx.t, 1));  // 1 x T
        din_parts.push_back(vstack({zs[static_cast<std::size_t>(i)], phys_row}));
      }
      Var din = hstack(din_parts);  // (L+1) x nT
      Var delta = reshape(delta_dec.forward(tape, *ctx.bound, din), ctx.t, ctx.n);
      xhat = xphy + delta;
    }

    Var sse = sum(square(ctx.xn_const - xhat));
    recon_parts.push_back(
        gaussian_ll(sse, static_cast<double>(ctx.t * ctx.n), sigma));
    // mean square over timesteps, summed over the batch
    reg_sse_parts.push_back(
        scale_shift(sum(square(ctx.xn_const - xphy)),
                    1.0 / static_cast<double>(ctx.t), 0.0));
  }
  Var recon = average(tape, recon_parts);
  Var reg_mse = average(tape, reg_sse_parts);

  Var reg;
  if (cfg.alpha_mode == AlphaMode::fixed) {
    reg = scale_shift(reg_mse, cfg.alpha_value, 0.0);
  } else {
    Var alpha = scale_shift(softplus(ctx.bound->at("alpha.raw")), 1.0,
                            cfg.alpha_floor);
    reg = alpha * reg_mse;
  }

  ObjectiveVars out;
  out.recon = recon;
  out.kl_phys = kl;
  out.gp_entropy_term =
      with_delta ? branch.entropy : tape.constant_scalar(0.0);
  out.log_z = with_delta ? branch.log_z : tape.constant_scalar(0.0);
  out.reg = reg;
  out.total = with_delta
                  ? recon - branch.entropy + branch.log_z - kl - reg
                  : recon - kl - reg;
  return out;
}

}  // namespace

ModelKind model_kind_from_string(const std::string& s) {
  if (s == "vae") return ModelKind::vae;
  if (s == "gpvae") return ModelKind::gpvae;
  if (s == "pivae") return ModelKind::pivae;
  if (s == "pigpvae") return ModelKind::pigpvae;
  throw ConfigError("unknown model kind: " + s);
}

std::string to_string(ModelKind k) {
  switch (k) {
    case ModelKind::vae: return "vae";
    case ModelKind::gpvae: return "gpvae";
    case ModelKind::pivae: return "pivae";
    case ModelKind::pigpvae: return "pigpvae";
  }
  throw UsageError("invalid model kind value");
}

void ModelConfig::validate() const {
  if (kind == ModelKind::vae || kind == ModelKind::gpvae) {
    if (latent_dim < 1) throw ConfigError("latent_dim must be >= 1 for this kind");
  } else if (latent_dim < 0) {
    throw ConfigError("latent_dim must be >= 0");
  }
  for (int h : hidden)
    if (h < 1) throw ConfigError("hidden widths must be positive");
  if (!(sigma_obs_init > kSigmaObsFloor))
    throw ConfigError("sigma_obs_init must exceed the 1e-4 floor");
  if (elbo_samples < 1) throw ConfigError("elbo_samples must be >= 1");
  kernel.validate();
  prior.validate();
  if (alpha_mode == AlphaMode::fixed) {
    if (alpha_value < 0.0) throw ConfigError("alpha_value must be >= 0");
  } else {
    if (alpha_floor < 0.0) throw ConfigError("alpha_floor must be >= 0");
    if (!(alpha_value > alpha_floor))
      throw ConfigError("trainable alpha needs alpha_value > alpha_floor");
  }
}

double ModelState::sigma_obs() const {
  return kSigmaObsFloor + softplus_scalar(params.at("sigma_obs.raw")(0, 0));
}

double ModelState::alpha_effective() const {
  if (cfg.kind != ModelKind::pigpvae) return 0.0;
  if (cfg.alpha_mode == AlphaMode::fixed) return cfg.alpha_value;
  return cfg.alpha_floor + softplus_scalar(params.at("alpha.raw")(0, 0));
}

KernelParams ModelState::kernel_effective(int channel) const {
  KernelParams out = cfg.kernel;
  int c = cfg.per_channel_kernel ? channel : 0;
  out.lengthscale = std::exp(params.at(kernel_param_name(cfg, "log_ell", c))(0, 0));
  out.variance = std::exp(params.at(kernel_param_name(cfg, "log_s2", c))(0, 0));
  return out;
}

ModelState init_model(const ModelConfig& cfg, const Eigen::VectorXd& time_grid,
                      std::uint64_t seed) {
  cfg.validate();
  if (time_grid.size() < 2) throw ShapeError("time grid needs at least 2 points");
  ModelState state;
  state.cfg = cfg;
  state.time_grid = time_grid;
  state.seed = seed;
  const int t = static_cast<int>(time_grid.size());

  // Component streams are independent so shared components initialize
  // identically across kinds under the same seed.
  if (cfg.kind == ModelKind::vae) {
    Rng r(derive_seed(seed, "init-enc"));
    vae_encoder_net(cfg, t).init_params(state.params, r);
    Rng rd(derive_seed(seed, "init-dec"));
    vae_decoder_net(cfg, t).init_params(state.params, rd);
  }
  if (cfg.kind == ModelKind::gpvae) {
    Rng r(derive_seed(seed, "init-enc"));
    gp_encoder_net(cfg, t).init_params(state.params, r);
    Rng rd(derive_seed(seed, "init-dec"));
    gp_decoder_net(cfg).init_params(state.params, rd);
  }
  if (has_phys_branch(cfg)) {
    Rng r(derive_seed(seed, "init-phys-enc"));
    phys_encoder_net(cfg, t).init_params(state.params, r);
  }
  if (cfg.kind == ModelKind::pigpvae && cfg.latent_dim > 0) {
    Rng r(derive_seed(seed, "init-enc"));
    gp_encoder_net(cfg, t).init_params(state.params, r);
    Rng rd(derive_seed(seed, "init-delta-dec"));
    delta_decoder_net(cfg).init_params(state.params, rd);
  }
  for (int c = 0; c < kernel_count(cfg); ++c) {
    state.params.add(kernel_param_name(cfg, "log_ell", c),
                     Eigen::MatrixXd::Constant(1, 1, std::log(cfg.kernel.lengthscale)));
    state.params.add(kernel_param_name(cfg, "log_s2", c),
                     Eigen::MatrixXd::Constant(1, 1, std::log(cfg.kernel.variance)));
  }
  state.params.add("sigma_obs.raw",
                   Eigen::MatrixXd::Constant(
                       1, 1, softplus_inv(cfg.sigma_obs_init - kSigmaObsFloor)));
  if (cfg.kind == ModelKind::pigpvae && cfg.alpha_mode == AlphaMode::trainable) {
    state.params.add("alpha.raw",
                     Eigen::MatrixXd::Constant(
                         1, 1, softplus_inv(cfg.alpha_value - cfg.alpha_floor)));
  }
  return state;
}

LossBreakdown ObjectiveVars::values() const {
  LossBreakdown b;
  b.total = total.scalar();
  b.recon = recon.scalar();
  b.kl_phys = kl_phys.scalar();
  b.gp_entropy_term = gp_entropy_term.scalar();
  b.log_z = log_z.scalar();
  b.reg = reg.scalar();
  return b;
}

ObjectiveVars build_objective(Tape& tape, const BoundParams& bound,
                              const ModelState& state, const SeriesBatch& batch,
                              std::uint64_t noise_seed) {
  GraphContext ctx = make_context(tape, bound, state, batch);
  switch (state.cfg.kind) {
    case ModelKind::vae: return build_vae(ctx, batch, noise_seed);
    case ModelKind::gpvae: return build_gpvae(ctx, batch, noise_seed);
    case ModelKind::pivae: return build_pivae(ctx, batch, noise_seed);
    case ModelKind::pigpvae: return build_pigpvae(ctx, batch, noise_seed);
  }
  throw UsageError("invalid model kind value");
}

namespace {
LossBreakdown eval_objective(const ModelState& state, const SeriesBatch& batch,
                             std::uint64_t seed, ModelKind expected,
                             const char* op) {
  if (state.cfg.kind != expected)
    throw UsageError(std::string(op) + " called on a " +
                     to_string(state.cfg.kind) + " state");
  Tape tape;
  BoundParams bound = bind_params(tape, state.params);
  return build_objective(tape, bound, state, batch, seed).values();
}
}  // namespace

LossBreakdown vae_elbo(const ModelState& s, const SeriesBatch& b, std::uint64_t seed) {
  return eval_objective(s, b, seed, ModelKind::vae, "vae_elbo");
}
LossBreakdown gpvae_elbo(const ModelState& s, const SeriesBatch& b, std::uint64_t seed) {
  return eval_objective(s, b, seed, ModelKind::gpvae, "gpvae_elbo");
}
LossBreakdown pivae_elbo(const ModelState& s, const SeriesBatch& b, std::uint64_t seed) {
  return eval_objective(s, b, seed, ModelKind::pivae, "pivae_elbo");
}
LossBreakdown pigpvae_loss(const ModelState& s, const SeriesBatch& b, std::uint64_t seed) {
  return eval_objective(s, b, seed, ModelKind::pigpvae, "pigpvae_loss");
}

std::pair<Eigen::VectorXd, Eigen::VectorXd> pigpvae_decode(
    const ModelState& state, double z_phy, const Eigen::MatrixXd& z_delta,
    double t0, double ts) {
  if (state.cfg.kind != ModelKind::pigpvae)
    throw UsageError("pigpvae_decode called on a " + to_string(state.cfg.kind) +
                     " state");
  const Eigen::VectorXd phys_c =
      physical_decode(z_phy, state.time_grid, t0, ts);
  Eigen::VectorXd phys_n =
      state.normalizer.apply(phys_c.transpose()).transpose();
  Eigen::VectorXd xhat = phys_n;
  if (state.cfg.latent_dim > 0) {
    if (z_delta.rows() != state.cfg.latent_dim ||
        z_delta.cols() != state.time_grid.size())
      throw ShapeError("pigpvae_decode: z_delta must be L x T");
    Mlp dec = delta_decoder_net(state.cfg);
    xhat += decode_delta(dec, state.params, z_delta, phys_n);
  }
  return {xhat, phys_n};
}

GenerateResult generate(const ModelState& state,
                        const std::vector<std::pair<double, double>>& x_c,
                        int n_per_cond, std::uint64_t seed,
                        const GenerateOptions& opts) {
  if (!state.trained) throw UsageError("generate requires a trained state");
  if (n_per_cond < 1) throw DomainError("n_per_cond must be >= 1");
  const ModelKind kind = state.cfg.kind;
  const bool conditional = kind == ModelKind::pivae || kind == ModelKind::pigpvae;
  GenerateResult result;

  if (conditional) {
    if (x_c.empty())
      throw UsageError("conditional generation needs at least one (t0, ts) pair");
    for (const auto& [t0, ts] : x_c) {
      if (state.mode == Mode::heating && ts < t0)
        throw DomainError("heating conditioning needs ts >= t0");
      if (state.mode == Mode::cooling && ts > t0)
        throw DomainError("cooling conditioning needs ts <= t0");
    }
  } else if (!x_c.empty()) {
    result.warnings.push_back("unconditional model ignores conditioning");
  }

  const Eigen::Index t = state.time_grid.size();
  const Eigen::Index n_total =
      static_cast<Eigen::Index>(std::max<std::size_t>(1, x_c.size())) * n_per_cond;
  Eigen::MatrixXd values(n_total, t);  // normalized during assembly
  Eigen::VectorXd ts_out(n_total);

  Rng phys_rng(derive_seed(seed, "gen-phys"));

  if (kind == ModelKind::vae) {
    Rng latent_rng(derive_seed(seed, "gen-latent"));
    Eigen::MatrixXd z = draw_matrix(latent_rng, state.cfg.latent_dim, n_total);
    Mlp dec = vae_decoder_net(state.cfg, static_cast<int>(t));
    values = dec.forward(state.params, z).transpose();
  } else if (kind == ModelKind::gpvae) {
    Mlp dec = gp_decoder_net(state.cfg);
    for (Eigen::Index i = 0; i < n_total; ++i) {
      Eigen::MatrixXd z(state.cfg.latent_dim, t);
      if (state.cfg.per_channel_kernel) {
        for (int l = 0; l < state.cfg.latent_dim; ++l)
          z.row(l) =
              sample_prior(state.time_grid, state.kernel_effective(l), 1,
                           derive_seed(seed, "gen-latent",
                                       static_cast<std::uint64_t>(
                                           i * state.cfg.latent_dim + l)))
                  .row(0);
      } else {
        z = sample_prior(state.time_grid, state.kernel_effective(),
                         state.cfg.latent_dim,
                         derive_seed(seed, "gen-latent", static_cast<std::uint64_t>(i)));
      }
      values.row(i) = dec.forward(state.params, z).row(0);
    }
  } else {
    // pivae / pigpvae: z_phy from the informative prior, per conditioning pair
    const bool with_delta =
        kind == ModelKind::pigpvae && state.cfg.latent_dim > 0;
    Mlp delta_dec = delta_decoder_net(state.cfg);
    Eigen::Index row = 0;
    for (std::size_t c = 0; c < x_c.size(); ++c) {
      for (int r = 0; r < n_per_cond; ++r, ++row) {
        double z_phy = phys_rng.normal(state.cfg.prior.mu, state.cfg.prior.sigma);
        Eigen::VectorXd phys_c = physical_decode(z_phy, state.time_grid,
                                                 x_c[c].first, x_c[c].second);
        Eigen::VectorXd xn =
            state.normalizer.apply(phys_c.transpose()).transpose();
        if (with_delta) {
          Eigen::MatrixXd z_delta = sample_prior(
              state.time_grid, state.kernel_effective(), state.cfg.latent_dim,
              derive_seed(seed, "gen-delta", static_cast<std::uint64_t>(row)));
          if (state.cfg.per_channel_kernel) {
            for (int l = 0; l < state.cfg.latent_dim; ++l)
              z_delta.row(l) =
                  sample_prior(state.time_grid, state.kernel_effective(l), 1,
                               derive_seed(seed, "gen-delta",
                                           static_cast<std::uint64_t>(
                                               row * state.cfg.latent_dim + l)))
                      .row(0);
          }
          xn += decode_delta(delta_dec, state.params, z_delta, xn);
        }
        values.row(row) = xn.transpose();
        ts_out[row] = x_c[c].second;
      }
    }
  }

  if (opts.add_observation_noise) {
    Rng noise_rng(derive_seed(seed, "gen-obsnoise"));
    const double sd = state.sigma_obs();
    for (Eigen::Index i = 0; i < values.rows(); ++i)
      for (Eigen::Index j = 0; j < values.cols(); ++j)
        values(i, j) += sd * noise_rng.normal();
  }

  // back to degrees C
  values = state.normalizer.invert(values);

  SeriesBatch batch;
  batch.mode = state.mode;
  batch.time_grid = state.time_grid;
  batch.values = values;
  batch.t0 = values.col(0);
  batch.ts.resize(n_total);
  bool clamped = false;
  for (Eigen::Index i = 0; i < n_total; ++i) {
    if (conditional) {
      double ts = ts_out[i];
      if (state.mode == Mode::heating && ts < batch.t0[i]) {
        ts = batch.t0[i];
        clamped = true;
      }
      if (state.mode == Mode::cooling && ts > batch.t0[i]) {
        ts = batch.t0[i];
        clamped = true;
      }
      batch.ts[i] = ts;
    } else {
      batch.ts[i] = state.mode == Mode::heating
                        ? std::max(batch.values.row(i).maxCoeff(), batch.t0[i])
                        : std::min(batch.values.row(i).minCoeff(), batch.t0[i]);
    }
  }
  if (clamped)
    result.warnings.push_back(
        "system temperature clamped to preserve mode ordering on some curves");
  batch.ids.reserve(static_cast<std::size_t>(n_total));
  for (Eigen::Index i = 0; i < n_total; ++i)
    batch.ids.push_back("g" + std::to_string(i));
  batch.validate();
  result.batch = std::move(batch);
  return result;
}

ReconstructResult reconstruct(const ModelState& state, const SeriesBatch& batch,
                              std::uint64_t seed) {
  (void)seed;  // posterior-mean decode is deterministic
  if (!state.trained) throw UsageError("reconstruct requires a trained state");
  const ModelKind kind = state.cfg.kind;
  const Eigen::Index t = batch.timesteps();
  const Eigen::Index n = batch.n();
  if (t != state.time_grid.size())
    throw ShapeError("batch timestep count disagrees with the model time grid");
  Eigen::MatrixXd xn = state.normalizer.apply(batch.values).transpose();  // T x n

  ReconstructResult out;
  if (kind == ModelKind::vae) {
    Mlp enc = vae_encoder_net(state.cfg, static_cast<int>(t));
    Mlp dec = vae_decoder_net(state.cfg, static_cast<int>(t));
    Eigen::MatrixXd eo = enc.forward(state.params, xn);
    Eigen::MatrixXd mu = eo.topRows(state.cfg.latent_dim);
    out.x_hat = state.normalizer.invert(dec.forward(state.params, mu).transpose());
    return out;
  }
  if (kind == ModelKind::gpvae) {
    Mlp enc = gp_encoder_net(state.cfg, static_cast<int>(t));
    Mlp dec = gp_decoder_net(state.cfg);
    out.x_hat.resize(n, t);
    for (Eigen::Index i = 0; i < n; ++i) {
      PseudoObservations pseudo =
          encode_gp(enc, state.params, xn.col(i), state.cfg.latent_dim);
      Eigen::MatrixXd post_mean = posterior_means(state, pseudo);
      Eigen::MatrixXd dec_out = dec.forward(state.params, post_mean);
      out.x_hat.row(i) = state.normalizer.invert(dec_out).row(0);
    }
    return out;
  }

  // pivae / pigpvae
  Mlp phys_enc = phys_encoder_net(state.cfg, static_cast<int>(t));
  Eigen::MatrixXd pe = phys_enc.forward(state.params, xn);  // 2 x n
  out.x_hat.resize(n, t);
  const bool with_delta = kind == ModelKind::pigpvae && state.cfg.latent_dim > 0;
  Eigen::MatrixXd xphy(n, t);
  Mlp gp_enc = with_delta ? gp_encoder_net(state.cfg, static_cast<int>(t)) : Mlp{};
  Mlp delta_dec = delta_decoder_net(state.cfg);
  for (Eigen::Index i = 0; i < n; ++i) {
    Eigen::VectorXd phys_c =
        physical_decode(pe(0, i), state.time_grid, batch.t0[i], batch.ts[i]);
    xphy.row(i) = phys_c.transpose();
    if (with_delta) {
      PseudoObservations pseudo =
          encode_gp(gp_enc, state.params, xn.col(i), state.cfg.latent_dim);
      Eigen::MatrixXd post_mean = posterior_means(state, pseudo);
      Eigen::VectorXd phys_n =
          state.normalizer.apply(phys_c.transpose()).transpose();
      Eigen::VectorXd delta =
          decode_delta(delta_dec, state.params, post_mean, phys_n);
      out.x_hat.row(i) =
          state.normalizer.invert((phys_n + delta).transpose()).row(0);
    } else {
      out.x_hat.row(i) = phys_c.transpose();
    }
  }
  if (kind == ModelKind::pigpvae) out.x_hat_phy = xphy;
  if (kind == ModelKind::pivae) out.x_hat = xphy;
  return out;
}

// ------------------------------------------------------------- checkpoints

namespace {

json params_to_json(const ParamStore& params) {
  json arr = json::array();
  for (std::size_t i = 0; i < params.size(); ++i) {
    const Eigen::MatrixXd& m = params.matrix(i);
    json entry;
    entry["name"] = params.name(i);
    entry["rows"] = m.rows();
    entry["cols"] = m.cols();
    json data = json::array();
    for (Eigen::Index r = 0; r < m.rows(); ++r)
      for (Eigen::Index c = 0; c < m.cols(); ++c) data.push_back(m(r, c));
    entry["data"] = std::move(data);
    arr.push_back(std::move(entry));
  }
  return arr;
}

}  // namespace

std::string checkpoint_json(const ModelState& state) {
  json doc;
  doc["format"] = "pigpvae-checkpoint-v1";
  doc["model_kind"] = to_string(state.cfg.kind);
  doc["mode"] = to_string(state.mode);
  doc["trained"] = state.trained;
  doc["seed"] = state.seed;
  json grid = json::array();
  for (Eigen::Index i = 0; i < state.time_grid.size(); ++i)
    grid.push_back(state.time_grid[i]);
  doc["time_grid"] = std::move(grid);

  json cfg;
  cfg["latent_dim"] = state.cfg.latent_dim;
  cfg["hidden"] = state.cfg.hidden;
  cfg["activation"] = to_string(state.cfg.activation);
  cfg["sigma_obs_init"] = state.cfg.sigma_obs_init;
  cfg["elbo_samples"] = state.cfg.elbo_samples;
  cfg["kernel"] = {{"lengthscale", state.cfg.kernel.lengthscale},
                   {"variance", state.cfg.kernel.variance},
                   {"jitter", state.cfg.kernel.jitter},
                   {"per_channel", state.cfg.per_channel_kernel}};
  cfg["physics"] = {{"prior", {{"mu", state.cfg.prior.mu},
                               {"sigma", state.cfg.prior.sigma}}}};
  cfg["alpha"] = {{"mode", state.cfg.alpha_mode == AlphaMode::fixed ? "fixed"
                                                                     : "trainable"},
                  {"value", state.cfg.alpha_value},
                  {"floor", state.cfg.alpha_floor}};
  doc["config"] = std::move(cfg);

  doc["sigma_obs"] = state.sigma_obs();
  if (state.cfg.kind == ModelKind::pigpvae)
    doc["alpha_effective"] = state.alpha_effective();
  if (has_gp_branch(state.cfg)) {
    KernelParams k = state.kernel_effective();
    doc["kernel_effective"] = {{"lengthscale", k.lengthscale},
                               {"variance", k.variance},
                               {"jitter", k.jitter}};
  }
  doc["normalizer"] = {{"shift", state.normalizer.shift},
                       {"scale", state.normalizer.scale},
                       {"fitted_on", state.normalizer.fitted_on}};
  doc["params"] = params_to_json(state.params);
  return doc.dump(2) + "\n";
}

ModelState state_from_checkpoint_json(const std::string& text) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ParseError(std::string("invalid checkpoint JSON: ") + e.what());
  }
  if (!doc.contains("format") || doc["format"] != "pigpvae-checkpoint-v1")
    throw FormatError("not a pigpvae checkpoint");

  ModelConfig cfg;
  cfg.kind = model_kind_from_string(doc.at("model_kind").get<std::string>());
  const json& c = doc.at("config");
  cfg.latent_dim = c.at("latent_dim").get<int>();
  cfg.hidden = c.at("hidden").get<std::vector<int>>();
  cfg.activation = activation_from_string(c.at("activation").get<std::string>());
  cfg.sigma_obs_init = c.at("sigma_obs_init").get<double>();
  cfg.elbo_samples = c.at("elbo_samples").get<int>();
  cfg.kernel.lengthscale = c.at("kernel").at("lengthscale").get<double>();
  cfg.kernel.variance = c.at("kernel").at("variance").get<double>();
  cfg.kernel.jitter = c.at("kernel").at("jitter").get<double>();
  cfg.per_channel_kernel = c.at("kernel").at("per_channel").get<bool>();
  cfg.prior.mu = c.at("physics").at("prior").at("mu").get<double>();
  cfg.prior.sigma = c.at("physics").at("prior").at("sigma").get<double>();
  cfg.alpha_mode = c.at("alpha").at("mode").get<std::string>() == "fixed"
                       ? AlphaMode::fixed
                       : AlphaMode::trainable;
  cfg.alpha_value = c.at("alpha").at("value").get<double>();
  cfg.alpha_floor = c.at("alpha").at("floor").get<double>();

  auto grid_vec = doc.at("time_grid").get<std::vector<double>>();
  Eigen::VectorXd grid =
      Eigen::Map<const Eigen::VectorXd>(grid_vec.data(),
                                        static_cast<Eigen::Index>(grid_vec.size()));

  ModelState state = init_model(cfg, grid, doc.at("seed").get<std::uint64_t>());
  state.mode = mode_from_string(doc.at("mode").get<std::string>());
  state.trained = doc.at("trained").get<bool>();
  state.normalizer.shift = doc.at("normalizer").at("shift").get<double>();
  state.normalizer.scale = doc.at("normalizer").at("scale").get<double>();
  state.normalizer.fitted_on =
      doc.at("normalizer").at("fitted_on").get<std::string>();

  const json& params = doc.at("params");
  if (params.size() != state.params.size())
    throw FormatError("checkpoint parameter count disagrees with the model layout");
  for (std::size_t i = 0; i < params.size(); ++i) {
    const json& entry = params[i];
    const std::string name = entry.at("name").get<std::string>();
    if (name != state.params.name(i))
      throw FormatError("checkpoint parameter order mismatch at '" + name + "'");
    Eigen::MatrixXd& m = state.params.matrix(i);
    if (entry.at("rows").get<Eigen::Index>() != m.rows() ||
        entry.at("cols").get<Eigen::Index>() != m.cols())
      throw ShapeError("checkpoint parameter '" + name + "' has the wrong shape");
    const json& data = entry.at("data");
    if (static_cast<Eigen::Index>(data.size()) != m.size())
      throw ShapeError("checkpoint parameter '" + name + "' has the wrong length");
    Eigen::Index k = 0;
    for (Eigen::Index r = 0; r < m.rows(); ++r)
      for (Eigen::Index col = 0; col < m.cols(); ++col)
        m(r, col) = data[static_cast<std::size_t>(k++)].get<double>();
  }
  return state;
}

void save_checkpoint(const std::filesystem::path& path, const ModelState& state) {
  write_text_atomic(path, checkpoint_json(state));
}

ModelState load_checkpoint(const std::filesystem::path& path) {
  return state_from_checkpoint_json(read_text(path));
}

}  // namespace pigpvae
