#include "pigpvae/training.hpp"

#include <chrono>
#include <cmath>
#include <sstream>

#include "pigpvae/errors.hpp"
#include "pigpvae/io.hpp"
#include "pigpvae/rng.hpp"

namespace pigpvae {

void TrainConfig::validate() const {
  if (epochs < 1) throw ConfigError("epochs must be >= 1");
  if (!(learning_rate >= 0.0)) throw ConfigError("learning_rate must be >= 0");
  if (!(beta1 > 0.0 && beta1 < 1.0) || !(beta2 > 0.0 && beta2 < 1.0))
    throw ConfigError("adam decay rates must lie in (0, 1)");
  if (!(epsilon > 0.0)) throw ConfigError("epsilon must be positive");
  if (!(clip_norm > 0.0)) throw ConfigError("clip_norm must be positive");
}

namespace {

void check_finite(const LossBreakdown& b, int epoch) {
  const std::pair<const char*, double> terms[] = {
      {"total", b.total},       {"recon", b.recon},
      {"kl_phys", b.kl_phys},   {"gp_entropy_term", b.gp_entropy_term},
      {"log_z", b.log_z},       {"reg", b.reg}};
  for (const auto& [name, v] : terms) {
    if (!std::isfinite(v))
      throw NumericalError("epoch " + std::to_string(epoch) +
                           ": non-finite objective term '" + name + "'");
  }
}

}  // namespace

TrainTrace train(const ModelConfig& model_cfg, const SeriesBatch& batch,
                 const TrainConfig& train_cfg) {
  train_cfg.validate();
  batch.validate();
  const auto t_start = std::chrono::steady_clock::now();

  ModelState state = init_model(model_cfg, batch.time_grid, train_cfg.seed);
  state.normalizer = fit_normalizer(batch);
  state.mode = batch.mode;

  const std::size_t n_params = state.params.size();
  std::vector<Eigen::MatrixXd> m1(n_params), m2(n_params);
  for (std::size_t p = 0; p < n_params; ++p) {
    const Eigen::MatrixXd& w = state.params.matrix(p);
    m1[p] = Eigen::MatrixXd::Zero(w.rows(), w.cols());
    m2[p] = Eigen::MatrixXd::Zero(w.rows(), w.cols());
  }

  TrainTrace trace;
  trace.history.reserve(static_cast<std::size_t>(train_cfg.epochs));
  trace.grad_norms.reserve(static_cast<std::size_t>(train_cfg.epochs));

  for (int epoch = 0; epoch < train_cfg.epochs; ++epoch) {
    Tape tape;
    BoundParams bound = bind_params(tape, state.params);
    std::uint64_t noise_seed =
        derive_seed(train_cfg.seed, "epoch-noise", static_cast<std::uint64_t>(epoch));
    ObjectiveVars obj = build_objective(tape, bound, state, batch, noise_seed);
    LossBreakdown parts = obj.values();
    check_finite(parts, epoch);

    // maximize the objective: descend on its negation
    Var loss = -obj.total;
    tape.backward(loss);

    std::vector<Eigen::MatrixXd> grads(n_params);
    double sq_norm = 0.0;
    for (std::size_t p = 0; p < n_params; ++p) {
      grads[p] = bound.vars[p].grad_or_zero();
      if (!grads[p].allFinite())
        throw NumericalError("epoch " + std::to_string(epoch) +
                             ": non-finite gradient for '" + state.params.name(p) + "'");
      sq_norm += grads[p].squaredNorm();
    }
    double norm = std::sqrt(sq_norm);
    trace.grad_norms.push_back(norm);
    if (norm > train_cfg.clip_norm) {
      double s = train_cfg.clip_norm / norm;
      for (auto& g : grads) g *= s;
    }

    const double t = static_cast<double>(epoch + 1);
    const double bias1 = 1.0 - std::pow(train_cfg.beta1, t);
    const double bias2 = 1.0 - std::pow(train_cfg.beta2, t);
    for (std::size_t p = 0; p < n_params; ++p) {
      m1[p] = train_cfg.beta1 * m1[p] + (1.0 - train_cfg.beta1) * grads[p];
      m2[p] = (train_cfg.beta2 * m2[p].array() +
               (1.0 - train_cfg.beta2) * grads[p].array().square())
                  .matrix();
      Eigen::ArrayXXd step = (m1[p].array() / bias1) /
                             ((m2[p].array() / bias2).sqrt() + train_cfg.epsilon);
      state.params.matrix(p) -= (train_cfg.learning_rate * step).matrix();
    }

    trace.history.push_back(parts);
    if (train_cfg.log_every > 0 && (epoch + 1) % train_cfg.log_every == 0) {
      std::ostringstream ss;
      ss << "epoch " << (epoch + 1) << "/" << train_cfg.epochs
         << " total=" << parts.total << " recon=" << parts.recon;
      log_info(ss.str());
    }
  }

  state.trained = true;
  trace.final_state = std::move(state);
  trace.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start)
          .count();
  return trace;
}

void save_trace_csv(const std::filesystem::path& path, const TrainTrace& trace) {
  std::ostringstream out;
  out << "epoch,total,recon,kl_phys,gp_entropy_term,log_z,reg\n";
  for (std::size_t e = 0; e < trace.history.size(); ++e) {
    const LossBreakdown& b = trace.history[e];
    out << e << ',' << fmt_double(b.total) << ',' << fmt_double(b.recon) << ','
        << fmt_double(b.kl_phys) << ',' << fmt_double(b.gp_entropy_term) << ','
        << fmt_double(b.log_z) << ',' << fmt_double(b.reg) << '\n';
  }
  write_text_atomic(path, out.str());
}

GradCheckReport grad_check(const ObjectiveFn& objective, ParamStore& params,
                           double h) {
  if (!(h > 0.0)) throw DomainError("grad_check: h must be positive");
  GradCheckReport report;

  std::vector<Eigen::MatrixXd> analytic(params.size());
  {
    Tape tape;
    BoundParams bound = bind_params(tape, params);
    Var value = objective(tape, bound);
    tape.backward(value);
    for (std::size_t p = 0; p < params.size(); ++p)
      analytic[p] = bound.vars[p].grad_or_zero();
  }

  auto eval = [&]() {
    Tape tape;
    BoundParams bound = bind_params(tape, params);
    return objective(tape, bound).scalar();
  };

  for (std::size_t p = 0; p < params.size(); ++p) {
    Eigen::MatrixXd& w = params.matrix(p);
    for (Eigen::Index i = 0; i < w.rows(); ++i) {
      for (Eigen::Index j = 0; j < w.cols(); ++j) {
        const double saved = w(i, j);
        w(i, j) = saved + h;
        double up = eval();
        w(i, j) = saved - h;
        double down = eval();
        w(i, j) = saved;
        double numeric = (up - down) / (2.0 * h);
        double a = analytic[p](i, j);
        double rel = std::abs(a - numeric) /
                     std::max({std::abs(a), std::abs(numeric), 1e-6});
        if (rel >= report.max_rel_err) {
          report.max_rel_err = rel;
          report.worst_param = params.name(p) + "[" + std::to_string(i) + "," +
                               std::to_string(j) + "]";
          report.analytic_at_worst = a;
          report.numeric_at_worst = numeric;
        }
      }
    }
  }
  return report;
}

}  // namespace pigpvae
