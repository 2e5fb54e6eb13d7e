#include "pigpvae/config.hpp"

#include <set>

#include <nlohmann/json.hpp>

#include "pigpvae/errors.hpp"
#include "pigpvae/io.hpp"
#include "pigpvae/rng.hpp"

namespace pigpvae {

using json = nlohmann::ordered_json;

namespace {

void check_keys(const json& obj, const std::set<std::string>& allowed,
                const std::string& where) {
  if (!obj.is_object()) throw ConfigError(where + " must be a JSON object");
  for (const auto& [key, value] : obj.items()) {
    (void)value;
    if (!allowed.count(key))
      throw ConfigError("unknown key '" + key + "' in " + where);
  }
}

template <typename T>
T get_or(const json& obj, const char* key, T fallback) {
  if (!obj.contains(key) || obj.at(key).is_null()) return fallback;
  try {
    return obj.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ConfigError(std::string("bad value for '") + key + "': " + e.what());
  }
}

SurrogateRanges parse_ranges(const json& obj, const std::string& where,
                             const SurrogateRanges& defaults) {
  check_keys(obj, {"n", "t0_low", "t0_high", "gap_low", "gap_high"}, where);
  SurrogateRanges r = defaults;
  r.n = get_or(obj, "n", r.n);
  r.t0_low = get_or(obj, "t0_low", r.t0_low);
  r.t0_high = get_or(obj, "t0_high", r.t0_high);
  r.gap_low = get_or(obj, "gap_low", r.gap_low);
  r.gap_high = get_or(obj, "gap_high", r.gap_high);
  return r;
}

void parse_data(const json& obj, DataSection& out) {
  check_keys(obj, {"path", "mode", "split", "surrogate"}, "data");
  if (obj.contains("path") && !obj.at("path").is_null())
    out.path = obj.at("path").get<std::string>();
  out.mode = mode_from_string(get_or<std::string>(obj, "mode", "heating"));
  if (obj.contains("split") && !obj.at("split").is_null()) {
    const json& s = obj.at("split");
    check_keys(s, {"train_fraction", "ood_cutoff"}, "data.split");
    if (s.contains("train_fraction") && !s.at("train_fraction").is_null())
      out.split_fraction = s.at("train_fraction").get<double>();
    if (s.contains("ood_cutoff") && !s.at("ood_cutoff").is_null())
      out.split_cutoff = s.at("ood_cutoff").get<double>();
  }
  if (obj.contains("surrogate") && !obj.at("surrogate").is_null()) {
    const json& s = obj.at("surrogate");
    check_keys(s, {"timesteps", "seed", "k_mean", "k_sd", "noise", "heating",
                   "cooling"},
               "data.surrogate");
    out.surrogate.present = true;
    out.surrogate.timesteps = get_or(s, "timesteps", 24);
    if (s.contains("seed") && !s.at("seed").is_null())
      out.surrogate.seed = s.at("seed").get<std::uint64_t>();
    out.surrogate.k_mean = get_or(s, "k_mean", 2.0);
    out.surrogate.k_sd = get_or(s, "k_sd", 0.3);
    if (s.contains("noise") && !s.at("noise").is_null()) {
      const json& n = s.at("noise");
      check_keys(n, {"lengthscale", "amplitude"}, "data.surrogate.noise");
      out.surrogate.noise.lengthscale =
          get_or(n, "lengthscale", out.surrogate.noise.lengthscale);
      out.surrogate.noise.amplitude =
          get_or(n, "amplitude", out.surrogate.noise.amplitude);
    }
    if (s.contains("heating") && !s.at("heating").is_null())
      out.surrogate.heating = parse_ranges(
          s.at("heating"), "data.surrogate.heating", SurrogateRanges{});
    if (s.contains("cooling") && !s.at("cooling").is_null())
      out.surrogate.cooling =
          parse_ranges(s.at("cooling"), "data.surrogate.cooling",
                       SurrogateRanges{28, 22.0, 34.0, 6.0, 12.0});
  }
}

void parse_model(const json& obj, ModelConfig& out) {
  check_keys(obj,
             {"kind", "latent_dim", "hidden", "activation", "sigma_obs_init",
              "elbo_samples", "kernel", "physics", "alpha"},
             "model");
  out.kind = model_kind_from_string(get_or<std::string>(obj, "kind", "pigpvae"));
  out.latent_dim = get_or(obj, "latent_dim", out.latent_dim);
  out.hidden = get_or(obj, "hidden", out.hidden);
  out.activation =
      activation_from_string(get_or<std::string>(obj, "activation", "tanh"));
  out.sigma_obs_init = get_or(obj, "sigma_obs_init", out.sigma_obs_init);
  out.elbo_samples = get_or(obj, "elbo_samples", out.elbo_samples);
  if (obj.contains("kernel") && !obj.at("kernel").is_null()) {
    const json& k = obj.at("kernel");
    check_keys(k, {"lengthscale", "variance", "jitter", "per_channel"},
               "model.kernel");
    out.kernel.lengthscale = get_or(k, "lengthscale", out.kernel.lengthscale);
    out.kernel.variance = get_or(k, "variance", out.kernel.variance);
    out.kernel.jitter = get_or(k, "jitter", out.kernel.jitter);
    out.per_channel_kernel = get_or(k, "per_channel", out.per_channel_kernel);
  }
  if (obj.contains("physics") && !obj.at("physics").is_null()) {
    const json& p = obj.at("physics");
    check_keys(p, {"prior"}, "model.physics");
    if (p.contains("prior") && !p.at("prior").is_null()) {
      const json& prior = p.at("prior");
      check_keys(prior, {"mu", "sigma", "k_mean"}, "model.physics.prior");
      if (prior.contains("k_mean") && !prior.at("k_mean").is_null()) {
        if (prior.contains("mu") && !prior.at("mu").is_null())
          throw ConfigError("physics.prior: give either mu or k_mean, not both");
        out.prior.mu = softplus_inv(prior.at("k_mean").get<double>());
      } else {
        out.prior.mu = get_or(prior, "mu", out.prior.mu);
      }
      out.prior.sigma = get_or(prior, "sigma", out.prior.sigma);
    }
  }
  if (obj.contains("alpha") && !obj.at("alpha").is_null()) {
    const json& a = obj.at("alpha");
    check_keys(a, {"mode", "value", "floor"}, "model.alpha");
    const std::string mode = get_or<std::string>(a, "mode", "fixed");
    if (mode == "fixed")
      out.alpha_mode = AlphaMode::fixed;
    else if (mode == "trainable")
      out.alpha_mode = AlphaMode::trainable;
    else
      throw ConfigError("model.alpha.mode must be 'fixed' or 'trainable'");
    out.alpha_value = get_or(a, "value", out.alpha_value);
    out.alpha_floor = get_or(a, "floor", out.alpha_floor);
  }
  out.validate();
}

void parse_train(const json& obj, TrainConfig& out) {
  check_keys(obj,
             {"epochs", "learning_rate", "beta1", "beta2", "epsilon",
              "clip_norm", "log_every"},
             "train");
  out.epochs = get_or(obj, "epochs", out.epochs);
  out.learning_rate = get_or(obj, "learning_rate", out.learning_rate);
  out.beta1 = get_or(obj, "beta1", out.beta1);
  out.beta2 = get_or(obj, "beta2", out.beta2);
  out.epsilon = get_or(obj, "epsilon", out.epsilon);
  out.clip_norm = get_or(obj, "clip_norm", out.clip_norm);
  out.log_every = get_or(obj, "log_every", out.log_every);
  out.validate();
}

void parse_generate(const json& obj, GenerateSection& out) {
  check_keys(obj, {"checkpoint", "x_c", "n_per_cond", "add_observation_noise"},
             "generate");
  out.checkpoint = get_or<std::string>(obj, "checkpoint", "");
  if (obj.contains("x_c") && !obj.at("x_c").is_null()) {
    for (const auto& pair : obj.at("x_c")) {
      if (!pair.is_array() || pair.size() != 2)
        throw ConfigError("generate.x_c entries must be [t0, ts] pairs");
      out.x_c.emplace_back(pair[0].get<double>(), pair[1].get<double>());
    }
  }
  out.n_per_cond = get_or(obj, "n_per_cond", out.n_per_cond);
  out.add_observation_noise =
      get_or(obj, "add_observation_noise", out.add_observation_noise);
  if (out.n_per_cond < 1) throw ConfigError("generate.n_per_cond must be >= 1");
}

void parse_eval(const json& obj, EvalSection& out) {
  check_keys(obj, {"checkpoint", "runs", "bins"}, "eval");
  out.checkpoint = get_or<std::string>(obj, "checkpoint", "");
  out.runs = get_or(obj, "runs", out.runs);
  out.bins = get_or(obj, "bins", out.bins);
  if (out.runs < 1) throw ConfigError("eval.runs must be >= 1");
  if (out.bins < 1) throw ConfigError("eval.bins must be >= 1");
}

void parse_experiment(const json& obj, ExperimentConfig& out) {
  check_keys(obj,
             {"case", "cutoff", "train_fraction", "seeds", "eval_runs",
              "models", "modes"},
             "experiment");
  out.kase =
      experiment_case_from_string(get_or<std::string>(obj, "case", "in_dist"));
  out.cutoff = get_or(obj, "cutoff", out.cutoff);
  if (obj.contains("train_fraction") && !obj.at("train_fraction").is_null())
    out.train_fraction = obj.at("train_fraction").get<double>();
  out.seeds = get_or(obj, "seeds", out.seeds);
  out.eval_runs = get_or(obj, "eval_runs", out.eval_runs);
  if (obj.contains("models") && !obj.at("models").is_null()) {
    out.models.clear();
    for (const auto& m : obj.at("models"))
      out.models.push_back(model_kind_from_string(m.get<std::string>()));
    if (out.models.empty()) throw ConfigError("experiment.models must be non-empty");
  }
  if (obj.contains("modes") && !obj.at("modes").is_null()) {
    out.modes.clear();
    for (const auto& m : obj.at("modes"))
      out.modes.push_back(mode_from_string(m.get<std::string>()));
    if (out.modes.empty()) throw ConfigError("experiment.modes must be non-empty");
  }
  if (out.seeds < 1) throw ConfigError("experiment.seeds must be >= 1");
  if (out.eval_runs < 1) throw ConfigError("experiment.eval_runs must be >= 1");
}

}  // namespace

RunConfig parse_run_config(const std::string& text) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("invalid config JSON: ") + e.what());
  }
  check_keys(doc,
             {"seed", "output_dir", "workers", "data", "model", "train",
              "generate", "eval", "experiment"},
             "config root");
  RunConfig cfg;
  cfg.seed = get_or<std::uint64_t>(doc, "seed", 0);
  cfg.output_dir = get_or<std::string>(doc, "output_dir", "out");
  cfg.workers = get_or(doc, "workers", 0);
  if (cfg.workers < 0) throw ConfigError("workers must be >= 0");
  if (doc.contains("data") && !doc.at("data").is_null())
    parse_data(doc.at("data"), cfg.data);
  if (doc.contains("model") && !doc.at("model").is_null())
    parse_model(doc.at("model"), cfg.model);
  else
    cfg.model.validate();
  if (doc.contains("train") && !doc.at("train").is_null())
    parse_train(doc.at("train"), cfg.train);
  if (doc.contains("generate") && !doc.at("generate").is_null())
    parse_generate(doc.at("generate"), cfg.generate);
  if (doc.contains("eval") && !doc.at("eval").is_null())
    parse_eval(doc.at("eval"), cfg.eval);
  if (doc.contains("experiment") && !doc.at("experiment").is_null())
    parse_experiment(doc.at("experiment"), cfg.experiment);
  if (cfg.data.split_fraction &&
      (!(*cfg.data.split_fraction > 0.0) || *cfg.data.split_fraction > 1.0))
    throw ConfigError("data.split.train_fraction must lie in (0, 1]");
  return cfg;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  return parse_run_config(read_text(path));
}

std::string run_config_json(const RunConfig& cfg) {
  json doc;
  doc["seed"] = cfg.seed;
  doc["output_dir"] = cfg.output_dir.string();
  doc["workers"] = cfg.workers;

  json data;
  if (cfg.data.path) data["path"] = cfg.data.path->string();
  data["mode"] = to_string(cfg.data.mode);
  if (cfg.data.split_fraction || cfg.data.split_cutoff) {
    json s;
    if (cfg.data.split_fraction) s["train_fraction"] = *cfg.data.split_fraction;
    if (cfg.data.split_cutoff) s["ood_cutoff"] = *cfg.data.split_cutoff;
    data["split"] = std::move(s);
  }
  if (cfg.data.surrogate.present) {
    const SurrogateSection& sur = cfg.data.surrogate;
    json s;
    s["timesteps"] = sur.timesteps;
    if (sur.seed) s["seed"] = *sur.seed;
    s["k_mean"] = sur.k_mean;
    s["k_sd"] = sur.k_sd;
    s["noise"] = {{"lengthscale", sur.noise.lengthscale},
                  {"amplitude", sur.noise.amplitude}};
    auto ranges_json = [](const SurrogateRanges& r) {
      return json{{"n", r.n},
                  {"t0_low", r.t0_low},
                  {"t0_high", r.t0_high},
                  {"gap_low", r.gap_low},
                  {"gap_high", r.gap_high}};
    };
    if (sur.heating) s["heating"] = ranges_json(*sur.heating);
    if (sur.cooling) s["cooling"] = ranges_json(*sur.cooling);
    data["surrogate"] = std::move(s);
  }
  doc["data"] = std::move(data);

  doc["model"] = {
      {"kind", to_string(cfg.model.kind)},
      {"latent_dim", cfg.model.latent_dim},
      {"hidden", cfg.model.hidden},
      {"activation", to_string(cfg.model.activation)},
      {"sigma_obs_init", cfg.model.sigma_obs_init},
      {"elbo_samples", cfg.model.elbo_samples},
      {"kernel",
       {{"lengthscale", cfg.model.kernel.lengthscale},
        {"variance", cfg.model.kernel.variance},
        {"jitter", cfg.model.kernel.jitter},
        {"per_channel", cfg.model.per_channel_kernel}}},
      {"physics",
       {{"prior", {{"mu", cfg.model.prior.mu}, {"sigma", cfg.model.prior.sigma}}}}},
      {"alpha",
       {{"mode", cfg.model.alpha_mode == AlphaMode::fixed ? "fixed" : "trainable"},
        {"value", cfg.model.alpha_value},
        {"floor", cfg.model.alpha_floor}}}};

  doc["train"] = {{"epochs", cfg.train.epochs},
                  {"learning_rate", cfg.train.learning_rate},
                  {"beta1", cfg.train.beta1},
                  {"beta2", cfg.train.beta2},
                  {"epsilon", cfg.train.epsilon},
                  {"clip_norm", cfg.train.clip_norm},
                  {"log_every", cfg.train.log_every}};

  json xc = json::array();
  for (const auto& [t0, ts] : cfg.generate.x_c) xc.push_back({t0, ts});
  doc["generate"] = {{"checkpoint", cfg.generate.checkpoint},
                     {"x_c", std::move(xc)},
                     {"n_per_cond", cfg.generate.n_per_cond},
                     {"add_observation_noise", cfg.generate.add_observation_noise}};

  doc["eval"] = {{"checkpoint", cfg.eval.checkpoint},
                 {"runs", cfg.eval.runs},
                 {"bins", cfg.eval.bins}};

  json models = json::array();
  for (ModelKind k : cfg.experiment.models) models.push_back(to_string(k));
  json modes = json::array();
  for (Mode m : cfg.experiment.modes) modes.push_back(to_string(m));
  json exp = {{"case", to_string(cfg.experiment.kase)},
              {"cutoff", cfg.experiment.cutoff},
              {"seeds", cfg.experiment.seeds},
              {"eval_runs", cfg.experiment.eval_runs},
              {"models", std::move(models)},
              {"modes", std::move(modes)}};
  exp["train_fraction"] = cfg.experiment.effective_fraction();
  doc["experiment"] = std::move(exp);

  return doc.dump(2) + "\n";
}

Dataset make_dataset(const RunConfig& cfg) {
  if (cfg.data.path) return load_csv(*cfg.data.path);
  if (!cfg.data.surrogate.present)
    throw ConfigError("config needs either data.path or data.surrogate");
  const SurrogateSection& sur = cfg.data.surrogate;
  if (!sur.heating && !sur.cooling)
    throw ConfigError("data.surrogate needs a heating and/or cooling block");
  const std::uint64_t base_seed =
      sur.seed ? *sur.seed : derive_seed(cfg.seed, "synth");

  Dataset out;
  auto build = [&](Mode mode, const SurrogateRanges& r) {
    SurrogateSpec spec;
    spec.n = r.n;
    spec.timesteps = sur.timesteps;
    spec.mode = mode;
    spec.k_mean = sur.k_mean;
    spec.k_sd = sur.k_sd;
    spec.t0_low = r.t0_low;
    spec.t0_high = r.t0_high;
    spec.gap_low = r.gap_low;
    spec.gap_high = r.gap_high;
    spec.noise = sur.noise;
    spec.seed = derive_seed(base_seed, to_string(mode));
    return synthesize_surrogate(spec);
  };
  if (sur.heating) out.heating = build(Mode::heating, *sur.heating);
  if (sur.cooling) out.cooling = build(Mode::cooling, *sur.cooling);
  return out;
}

}  // namespace pigpvae
