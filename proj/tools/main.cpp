// Command-line front end: synth / train / generate / evaluate / experiment.
// All behaviour lives in the library; this wrapper parses flags, applies
// overrides and maps errors to single-line machine-parseable output.

#include <cstdio>
#include <exception>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "pigpvae/commands.hpp"
#include "pigpvae/errors.hpp"

namespace {

struct CommonFlags {
  std::string config_path;
  std::optional<std::string> output_dir;
  std::optional<std::uint64_t> seed;
  std::optional<int> workers;
};

void add_common(CLI::App* cmd, CommonFlags& flags) {
  cmd->add_option("--config", flags.config_path, "Path to the run config JSON")
      ->required();
  cmd->add_option("--output-dir", flags.output_dir,
                  "Override the config's output_dir");
  cmd->add_option("--seed", flags.seed, "Override the config's seed");
  cmd->add_option("--workers", flags.workers,
                  "Override the config's worker count (experiment)");
}

pigpvae::RunConfig load_with_overrides(const CommonFlags& flags) {
  pigpvae::RunConfig cfg = pigpvae::load_run_config(flags.config_path);
  if (flags.output_dir) cfg.output_dir = *flags.output_dir;
  if (flags.seed) cfg.seed = *flags.seed;
  if (flags.workers) cfg.workers = *flags.workers;
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Physics-informed generative models for temperature curves"};
  app.require_subcommand(1);

  CommonFlags synth_flags, train_flags, gen_flags, eval_flags, exp_flags;
  CLI::App* synth = app.add_subcommand("synth", "Write a surrogate dataset CSV");
  add_common(synth, synth_flags);
  CLI::App* train = app.add_subcommand("train", "Train a model, write checkpoint + trace");
  add_common(train, train_flags);
  CLI::App* gen = app.add_subcommand("generate", "Generate curves from a checkpoint");
  add_common(gen, gen_flags);
  CLI::App* eval = app.add_subcommand("evaluate", "Score a checkpoint against a dataset");
  add_common(eval, eval_flags);
  CLI::App* exp = app.add_subcommand(
      "experiment", "Run the full (mode x model x seed) evaluation grid");
  add_common(exp, exp_flags);

  CLI11_PARSE(app, argc, argv);

  try {
    if (synth->parsed()) pigpvae::cmd_synth(load_with_overrides(synth_flags));
    if (train->parsed()) pigpvae::cmd_train(load_with_overrides(train_flags));
    if (gen->parsed()) pigpvae::cmd_generate(load_with_overrides(gen_flags));
    if (eval->parsed()) pigpvae::cmd_evaluate(load_with_overrides(eval_flags));
    if (exp->parsed()) pigpvae::cmd_experiment(load_with_overrides(exp_flags));
  } catch (const pigpvae::Error& e) {
    std::fprintf(stderr, "error[%s]: %s\n", e.category().c_str(), e.what());
    return 1;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error[internal]: %s\n", e.what());
    return 1;
  }
  return 0;
}
