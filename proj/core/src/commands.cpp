#include "pigpvae/commands.hpp"

#include <algorithm>

#include <nlohmann/json.hpp>

#include "pigpvae/errors.hpp"
#include "pigpvae/experiment.hpp"
#include "pigpvae/io.hpp"
#include "pigpvae/metrics.hpp"
#include "pigpvae/rng.hpp"

namespace pigpvae {

using json = nlohmann::ordered_json;

namespace {

void write_manifest(const std::filesystem::path& dir,
                    std::vector<std::string> files) {
  files.push_back("config_resolved.json");
  files.push_back("run_manifest.json");
  std::sort(files.begin(), files.end());
  files.erase(std::unique(files.begin(), files.end()), files.end());
  json doc;
  doc["files"] = files;
  write_text_atomic(dir / "run_manifest.json", doc.dump(2) + "\n");
}

void write_resolved_config(const RunConfig& cfg) {
  write_text_atomic(cfg.output_dir / "config_resolved.json", run_config_json(cfg));
}

SeriesBatch select_training_batch(const RunConfig& cfg, const Dataset& data) {
  const SeriesBatch& batch = data.require(cfg.data.mode);
  if (!cfg.data.split_fraction && !cfg.data.split_cutoff) return batch;
  SplitSpec spec;
  spec.train_fraction = cfg.data.split_fraction.value_or(1.0);
  spec.ood_cutoff = cfg.data.split_cutoff;
  spec.seed = derive_seed(cfg.seed, "split");
  return split(batch, spec).first;
}

ModelState load_required_checkpoint(const std::string& path, const char* cmd) {
  if (path.empty())
    throw ConfigError(std::string(cmd) + " needs a checkpoint path in the config");
  return load_checkpoint(path);
}

}  // namespace

void cmd_synth(const RunConfig& cfg) {
  if (!cfg.data.surrogate.present)
    throw ConfigError("synth needs a data.surrogate section");
  RunConfig resolved = cfg;
  resolved.data.path.reset();  // synth always produces the surrogate
  Dataset data = make_dataset(resolved);
  write_resolved_config(resolved);

  std::vector<const SeriesBatch*> batches;
  if (data.heating) batches.push_back(&*data.heating);
  if (data.cooling) batches.push_back(&*data.cooling);
  save_csv(cfg.output_dir / "dataset.csv", batches);
  write_manifest(cfg.output_dir, {"dataset.csv"});
}

void cmd_train(const RunConfig& cfg) {
  Dataset data = make_dataset(cfg);
  SeriesBatch train_batch = select_training_batch(cfg, data);
  TrainConfig tc = cfg.train;
  tc.seed = derive_seed(cfg.seed, "train");
  TrainTrace trace = train(cfg.model, train_batch, tc);

  write_resolved_config(cfg);
  save_checkpoint(cfg.output_dir / "checkpoint.json", trace.final_state);
  save_trace_csv(cfg.output_dir / "trace.csv", trace);
  save_csv(cfg.output_dir / "train_data.csv", train_batch);
  write_manifest(cfg.output_dir, {"checkpoint.json", "trace.csv", "train_data.csv"});
}

void cmd_generate(const RunConfig& cfg) {
  ModelState state = load_required_checkpoint(cfg.generate.checkpoint, "generate");
  GenerateOptions opts;
  opts.add_observation_noise = cfg.generate.add_observation_noise;
  GenerateResult result = generate(state, cfg.generate.x_c,
                                   cfg.generate.n_per_cond,
                                   derive_seed(cfg.seed, "generate"), opts);

  write_resolved_config(cfg);
  save_csv(cfg.output_dir / "generated.csv", result.batch);
  json report;
  report["n_generated"] = result.batch.n();
  report["model_kind"] = to_string(state.cfg.kind);
  report["mode"] = to_string(state.mode);
  report["seed"] = cfg.seed;
  report["warnings"] = result.warnings;
  write_text_atomic(cfg.output_dir / "generate_report.json",
                    report.dump(2) + "\n");
  write_manifest(cfg.output_dir, {"generated.csv", "generate_report.json"});
}

void cmd_evaluate(const RunConfig& cfg) {
  ModelState state = load_required_checkpoint(cfg.eval.checkpoint, "evaluate");
  Dataset data = make_dataset(cfg);
  const SeriesBatch& real = data.require(state.mode);

  EvalReport report = evaluate(state, real, cfg.eval.runs,
                               derive_seed(cfg.seed, "evaluate"), cfg.eval.bins);

  write_resolved_config(cfg);
  write_text_atomic(cfg.output_dir / "report.json", eval_report_json(report));

  const std::uint64_t fig_seed = derive_seed(cfg.seed, "figures");
  std::vector<std::pair<double, double>> x_c =
      resample_conditioning(real, static_cast<int>(real.n()), fig_seed);
  GenerateResult gen = generate(state, x_c, 1, fig_seed);
  write_curves_csv(cfg.output_dir / "generated_vs_real.csv", real, gen.batch);
  write_pca_csv(cfg.output_dir / "pca.csv", real, gen.batch);
  write_densities_csv(cfg.output_dir / "densities.csv", real, gen.batch,
                      cfg.eval.bins);
  std::vector<std::string> files = {"report.json", "generated_vs_real.csv",
                                    "pca.csv", "densities.csv"};
  if (state.cfg.kind == ModelKind::pigpvae) {
    ReconstructResult recon = reconstruct(state, real, fig_seed);
    write_reconstruction_csv(cfg.output_dir / "reconstruction.csv", real, recon);
    files.push_back("reconstruction.csv");
  }
  write_manifest(cfg.output_dir, files);
}

void cmd_experiment(const RunConfig& cfg) {
  ExperimentInputs inputs;
  inputs.data = make_dataset(cfg);
  inputs.experiment = cfg.experiment;
  inputs.model = cfg.model;
  inputs.train = cfg.train;
  inputs.eval_bins = cfg.eval.bins;
  inputs.seed = cfg.seed;
  inputs.workers = cfg.workers;
  inputs.output_dir = cfg.output_dir;

  // guard before any training happens
  for (Mode mode : cfg.experiment.modes) {
    const SeriesBatch& batch = inputs.data.require(mode);
    if (cfg.experiment.kase == ExperimentCase::out_dist &&
        (batch.t0.array() >= cfg.experiment.cutoff).count() == 0)
      throw DomainError("out_dist cutoff " + fmt_double(cfg.experiment.cutoff) +
                        " removes every " + to_string(mode) + " curve");
  }

  write_resolved_config(cfg);
  std::vector<std::string> files;
  std::vector<const SeriesBatch*> batches;
  if (inputs.data.heating) batches.push_back(&*inputs.data.heating);
  if (inputs.data.cooling) batches.push_back(&*inputs.data.cooling);
  save_csv(cfg.output_dir / "dataset.csv", batches);
  files.push_back("dataset.csv");

  ExperimentReport report = run_experiment(inputs, files);

  write_text_atomic(cfg.output_dir / "table.json", experiment_table_json(report));
  write_text_atomic(cfg.output_dir / "table.csv", experiment_table_csv(report));
  files.push_back("table.json");
  files.push_back("table.csv");
  write_manifest(cfg.output_dir, files);

  for (const CellSummary& cell : report.cells)
    if (!cell.error.empty())
      throw Error("experiment", "cell " + to_string(cell.mode) + "_" +
                                    to_string(cell.kind) + " failed: " + cell.error);
}

}  // namespace pigpvae
