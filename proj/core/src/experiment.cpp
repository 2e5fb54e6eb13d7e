#include "pigpvae/experiment.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <sstream>
#include <thread>

#include <nlohmann/json.hpp>

#include "pigpvae/errors.hpp"
#include "pigpvae/io.hpp"
#include "pigpvae/rng.hpp"

namespace pigpvae {

using json = nlohmann::ordered_json;

ExperimentCase experiment_case_from_string(const std::string& s) {
  if (s == "in_dist") return ExperimentCase::in_dist;
  if (s == "out_dist") return ExperimentCase::out_dist;
  throw ConfigError("unknown experiment case: " + s);
}

std::string to_string(ExperimentCase c) {
  return c == ExperimentCase::in_dist ? "in_dist" : "out_dist";
}

void write_curves_csv(const std::filesystem::path& path, const SeriesBatch& real,
                      const SeriesBatch& generated) {
  std::ostringstream out;
  out << "set_label,series_id,t_index,temperature\n";
  auto dump = [&out](const char* label, const SeriesBatch& b) {
    for (Eigen::Index i = 0; i < b.n(); ++i) {
      std::string id = b.ids.empty() ? std::to_string(i)
                                     : b.ids[static_cast<std::size_t>(i)];
      for (Eigen::Index j = 0; j < b.timesteps(); ++j)
        out << label << ',' << id << ',' << j << ','
            << fmt_double(b.values(i, j)) << '\n';
    }
  };
  dump("real", real);
  dump("generated", generated);
  write_text_atomic(path, out.str());
}

void write_pca_csv(const std::filesystem::path& path, const SeriesBatch& real,
                   const SeriesBatch& generated) {
  PcaProjection pca = pca_project(real.values, generated.values, 2);
  std::ostringstream out;
  out << "set_label,component_1,component_2\n";
  for (Eigen::Index i = 0; i < pca.real_proj.rows(); ++i)
    out << "real," << fmt_double(pca.real_proj(i, 0)) << ','
        << fmt_double(pca.real_proj(i, 1)) << '\n';
  for (Eigen::Index i = 0; i < pca.gen_proj.rows(); ++i)
    out << "generated," << fmt_double(pca.gen_proj(i, 0)) << ','
        << fmt_double(pca.gen_proj(i, 1)) << '\n';
  write_text_atomic(path, out.str());
}

void write_densities_csv(const std::filesystem::path& path,
                         const SeriesBatch& real, const SeriesBatch& generated,
                         int bins) {
  std::ostringstream out;
  out << "timestep,bin_center,density,set_label\n";
  const Eigen::Index t = real.timesteps();
  for (Eigen::Index j = 0; j < t; ++j) {
    double lo = std::min(real.values.col(j).minCoeff(),
                         generated.values.col(j).minCoeff());
    double hi = std::max(real.values.col(j).maxCoeff(),
                         generated.values.col(j).maxCoeff());
    if (!(hi > lo)) continue;
    const double width = (hi - lo) / bins;
    auto emit = [&](const SeriesBatch& b, const char* label) {
      Eigen::VectorXd counts = Eigen::VectorXd::Zero(bins);
      for (Eigen::Index i = 0; i < b.n(); ++i) {
        int bin = static_cast<int>((b.values(i, j) - lo) / width);
        counts[std::clamp(bin, 0, bins - 1)] += 1.0;
      }
      counts /= static_cast<double>(b.n());
      for (int bi = 0; bi < bins; ++bi)
        out << j << ',' << fmt_double(lo + (bi + 0.5) * width) << ','
            << fmt_double(counts[bi] / width) << ',' << label << '\n';
    };
    emit(real, "real");
    emit(generated, "generated");
  }
  write_text_atomic(path, out.str());
}

void write_reconstruction_csv(const std::filesystem::path& path,
                              const SeriesBatch& batch,
                              const ReconstructResult& recon) {
  std::ostringstream out;
  out << "series_id,t_index,observed,reconstructed,physical\n";
  for (Eigen::Index i = 0; i < batch.n(); ++i) {
    std::string id = batch.ids.empty() ? std::to_string(i)
                                       : batch.ids[static_cast<std::size_t>(i)];
    for (Eigen::Index j = 0; j < batch.timesteps(); ++j) {
      out << id << ',' << j << ',' << fmt_double(batch.values(i, j)) << ','
          << fmt_double(recon.x_hat(i, j)) << ',';
      if (recon.x_hat_phy)
        out << fmt_double((*recon.x_hat_phy)(i, j));
      else
        out << fmt_double(recon.x_hat(i, j));
      out << '\n';
    }
  }
  write_text_atomic(path, out.str());
}

namespace {

struct CellTask {
  Mode mode;
  ModelKind kind;
};

void aggregate(CellSummary& cell) {
  auto collect = [&cell](auto pick) {
    std::vector<double> v;
    v.reserve(cell.per_seed.size());
    for (const EvalReport& r : cell.per_seed) v.push_back(pick(r));
    return v;
  };
  auto mean_of = [](const std::vector<double>& v) {
    double s = 0.0;
    for (double x : v) s += x;
    return s / static_cast<double>(v.size());
  };
  auto sd_of = [](const std::vector<double>& v, double mean) {
    double ss = 0.0;
    for (double x : v) ss += (x - mean) * (x - mean);
    return std::sqrt(ss / static_cast<double>(v.size() - 1));
  };
  std::vector<double> mmd = collect([](const EvalReport& r) { return r.mmd2_mean; });
  std::vector<double> cd = collect([](const EvalReport& r) { return r.cd_mean; });
  std::vector<double> mdd = collect([](const EvalReport& r) { return r.mdd_mean; });
  cell.mmd_mean = mean_of(mmd);
  cell.cd_mean = mean_of(cd);
  cell.mdd_mean = mean_of(mdd);
  if (cell.per_seed.size() > 1) {
    cell.mmd_sd = sd_of(mmd, cell.mmd_mean);
    cell.cd_sd = sd_of(cd, cell.cd_mean);
    cell.mdd_sd = sd_of(mdd, cell.mdd_mean);
  }
}

std::string cell_dir_name(const CellTask& task) {
  return to_string(task.mode) + "_" + to_string(task.kind);
}

json cell_json(const CellSummary& cell, const ExperimentConfig& exp) {
  json doc;
  doc["mode"] = to_string(cell.mode);
  doc["model"] = to_string(cell.kind);
  doc["case"] = to_string(exp.kase);
  doc["seeds"] = static_cast<int>(cell.per_seed.size());
  if (!cell.error.empty()) {
    doc["error"] = cell.error;
    return doc;
  }
  doc["metrics"] = {{"mmd2", {{"mean", cell.mmd_mean}}},
                    {"cd", {{"mean", cell.cd_mean}}},
                    {"mdd", {{"mean", cell.mdd_mean}}}};
  if (cell.mmd_sd) doc["metrics"]["mmd2"]["sd"] = *cell.mmd_sd;
  if (cell.cd_sd) doc["metrics"]["cd"]["sd"] = *cell.cd_sd;
  if (cell.mdd_sd) doc["metrics"]["mdd"]["sd"] = *cell.mdd_sd;
  if (exp.kase == ExperimentCase::out_dist) {
    doc["can_condition"] = cell.can_condition;
    if (cell.ood_requested_t0) doc["ood_requested_t0"] = *cell.ood_requested_t0;
  }
  return doc;
}

}  // namespace

ExperimentReport run_experiment(const ExperimentInputs& inputs,
                                std::vector<std::string>& manifest_files) {
  const ExperimentConfig& exp = inputs.experiment;
  std::vector<CellTask> tasks;
  for (Mode mode : exp.modes)
    for (ModelKind kind : exp.models) tasks.push_back({mode, kind});

  std::vector<CellSummary> cells(tasks.size());
  std::vector<std::vector<std::string>> cell_files(tasks.size());

  auto run_cell = [&](std::size_t idx) {
    const CellTask& task = tasks[idx];
    CellSummary& cell = cells[idx];
    cell.mode = task.mode;
    cell.kind = task.kind;
    cell.can_condition =
        task.kind == ModelKind::pivae || task.kind == ModelKind::pigpvae;
    std::vector<std::string>& files = cell_files[idx];
    const std::filesystem::path cell_dir =
        inputs.output_dir / "cells" / cell_dir_name(task);
    try {
      const SeriesBatch& full = inputs.data.require(task.mode);
      ModelState first_state;
      SeriesBatch first_train;
      for (int s = 0; s < exp.seeds; ++s) {
        const std::uint64_t cell_seed =
            derive_seed(inputs.seed, "cell-" + cell_dir_name(task),
                        static_cast<std::uint64_t>(s));
        SplitSpec split_spec;
        split_spec.train_fraction = exp.effective_fraction();
        split_spec.seed = derive_seed(cell_seed, "split");
        if (exp.kase == ExperimentCase::out_dist)
          split_spec.ood_cutoff = exp.cutoff;
        auto [train_batch, eval_batch] = split(full, split_spec);

        ModelConfig mc = inputs.model;
        mc.kind = task.kind;
        TrainConfig tc = inputs.train;
        tc.seed = derive_seed(cell_seed, "train");
        TrainTrace trace = train(mc, train_batch, tc);

        EvalReport report =
            evaluate(trace.final_state, eval_batch, exp.eval_runs,
                     derive_seed(cell_seed, "eval"), inputs.eval_bins);
        cell.per_seed.push_back(report);

        const std::filesystem::path seed_dir =
            cell_dir / ("seed" + std::to_string(s));
        save_checkpoint(seed_dir / "checkpoint.json", trace.final_state);
        save_trace_csv(seed_dir / "trace.csv", trace);
        write_text_atomic(seed_dir / "eval.json", eval_report_json(report));
        const std::string rel =
            "cells/" + cell_dir_name(task) + "/seed" + std::to_string(s) + "/";
        files.push_back(rel + "checkpoint.json");
        files.push_back(rel + "trace.csv");
        files.push_back(rel + "eval.json");
        if (s == 0) {
          first_state = trace.final_state;
          first_train = train_batch;
        }
      }
      aggregate(cell);

      // figure data from the first seed
      const std::uint64_t fig_seed = derive_seed(inputs.seed, "figures");
      std::vector<std::pair<double, double>> x_c = resample_conditioning(
          full, static_cast<int>(full.n()), fig_seed);
      GenerateResult gen = generate(first_state, x_c, 1, fig_seed);
      const std::filesystem::path fig_dir = cell_dir / "figures";
      const std::string rel = "cells/" + cell_dir_name(task) + "/figures/";
      write_curves_csv(fig_dir / "generated_vs_real.csv", full, gen.batch);
      files.push_back(rel + "generated_vs_real.csv");
      write_pca_csv(fig_dir / "pca.csv", full, gen.batch);
      files.push_back(rel + "pca.csv");
      write_densities_csv(fig_dir / "densities.csv", full, gen.batch,
                          inputs.eval_bins);
      files.push_back(rel + "densities.csv");
      if (task.kind == ModelKind::pigpvae) {
        ReconstructResult recon = reconstruct(first_state, first_train, fig_seed);
        write_reconstruction_csv(fig_dir / "reconstruction.csv", first_train, recon);
        files.push_back(rel + "reconstruction.csv");
      }

      if (exp.kase == ExperimentCase::out_dist) {
        // request generation below the cutoff where the model can condition
        double t0_req = exp.cutoff - 3.0;
        cell.ood_requested_t0 = t0_req;
        GenerateResult ood;
        if (cell.can_condition) {
          double mean_gap = (full.ts - full.t0).cwiseAbs().mean();
          double ts_req = task.mode == Mode::heating ? t0_req + mean_gap
                                                     : t0_req - mean_gap;
          ood = generate(first_state, {{t0_req, ts_req}},
                         static_cast<int>(full.n()),
                         derive_seed(inputs.seed, "ood-gen"));
        } else {
          ood = generate(first_state, {}, static_cast<int>(full.n()),
                         derive_seed(inputs.seed, "ood-gen"));
        }
        save_csv(cell_dir / "ood_generated.csv", ood.batch);
        files.push_back("cells/" + cell_dir_name(task) + "/ood_generated.csv");
      }
    } catch (const Error& e) {
      cell.error = std::string(e.category()) + ": " + e.what();
      log_warn("experiment cell " + cell_dir_name(task) + " failed: " + cell.error);
    } catch (const std::exception& e) {
      cell.error = std::string("internal: ") + e.what();
      log_warn("experiment cell " + cell_dir_name(task) + " failed: " + cell.error);
    }
    // flush the cell summary regardless of failure
    write_text_atomic(cell_dir / "cell.json", cell_json(cell, exp).dump(2) + "\n");
    files.push_back("cells/" + cell_dir_name(task) + "/cell.json");
  };

  unsigned workers = inputs.workers > 0
                         ? static_cast<unsigned>(inputs.workers)
                         : std::max(1u, std::thread::hardware_concurrency());
  workers = std::min<unsigned>(workers, static_cast<unsigned>(tasks.size()));
  if (workers <= 1) {
    for (std::size_t i = 0; i < tasks.size(); ++i) run_cell(i);
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> pool;
    pool.reserve(workers);
    for (unsigned w = 0; w < workers; ++w) {
      pool.emplace_back([&]() {
        while (true) {
          std::size_t i = next.fetch_add(1);
          if (i >= tasks.size()) return;
          run_cell(i);
        }
      });
    }
    for (auto& th : pool) th.join();
  }

  for (const auto& files : cell_files)
    manifest_files.insert(manifest_files.end(), files.begin(), files.end());

  ExperimentReport report;
  report.cells = std::move(cells);
  return report;
}

std::string experiment_table_json(const ExperimentReport& report) {
  json doc;
  json cells = json::array();
  for (const CellSummary& cell : report.cells) {
    json c;
    c["mode"] = to_string(cell.mode);
    c["model"] = to_string(cell.kind);
    if (!cell.error.empty()) {
      c["error"] = cell.error;
    } else {
      c["mmd2"] = {{"mean", cell.mmd_mean}};
      if (cell.mmd_sd) c["mmd2"]["sd"] = *cell.mmd_sd;
      c["cd"] = {{"mean", cell.cd_mean}};
      if (cell.cd_sd) c["cd"]["sd"] = *cell.cd_sd;
      c["mdd"] = {{"mean", cell.mdd_mean}};
      if (cell.mdd_sd) c["mdd"]["sd"] = *cell.mdd_sd;
    }
    cells.push_back(std::move(c));
  }
  doc["cells"] = std::move(cells);
  return doc.dump(2) + "\n";
}

std::string experiment_table_csv(const ExperimentReport& report) {
  std::ostringstream out;
  out << "mode,model,MMD,CD,MDD\n";
  auto fmt_cell = [](double mean, const std::optional<double>& sd) {
    std::string s = fmt_double(mean);
    if (sd) s += " (" + fmt_double(*sd) + ")";
    return s;
  };
  for (const CellSummary& cell : report.cells) {
    out << to_string(cell.mode) << ',' << to_string(cell.kind) << ',';
    if (!cell.error.empty()) {
      out << "error,error,error\n";
      continue;
    }
    out << fmt_cell(cell.mmd_mean, cell.mmd_sd) << ','
        << fmt_cell(cell.cd_mean, cell.cd_sd) << ','
        << fmt_cell(cell.mdd_mean, cell.mdd_sd) << '\n';
  }
  return out.str();
}

}  // namespace pigpvae
