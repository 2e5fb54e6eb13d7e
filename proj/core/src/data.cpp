#include "pigpvae/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <map>
#include <numeric>
#include <sstream>

#include "pigpvae/errors.hpp"
#include "pigpvae/gp.hpp"
#include "pigpvae/io.hpp"
#include "pigpvae/physics.hpp"
#include "pigpvae/rng.hpp"

namespace pigpvae {

Mode mode_from_string(const std::string& s) {
  if (s == "heating") return Mode::heating;
  if (s == "cooling") return Mode::cooling;
  throw ConfigError("unknown mode: " + s);
}

std::string to_string(Mode m) {
  return m == Mode::heating ? "heating" : "cooling";
}

void SeriesBatch::validate() const {
  const Eigen::Index rows = n();
  const Eigen::Index t = timesteps();
  if (rows < 1 || t < 2) throw ShapeError("series batch must be non-empty with T >= 2");
  if (time_grid.size() != t)
    throw ShapeError("time grid length disagrees with value columns");
  if (t0.size() != rows || ts.size() != rows)
    throw ShapeError("conditioning vectors must have one entry per curve");
  for (Eigen::Index i = 1; i < t; ++i)
    if (!(time_grid[i] > time_grid[i - 1]))
      throw DomainError("time grid must be strictly increasing");
  for (Eigen::Index i = 0; i < rows; ++i) {
    if (values(i, 0) != t0[i])
      throw DomainError("t0 must equal the first sample of curve " + std::to_string(i));
    if (mode == Mode::heating && ts[i] < t0[i])
      throw DomainError("heating curve " + std::to_string(i) + " has ts < t0");
    if (mode == Mode::cooling && ts[i] > t0[i])
      throw DomainError("cooling curve " + std::to_string(i) + " has ts > t0");
  }
  if (!ids.empty() && static_cast<Eigen::Index>(ids.size()) != rows)
    throw ShapeError("ids present but not one per curve");
}

Eigen::MatrixXd Normalizer::apply(const Eigen::MatrixXd& values) const {
  return ((values.array() - shift) / scale).matrix();
}

Eigen::MatrixXd Normalizer::invert(const Eigen::MatrixXd& values) const {
  return (values.array() * scale + shift).matrix();
}

const SeriesBatch& Dataset::require(Mode m) const {
  const auto& opt = (m == Mode::heating) ? heating : cooling;
  if (!opt) throw UsageError("dataset has no " + to_string(m) + " curves");
  return *opt;
}

namespace {

struct CsvRow {
  std::string series_id;
  long t_index;
  double temperature;
  double system_temperature;
};

std::vector<std::string> split_fields(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur += c;
    }
  }
  out.push_back(cur);
  return out;
}

double parse_double(const std::string& s, std::size_t line_no, const char* col) {
  try {
    std::size_t pos = 0;
    double v = std::stod(s, &pos);
    if (pos != s.size()) throw std::invalid_argument("trailing characters");
    return v;
  } catch (const std::exception&) {
    throw ParseError("row " + std::to_string(line_no) + ": non-numeric " +
                     std::string(col) + " value '" + s + "'");
  }
}

long parse_long(const std::string& s, std::size_t line_no, const char* col) {
  try {
    std::size_t pos = 0;
    long v = std::stol(s, &pos);
    if (pos != s.size()) throw std::invalid_argument("trailing characters");
    return v;
  } catch (const std::exception&) {
    throw ParseError("row " + std::to_string(line_no) + ": non-integer " +
                     std::string(col) + " value '" + s + "'");
  }
}

SeriesBatch assemble_batch(Mode mode,
                           const std::vector<std::string>& ids,
                           const std::vector<Eigen::VectorXd>& curves,
                           const std::vector<double>& ts_means,
                           Eigen::Index t) {
  SeriesBatch batch;
  batch.mode = mode;
  const Eigen::Index rows = static_cast<Eigen::Index>(curves.size());
  batch.values.resize(rows, t);
  batch.t0.resize(rows);
  batch.ts.resize(rows);
  batch.ids = ids;
  for (Eigen::Index i = 0; i < rows; ++i) {
    batch.values.row(i) = curves[static_cast<std::size_t>(i)].transpose();
    batch.t0[i] = batch.values(i, 0);
    batch.ts[i] = ts_means[static_cast<std::size_t>(i)];
  }
  batch.time_grid = Eigen::VectorXd::LinSpaced(t, 0.0, 1.0);
  batch.validate();
  return batch;
}

}  // namespace

Dataset load_csv(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path))
    throw IoError("dataset file does not exist: " + path.string());
  std::istringstream in(read_text(path));
  std::string line;
  if (!std::getline(in, line)) throw FormatError("empty CSV file");
  {
    auto header = split_fields(line);
    const std::vector<std::string> expected = {"series_id", "t_index",
                                               "temperature", "system_temperature"};
    if (header != expected)
      throw FormatError(
          "CSV header must be series_id,t_index,temperature,system_temperature");
  }

  // Group rows by series id in first-appearance order.
  std::vector<std::string> order;
  std::map<std::string, std::vector<CsvRow>> by_series;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line == "\r") continue;
    auto fields = split_fields(line);
    if (fields.size() != 4)
      throw FormatError("row " + std::to_string(line_no) + ": expected 4 columns, got " +
                        std::to_string(fields.size()));
    CsvRow row;
    row.series_id = fields[0];
    row.t_index = parse_long(fields[1], line_no, "t_index");
    row.temperature = parse_double(fields[2], line_no, "temperature");
    row.system_temperature = parse_double(fields[3], line_no, "system_temperature");
    if (!by_series.count(row.series_id)) order.push_back(row.series_id);
    by_series[row.series_id].push_back(row);
  }
  if (order.empty()) throw FormatError("CSV contains no data rows");

  Eigen::Index t = -1;
  struct PerMode {
    std::vector<std::string> ids;
    std::vector<Eigen::VectorXd> curves;
    std::vector<double> ts_means;
  };
  PerMode heating, cooling;

  for (const auto& id : order) {
    auto& rows = by_series[id];
    std::sort(rows.begin(), rows.end(),
              [](const CsvRow& a, const CsvRow& b) { return a.t_index < b.t_index; });
    const Eigen::Index len = static_cast<Eigen::Index>(rows.size());
    if (t < 0) {
      t = len;
      if (t < 2) throw ShapeError("series '" + id + "' has fewer than 2 timesteps");
    } else if (len != t) {
      throw ShapeError("series '" + id + "' has " + std::to_string(len) +
                       " timesteps, expected " + std::to_string(t));
    }
    Eigen::VectorXd curve(t);
    double ts_sum = 0.0;
    bool ts_constant = true;
    for (Eigen::Index i = 0; i < t; ++i) {
      const CsvRow& r = rows[static_cast<std::size_t>(i)];
      if (r.t_index != i)
        throw ShapeError("series '" + id + "' has a t_index gap at position " +
                         std::to_string(i));
      curve[i] = r.temperature;
      ts_sum += r.system_temperature;
      ts_constant = ts_constant &&
                    r.system_temperature == rows.front().system_temperature;
    }
    // a constant system-temperature column scalarizes exactly
    double ts_mean = ts_constant ? rows.front().system_temperature
                                 : ts_sum / static_cast<double>(t);
    if (ts_mean == curve[0])
      throw DomainError("series '" + id +
                        "': system temperature equals t0, mode is ambiguous");
    PerMode& dst = (ts_mean > curve[0]) ? heating : cooling;
    dst.ids.push_back(id);
    dst.curves.push_back(std::move(curve));
    dst.ts_means.push_back(ts_mean);
  }

  Dataset out;
  if (!heating.ids.empty())
    out.heating = assemble_batch(Mode::heating, heating.ids, heating.curves,
                                 heating.ts_means, t);
  if (!cooling.ids.empty())
    out.cooling = assemble_batch(Mode::cooling, cooling.ids, cooling.curves,
                                 cooling.ts_means, t);
  return out;
}

void save_csv(const std::filesystem::path& path,
              const std::vector<const SeriesBatch*>& batches) {
  std::ostringstream out;
  out << "series_id,t_index,temperature,system_temperature\n";
  int anon = 0;
  for (const SeriesBatch* batch : batches) {
    for (Eigen::Index i = 0; i < batch->n(); ++i) {
      std::string id;
      if (!batch->ids.empty()) {
        id = batch->ids[static_cast<std::size_t>(i)];
      } else {
        char tag = batch->mode == Mode::heating ? 'h' : 'c';
        id = std::string(1, tag) + std::to_string(anon + i);
      }
      for (Eigen::Index j = 0; j < batch->timesteps(); ++j) {
        out << id << ',' << j << ',' << fmt_double(batch->values(i, j)) << ','
            << fmt_double(batch->ts[i]) << '\n';
      }
    }
    anon += static_cast<int>(batch->n());
  }
  write_text_atomic(path, out.str());
}

void save_csv(const std::filesystem::path& path, const SeriesBatch& batch) {
  save_csv(path, std::vector<const SeriesBatch*>{&batch});
}

SeriesBatch synthesize_surrogate(const SurrogateSpec& spec) {
  if (spec.n < 1) throw DomainError("surrogate: n must be >= 1");
  if (spec.timesteps < 2) throw DomainError("surrogate: timesteps must be >= 2");
  if (!(spec.k_mean > 0.0)) throw DomainError("surrogate: k_mean must be positive");
  if (spec.k_sd < 0.0) throw DomainError("surrogate: k_sd must be >= 0");
  if (!(spec.t0_high >= spec.t0_low) || !(spec.gap_high >= spec.gap_low) ||
      spec.gap_low < 0.0)
    throw DomainError("surrogate: invalid t0/gap ranges");

  const Eigen::Index t = spec.timesteps;
  Eigen::VectorXd grid = Eigen::VectorXd::LinSpaced(t, 0.0, 1.0);
  Rng rng(derive_seed(spec.seed, "surrogate"));

  SeriesBatch batch;
  batch.mode = spec.mode;
  batch.time_grid = grid;
  batch.values.resize(spec.n, t);
  batch.t0.resize(spec.n);
  batch.ts.resize(spec.n);
  batch.ids.reserve(static_cast<std::size_t>(spec.n));

  const char tag = spec.mode == Mode::heating ? 'h' : 'c';
  for (int i = 0; i < spec.n; ++i) {
    double t0 = rng.uniform(spec.t0_low, spec.t0_high);
    double gap = rng.uniform(spec.gap_low, spec.gap_high);
    double ts = spec.mode == Mode::heating ? t0 + gap : t0 - gap;
    double k = std::max(rng.normal(spec.k_mean, spec.k_sd), 1e-6);
    Eigen::VectorXd curve = newton_solution(grid, t0, ts, k);
    if (spec.noise.amplitude > 0.0) {
      KernelParams noise_kernel;
      noise_kernel.lengthscale = spec.noise.lengthscale;
      noise_kernel.variance = spec.noise.amplitude * spec.noise.amplitude;
      noise_kernel.jitter = 1e-10;
      std::uint64_t path_seed =
          derive_seed(spec.seed, "surrogate-noise", static_cast<std::uint64_t>(i));
      curve += sample_prior(grid, noise_kernel, 1, path_seed).row(0).transpose();
    }
    batch.values.row(i) = curve.transpose();
    batch.t0[i] = curve[0];
    batch.ts[i] = ts;
    char buf[16];
    std::snprintf(buf, sizeof(buf), "%c%03d", tag, i);
    batch.ids.emplace_back(buf);
  }
  batch.validate();
  return batch;
}

SeriesBatch take_rows(const SeriesBatch& batch, const std::vector<int>& rows) {
  SeriesBatch out;
  out.mode = batch.mode;
  out.time_grid = batch.time_grid;
  const Eigen::Index n = static_cast<Eigen::Index>(rows.size());
  out.values.resize(n, batch.timesteps());
  out.t0.resize(n);
  out.ts.resize(n);
  if (!batch.ids.empty()) out.ids.reserve(rows.size());
  for (Eigen::Index i = 0; i < n; ++i) {
    int r = rows[static_cast<std::size_t>(i)];
    if (r < 0 || r >= batch.n()) throw ShapeError("take_rows: index out of range");
    out.values.row(i) = batch.values.row(r);
    out.t0[i] = batch.t0[r];
    out.ts[i] = batch.ts[r];
    if (!batch.ids.empty()) out.ids.push_back(batch.ids[static_cast<std::size_t>(r)]);
  }
  return out;
}

std::pair<SeriesBatch, SeriesBatch> split(const SeriesBatch& batch,
                                          const SplitSpec& spec) {
  if (batch.n() < 1) throw DomainError("split: batch is empty");
  if (!(spec.train_fraction > 0.0) || spec.train_fraction > 1.0)
    throw DomainError("split: train_fraction must lie in (0, 1]");

  std::vector<int> candidates;
  for (Eigen::Index i = 0; i < batch.n(); ++i) {
    if (!spec.ood_cutoff || batch.t0[i] >= *spec.ood_cutoff)
      candidates.push_back(static_cast<int>(i));
  }
  if (candidates.empty())
    throw DomainError("split: cutoff " + fmt_double(*spec.ood_cutoff) +
                      " removes every curve, train set would be empty");

  long train_size = std::lround(spec.train_fraction *
                                static_cast<double>(candidates.size()));
  train_size = std::clamp<long>(train_size, 1, static_cast<long>(candidates.size()));

  Rng rng(derive_seed(spec.seed, "split"));
  rng.shuffle(candidates);
  candidates.resize(static_cast<std::size_t>(train_size));

  return {take_rows(batch, candidates), batch};
}

Normalizer fit_normalizer(const SeriesBatch& batch) {
  if (batch.n() < 1) throw DomainError("fit_normalizer: batch is empty");
  Normalizer norm;
  norm.shift = batch.values.mean();
  double var = (batch.values.array() - norm.shift).square().mean();
  norm.scale = std::sqrt(var);
  if (norm.scale < 1e-8) {
    log_warn("normalizer: near-zero variance, flooring scale at 1e-8");
    norm.scale = 1e-8;
  }
  norm.fitted_on = dataset_fingerprint(batch);
  return norm;
}

SeriesBatch concat(const SeriesBatch& a, const SeriesBatch& b) {
  if (a.mode != b.mode) throw UsageError("concat: modes disagree");
  if (a.timesteps() != b.timesteps())
    throw ShapeError("concat: timestep counts disagree");
  if ((a.time_grid - b.time_grid).cwiseAbs().maxCoeff() != 0.0)
    throw ShapeError("concat: time grids disagree");
  SeriesBatch out;
  out.mode = a.mode;
  out.time_grid = a.time_grid;
  out.values.resize(a.n() + b.n(), a.timesteps());
  out.values.topRows(a.n()) = a.values;
  out.values.bottomRows(b.n()) = b.values;
  out.t0.resize(a.n() + b.n());
  out.t0 << a.t0, b.t0;
  out.ts.resize(a.n() + b.n());
  out.ts << a.ts, b.ts;
  if (!a.ids.empty() && !b.ids.empty()) {
    out.ids = a.ids;
    out.ids.insert(out.ids.end(), b.ids.begin(), b.ids.end());
  }
  return out;
}

std::string dataset_fingerprint(const SeriesBatch& batch) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  auto mix = [&h](std::uint64_t v) {
    h ^= v;
    h *= 0x100000001b3ULL;
  };
  mix(static_cast<std::uint64_t>(batch.n()));
  mix(static_cast<std::uint64_t>(batch.timesteps()));
  for (Eigen::Index i = 0; i < batch.n(); ++i)
    for (Eigen::Index j = 0; j < batch.timesteps(); ++j) {
      double v = batch.values(i, j);
      std::uint64_t bits;
      std::memcpy(&bits, &v, sizeof(bits));
      mix(bits);
    }
  char buf[32];
  std::snprintf(buf, sizeof(buf), "fnv1a:%016llx",
                static_cast<unsigned long long>(h));
  return buf;
}

}  // namespace pigpvae
