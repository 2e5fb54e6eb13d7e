#include <doctest.h>

#include <Eigen/Dense>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "pigpvae/data.hpp"
#include "pigpvae/errors.hpp"
#include "pigpvae/io.hpp"

using namespace pigpvae;

namespace {

std::filesystem::path write_temp_csv(const std::string& name,
                                     const std::string& content) {
  std::filesystem::path p = std::filesystem::temp_directory_path() / name;
  std::ofstream out(p, std::ios::trunc);
  out << content;
  return p;
}

std::string tiny_csv() {
  // two heating series, T = 3
  return "series_id,t_index,temperature,system_temperature\n"
         "a,0,20,30\n"
         "a,1,24,30\n"
         "a,2,27,30\n"
         "b,0,18,28\n"
         "b,1,22,28\n"
         "b,2,25,28\n";
}

}  // namespace

TEST_CASE("load_csv happy path") {
  auto p = write_temp_csv("pigpvae_ok.csv", tiny_csv());
  Dataset data = load_csv(p);
  REQUIRE(data.heating.has_value());
  CHECK_FALSE(data.cooling.has_value());
  const SeriesBatch& b = *data.heating;
  CHECK(b.n() == 2);
  CHECK(b.timesteps() == 3);
  CHECK(b.t0[0] == 20.0);
  CHECK(b.ts[0] == 30.0);
  CHECK(b.time_grid[2] == 1.0);
  CHECK(b.ids[1] == "b");
  CHECK_THROWS_AS(data.require(Mode::cooling), UsageError);
}

TEST_CASE("load_csv infers cooling from ts below t0") {
  auto p = write_temp_csv("pigpvae_cool.csv",
                          "series_id,t_index,temperature,system_temperature\n"
                          "c,0,30,20\n"
                          "c,1,27,20\n"
                          "c,2,25,20\n");
  Dataset data = load_csv(p);
  REQUIRE(data.cooling.has_value());
  CHECK(data.cooling->mode == Mode::cooling);
}

TEST_CASE("load_csv error paths") {
  SUBCASE("bad header") {
    auto p = write_temp_csv("pigpvae_hdr.csv", "id,t,temp,sys\n");
    CHECK_THROWS_AS(load_csv(p), FormatError);
  }
  SUBCASE("t_index gap names the series") {
    auto p = write_temp_csv("pigpvae_gap.csv",
                            "series_id,t_index,temperature,system_temperature\n"
                            "s7,0,20,30\n"
                            "s7,1,21,30\n"
                            "s7,3,22,30\n");
    CHECK_THROWS_WITH_AS(load_csv(p), doctest::Contains("s7"), ShapeError);
  }
  SUBCASE("ragged lengths") {
    auto p = write_temp_csv("pigpvae_rag.csv",
                            "series_id,t_index,temperature,system_temperature\n"
                            "a,0,20,30\na,1,21,30\na,2,22,30\n"
                            "b,0,20,30\nb,1,21,30\n");
    CHECK_THROWS_AS(load_csv(p), ShapeError);
  }
  SUBCASE("non-numeric cell reports the row") {
    auto p = write_temp_csv("pigpvae_nan.csv",
                            "series_id,t_index,temperature,system_temperature\n"
                            "a,0,20,30\n"
                            "a,1,oops,30\n"
                            "a,2,22,30\n");
    CHECK_THROWS_WITH_AS(load_csv(p), doctest::Contains("row 3"), ParseError);
  }
  SUBCASE("ambiguous mode on exact tie") {
    auto p = write_temp_csv("pigpvae_tie.csv",
                            "series_id,t_index,temperature,system_temperature\n"
                            "a,0,20,20\n"
                            "a,1,20,20\n");
    CHECK_THROWS_AS(load_csv(p), DomainError);
  }
  SUBCASE("missing file") {
    CHECK_THROWS_AS(load_csv("/nonexistent/nope.csv"), IoError);
  }
}

TEST_CASE("save_csv round trip is exact") {
  SurrogateSpec spec;
  spec.n = 5;
  spec.seed = 3;
  SeriesBatch batch = synthesize_surrogate(spec);
  auto p = std::filesystem::temp_directory_path() / "pigpvae_rt.csv";
  save_csv(p, batch);
  Dataset loaded = load_csv(p);
  REQUIRE(loaded.heating.has_value());
  CHECK((loaded.heating->values - batch.values).cwiseAbs().maxCoeff() == 0.0);
  CHECK((loaded.heating->ts - batch.ts).cwiseAbs().maxCoeff() == 0.0);
  CHECK(loaded.heating->ids == batch.ids);

  // a second save must produce identical bytes
  auto p2 = std::filesystem::temp_directory_path() / "pigpvae_rt2.csv";
  save_csv(p2, *loaded.heating);
  CHECK(read_text(p) == read_text(p2));
}

TEST_CASE("surrogate closed-form value with noise off") {
  // cooling curve pinned at t0 = 30, ts = 20, k = 0.1: the final grid point
  // sits at t = 1 where the solution is 20 + 10 e^{-0.1}
  SurrogateSpec spec;
  spec.n = 1;
  spec.timesteps = 24;
  spec.mode = Mode::cooling;
  spec.k_mean = 0.1;
  spec.k_sd = 0.0;
  spec.t0_low = spec.t0_high = 30.0;
  spec.gap_low = spec.gap_high = 10.0;
  spec.noise.amplitude = 0.0;
  spec.seed = 1;
  SeriesBatch batch = synthesize_surrogate(spec);
  CHECK(batch.values(0, 23) ==
        doctest::Approx(20.0 + 10.0 * std::exp(-0.1)).epsilon(1e-12));
  CHECK(batch.values(0, 23) == doctest::Approx(29.048374180359595).epsilon(1e-10));
  CHECK(batch.ts[0] == 20.0);
}

TEST_CASE("noise-free heating surrogate is nondecreasing") {
  SurrogateSpec spec;
  spec.n = 8;
  spec.noise.amplitude = 0.0;
  spec.seed = 11;
  SeriesBatch batch = synthesize_surrogate(spec);
  for (Eigen::Index i = 0; i < batch.n(); ++i)
    for (Eigen::Index j = 1; j < batch.timesteps(); ++j)
      CHECK(batch.values(i, j) >= batch.values(i, j - 1));
}

TEST_CASE("surrogate determinism and domain errors") {
  SurrogateSpec spec;
  spec.n = 6;
  spec.seed = 21;
  SeriesBatch a = synthesize_surrogate(spec);
  SeriesBatch b = synthesize_surrogate(spec);
  CHECK((a.values - b.values).cwiseAbs().maxCoeff() == 0.0);
  CHECK((a.ts - b.ts).cwiseAbs().maxCoeff() == 0.0);

  spec.k_mean = 0.0;
  CHECK_THROWS_AS(synthesize_surrogate(spec), DomainError);
  spec.k_mean = 2.0;
  spec.n = 0;
  CHECK_THROWS_AS(synthesize_surrogate(spec), DomainError);
}

TEST_CASE("noise-free surrogate satisfies the ODE residual bound") {
  // central-difference truncation error is O(h^2 k^3 |T0 - Ts|), so a grid
  // of ~2000 points keeps it below 1e-5 for every drawn k
  SurrogateSpec spec;
  spec.n = 4;
  spec.timesteps = 2000;
  spec.k_sd = 0.2;
  spec.noise.amplitude = 0.0;
  spec.seed = 31;
  SeriesBatch batch = synthesize_surrogate(spec);
  const double h = batch.time_grid[1] - batch.time_grid[0];
  for (Eigen::Index i = 0; i < batch.n(); ++i) {
    // recover k from the first step: T'(0) = -k (T0 - Ts)
    // use interior differences directly against the implied slope field
    double worst = 0.0;
    // estimate k via log-ratio, exact for the pure exponential
    double num = batch.values(i, 0) - batch.ts[i];
    double den = batch.values(i, 1) - batch.ts[i];
    double k = std::log(num / den) / h;
    for (Eigen::Index j = 1; j + 1 < batch.timesteps(); ++j) {
      double lhs = (batch.values(i, j + 1) - batch.values(i, j - 1)) / (2.0 * h);
      double rhs = -k * (batch.values(i, j) - batch.ts[i]);
      worst = std::max(worst, std::abs(lhs - rhs));
    }
    CHECK(worst <= 1e-5);
  }
}

TEST_CASE("split sizes follow the paper protocol") {
  SurrogateSpec spec;
  spec.n = 29;
  spec.seed = 41;
  SeriesBatch batch = synthesize_surrogate(spec);

  SUBCASE("70 percent of 29 is 20, eval is the full batch") {
    SplitSpec s{0.7, 5, std::nullopt};
    auto [train, eval] = split(batch, s);
    CHECK(train.n() == 20);
    CHECK(eval.n() == 29);
  }

  SUBCASE("cutoff restricts candidates before the fraction applies") {
    // two-part fixture: exactly 9 curves at or above 20
    SurrogateSpec above = spec;
    above.n = 9;
    above.t0_low = 20.5;
    above.t0_high = 26.0;
    above.noise.amplitude = 0.0;
    SurrogateSpec below = spec;
    below.n = 11;
    below.t0_low = 14.0;
    below.t0_high = 19.0;
    below.noise.amplitude = 0.0;
    below.seed = 43;
    SeriesBatch fixture = concat(synthesize_surrogate(above),
                                 synthesize_surrogate(below));
    SplitSpec s{1.0, 7, 20.0};
    auto [train, eval] = split(fixture, s);
    CHECK(train.n() == 9);
    CHECK(eval.n() == 20);
    CHECK(train.t0.minCoeff() >= 20.0);
  }

  SUBCASE("cutoff removing everything is an error") {
    SplitSpec s{1.0, 7, 1000.0};
    CHECK_THROWS_AS(split(batch, s), DomainError);
  }

  SUBCASE("fraction 1 without cutoff is a permutation") {
    SplitSpec s{1.0, 13, std::nullopt};
    auto [train, eval] = split(batch, s);
    CHECK(train.n() == batch.n());
    Eigen::VectorXd sorted_train = train.t0;
    Eigen::VectorXd sorted_full = batch.t0;
    std::sort(sorted_train.data(), sorted_train.data() + sorted_train.size());
    std::sort(sorted_full.data(), sorted_full.data() + sorted_full.size());
    CHECK((sorted_train - sorted_full).cwiseAbs().maxCoeff() == 0.0);
  }

  SUBCASE("split is deterministic in (batch, spec)") {
    SplitSpec s{0.5, 99, std::nullopt};
    auto [t1, e1] = split(batch, s);
    auto [t2, e2] = split(batch, s);
    CHECK((t1.values - t2.values).cwiseAbs().maxCoeff() == 0.0);
  }
}

TEST_CASE("normalizer fit, worked value and round trip") {
  SUBCASE("mean 25 sd 5 maps 30 to 1") {
    SeriesBatch b;
    b.mode = Mode::heating;
    b.values.resize(1, 2);
    b.values << 20.0, 30.0;
    b.time_grid = Eigen::VectorXd::LinSpaced(2, 0.0, 1.0);
    b.t0 = Eigen::VectorXd::Constant(1, 20.0);
    b.ts = Eigen::VectorXd::Constant(1, 30.0);
    Normalizer norm = fit_normalizer(b);
    CHECK(norm.shift == doctest::Approx(25.0));
    CHECK(norm.scale == doctest::Approx(5.0));
    CHECK(norm.apply(30.0) == doctest::Approx(1.0));
  }

  SUBCASE("constant batch floors the scale and maps to zero") {
    SeriesBatch b;
    b.mode = Mode::heating;
    b.values = Eigen::MatrixXd::Constant(2, 3, 21.0);
    b.time_grid = Eigen::VectorXd::LinSpaced(3, 0.0, 1.0);
    b.t0 = Eigen::VectorXd::Constant(2, 21.0);
    b.ts = Eigen::VectorXd::Constant(2, 21.0);
    Normalizer norm = fit_normalizer(b);
    CHECK(norm.scale == 1e-8);
    CHECK(norm.apply(b.values).cwiseAbs().maxCoeff() == 0.0);
  }

  SUBCASE("round trip within 1e-10") {
    SurrogateSpec spec;
    spec.n = 7;
    spec.seed = 51;
    SeriesBatch batch = synthesize_surrogate(spec);
    Normalizer norm = fit_normalizer(batch);
    Eigen::MatrixXd rt = norm.invert(norm.apply(batch.values));
    CHECK((rt - batch.values).cwiseAbs().maxCoeff() < 1e-10);
    CHECK(norm.fitted_on.substr(0, 6) == "fnv1a:");
  }
}

TEST_CASE("series batch invariants are enforced") {
  SeriesBatch b;
  b.mode = Mode::heating;
  b.values.resize(1, 3);
  b.values << 20.0, 22.0, 24.0;
  b.time_grid = Eigen::VectorXd::LinSpaced(3, 0.0, 1.0);
  b.t0 = Eigen::VectorXd::Constant(1, 20.0);
  b.ts = Eigen::VectorXd::Constant(1, 30.0);
  CHECK_NOTHROW(b.validate());

  SUBCASE("t0 must equal the first sample") {
    b.t0[0] = 19.0;
    CHECK_THROWS_AS(b.validate(), DomainError);
  }
  SUBCASE("heating needs ts >= t0") {
    b.ts[0] = 10.0;
    CHECK_THROWS_AS(b.validate(), DomainError);
  }
  SUBCASE("grid must be ascending") {
    b.time_grid[2] = 0.0;
    CHECK_THROWS_AS(b.validate(), DomainError);
  }
}
