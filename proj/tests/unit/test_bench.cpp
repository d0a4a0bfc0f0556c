#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>
#include <vector>

#include "doctest.h"
#include "mlpf/bench.hpp"
#include "mlpf/errors.hpp"

using namespace mlpf;

namespace {

ExperimentConfig small_config() {
  ExperimentConfig c;
  c.horizon = 2;
  c.levels = {3};
  c.replicates = 3;
  c.truth_particles = 200;
  c.truth_replicates = 2;
  return c;
}

std::vector<ResultRow> sample_rows(std::size_t n) {
  std::vector<ResultRow> rows;
  for (std::size_t i = 0; i < n; ++i) {
    ResultRow r;
    r.method = i % 2 ? "mlpf" : "pf";
    r.model = "ml";
    r.level = 3 + static_cast<int>(i % 3);
    r.epsilon = std::ldexp(1.0, -r.level);
    r.replicate = i / 6;
    r.epoch = 1 + i % 4;
    r.estimate = -20.0 + 0.1 * std::sin(static_cast<double>(i));
    r.sq_error = 1.0 / (1.0 + static_cast<double>(i));
    r.cost_euler = 1000 + i;
    r.cost_candidates = 7 * i;
    r.cost_total = r.cost_euler + r.cost_candidates;
    r.seed = 0xdeadbeef00000000ULL + i;
    rows.push_back(r);
  }
  return rows;
}

}  // namespace

TEST_CASE("particle allocation") {
  const auto s = allocate_particles(std::ldexp(1.0, -5), 5);
  REQUIRE(s.size() == 5);
  CHECK(s.front() == 2560);
  CHECK(s.back() == 160);
  for (std::size_t l = 1; l < s.size(); ++l) CHECK(s[l] * 2 == s[l - 1]);

  const auto one = allocate_particles(0.5, 1);
  REQUIRE(one.size() == 1);
  CHECK(one[0] == 10);

  const auto a = allocate_particles(std::ldexp(1.0, -6), 6, 1.0);
  const auto b = allocate_particles(std::ldexp(1.0, -6), 6, 2.0);
  for (std::size_t l = 0; l < a.size(); ++l) CHECK(b[l] == 2 * a[l]);

  CHECK(allocate_particles(0.25, 2, 1e-6, 10)[1] == 10);
  try {
    allocate_particles(1e-3, 10, 1.0, 10, 100000);
    FAIL("expected BudgetError");
  } catch (const BudgetError& e) {
    CHECK(e.level() == 1);
  }
  CHECK(pf_particles(0.125, 1.0, 10, 1000, 3) == 64);
  CHECK(pf_particles(0.5, 1.0, 10, 1000, 1) == 10);
  CHECK_THROWS_AS(pf_particles(1e-3, 1.0, 10, 1000, 7), BudgetError);
}

TEST_CASE("finest_level") {
  CHECK(finest_level(0.5) == 1);
  CHECK(finest_level(0.125) == 3);
  CHECK(finest_level(0.1) == 4);
  CHECK(finest_level(1.0) == 1);
  CHECK_THROWS_AS(finest_level(0.0), ContractError);
}

TEST_CASE("synthetic data") {
  const NeuronSetup s = make_setup(ModelId::ml, parse_key_values("tau2 = 1e-12\n"));
  const Dataset d = generate_data(s, 5, 10, 42);
  REQUIRE(d.observations.size() == 20);
  for (std::size_t k = 0; k < 20; ++k) {
    CHECK(d.observations[k].time == doctest::Approx(0.5 * (k + 1)).epsilon(1e-15));
    CHECK(std::abs(d.observations[k].value - d.latent[k].v[0]) < 1e-4);
  }
  const Dataset again = generate_data(s, 5, 10, 42);
  for (std::size_t k = 0; k < 20; ++k) CHECK(again.observations[k].value == d.observations[k].value);
  const Dataset other = generate_data(s, 5, 10, 43);
  CHECK(other.observations[19].value != d.observations[19].value);
}

TEST_CASE("single-level runs") {
  const ExperimentConfig c = small_config();
  const NeuronSetup s = c.setup();
  const Dataset d = generate_data(s, 5, c.horizon, 1);
  SUBCASE("deterministic in the seed") {
    const std::vector<double> truth = {-20.0, -21.0};
    const auto a = run_pf(s, c, d, 3, 50, 0.125, 0, 77, truth);
    const auto b = run_pf(s, c, d, 3, 50, 0.125, 0, 77, truth);
    CHECK(a == b);
    REQUIRE(a.size() == 2);
    CHECK(std::isnan(run_pf(s, c, d, 3, 50, 0.125, 0, 77)[0].sq_error));
    const auto& t = a;
    CHECK(t[1].sq_error == doctest::Approx((t[1].estimate + 21.0) * (t[1].estimate + 21.0)));
  }
  SUBCASE("cost doubles with the level") {
    const auto a = run_pf(s, c, d, 5, 100, 0.125, 0, 5);
    const auto b = run_pf(s, c, d, 6, 100, 0.125, 0, 5);
    const double ratio = static_cast<double>(b[0].cost_euler) / static_cast<double>(a[0].cost_euler);
    CHECK(ratio >= 1.8);
    CHECK(ratio <= 2.2);
    CHECK(a[0].cost_total == a[0].cost_euler + a[0].cost_candidates);
  }
}

TEST_CASE("multilevel filter with one level is the level-1 filter") {
  ExperimentConfig c = small_config();
  c.min_particles = 10;
  const NeuronSetup s = c.setup();
  const Dataset d = generate_data(s, 5, c.horizon, 1);
  const auto ml = run_mlpf(s, c, d, 0.5, 0, 99);
  const auto pf = run_pf(s, c, d, 1, 10, 0.5, 0, 99);
  REQUIRE(ml.size() == pf.size());
  for (std::size_t n = 0; n < ml.size(); ++n) {
    CHECK(ml[n].estimate == pf[n].estimate);
    CHECK(ml[n].cost_total == pf[n].cost_total);
    CHECK(ml[n].level == 1);
  }
}

TEST_CASE("sweeps are reproducible and use distinct seeds") {
  ExperimentConfig c = small_config();
  c.levels = {2, 3};
  c.pf_constant = 0.5;
  c.particle_constant = 0.5;
  const NeuronSetup s = c.setup();
  const Dataset d = generate_data(s, 5, c.horizon, 1);
  const std::vector<double> truth = {-20.0, -20.0};
  for (Method m : {Method::pf, Method::mlpf}) {
    ExperimentConfig one = c, three = c;
    three.workers = 3;
    const auto a = run_sweep(m, s, one, d, truth);
    const auto b = run_sweep(m, s, three, d, truth);
    CHECK(a == b);
    CHECK(a.size() == 2 * 3 * 2);
    std::set<std::uint64_t> seeds;
    for (const auto& r : a) seeds.insert(r.seed);
    CHECK(seeds.size() == 6);
  }
  CHECK(replicate_seed(1, Method::pf, 0, 0) != replicate_seed(1, Method::mlpf, 0, 0));
}

TEST_CASE("rate fits") {
  SUBCASE("exact power laws") {
    std::vector<RatePoint> p;
    for (double c : {1e3, 1e4, 1e5, 1e6}) p.push_back({c, 5.0 * std::pow(c, -2.0 / 3.0)});
    const RateFit f = estimate_rate(p);
    CHECK(f.slope == doctest::Approx(-2.0 / 3.0).epsilon(1e-12));
    CHECK(f.rate() == doctest::Approx(-1.5).epsilon(1e-12));
    CHECK(f.intercept == doctest::Approx(std::log10(5.0)).epsilon(1e-12));
    CHECK(f.slope_se == doctest::Approx(0.0).epsilon(1e-9));
    std::vector<RatePoint> q;
    for (double c : {10.0, 100.0, 1000.0}) q.push_back({c, 1.0 / c});
    CHECK(estimate_rate(q).rate() == doctest::Approx(-1.0));
  }
  SUBCASE("too few usable points") {
    const std::vector<RatePoint> two = {{1, 1}, {10, 0.1}};
    CHECK_THROWS_AS(estimate_rate(two), InsufficientData);
    const std::vector<RatePoint> zeros = {{1, 1}, {10, 0.0}, {100, 0.01}};
    CHECK_THROWS_AS(estimate_rate(zeros), InsufficientData);
    const std::vector<RatePoint> same = {{5, 1}, {5, 0.1}, {5, 0.01}};
    CHECK_THROWS_AS(estimate_rate(same), InsufficientData);
  }
  SUBCASE("points average over replicates per setting and epoch") {
    std::vector<ResultRow> rows = sample_rows(0);
    for (std::size_t rep = 0; rep < 2; ++rep) {
      ResultRow r;
      r.method = "pf";
      r.level = 3;
      r.epsilon = 0.125;
      r.replicate = rep;
      r.epoch = 1;
      r.sq_error = rep ? 3.0 : 1.0;
      r.cost_total = rep ? 300 : 100;
      rows.push_back(r);
    }
    const auto p = rate_points(rows, "pf");
    REQUIRE(p.size() == 1);
    CHECK(p[0].mse == 2.0);
    CHECK(p[0].cost == 200.0);
    CHECK(rate_points(rows, "mlpf").empty());
  }
}

TEST_CASE("result files") {
  const auto rows = sample_rows(24);
  const std::vector<std::string> header = {"line one", "line two"};
  SUBCASE("csv and json round trip") {
    for (Format f : {Format::csv, Format::json}) {
      const std::string text = format_results(rows, f, header);
      CHECK(parse_results(text) == rows);
      CHECK(format_results(rows, f, header) == text);
    }
    CHECK(format_results(rows, Format::csv, header).starts_with("# line one\n"));
  }
  SUBCASE("large files keep every row") {
    const auto many = sample_rows(10000);
    CHECK(parse_results(format_results(many, Format::csv)).size() == 10000);
  }
  SUBCASE("aggregate") {
    const auto agg = aggregate(rows);
    CHECK(agg.size() == 6);
    std::vector<ResultRow> single(rows.begin(), rows.begin() + 1);
    REQUIRE(aggregate(single).size() == 1);
    CHECK(aggregate(single)[0].mean_mse == single[0].sq_error);
    CHECK(format_aggregate(rows, Format::csv).find("rate_cost_vs_mse") != std::string::npos);
  }
  SUBCASE("emit writes rows and aggregate atomically") {
    const auto dir = std::filesystem::temp_directory_path() / "mlpf_bench_test";
    std::filesystem::create_directories(dir);
    const std::string path = (dir / "out.csv").string();
    emit(rows, Format::csv, path, header);
    CHECK(read_results(path) == rows);
    CHECK(std::filesystem::exists(aggregate_path(path)));
    CHECK(!std::filesystem::exists(path + ".tmp"));
    std::filesystem::remove_all(dir);
    CHECK(aggregate_path("a/b.json") == "a/b.aggregate.json");
    CHECK(aggregate_path("res") == "res.aggregate");
  }
  SUBCASE("unwritable destination") {
    CHECK_THROWS_AS(emit(rows, Format::csv, "/nonexistent-dir/x/out.csv"), IoError);
    CHECK_THROWS_AS(emit({}, Format::csv, "/tmp/empty.csv"), ContractError);
  }
  CHECK_THROWS_AS(parse_format("xml"), ConfigError);
  CHECK_THROWS_AS(parse_results("not,a,valid\nfile\n"), IoError);
}

TEST_CASE("config files") {
  SUBCASE("template round trip") {
    ExperimentConfig c;
    c.apply(parse_settings(config_template()));
    CHECK(c.to_text() == ExperimentConfig{}.to_text());
  }
  SUBCASE("settings apply") {
    ExperimentConfig c;
    c.apply(parse_settings("model = ikil\nlevels = 3..5\neps = 0.1, 0.05\nK = 0.25\nparam.tau2 = 0.5\n"
                           "resampling = always\n"));
    CHECK(c.model == ModelId::ikil);
    CHECK(c.levels == std::vector<int>{3, 4, 5});
    CHECK(c.epsilons() == std::vector<double>{0.1, 0.05});
    CHECK(c.particle_constant == 0.25);
    CHECK(c.setup().tau2 == 0.5);
    CHECK(c.filter_options().resampling == ResamplingMode::always);
    ExperimentConfig back;
    back.apply(parse_settings(c.to_text()));
    CHECK(back.to_text() == c.to_text());
  }
  SUBCASE("defaults") {
    const ExperimentConfig c;
    CHECK(c.resolved_truth_level() == 9);
    CHECK(c.resolved_data_level() == 9);
    CHECK(c.epsilons().front() == 0.125);
    CHECK(c.epsilons().back() == 0.0078125);
  }
  SUBCASE("rejections") {
    ExperimentConfig c;
    CHECK_THROWS_AS(c.apply(parse_settings("colour = red\n")), ConfigError);
    CHECK_THROWS_AS(c.apply(parse_settings("levels = 5..3\n")), ConfigError);
    CHECK_THROWS_AS(c.apply(parse_settings("replicates = many\n")), ConfigError);
    ExperimentConfig bad;
    bad.levels = {4, 3};
    CHECK_THROWS_AS(bad.validate(), ConfigError);
  }
}

TEST_CASE("mean squared error falls as 1/S at a fixed level") {
  ExperimentConfig c = small_config();
  c.horizon = 1;
  const NeuronSetup s = c.setup();
  const Dataset d = generate_data(s, 5, c.horizon, 3);
  double truth = 0;
  for (std::uint64_t r = 0; r < 4; ++r) truth += run_pf(s, c, d, 3, 20000, 0.0, 0, 1000 + r)[0].estimate / 4;
  std::vector<double> xs, ys;
  for (std::size_t S : {25, 50, 100, 200, 400}) {
    double mse = 0;
    constexpr int reps = 150;
    for (int r = 0; r < reps; ++r) {
      const double e = run_pf(s, c, d, 3, S, 0.0, 0, derive_seed(S, {static_cast<std::uint64_t>(r)}))[0].estimate - truth;
      mse += e * e / reps;
    }
    xs.push_back(std::log10(static_cast<double>(S)));
    ys.push_back(std::log10(mse));
  }
  std::vector<RatePoint> p;
  for (std::size_t i = 0; i < xs.size(); ++i) p.push_back({std::pow(10.0, xs[i]), std::pow(10.0, ys[i])});
  CHECK(estimate_rate(p).slope == doctest::Approx(-1.0).epsilon(0.15));
}
