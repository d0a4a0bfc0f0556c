// mlpf: data generation, filter sweeps and rate fits for the neuron PDMP models.

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "mlpf/bench.hpp"
#include "mlpf/errors.hpp"
#include "mlpf/parallel.hpp"

namespace {

enum Exit { kOk = 0, kOther = 1, kConfig = 2, kNumeric = 3, kBudget = 4 };

struct Flags {
  std::string config;
  std::string model;
  std::string params;
  std::string levels;
  std::string eps;
  std::optional<std::size_t> replicates;
  std::optional<std::uint64_t> seed;
  std::string resampling;
  std::optional<std::size_t> horizon;
  std::optional<double> K;
  std::optional<double> pf_K;
  std::optional<std::size_t> truth_particles;
  std::optional<int> truth_level;
  std::string out;
  std::string format = "csv";
  std::vector<std::string> inputs;
};

void add_common(CLI::App* cmd, Flags& f) {
  cmd->add_option("--config", f.config, "Experiment config file (see emit-config-template)");
  cmd->add_option("--model", f.model, "Model: ml or ikil");
  cmd->add_option("--params", f.params, "Flat `name = value` model parameter file");
  cmd->add_option("--levels", f.levels, "Levels, as a range a..b or a list");
  cmd->add_option("--eps", f.eps, "Comma-separated accuracy targets (default 2^-l per level)");
  cmd->add_option("--replicates", f.replicates, "Independent replicates per setting");
  cmd->add_option("--seed", f.seed, "Base seed");
  cmd->add_option("--resampling", f.resampling, "adaptive or always");
  cmd->add_option("--horizon", f.horizon, "Number of unit epochs");
  cmd->add_option("--K", f.K, "Multilevel particle constant");
  cmd->add_option("--pf-K", f.pf_K, "Single-level particle constant");
  cmd->add_option("--truth-particles", f.truth_particles, "Ground-truth particle count (0 = automatic)");
  cmd->add_option("--truth-level", f.truth_level, "Ground-truth level (0 = automatic)");
  cmd->add_option("--out", f.out, "Output path (default stdout)");
  cmd->add_option("--format", f.format, "csv or json")->check(CLI::IsMember({"csv", "json"}));
}

mlpf::ExperimentConfig build_config(const Flags& f) {
  mlpf::ExperimentConfig c;
  c.workers = mlpf::default_workers();
  if (!f.config.empty()) c = mlpf::read_config(f.config);
  std::map<std::string, std::string> s;
  if (!f.model.empty()) s["model"] = f.model;
  if (!f.params.empty()) s["params"] = f.params;
  if (!f.levels.empty()) s["levels"] = f.levels;
  if (!f.eps.empty()) s["eps"] = f.eps;
  if (f.replicates) s["replicates"] = std::to_string(*f.replicates);
  if (f.seed) s["seed"] = std::to_string(*f.seed);
  if (!f.resampling.empty()) s["resampling"] = f.resampling;
  if (f.horizon) s["horizon"] = std::to_string(*f.horizon);
  if (f.truth_particles) s["truth_particles"] = std::to_string(*f.truth_particles);
  if (f.truth_level) s["truth_level"] = std::to_string(*f.truth_level);
  c.apply(s);
  if (f.K) c.particle_constant = *f.K;
  if (f.pf_K) c.pf_constant = *f.pf_K;
  if (std::getenv("MLPF_WORKERS")) c.workers = mlpf::default_workers();
  c.validate();
  return c;
}

void write_output(const std::string& path, const std::string& content) {
  if (path.empty()) {
    std::cout << content;
  } else {
    mlpf::write_atomic(path, content);
  }
}

class Stopwatch {
 public:
  explicit Stopwatch(std::string what) : what_(std::move(what)), start_(std::chrono::steady_clock::now()) {}
  ~Stopwatch() {
    const double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
    std::fprintf(stderr, "[mlpf] %s: %.2f s wall\n", what_.c_str(), s);
  }

 private:
  std::string what_;
  std::chrono::steady_clock::time_point start_;
};

struct Prepared {
  mlpf::NeuronSetup setup;
  mlpf::Dataset data;
  std::vector<double> truth;
};

Prepared prepare(const mlpf::ExperimentConfig& c, bool with_truth) {
  Prepared p;
  p.setup = c.setup();
  p.data = mlpf::generate_data(p.setup, c.resolved_data_level(), c.horizon, c.seed);
  if (with_truth) {
    Stopwatch w("ground truth");
    p.truth = mlpf::ground_truth(p.setup, c, p.data);
  }
  return p;
}

std::vector<mlpf::ResultRow> sweep(mlpf::Method m, const mlpf::ExperimentConfig& c, const Prepared& p) {
  Stopwatch w(std::string(mlpf::method_name(m)) + " sweep");
  return mlpf::run_sweep(m, p.setup, c, p.data, p.truth);
}

void emit_rows(const std::vector<mlpf::ResultRow>& rows, const Flags& f, const mlpf::ExperimentConfig& c) {
  const auto fmt = mlpf::parse_format(f.format);
  const auto header = mlpf::run_header(c);
  if (f.out.empty()) {
    std::cout << mlpf::format_results(rows, fmt, header);
  } else {
    mlpf::emit(rows, fmt, f.out, header);
  }
}

std::string format_rates(const std::vector<mlpf::ResultRow>& rows, mlpf::Format fmt) {
  std::vector<std::pair<std::string, std::string>> groups;
  for (const auto& r : rows) {
    const auto key = std::make_pair(r.method, r.model);
    if (std::find(groups.begin(), groups.end(), key) == groups.end()) groups.push_back(key);
  }
  nlohmann::ordered_json doc = nlohmann::json::array();
  std::string csv = "method,model,points,slope_mse_vs_cost,slope_se,intercept,rate_cost_vs_mse\n";
  for (const auto& [method, model] : groups) {
    std::vector<mlpf::ResultRow> subset;
    for (const auto& r : rows) {
      if (r.method == method && r.model == model) subset.push_back(r);
    }
    const mlpf::RateFit fit = mlpf::estimate_rate(mlpf::rate_points(subset, method));
    char line[256];
    std::snprintf(line, sizeof line, "%s,%s,%zu,%.17g,%.17g,%.17g,%.17g\n", method.c_str(), model.c_str(), fit.points,
                  fit.slope, fit.slope_se, fit.intercept, fit.rate());
    csv += line;
    nlohmann::ordered_json j;
    j["method"] = method;
    j["model"] = model;
    j["points"] = fit.points;
    j["slope_mse_vs_cost"] = fit.slope;
    j["slope_se"] = fit.slope_se;
    j["intercept"] = fit.intercept;
    j["rate_cost_vs_mse"] = fit.rate();
    doc.push_back(std::move(j));
  }
  return fmt == mlpf::Format::json ? doc.dump(1) + "\n" : csv;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multilevel particle filters for PDMPs with Euler-discretized flows"};
  app.require_subcommand(1);
  Flags f;

  auto* simulate = app.add_subcommand("simulate", "Generate a latent path and noisy observations");
  auto* pf = app.add_subcommand("pf", "Single-level particle filter sweep over the accuracy grid");
  auto* mlpf_cmd = app.add_subcommand("mlpf", "Multilevel particle filter sweep over the accuracy grid");
  auto* rates = app.add_subcommand("rates", "Fit cost-vs-MSE rates from result files, or run both sweeps");
  auto* tmpl = app.add_subcommand("emit-config-template", "Print a config file with every setting");
  for (auto* cmd : {simulate, pf, mlpf_cmd, rates}) add_common(cmd, f);
  rates->add_option("--input", f.inputs, "Result files from pf / mlpf (repeatable)");
  tmpl->add_option("--out", f.out, "Output path (default stdout)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kConfig;
  }

  try {
    if (tmpl->parsed()) {
      write_output(f.out, mlpf::config_template());
      return kOk;
    }
    const mlpf::ExperimentConfig c = build_config(f);
    const auto fmt = mlpf::parse_format(f.format);
    if (simulate->parsed()) {
      const Prepared p = prepare(c, false);
      write_output(f.out, mlpf::format_dataset(p.data, fmt, mlpf::run_header(c)));
    } else if (pf->parsed() || mlpf_cmd->parsed()) {
      const Prepared p = prepare(c, true);
      emit_rows(sweep(pf->parsed() ? mlpf::Method::pf : mlpf::Method::mlpf, c, p), f, c);
    } else if (rates->parsed()) {
      std::vector<mlpf::ResultRow> rows;
      if (f.inputs.empty()) {
        const Prepared p = prepare(c, true);
        rows = sweep(mlpf::Method::pf, c, p);
        const auto ml = sweep(mlpf::Method::mlpf, c, p);
        rows.insert(rows.end(), ml.begin(), ml.end());
      } else {
        for (const auto& path : f.inputs) {
          const auto r = mlpf::read_results(path);
          rows.insert(rows.end(), r.begin(), r.end());
        }
      }
      write_output(f.out, format_rates(rows, fmt));
    }
    return kOk;
  } catch (const mlpf::BudgetError& e) {
    std::cerr << "budget error: " << e.what() << "\n";
    return kBudget;
  } catch (const mlpf::NumericError& e) {
    std::cerr << "numeric failure: " << e.what() << "\n";
    return kNumeric;
  } catch (const mlpf::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kConfig;
  } catch (const mlpf::ContractError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kConfig;
  } catch (const mlpf::IoError& e) {
    std::cerr << "i/o error: " << e.what() << "\n";
    return kConfig;
  } catch (const mlpf::InsufficientData& e) {
    std::cerr << "insufficient data: " << e.what() << "\n";
    return kConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kOther;
  }
}
