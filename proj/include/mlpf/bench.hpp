#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "mlpf/neuro.hpp"
#include "mlpf/smc.hpp"

namespace mlpf {

/// Headline cost is euler_steps + poisson_candidates; likelihood evaluations are level
/// independent and tracked separately.
struct CostCounter {
  std::uint64_t euler_steps = 0;
  std::uint64_t poisson_candidates = 0;
  std::uint64_t likelihood_evals = 0;

  std::uint64_t total() const { return euler_steps + poisson_candidates; }
  CostCounter& operator+=(const StepCost& c) {
    euler_steps += c.sim.euler_steps;
    poisson_candidates += c.sim.candidates;
    likelihood_evals += c.likelihood_evals;
    return *this;
  }
  CostCounter& operator+=(const CostCounter& c) {
    euler_steps += c.euler_steps;
    poisson_candidates += c.poisson_candidates;
    likelihood_evals += c.likelihood_evals;
    return *this;
  }
};

enum class Method { pf, mlpf };
std::string_view method_name(Method m);

struct ExperimentConfig {
  ModelId model = ModelId::ml;
  std::string params_file;
  /// Model parameter overrides, applied after params_file.
  KeyValues params;
  std::vector<int> levels{3, 4, 5, 6, 7};
  /// Target accuracies; empty means eps = 2^-l for each entry of `levels`.
  std::vector<double> eps;
  std::size_t replicates = 100;
  std::size_t horizon = 10;
  /// Level of the latent path behind the synthetic data; 0 means truth_level.
  int data_level = 0;
  /// Ground-truth filter level; 0 means max(levels) + 2.
  int truth_level = 0;
  std::size_t truth_replicates = 10;
  double truth_multiplier = 8.0;
  /// Ground-truth particle count; 0 means truth_multiplier times the largest allocation.
  std::size_t truth_particles = 0;
  std::uint64_t seed = 1;
  ResamplingMode resampling = ResamplingMode::adaptive;
  EssGate gate = EssGate::coarse;
  double ess_fraction = 0.5;
  /// K in S_l = ceil(K eps^-2 Delta_l L) for the multilevel filter.
  double particle_constant = 1.0;
  /// K in S = ceil(K eps^-2) for the single-level filter.
  double pf_constant = 1.0;
  std::size_t min_particles = 10;
  std::size_t max_particles = 4'000'000;
  std::size_t workers = 1;
  /// Test function: "V" (membrane potential) or "u" (mode).
  std::string phi = "V";

  /// Applies `name = value` settings; unknown names throw ConfigError.
  void apply(const std::map<std::string, std::string>& settings);
  void validate() const;

  std::vector<double> epsilons() const;
  int resolved_truth_level() const;
  int resolved_data_level() const;
  FilterOptions filter_options() const;
  NeuronSetup setup() const;
  TestFunction test_function() const;
  /// Settings in the config-file syntax read by apply().
  std::string to_text() const;
};

/// Parses `name = value` lines with string values; '#' starts a comment.
std::map<std::string, std::string> parse_settings(std::string_view text);
ExperimentConfig read_config(const std::string& path);
std::string config_template();

/// Smallest L >= 1 with 2^-L <= eps.
int finest_level(double eps);

/// S_l = max(min_particles, ceil(K eps^-2 Delta_l L)) for l = 1..L. Throws BudgetError naming the
/// first level whose count exceeds max_particles.
std::vector<std::size_t> allocate_particles(double eps, int L, double K = 1.0, std::size_t min_particles = 10,
                                            std::size_t max_particles = 4'000'000);
/// Single-level count S = max(min_particles, ceil(K eps^-2)).
std::size_t pf_particles(double eps, double K, std::size_t min_particles, std::size_t max_particles, int level);

struct Dataset {
  std::vector<Observation> observations;
  /// Latent state at each observation time.
  std::vector<HybridState> latent;
  std::uint64_t seed = 0;
  int level = 0;
};

/// Simulates one latent path at `level` over [0, horizon] and draws Y_k ~ N(V(k delta), tau2).
Dataset generate_data(const NeuronSetup& setup, int level, std::size_t horizon, std::uint64_t seed);

/// Per-epoch ground truth: mean over truth replicates of a high-resolution particle filter.
std::vector<double> ground_truth(const NeuronSetup& setup, const ExperimentConfig& config, const Dataset& data);
std::size_t truth_particle_count(const ExperimentConfig& config);

struct ResultRow {
  std::string method;
  std::string model;
  int level = 0;
  double epsilon = 0.0;
  std::size_t replicate = 0;
  std::size_t epoch = 0;
  double estimate = 0.0;
  double sq_error = 0.0;
  std::uint64_t cost_euler = 0;
  std::uint64_t cost_candidates = 0;
  std::uint64_t cost_total = 0;
  std::uint64_t seed = 0;

  friend bool operator==(const ResultRow&, const ResultRow&) = default;
};

/// Seed of one (method, setting, replicate) task.
std::uint64_t replicate_seed(std::uint64_t base, Method method, std::size_t setting, std::size_t replicate);

/// Bootstrap filter at `level` with S particles; one row per epoch. `truth` may be empty
/// (squared errors are then NaN).
std::vector<ResultRow> run_pf(const NeuronSetup& setup, const ExperimentConfig& config, const Dataset& data,
                              int level, std::size_t S, double epsilon, std::size_t replicate, std::uint64_t seed,
                              std::span<const double> truth = {});

/// Multilevel filter for accuracy eps: level-1 filter plus independent coupled filters for
/// l = 2..L, combined per epoch.
std::vector<ResultRow> run_mlpf(const NeuronSetup& setup, const ExperimentConfig& config, const Dataset& data,
                                double eps, std::size_t replicate, std::uint64_t seed,
                                std::span<const double> truth = {});

/// All settings x replicates of one method, run on config.workers threads. Row order is fixed.
std::vector<ResultRow> run_sweep(Method method, const NeuronSetup& setup, const ExperimentConfig& config,
                                 const Dataset& data, std::span<const double> truth);

struct RatePoint {
  double cost = 0.0;
  double mse = 0.0;
};

struct RateFit {
  /// d log10(MSE) / d log10(cost)
  double slope = 0.0;
  double intercept = 0.0;
  double slope_se = 0.0;
  std::size_t points = 0;

  /// d log(cost) / d log(MSE), the orientation used for reporting.
  double rate() const { return 1.0 / slope; }
};

/// OLS of log10 MSE on log10 cost. Throws InsufficientData with fewer than 3 usable points.
RateFit estimate_rate(std::span<const RatePoint> points);

/// One point per (setting, epoch): mean squared error and mean total cost over replicates.
std::vector<RatePoint> rate_points(std::span<const ResultRow> rows, std::string_view method);

struct AggregateRow {
  std::string method;
  std::string model;
  int level = 0;
  double epsilon = 0.0;
  std::size_t replicates = 0;
  double mean_mse = 0.0;
  double mean_cost = 0.0;
};

/// Mean MSE and cost per (method, setting), in first-appearance order.
std::vector<AggregateRow> aggregate(std::span<const ResultRow> rows);

enum class Format { csv, json };
Format parse_format(std::string_view s);

/// Writes via a temporary file and rename. Lines of `header` go into '#' comments (CSV) or a
/// "header" array (JSON).
void emit(std::span<const ResultRow> rows, Format format, const std::string& path,
          std::span<const std::string> header = {});
std::string format_results(std::span<const ResultRow> rows, Format format, std::span<const std::string> header = {});
std::vector<ResultRow> parse_results(std::string_view text);
std::vector<ResultRow> read_results(const std::string& path);

/// Aggregate file with both rate orientations per method.
std::string format_aggregate(std::span<const ResultRow> rows, Format format);
std::string format_dataset(const Dataset& data, Format format, std::span<const std::string> header = {});

void write_atomic(const std::string& path, std::string_view content);
/// `<path>` with ".aggregate" inserted before the extension.
std::string aggregate_path(const std::string& path);

/// Seed scheme and run settings, for output headers.
std::vector<std::string> run_header(const ExperimentConfig& config);

}  // namespace mlpf
