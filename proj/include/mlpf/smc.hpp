#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "mlpf/coupling.hpp"
#include "mlpf/pdmp.hpp"

namespace mlpf {

using TestFunction = std::function<double(const HybridState&)>;

struct Observation {
  double time = 0.0;
  double value = 0.0;
};

/// Observation density g(x, y), read at observation times spaced gap() apart.
class ObservationModel {
 public:
  explicit ObservationModel(double gap) : gap_(gap) {}
  virtual ~ObservationModel() = default;

  virtual double log_density(const HybridState& x, double y) const = 0;
  /// acc[i] += log g(xs[i], y). The default evaluates log_density per state.
  virtual void add_log_density(std::span<const HybridState> xs, double y, std::span<double> acc) const;

  double gap() const { return gap_; }

 private:
  double gap_;
};

/// y | x ~ N(statistic(x), variance), where the statistic is one coordinate of v
/// or, with coordinate = kModeStatistic, the mode u.
class GaussianObservation final : public ObservationModel {
 public:
  static constexpr int kModeStatistic = -1;

  GaussianObservation(double gap, double variance, int coordinate = 0);

  double log_density(const HybridState& x, double y) const override;
  void add_log_density(std::span<const HybridState> xs, double y, std::span<double> acc) const override;

  double variance() const { return variance_; }
  int coordinate() const { return coordinate_; }
  double statistic(const HybridState& x) const {
    return coordinate_ == kModeStatistic ? static_cast<double>(x.u) : x.v[static_cast<std::size_t>(coordinate_)];
  }

 private:
  double variance_;
  int coordinate_;
};

struct WeightedEnsemble {
  std::vector<HybridState> particles;
  std::vector<double> log_weights;

  static WeightedEnsemble uniform(const HybridState& x0, std::size_t count);
  std::size_t size() const { return particles.size(); }
  /// Normalized weights; throws FilterCollapse when every weight underflowed.
  std::vector<double> normalized_weights() const;
};

enum class ResamplingMode { adaptive, always };
/// Which normalized weight vector gates resampling of a coupled filter.
enum class EssGate { coarse, fine, either };

struct FilterOptions {
  ResamplingMode resampling = ResamplingMode::adaptive;
  /// Resample when ESS < ess_fraction * S.
  double ess_fraction = 0.5;
  EssGate gate = EssGate::coarse;
  std::size_t workers = 1;
};

struct FilterEstimate {
  double value = 0.0;
  std::size_t epoch = 0;
  int level = 0;
};

/// 1 / sum w_i^2 of a normalized weight vector.
double ess(std::span<const double> weights);

/// Multinomial ancestor indices from normalized weights.
std::vector<std::size_t> multinomial_resample(std::span<const double> weights, std::size_t count, Rng& rng);

struct CoupledAncestors {
  std::vector<std::size_t> fine;
  std::vector<std::size_t> coarse;
  std::size_t coupled_count = 0;
};

/// Maximal coupling of two multinomial resamplings: each slot shares an ancestor with
/// probability sum_i min(W1_i, W2_i), otherwise draws both from the normalized residuals.
CoupledAncestors maximal_coupling_resample(std::span<const double> w_fine, std::span<const double> w_coarse,
                                           Rng& rng);

template <typename Item>
struct CoupledResample {
  std::vector<Item> fine;
  std::vector<Item> coarse;
  std::size_t coupled_count = 0;
};

template <typename Item>
CoupledResample<Item> maximal_coupling_resample(std::span<const Item> items_fine, std::span<const Item> items_coarse,
                                                std::span<const double> w_fine, std::span<const double> w_coarse,
                                                Rng& rng) {
  CoupledAncestors a = maximal_coupling_resample(w_fine, w_coarse, rng);
  CoupledResample<Item> out;
  out.coupled_count = a.coupled_count;
  out.fine.reserve(a.fine.size());
  out.coarse.reserve(a.coarse.size());
  for (std::size_t i = 0; i < a.fine.size(); ++i) {
    out.fine.push_back(items_fine[a.fine[i]]);
    out.coarse.push_back(items_coarse[a.coarse[i]]);
  }
  return out;
}

/// Observations with time in (t0, t1]; `data` must be sorted by time.
std::span<const Observation> observations_in(std::span<const Observation> data, double t0, double t1);

struct StepCost {
  SimCost sim;
  std::uint64_t likelihood_evals = 0;

  StepCost& operator+=(const StepCost& o) {
    sim += o.sim;
    likelihood_evals += o.likelihood_evals;
    return *this;
  }
};

struct PfStepResult {
  WeightedEnsemble ensemble;
  FilterEstimate estimate;
  bool resampled = false;
  double ess = 0.0;
  StepCost cost;
};

/// One bootstrap filter epoch over [t0, t1]: propagate, weight by every observation in
/// (t0, t1], estimate phi at t1 before resampling, then resample if the ESS rule fires.
/// Particle i draws from derive_seed(step_seed, {i}); resampling from its own stream.
PfStepResult pf_step(const PdmpModel& model, const ObservationModel& obs_model, const WeightedEnsemble& ensemble,
                     std::span<const Observation> observations, double t0, double t1, const FlowSpec& flow,
                     std::uint64_t step_seed, std::size_t epoch, const TestFunction& phi,
                     const FilterOptions& options = {});

struct CoupledFilterState {
  std::vector<CoupledPair> pairs;
  std::vector<double> fine_log_weights;
  /// Accumulated log(g * R) of the coarse leg.
  std::vector<double> coarse_log_weights;

  static CoupledFilterState uniform(const HybridState& x0, std::size_t count);
  std::size_t size() const { return pairs.size(); }
};

struct CoupledStepResult {
  CoupledFilterState state;
  FilterEstimate fine_estimate;
  FilterEstimate coarse_estimate;
  bool resampled = false;
  double fine_ess = 0.0;
  double coarse_ess = 0.0;
  std::size_t coupled_count = 0;
  StepCost cost;
};

/// One coupled filter epoch at level l >= 2 (the coarse leg runs at l-1).
CoupledStepResult coupled_pf_step(const PdmpModel& model, const ObservationModel& obs_model,
                                  const CoupledFilterState& state, std::span<const Observation> observations,
                                  double t0, double t1, Level level, std::uint64_t step_seed, std::size_t epoch,
                                  const TestFunction& phi, const FilterOptions& options = {});

struct LevelDifference {
  int level = 0;
  std::size_t epoch = 0;
  double fine = 0.0;
  double coarse = 0.0;

  double value() const { return fine - coarse; }
};

/// Level-1 estimate plus the sum of coupled differences for levels 2..L (which must all be present).
double ml_estimate(const FilterEstimate& level1, std::span<const LevelDifference> differences);

// Whole-horizon drivers: epochs [n-1, n] for n = 1..horizon, starting from x0 at time 0.

struct FilterRun {
  std::vector<double> estimates;
  std::vector<bool> resampled;
  StepCost cost;
};

FilterRun run_particle_filter(const PdmpModel& model, const ObservationModel& obs_model,
                              std::span<const Observation> data, std::size_t horizon, const FlowSpec& flow,
                              std::size_t particles, const HybridState& x0, std::uint64_t seed,
                              const TestFunction& phi, const FilterOptions& options = {});

struct CoupledRun {
  std::vector<double> fine;
  std::vector<double> coarse;
  std::vector<bool> resampled;
  StepCost cost;
};

CoupledRun run_coupled_filter(const PdmpModel& model, const ObservationModel& obs_model,
                              std::span<const Observation> data, std::size_t horizon, Level level,
                              std::size_t particles, const HybridState& x0, std::uint64_t seed,
                              const TestFunction& phi, const FilterOptions& options = {});

}  // namespace mlpf
