#include "mlpf/smc.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

#include "mlpf/errors.hpp"
#include "mlpf/kernels.hpp"
#include "mlpf/parallel.hpp"

namespace mlpf {

namespace {

constexpr std::uint64_t kResampleStream = 0xfeedface00000001ULL;

std::vector<double> snapshot_times(std::span<const Observation> obs) {
  std::vector<double> t;
  t.reserve(obs.size());
  for (const auto& o : obs) t.push_back(o.time);
  return t;
}

/// Normalizes in place to log-weights of normalized weights; returns the normalized weights.
std::vector<double> renormalize(std::vector<double>& log_weights, const char* which) {
  std::vector<double> w(log_weights.size());
  const double log_total = kernels::normalize_log_weights(log_weights, w);
  if (!std::isfinite(log_total)) throw FilterCollapse(std::string(which) + " weights all underflowed");
  for (double& lw : log_weights) lw -= log_total;
  return w;
}

double weighted_mean(std::span<const double> w, std::span<const HybridState> xs, const TestFunction& phi) {
  std::vector<double> values(xs.size());
  for (std::size_t i = 0; i < xs.size(); ++i) values[i] = phi(xs[i]);
  return kernels::dot(w, values);
}

bool should_resample(const FilterOptions& options, double ess_value, std::size_t count) {
  if (options.resampling == ResamplingMode::always) return true;
  return ess_value < options.ess_fraction * static_cast<double>(count);
}

std::size_t draw_index(std::span<const double> cumulative, double u) {
  const double target = u * cumulative.back();
  auto it = std::upper_bound(cumulative.begin(), cumulative.end(), target);
  std::size_t idx = static_cast<std::size_t>(it - cumulative.begin());
  if (idx < cumulative.size()) return idx;
  // Rounding put the target at the total; take the last entry with mass.
  idx = cumulative.size() - 1;
  while (idx > 0 && cumulative[idx] == cumulative[idx - 1]) --idx;
  return idx;
}

std::vector<double> cumulative_sum(std::span<const double> w) {
  std::vector<double> c(w.size());
  double s = 0.0;
  for (std::size_t i = 0; i < w.size(); ++i) {
    s += w[i];
    c[i] = s;
  }
  return c;
}

}  // namespace

void ObservationModel::add_log_density(std::span<const HybridState> xs, double y, std::span<double> acc) const {
  if (xs.size() != acc.size()) throw ContractError("add_log_density: size mismatch");
  for (std::size_t i = 0; i < xs.size(); ++i) acc[i] += log_density(xs[i], y);
}

GaussianObservation::GaussianObservation(double gap, double variance, int coordinate)
    : ObservationModel(gap), variance_(variance), coordinate_(coordinate) {
  if (!(variance > 0.0)) throw ContractError("observation variance must be positive");
  if (!(gap > 0.0)) throw ContractError("observation gap must be positive");
  if (coordinate < kModeStatistic) throw ContractError("invalid observation coordinate");
}

double GaussianObservation::log_density(const HybridState& x, double y) const {
  const double r = y - statistic(x);
  return -(r * r) / (2.0 * variance_) - 0.5 * std::log(2.0 * std::numbers::pi * variance_);
}

void GaussianObservation::add_log_density(std::span<const HybridState> xs, double y, std::span<double> acc) const {
  if (xs.size() != acc.size()) throw ContractError("add_log_density: size mismatch");
  std::vector<double> stat(xs.size());
  for (std::size_t i = 0; i < xs.size(); ++i) stat[i] = statistic(xs[i]);
  kernels::gaussian_loglik_add(stat, y, variance_, acc);
}

WeightedEnsemble WeightedEnsemble::uniform(const HybridState& x0, std::size_t count) {
  if (count == 0) throw ContractError("ensemble needs at least one particle");
  WeightedEnsemble e;
  e.particles.assign(count, x0);
  e.log_weights.assign(count, -std::log(static_cast<double>(count)));
  return e;
}

std::vector<double> WeightedEnsemble::normalized_weights() const {
  std::vector<double> lw = log_weights;
  return renormalize(lw, "ensemble");
}

double ess(std::span<const double> weights) {
  if (weights.empty()) throw ContractError("ess of an empty weight vector");
  const double ss = kernels::sum_squares(weights);
  if (!(ss > 0.0)) throw DegenerateWeights("ess: all weights are zero");
  return 1.0 / ss;
}

std::vector<std::size_t> multinomial_resample(std::span<const double> weights, std::size_t count, Rng& rng) {
  if (weights.empty()) throw ContractError("multinomial_resample: empty weights");
  const std::vector<double> c = cumulative_sum(weights);
  if (!(c.back() > 0.0)) throw DegenerateWeights("multinomial_resample: zero total mass");
  std::vector<std::size_t> out(count);
  for (auto& a : out) a = draw_index(c, uniform01(rng));
  return out;
}

CoupledAncestors maximal_coupling_resample(std::span<const double> w_fine, std::span<const double> w_coarse,
                                           Rng& rng) {
  const std::size_t n = w_fine.size();
  if (n == 0 || w_coarse.size() != n) throw ContractError("maximal_coupling_resample: weight lengths differ");
  std::vector<double> mins(n);
  const double common = kernels::min_sum(w_fine, w_coarse, mins);
  std::vector<double> res_fine(n), res_coarse(n);
  for (std::size_t i = 0; i < n; ++i) {
    res_fine[i] = std::max(0.0, w_fine[i] - mins[i]);
    res_coarse[i] = std::max(0.0, w_coarse[i] - mins[i]);
  }
  const std::vector<double> c_min = cumulative_sum(mins);
  const std::vector<double> c_fine = cumulative_sum(res_fine);
  const std::vector<double> c_coarse = cumulative_sum(res_coarse);
  const bool has_residual = c_fine.back() > 0.0 && c_coarse.back() > 0.0;
  if (!(common > 0.0) && !has_residual) throw DegenerateWeights("maximal_coupling_resample: zero total mass");

  CoupledAncestors out;
  out.fine.resize(n);
  out.coarse.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double u = uniform01(rng);
    if (common > 0.0 && (u < common || !has_residual)) {
      const std::size_t a = draw_index(c_min, uniform01(rng));
      out.fine[i] = a;
      out.coarse[i] = a;
      ++out.coupled_count;
    } else {
      out.fine[i] = draw_index(c_fine, uniform01(rng));
      out.coarse[i] = draw_index(c_coarse, uniform01(rng));
    }
  }
  return out;
}

std::span<const Observation> observations_in(std::span<const Observation> data, double t0, double t1) {
  auto first = std::upper_bound(data.begin(), data.end(), t0,
                                [](double t, const Observation& o) { return t < o.time; });
  auto last = std::upper_bound(data.begin(), data.end(), t1,
                               [](double t, const Observation& o) { return t < o.time; });
  return {first, last};
}

PfStepResult pf_step(const PdmpModel& model, const ObservationModel& obs_model, const WeightedEnsemble& ensemble,
                     std::span<const Observation> observations, double t0, double t1, const FlowSpec& flow,
                     std::uint64_t step_seed, std::size_t epoch, const TestFunction& phi,
                     const FilterOptions& options) {
  const std::size_t count = ensemble.size();
  if (count == 0 || ensemble.log_weights.size() != count) throw ContractError("pf_step: malformed ensemble");
  const std::vector<double> times = snapshot_times(observations);
  const std::size_t n_obs = times.size();

  std::vector<HybridState> moved(count);
  std::vector<HybridState> snaps(count * n_obs);
  std::vector<SimCost> costs(count);
  parallel_for(count, options.workers, [&](std::size_t i) {
    Rng rng(derive_seed(step_seed, {i}));
    SimulationResult sim = simulate(model, flow, ensemble.particles[i], t0, t1, rng, times);
    for (std::size_t k = 0; k < n_obs; ++k) snaps[k * count + i] = std::move(sim.snapshots[k]);
    moved[i] = std::move(sim.path.endpoint);
    costs[i] = sim.cost;
  });

  PfStepResult out;
  out.ensemble.log_weights = ensemble.log_weights;
  for (std::size_t k = 0; k < n_obs; ++k) {
    obs_model.add_log_density(std::span<const HybridState>(snaps).subspan(k * count, count), observations[k].value,
                              out.ensemble.log_weights);
  }
  for (const auto& c : costs) out.cost.sim += c;
  out.cost.likelihood_evals = count * n_obs;

  const std::vector<double> w = renormalize(out.ensemble.log_weights, "particle filter");
  out.estimate = {weighted_mean(w, moved, phi), epoch, flow.level ? flow.level->value : 0};
  out.ess = ess(w);
  out.resampled = should_resample(options, out.ess, count);
  if (out.resampled) {
    Rng rng(derive_seed(step_seed, {kResampleStream}));
    const std::vector<std::size_t> ancestors = multinomial_resample(w, count, rng);
    out.ensemble.particles.reserve(count);
    for (std::size_t a : ancestors) out.ensemble.particles.push_back(moved[a]);
    out.ensemble.log_weights.assign(count, -std::log(static_cast<double>(count)));
  } else {
    out.ensemble.particles = std::move(moved);
  }
  return out;
}

CoupledFilterState CoupledFilterState::uniform(const HybridState& x0, std::size_t count) {
  if (count == 0) throw ContractError("coupled filter needs at least one pair");
  CoupledFilterState s;
  s.pairs.assign(count, CoupledPair{x0, x0});
  s.fine_log_weights.assign(count, -std::log(static_cast<double>(count)));
  s.coarse_log_weights = s.fine_log_weights;
  return s;
}

CoupledStepResult coupled_pf_step(const PdmpModel& model, const ObservationModel& obs_model,
                                  const CoupledFilterState& state, std::span<const Observation> observations,
                                  double t0, double t1, Level level, std::uint64_t step_seed, std::size_t epoch,
                                  const TestFunction& phi, const FilterOptions& options) {
  if (level.value < 2) throw ContractError("coupled_pf_step requires level >= 2");
  const std::size_t count = state.size();
  if (count == 0 || state.fine_log_weights.size() != count || state.coarse_log_weights.size() != count) {
    throw ContractError("coupled_pf_step: malformed state");
  }
  const std::vector<double> times = snapshot_times(observations);
  const std::size_t n_obs = times.size();

  std::vector<CoupledPair> moved(count);
  std::vector<HybridState> fine_snaps(count * n_obs), coarse_snaps(count * n_obs);
  std::vector<double> log_r(count);
  std::vector<SimCost> costs(count);
  parallel_for(count, options.workers, [&](std::size_t i) {
    Rng rng(derive_seed(step_seed, {i}));
    CoupledTransition tr = simulate_coupled(model, state.pairs[i], t0, t1, level, rng, times);
    for (std::size_t k = 0; k < n_obs; ++k) {
      fine_snaps[k * count + i] = std::move(tr.fine_snapshots[k]);
      coarse_snaps[k * count + i] = std::move(tr.coarse_snapshots[k]);
    }
    moved[i] = std::move(tr.pair_out);
    log_r[i] = tr.log_weight;
    costs[i] = tr.cost;
  });

  CoupledStepResult out;
  out.state.fine_log_weights = state.fine_log_weights;
  out.state.coarse_log_weights = state.coarse_log_weights;
  for (std::size_t i = 0; i < count; ++i) out.state.coarse_log_weights[i] += log_r[i];
  for (std::size_t k = 0; k < n_obs; ++k) {
    obs_model.add_log_density(std::span<const HybridState>(fine_snaps).subspan(k * count, count),
                              observations[k].value, out.state.fine_log_weights);
    obs_model.add_log_density(std::span<const HybridState>(coarse_snaps).subspan(k * count, count),
                              observations[k].value, out.state.coarse_log_weights);
  }
  for (const auto& c : costs) out.cost.sim += c;
  out.cost.likelihood_evals = 2 * count * n_obs;

  const std::vector<double> wf = renormalize(out.state.fine_log_weights, "coupled fine");
  const std::vector<double> wc = renormalize(out.state.coarse_log_weights, "coupled coarse");

  std::vector<HybridState> fine_x(count), coarse_x(count);
  for (std::size_t i = 0; i < count; ++i) {
    fine_x[i] = moved[i].fine;
    coarse_x[i] = moved[i].coarse;
  }
  out.fine_estimate = {weighted_mean(wf, fine_x, phi), epoch, level.value};
  out.coarse_estimate = {weighted_mean(wc, coarse_x, phi), epoch, level.value - 1};
  out.fine_ess = ess(wf);
  out.coarse_ess = ess(wc);

  switch (options.gate) {
    case EssGate::coarse:
      out.resampled = should_resample(options, out.coarse_ess, count);
      break;
    case EssGate::fine:
      out.resampled = should_resample(options, out.fine_ess, count);
      break;
    case EssGate::either:
      out.resampled = should_resample(options, out.coarse_ess, count) || should_resample(options, out.fine_ess, count);
      break;
  }
  if (out.resampled) {
    Rng rng(derive_seed(step_seed, {kResampleStream}));
    const CoupledAncestors a = maximal_coupling_resample(wf, wc, rng);
    out.coupled_count = a.coupled_count;
    out.state.pairs.resize(count);
    for (std::size_t i = 0; i < count; ++i) out.state.pairs[i] = {fine_x[a.fine[i]], coarse_x[a.coarse[i]]};
    out.state.fine_log_weights.assign(count, -std::log(static_cast<double>(count)));
    out.state.coarse_log_weights = out.state.fine_log_weights;
  } else {
    out.state.pairs = std::move(moved);
  }
  return out;
}

double ml_estimate(const FilterEstimate& level1, std::span<const LevelDifference> differences) {
  std::vector<LevelDifference> sorted(differences.begin(), differences.end());
  std::sort(sorted.begin(), sorted.end(), [](const auto& a, const auto& b) { return a.level < b.level; });
  double total = level1.value;
  int expected = 2;
  for (const auto& d : sorted) {
    if (d.level != expected) throw ContractError("ml_estimate: missing or duplicate level " + std::to_string(expected));
    if (d.epoch != level1.epoch) throw ContractError("ml_estimate: estimates for different epochs");
    total += d.value();
    ++expected;
  }
  return total;
}

FilterRun run_particle_filter(const PdmpModel& model, const ObservationModel& obs_model,
                              std::span<const Observation> data, std::size_t horizon, const FlowSpec& flow,
                              std::size_t particles, const HybridState& x0, std::uint64_t seed,
                              const TestFunction& phi, const FilterOptions& options) {
  FilterRun run;
  WeightedEnsemble ensemble = WeightedEnsemble::uniform(x0, particles);
  for (std::size_t n = 1; n <= horizon; ++n) {
    const double t0 = static_cast<double>(n - 1);
    const double t1 = static_cast<double>(n);
    PfStepResult step = pf_step(model, obs_model, ensemble, observations_in(data, t0, t1), t0, t1, flow,
                                derive_seed(seed, {n}), n, phi, options);
    run.estimates.push_back(step.estimate.value);
    run.resampled.push_back(step.resampled);
    run.cost += step.cost;
    ensemble = std::move(step.ensemble);
  }
  return run;
}

CoupledRun run_coupled_filter(const PdmpModel& model, const ObservationModel& obs_model,
                              std::span<const Observation> data, std::size_t horizon, Level level,
                              std::size_t particles, const HybridState& x0, std::uint64_t seed,
                              const TestFunction& phi, const FilterOptions& options) {
  CoupledRun run;
  CoupledFilterState state = CoupledFilterState::uniform(x0, particles);
  for (std::size_t n = 1; n <= horizon; ++n) {
    const double t0 = static_cast<double>(n - 1);
    const double t1 = static_cast<double>(n);
    CoupledStepResult step = coupled_pf_step(model, obs_model, state, observations_in(data, t0, t1), t0, t1, level,
                                             derive_seed(seed, {n}), n, phi, options);
    run.fine.push_back(step.fine_estimate.value);
    run.coarse.push_back(step.coarse_estimate.value);
    run.resampled.push_back(step.resampled);
    run.cost += step.cost;
    state = std::move(step.state);
  }
  return run;
}

}  // namespace mlpf
