#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "mlpf/flow.hpp"
#include "mlpf/rng.hpp"
#include "mlpf/state.hpp"

namespace mlpf {

using RateFunction = std::function<double(const HybridState&)>;

/// Transition kernel Q, used both as a sampler and as a probability mass on post-jump modes.
struct JumpKernel {
  /// Post-jump state from the pre-jump state and exactly one uniform draw. Never changes v.
  std::function<HybridState(const HybridState& pre, double uniform)> sample;
  /// Q(pre, post); zero for unreachable transitions.
  std::function<double(const HybridState& pre, const HybridState& post)> density;
  /// Mode the coarse leg takes when it copies the fine transition pre_fine -> post_fine.
  /// Defaults to applying the same mode increment to the coarse pre-jump mode, reflected when
  /// the coarse leg cannot take it.
  std::function<int(const HybridState& pre_fine, const HybridState& post_fine, const HybridState& pre_coarse)>
      coupled_mode;
};

/// Per-coordinate bounds on v. The rate bound of a model is only guaranteed on its box.
struct StateBox {
  std::vector<double> lower;
  std::vector<double> upper;

  bool contains(const HybridState& x) const;
};

struct PdmpModel {
  std::string name;
  std::size_t dim = 1;
  VectorField field;
  RateFunction rate;
  /// lambda*: rate of the dominating Poisson process.
  double rate_bound = 1.0;
  /// Lower/upper bounds of the rate over the state box (strictly inside (0, rate_bound)).
  double rate_lower = 0.0;
  double rate_upper = 0.0;
  JumpKernel jump;
  /// Number of modes; modes are 0..mode_count-1. Empty means unbounded.
  std::optional<int> mode_count;
  std::optional<StateBox> state_box;
  /// Optional closed-form flow for FlowSpec::exact().
  ExactFlow exact_flow;
  /// Bounds on ratios Q(coarse transition)/Q(fine transition).
  double q_ratio_lower = 1.0;
  double q_ratio_upper = 1.0;

  /// Checks the static invariants (bounds ordered, kernel present, ...). Throws ContractError.
  void validate() const;
  /// Checks a state against the mode range and box; throws RateBoundViolation when outside the box.
  void check_state(const HybridState& x, double t) const;
  bool mode_in_range(int u) const { return u >= 0 && (!mode_count || u < *mode_count); }
};

/// Auxiliary record of one simulated interval: Poisson candidates, thinning outcomes and jumps.
struct PathRecord {
  double t0 = 0.0;
  double t1 = 0.0;
  std::vector<double> candidate_times;
  /// Rate of the simulated leg at each candidate.
  std::vector<double> candidate_rates;
  /// Thinning uniforms W, one per candidate.
  std::vector<double> uniforms;
  /// Indices into candidate_times of accepted candidates (0-based, strictly increasing).
  std::vector<std::size_t> accepted_indices;
  /// Jump uniforms, one per accepted candidate.
  std::vector<double> jump_uniforms;
  std::vector<HybridState> pre_jump_states;
  std::vector<HybridState> jump_states;

  std::size_t n_star() const { return candidate_times.size(); }
  std::size_t n_jumps() const { return accepted_indices.size(); }
  double jump_time(std::size_t k) const { return candidate_times[accepted_indices[k]]; }
};

struct PathSegment {
  double start = 0.0;
  HybridState state;
};

/// Skeleton of a simulated path: the post-jump state at each segment start plus the endpoint.
struct PdmpPath {
  double t0 = 0.0;
  double t1 = 0.0;
  std::vector<PathSegment> segments;
  HybridState endpoint;
};

/// Operation counts of a simulation.
struct SimCost {
  std::uint64_t euler_steps = 0;
  std::uint64_t candidates = 0;

  SimCost& operator+=(const SimCost& o) {
    euler_steps += o.euler_steps;
    candidates += o.candidates;
    return *this;
  }
};

struct SimulationResult {
  PdmpPath path;
  PathRecord record;
  /// States at the requested snapshot times, in order.
  std::vector<HybridState> snapshots;
  SimCost cost;
};

/// Simulates the process on [t0, t1] by thinning a Poisson(rate_bound) candidate stream.
/// `snapshot_times` must be sorted and inside (t0, t1]; the states there are captured in the same pass.
SimulationResult simulate(const PdmpModel& model, const FlowSpec& flow, const HybridState& x0, double t0, double t1,
                          Rng& rng, std::span<const double> snapshot_times = {});

/// State of a simulated path at query_time in [t0, t1].
HybridState evaluate_path(const PdmpPath& path, const PdmpModel& model, const FlowSpec& flow, double query_time);

}  // namespace mlpf
