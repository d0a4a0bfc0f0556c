#include "mlpf/pdmp.hpp"

#include <algorithm>
#include <cmath>

#include "mlpf/errors.hpp"

namespace mlpf {

bool StateBox::contains(const HybridState& x) const {
  for (std::size_t i = 0; i < x.v.size(); ++i) {
    if (i < lower.size() && x.v[i] < lower[i]) return false;
    if (i < upper.size() && x.v[i] > upper[i]) return false;
  }
  return true;
}

void PdmpModel::validate() const {
  if (!field) throw ContractError(name + ": missing vector field");
  if (!rate) throw ContractError(name + ": missing rate function");
  if (!jump.sample || !jump.density) throw ContractError(name + ": missing jump kernel");
  if (!(rate_bound > 0.0) || !std::isfinite(rate_bound)) throw ContractError(name + ": rate bound must be positive");
  if (!(rate_lower > 0.0 && rate_lower <= rate_upper && rate_upper < rate_bound)) {
    throw ContractError(name + ": rate bounds must satisfy 0 < lower <= upper < rate_bound");
  }
  if (!(q_ratio_lower > 0.0 && q_ratio_lower <= 1.0 && q_ratio_upper >= 1.0)) {
    throw ContractError(name + ": jump-density ratio bounds must bracket 1");
  }
  if (mode_count && *mode_count < 1) throw ContractError(name + ": mode count must be positive");
  if (state_box && (state_box->lower.size() != dim || state_box->upper.size() != dim)) {
    throw ContractError(name + ": state box dimension mismatch");
  }
}

void PdmpModel::check_state(const HybridState& x, double t) const {
  if (!mode_in_range(x.u)) throw ContractError(name + ": mode " + std::to_string(x.u) + " out of range");
  if (x.dim() != dim) throw ContractError(name + ": state dimension mismatch");
  if (!x.finite()) throw NumericFailure(name + ": non-finite state", t, x);
  if (state_box && !state_box->contains(x)) {
    throw RateBoundViolation(name + ": state left the box on which the rate bound holds", t, x, rate(x), rate_bound);
  }
}

namespace {

double checked_rate(const PdmpModel& model, const HybridState& x, double t) {
  model.check_state(x, t);
  const double r = model.rate(x);
  if (!std::isfinite(r) || r < 0.0 || r > model.rate_bound) {
    throw RateBoundViolation(model.name + ": jump rate exceeds its declared bound", t, x, r, model.rate_bound);
  }
  return r;
}

}  // namespace

SimulationResult simulate(const PdmpModel& model, const FlowSpec& flow, const HybridState& x0, double t0, double t1,
                          Rng& rng, std::span<const double> snapshot_times) {
  if (!(t0 < t1)) throw ContractError("simulate requires t0 < t1");
  model.check_state(x0, t0);

  SimulationResult out;
  out.path.t0 = t0;
  out.path.t1 = t1;
  out.record.t0 = t0;
  out.record.t1 = t1;
  out.path.segments.push_back({t0, x0});
  out.snapshots.reserve(snapshot_times.size());
  const auto expected = static_cast<std::size_t>(1.25 * model.rate_bound * (t1 - t0)) + 8;
  out.record.candidate_times.reserve(expected);
  out.record.candidate_rates.reserve(expected);
  out.record.uniforms.reserve(expected);

  const ExactFlow* exact = model.exact_flow ? &model.exact_flow : nullptr;
  SegmentFlow segment(model.field, exact, flow, x0, t0);
  std::size_t next_snapshot = 0;
  std::uint64_t retired_evaluations = 0;

  auto flush_snapshots = [&](double before, bool inclusive) {
    while (next_snapshot < snapshot_times.size()) {
      const double s = snapshot_times[next_snapshot];
      if (inclusive ? s > before : s >= before) break;
      if (s < t0 || s > t1) throw DomainError("snapshot time outside the simulated interval");
      out.snapshots.push_back(segment.at(s));
      ++next_snapshot;
    }
  };

  double candidate_time = t0;
  for (;;) {
    candidate_time += exponential(rng, model.rate_bound);
    if (candidate_time > t1) break;
    flush_snapshots(candidate_time, false);
    const double w = uniform01(rng);
    const HybridState& pre = segment.at(candidate_time);
    const double r = checked_rate(model, pre, candidate_time);
    out.record.candidate_times.push_back(candidate_time);
    out.record.candidate_rates.push_back(r);
    out.record.uniforms.push_back(w);
    if (w <= r / model.rate_bound) {
      const double ju = uniform01(rng);
      HybridState post = model.jump.sample(pre, ju);
      out.record.accepted_indices.push_back(out.record.candidate_times.size() - 1);
      out.record.jump_uniforms.push_back(ju);
      out.record.pre_jump_states.push_back(pre);
      model.check_state(post, candidate_time);
      out.record.jump_states.push_back(post);
      out.path.segments.push_back({candidate_time, post});
      retired_evaluations += segment.evaluations();
      segment = SegmentFlow(model.field, exact, flow, std::move(post), candidate_time);
    }
  }
  flush_snapshots(t1, true);
  out.path.endpoint = segment.at(t1);
  model.check_state(out.path.endpoint, t1);
  out.cost.euler_steps = retired_evaluations + segment.evaluations();
  out.cost.candidates = out.record.candidate_times.size();
  if (next_snapshot != snapshot_times.size()) throw DomainError("snapshot time outside the simulated interval");
  return out;
}

HybridState evaluate_path(const PdmpPath& path, const PdmpModel& model, const FlowSpec& flow, double query_time) {
  if (query_time < path.t0 || query_time > path.t1 || path.segments.empty()) {
    throw DomainError("evaluate_path: query time outside [t0, t1]");
  }
  auto it = std::upper_bound(path.segments.begin(), path.segments.end(), query_time,
                             [](double t, const PathSegment& s) { return t < s.start; });
  const PathSegment& seg = *std::prev(it);
  if (query_time == seg.start) return seg.state;
  if (query_time == path.t1) return path.endpoint;
  const ExactFlow* exact = model.exact_flow ? &model.exact_flow : nullptr;
  SegmentFlow segment(model.field, exact, flow, seg.state, seg.start);
  return segment.at(query_time);
}

}  // namespace mlpf
