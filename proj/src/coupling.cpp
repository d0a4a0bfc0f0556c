#include "mlpf/coupling.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "mlpf/errors.hpp"

namespace mlpf {

namespace {

double coarse_rate(const PdmpModel& model, const HybridState& x, double t) {
  model.check_state(x, t);
  const double r = model.rate(x);
  if (!std::isfinite(r) || r < 0.0 || r > model.rate_bound) {
    throw RateBoundViolation(model.name + ": coarse jump rate exceeds its declared bound", t, x, r, model.rate_bound);
  }
  return r;
}

}  // namespace

CoupledTransition simulate_coupled(const PdmpModel& model, const CoupledPair& pair_in, double t0, double t1,
                                   Level level, Rng& rng, std::span<const double> snapshot_times) {
  if (level.value < 2) throw ContractError("simulate_coupled requires level >= 2");
  if (pair_in.fine.dim() != pair_in.coarse.dim()) throw ContractError("coupled pair dimension mismatch");

  SimulationResult fine = simulate(model, FlowSpec::at_level(level), pair_in.fine, t0, t1, rng, snapshot_times);
  model.check_state(pair_in.coarse, t0);

  CoupledTransition out;
  out.fine_path = std::move(fine.path);
  out.fine_snapshots = std::move(fine.snapshots);
  out.cost = fine.cost;
  out.coarse_path.t0 = t0;
  out.coarse_path.t1 = t1;
  out.coarse_path.segments.push_back({t0, pair_in.coarse});
  out.coarse_snapshots.reserve(snapshot_times.size());

  const PathRecord& rec = fine.record;
  const Level coarse_level(level.value - 1);
  const double bound = model.rate_bound;
  EulerFlow coarse(model.field, pair_in.coarse, t0, coarse_level);
  std::uint64_t retired = 0;
  std::size_t next_snapshot = 0;
  std::size_t next_jump = 0;
  double log_w = 0.0;

  auto flush = [&](double before, bool inclusive) {
    while (next_snapshot < snapshot_times.size()) {
      const double s = snapshot_times[next_snapshot];
      if (inclusive ? s > before : s >= before) break;
      out.coarse_snapshots.push_back(coarse.at(s));
      ++next_snapshot;
    }
  };

  const auto q_at = [&](const HybridState& pre, int mode) {
    return model.mode_in_range(mode) ? model.jump.density(pre, HybridState(mode, pre.v)) : 0.0;
  };

  for (std::size_t c = 0; c < rec.n_star(); ++c) {
    const double t = rec.candidate_times[c];
    flush(t, false);
    const HybridState& pre = coarse.at(t);
    const double rate_c = coarse_rate(model, pre, t);
    const double rate_f = rec.candidate_rates[c];
    const bool accepted = next_jump < rec.n_jumps() && rec.accepted_indices[next_jump] == c;
    if (!accepted) {
      const double ratio = rate_c / bound;
      if (ratio >= 1.0) {
        throw MeasureSingularity(model.name + ": coarse rejection factor is not positive at t=" + std::to_string(t));
      }
      log_w += std::log1p(-ratio) - std::log1p(-rate_f / bound);
      continue;
    }

    const HybridState& pre_f = rec.pre_jump_states[next_jump];
    const HybridState& post_f = rec.jump_states[next_jump];
    double q_coarse = 0.0, q_fine = 0.0;
    HybridState post(pre.u, pre.v);
    if (model.jump.coupled_mode) {
      post.u = model.jump.coupled_mode(pre_f, post_f, pre);
      q_coarse = q_at(pre, post.u);
      q_fine = model.jump.density(pre_f, post_f);
    } else {
      // Shared increment d, reflected to -d when the coarse leg cannot take it. The proposal
      // mass of the coarse move is then the fine mass of every increment mapped onto it.
      int d = post_f.u - pre_f.u;
      if (!(q_at(pre, pre.u + d) > 0.0) && q_at(pre, pre.u - d) > 0.0) d = -d;
      post.u = pre.u + d;
      q_coarse = q_at(pre, post.u);
      q_fine = q_at(pre_f, pre_f.u + d);
      if (!(q_at(pre, pre.u - d) > 0.0)) q_fine += q_at(pre_f, pre_f.u - d);
    }
    log_w += std::log(rate_c) - std::log(rate_f) + std::log(q_coarse) - std::log(q_fine);
    if (!(q_coarse > 0.0)) {
      // The proposal put the coarse leg somewhere its own law never goes: the weight is zero
      // and the leg continues from a valid state drawn under its own kernel.
      log_w = -std::numeric_limits<double>::infinity();
      post = model.jump.sample(pre, rec.jump_uniforms[next_jump]);
    }
    ++next_jump;
    out.coarse_path.segments.push_back({t, post});
    retired += coarse.evaluations();
    coarse = EulerFlow(model.field, std::move(post), t, coarse_level);
  }
  flush(t1, true);
  out.coarse_path.endpoint = coarse.at(t1);
  model.check_state(out.coarse_path.endpoint, t1);

  out.cost.euler_steps += retired + coarse.evaluations();
  out.cost.candidates += rec.n_star();
  out.pair_out = {out.fine_path.endpoint, out.coarse_path.endpoint};
  out.log_weight = log_w;
  out.record = std::move(fine.record);
  return out;
}

WeightEnvelope weight_factor_bounds(const PdmpModel& model) {
  const double lo = model.rate_lower;
  const double hi = model.rate_upper;
  const double star = model.rate_bound;
  const double accept_lo = lo / hi;
  const double reject_lo = (1.0 - hi / star) / (1.0 - lo / star);
  return {std::min(accept_lo, reject_lo) * model.q_ratio_lower,
          std::max(1.0 / accept_lo, 1.0 / reject_lo) * model.q_ratio_upper};
}

WeightEnvelope weight_envelope(const PdmpModel& model, const PathRecord& record) {
  const WeightEnvelope c = weight_factor_bounds(model);
  const double n = static_cast<double>(record.n_star());
  return {std::pow(c.lower, n), std::pow(c.upper, n)};
}

}  // namespace mlpf
