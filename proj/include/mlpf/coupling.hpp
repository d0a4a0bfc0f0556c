#pragma once

#include <span>
#include <vector>

#include "mlpf/pdmp.hpp"

namespace mlpf {

/// States of the level-l (fine) and level-(l-1) (coarse) processes at a common time.
struct CoupledPair {
  HybridState fine;
  HybridState coarse;
};

/// One coupled interval: the fine path simulated at level l, the coarse path replayed on
/// level l-1 with the same candidates, acceptances and mode transitions, and the log
/// Radon-Nikodym weight correcting the coarse leg to its own law.
struct CoupledTransition {
  CoupledPair pair_out;
  PathRecord record;
  double log_weight = 0.0;
  PdmpPath fine_path;
  PdmpPath coarse_path;
  std::vector<HybridState> fine_snapshots;
  std::vector<HybridState> coarse_snapshots;
  SimCost cost;
};

CoupledTransition simulate_coupled(const PdmpModel& model, const CoupledPair& pair_in, double t0, double t1,
                                   Level level, Rng& rng, std::span<const double> snapshot_times = {});

struct WeightEnvelope {
  double lower = 1.0;
  double upper = 1.0;
};

/// Per-candidate bounds (c_lower, c_upper) on the weight factors implied by the model's rate
/// and jump-density bounds.
WeightEnvelope weight_factor_bounds(const PdmpModel& model);

/// Almost-sure bounds (c_lower^N*, c_upper^N*) on the weight of a record with N* candidates.
WeightEnvelope weight_envelope(const PdmpModel& model, const PathRecord& record);

}  // namespace mlpf
