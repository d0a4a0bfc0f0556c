#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>

#include "mlpf/state.hpp"

namespace mlpf {

/// Right-hand side of the ODE. Writes dv/dt at absolute time t into `dv`; the mode is never changed.
using VectorField = std::function<void(double t, const HybridState& x, std::span<double> dv)>;

/// Closed-form flow: state at time `t` of the solution started at `x` at time `t0`.
using ExactFlow = std::function<HybridState(const HybridState& x, double t0, double t)>;

inline constexpr int kMaxLevel = 40;

/// Discretization level l; the Euler step is 2^-l.
struct Level {
  int value = 0;

  constexpr Level() = default;
  constexpr explicit Level(int l) : value(l) {}
  friend constexpr bool operator==(Level, Level) = default;
  friend constexpr auto operator<=>(Level, Level) = default;
};

/// Step size 2^-l, exact in binary floating point.
double delta(Level level);

/// Forward-Euler discretized flow on a grid anchored at the segment start t0.
///
/// Grid nodes sit at t0 + j*delta; the field is evaluated at node states; a query between
/// nodes returns the linear interpolant (a partial Euler step). Queries must be made in
/// non-decreasing time order: the cursor only moves forward.
class EulerFlow {
 public:
  EulerFlow(const VectorField& field, HybridState start, double t0, Level level);

  /// Discretized state at time t >= t0. The returned reference is valid until the next call.
  const HybridState& at(double t);

  double anchor() const { return t0_; }
  /// Number of field evaluations performed so far.
  std::uint64_t evaluations() const { return evaluations_; }

 private:
  void ensure_derivative();

  const VectorField* field_;
  double t0_;
  double step_;
  std::int64_t node_ = 0;
  HybridState node_state_;
  std::vector<double> derivative_;
  bool derivative_valid_ = false;
  HybridState query_;
  std::uint64_t evaluations_ = 0;
};

/// Flow selector used by the path simulators: the exact flow when the model provides one,
/// otherwise the Euler flow at a level.
struct FlowSpec {
  std::optional<Level> level;

  static FlowSpec exact() { return FlowSpec{}; }
  static FlowSpec at_level(Level l) { return FlowSpec{l}; }
  static FlowSpec at_level(int l) { return FlowSpec{Level(l)}; }
  bool is_exact() const { return !level.has_value(); }
};

/// Segment flow dispatching between the exact and discretized flows.
class SegmentFlow {
 public:
  SegmentFlow(const VectorField& field, const ExactFlow* exact, const FlowSpec& spec, HybridState start,
              double t0);

  const HybridState& at(double t);
  std::uint64_t evaluations() const { return euler_ ? euler_->evaluations() : 0; }

 private:
  std::optional<EulerFlow> euler_;
  const ExactFlow* exact_ = nullptr;
  HybridState start_;
  double t0_ = 0.0;
  HybridState scratch_;
};

/// Euler flow from (x0, t0) to t1 at the given level.
HybridState euler_flow(const VectorField& field, const HybridState& x0, double t0, double t1, Level level);

/// Value of the piecewise-linear discretized flow anchored at t0, evaluated at query_time.
HybridState euler_flow_at(const VectorField& field, const HybridState& x0, double t0, Level level,
                          double query_time);

}  // namespace mlpf
