#include "mlpf/flow.hpp"

#include <cmath>
#include <sstream>

#include "mlpf/errors.hpp"

namespace mlpf {

std::string describe(const HybridState& x) {
  std::ostringstream out;
  out.precision(10);
  out << "(u=" << x.u << ", v=[";
  for (std::size_t i = 0; i < x.v.size(); ++i) out << (i ? ", " : "") << x.v[i];
  out << "])";
  return out.str();
}

double delta(Level level) {
  if (level.value < 0 || level.value > kMaxLevel) {
    throw ContractError("level " + std::to_string(level.value) + " outside [0, " + std::to_string(kMaxLevel) + "]");
  }
  return std::ldexp(1.0, -level.value);
}

EulerFlow::EulerFlow(const VectorField& field, HybridState start, double t0, Level level)
    : field_(&field), t0_(t0), step_(delta(level)), node_state_(std::move(start)) {
  derivative_.assign(node_state_.dim(), 0.0);
  query_ = node_state_;
}

void EulerFlow::ensure_derivative() {
  if (derivative_valid_) return;
  const double t = t0_ + static_cast<double>(node_) * step_;
  (*field_)(t, node_state_, derivative_);
  ++evaluations_;
  for (double d : derivative_) {
    if (!std::isfinite(d)) throw NumericFailure("non-finite vector field", t, node_state_);
  }
  derivative_valid_ = true;
}

const HybridState& EulerFlow::at(double t) {
  double node_time = t0_ + static_cast<double>(node_) * step_;
  if (t < node_time) throw DomainError("EulerFlow queried backwards in time");
  while (t0_ + static_cast<double>(node_ + 1) * step_ <= t) {
    ensure_derivative();
    for (std::size_t i = 0; i < derivative_.size(); ++i) node_state_.v[i] += step_ * derivative_[i];
    ++node_;
    derivative_valid_ = false;
    node_time = t0_ + static_cast<double>(node_) * step_;
  }
  query_.u = node_state_.u;
  if (t == node_time) {
    query_.v = node_state_.v;
    return query_;
  }
  ensure_derivative();
  const double h = t - node_time;
  for (std::size_t i = 0; i < derivative_.size(); ++i) query_.v[i] = node_state_.v[i] + h * derivative_[i];
  return query_;
}

SegmentFlow::SegmentFlow(const VectorField& field, const ExactFlow* exact, const FlowSpec& spec, HybridState start,
                         double t0) {
  if (spec.is_exact()) {
    if (exact == nullptr || !*exact) throw ContractError("exact flow requested but the model provides none");
    exact_ = exact;
    start_ = std::move(start);
    t0_ = t0;
  } else {
    euler_.emplace(field, std::move(start), t0, *spec.level);
  }
}

const HybridState& SegmentFlow::at(double t) {
  if (euler_) return euler_->at(t);
  if (t < t0_) throw DomainError("SegmentFlow queried before its anchor");
  scratch_ = (*exact_)(start_, t0_, t);
  return scratch_;
}

HybridState euler_flow(const VectorField& field, const HybridState& x0, double t0, double t1, Level level) {
  if (t1 < t0) throw ContractError("euler_flow requires t0 <= t1");
  EulerFlow flow(field, x0, t0, level);
  return flow.at(t1);
}

HybridState euler_flow_at(const VectorField& field, const HybridState& x0, double t0, Level level,
                          double query_time) {
  if (query_time < t0) throw ContractError("euler_flow_at requires t0 <= query_time");
  EulerFlow flow(field, x0, t0, level);
  return flow.at(query_time);
}

}  // namespace mlpf
