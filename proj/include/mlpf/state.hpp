#pragma once

#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

namespace mlpf {

/// Hybrid PDMP state: discrete mode plus a continuous vector of fixed dimension.
struct HybridState {
  int u = 0;
  std::vector<double> v;

  HybridState() = default;
  HybridState(int mode, std::vector<double> values) : u(mode), v(std::move(values)) {}

  std::size_t dim() const { return v.size(); }

  bool finite() const {
    for (double x : v) {
      if (!std::isfinite(x)) return false;
    }
    return true;
  }

  friend bool operator==(const HybridState&, const HybridState&) = default;
};

/// L1 distance between the continuous parts plus the mode mismatch.
inline double l1_distance(const HybridState& a, const HybridState& b) {
  double d = std::abs(static_cast<double>(a.u - b.u));
  for (std::size_t i = 0; i < a.v.size() && i < b.v.size(); ++i) d += std::abs(a.v[i] - b.v[i]);
  return d;
}

std::string describe(const HybridState& x);

}  // namespace mlpf
