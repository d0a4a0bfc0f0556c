#include "mlpf/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <limits>
#include <numbers>
#include <string>

#include "mlpf/errors.hpp"

namespace mlpf::kernels {

#if !defined(MLPF_HAVE_AVX2)
const KernelTable* avx2_table() { return nullptr; }
#endif

bool isa_available(Isa isa) {
  switch (isa) {
    case Isa::scalar:
      return true;
    case Isa::avx2:
#if defined(MLPF_HAVE_AVX2) && (defined(__x86_64__) || defined(__i386__))
      return avx2_table() != nullptr && __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
      return false;
#endif
  }
  return false;
}

const KernelTable& table(Isa isa) {
  if (!isa_available(isa)) throw ContractError("instruction set not available: " + std::string(isa_name(isa)));
  return isa == Isa::avx2 ? *avx2_table() : scalar_table();
}

namespace {

const KernelTable& select() {
  if (const char* env = std::getenv("MLPF_SIMD")) {
    const std::string want(env);
    if (want == "scalar") return scalar_table();
  }
  return isa_available(Isa::avx2) ? *avx2_table() : scalar_table();
}

}  // namespace

const KernelTable& active() {
  static const KernelTable& chosen = select();
  return chosen;
}

std::string_view isa_name(Isa isa) { return isa == Isa::avx2 ? "avx2" : "scalar"; }

double normalize_log_weights(std::span<const double> log_weights, std::span<double> w) {
  if (w.size() != log_weights.size()) throw ContractError("normalize_log_weights: size mismatch");
  const KernelTable& k = active();
  const double shift = k.max_value(log_weights.data(), log_weights.size());
  if (!std::isfinite(shift)) {
    if (shift == std::numeric_limits<double>::infinity() || std::isnan(shift)) {
      throw DegenerateWeights("log weights contain +inf or NaN");
    }
    for (double& x : w) x = 0.0;
    return -std::numeric_limits<double>::infinity();
  }
  const double total = k.exp_shift_sum(log_weights.data(), log_weights.size(), shift, w.data());
  // max_value and the vector exp both drop NaN silently.
  if (std::isnan(total) || std::any_of(log_weights.begin(), log_weights.end(), [](double x) { return std::isnan(x); })) {
    throw DegenerateWeights("log weights contain NaN");
  }
  k.scale(w.data(), w.size(), 1.0 / total);
  return shift + std::log(total);
}

double sum_squares(std::span<const double> x) { return active().sum_squares(x.data(), x.size()); }

double dot(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw ContractError("dot: size mismatch");
  return active().dot(a.data(), b.data(), a.size());
}

double min_sum(std::span<const double> a, std::span<const double> b, std::span<double> out) {
  if (a.size() != b.size() || out.size() != a.size()) throw ContractError("min_sum: size mismatch");
  return active().min_sum(a.data(), b.data(), a.size(), out.data());
}

void gaussian_loglik_add(std::span<const double> x, double y, double variance, std::span<double> acc) {
  if (x.size() != acc.size()) throw ContractError("gaussian_loglik_add: size mismatch");
  const double log_norm = 0.5 * std::log(2.0 * std::numbers::pi * variance);
  active().gaussian_loglik_add(x.data(), x.size(), y, 0.5 / variance, log_norm, acc.data());
}

}  // namespace mlpf::kernels
