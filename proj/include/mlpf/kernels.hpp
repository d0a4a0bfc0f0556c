#pragma once

// Ensemble-wide arithmetic over particle weights: scalar reference implementations plus
// AVX2/FMA variants chosen once at runtime. Set MLPF_SIMD=scalar to force the reference path.

#include <cstddef>
#include <span>
#include <string_view>

namespace mlpf::kernels {

enum class Isa { scalar, avx2 };

struct KernelTable {
  Isa isa;
  /// acc[i] += -(y - x[i])^2 * inv_two_var - log_norm
  void (*gaussian_loglik_add)(const double* x, std::size_t n, double y, double inv_two_var, double log_norm,
                              double* acc);
  double (*max_value)(const double* x, std::size_t n);
  /// out[i] = exp(x[i] - shift); returns the sum of out.
  double (*exp_shift_sum)(const double* x, std::size_t n, double shift, double* out);
  void (*scale)(double* x, std::size_t n, double factor);
  double (*sum_squares)(const double* x, std::size_t n);
  double (*dot)(const double* a, const double* b, std::size_t n);
  /// out[i] = min(a[i], b[i]); returns the sum of out.
  double (*min_sum)(const double* a, const double* b, std::size_t n, double* out);
};

const KernelTable& scalar_table();
/// Null when the binary was built without AVX2 support.
const KernelTable* avx2_table();

bool isa_available(Isa isa);
const KernelTable& table(Isa isa);
/// Table selected at first use from CPU features and MLPF_SIMD.
const KernelTable& active();
std::string_view isa_name(Isa isa);

// Convenience wrappers over the active table.

/// Writes normalized weights exp(lw - max) / sum into `w`; returns log of the unnormalized sum
/// (log sum_i exp(lw_i)). Returns -inf and leaves `w` zero when every entry is -inf.
double normalize_log_weights(std::span<const double> log_weights, std::span<double> w);
double sum_squares(std::span<const double> x);
double dot(std::span<const double> a, std::span<const double> b);
double min_sum(std::span<const double> a, std::span<const double> b, std::span<double> out);
void gaussian_loglik_add(std::span<const double> x, double y, double variance, std::span<double> acc);

}  // namespace mlpf::kernels
