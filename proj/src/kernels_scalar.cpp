#include <algorithm>
#include <cmath>
#include <limits>

#include "mlpf/kernels.hpp"

namespace mlpf::kernels {

namespace {

void gaussian_loglik_add(const double* x, std::size_t n, double y, double inv_two_var, double log_norm, double* acc) {
  for (std::size_t i = 0; i < n; ++i) {
    const double r = y - x[i];
    acc[i] += -(r * r) * inv_two_var - log_norm;
  }
}

double max_value(const double* x, std::size_t n) {
  double m = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < n; ++i) m = std::max(m, x[i]);
  return m;
}

double exp_shift_sum(const double* x, std::size_t n, double shift, double* out) {
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    out[i] = std::exp(x[i] - shift);
    s += out[i];
  }
  return s;
}

void scale(double* x, std::size_t n, double factor) {
  for (std::size_t i = 0; i < n; ++i) x[i] *= factor;
}

double sum_squares(const double* x, std::size_t n) {
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) s += x[i] * x[i];
  return s;
}

double dot(const double* a, const double* b, std::size_t n) {
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) s += a[i] * b[i];
  return s;
}

double min_sum(const double* a, const double* b, std::size_t n, double* out) {
  double s = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    out[i] = std::min(a[i], b[i]);
    s += out[i];
  }
  return s;
}

constexpr KernelTable kScalar{Isa::scalar, gaussian_loglik_add, max_value, exp_shift_sum, scale,
                              sum_squares,  dot,                 min_sum};

}  // namespace

const KernelTable& scalar_table() { return kScalar; }

}  // namespace mlpf::kernels
