// Compiled with -mavx2 -mfma; only reached through the dispatch table after a CPU check.

#include <immintrin.h>

#include <algorithm>
#include <cmath>
#include <limits>

#include "mlpf/kernels.hpp"

namespace mlpf::kernels {

namespace {

inline double hsum(__m256d v) {
  __m128d lo = _mm256_castpd256_pd128(v);
  __m128d hi = _mm256_extractf128_pd(v, 1);
  lo = _mm_add_pd(lo, hi);
  __m128d swapped = _mm_unpackhi_pd(lo, lo);
  return _mm_cvtsd_f64(_mm_add_sd(lo, swapped));
}

inline double hmax(__m256d v) {
  __m128d lo = _mm256_castpd256_pd128(v);
  __m128d hi = _mm256_extractf128_pd(v, 1);
  lo = _mm_max_pd(lo, hi);
  __m128d swapped = _mm_unpackhi_pd(lo, lo);
  return _mm_cvtsd_f64(_mm_max_sd(lo, swapped));
}

// exp(x) by x = n ln2 + r, |r| <= ln2/2, degree-13 Taylor polynomial in r. Inputs below
// -708 flush to zero (std::exp would return a subnormal), inputs above 709.7 give +inf.
inline __m256d exp_pd(__m256d x) {
  const __m256d log2e = _mm256_set1_pd(1.4426950408889634074);
  const __m256d ln2_hi = _mm256_set1_pd(6.93147180369123816490e-01);
  const __m256d ln2_lo = _mm256_set1_pd(1.90821492927058770002e-10);
  const __m256d lo_limit = _mm256_set1_pd(-708.0);
  const __m256d hi_limit = _mm256_set1_pd(709.7);

  const __m256d underflow = _mm256_cmp_pd(x, lo_limit, _CMP_LT_OQ);
  const __m256d overflow = _mm256_cmp_pd(x, hi_limit, _CMP_GT_OQ);
  __m256d xc = _mm256_min_pd(_mm256_max_pd(x, lo_limit), hi_limit);

  const __m256d n = _mm256_round_pd(_mm256_mul_pd(xc, log2e), _MM_FROUND_TO_NEAREST_INT | _MM_FROUND_NO_EXC);
  __m256d r = _mm256_fnmadd_pd(n, ln2_hi, xc);
  r = _mm256_fnmadd_pd(n, ln2_lo, r);

  // Horner: sum_{k=0}^{13} r^k / k!
  __m256d p = _mm256_set1_pd(1.0 / 6227020800.0);
  p = _mm256_fmadd_pd(p, r, _mm256_set1_pd(1.0 / 479001600.0));
  p = _mm256_fmadd_pd(p, r, _mm256_set1_pd(1.0 / 39916800.0));
  p = _mm256_fmadd_pd(p, r, _mm256_set1_pd(1.0 / 3628800.0));
  p = _mm256_fmadd_pd(p, r, _mm256_set1_pd(1.0 / 362880.0));
  p = _mm256_fmadd_pd(p, r, _mm256_set1_pd(1.0 / 40320.0));
  p = _mm256_fmadd_pd(p, r, _mm256_set1_pd(1.0 / 5040.0));
  p = _mm256_fmadd_pd(p, r, _mm256_set1_pd(1.0 / 720.0));
  p = _mm256_fmadd_pd(p, r, _mm256_set1_pd(1.0 / 120.0));
  p = _mm256_fmadd_pd(p, r, _mm256_set1_pd(1.0 / 24.0));
  p = _mm256_fmadd_pd(p, r, _mm256_set1_pd(1.0 / 6.0));
  p = _mm256_fmadd_pd(p, r, _mm256_set1_pd(0.5));
  p = _mm256_fmadd_pd(p, r, _mm256_set1_pd(1.0));
  p = _mm256_fmadd_pd(p, r, _mm256_set1_pd(1.0));

  // 2^n through the exponent field, split in two halves so n = 1024 stays representable.
  const __m256d magic = _mm256_set1_pd(0x1.8p52);
  const __m256d n1 = _mm256_floor_pd(_mm256_mul_pd(n, _mm256_set1_pd(0.5)));
  const __m256d n2 = _mm256_sub_pd(n, n1);
  const __m256i bias = _mm256_set1_epi64x(1023);
  auto pow2 = [&](__m256d k) {
    __m256i ki = _mm256_sub_epi64(_mm256_castpd_si256(_mm256_add_pd(k, magic)), _mm256_castpd_si256(magic));
    return _mm256_castsi256_pd(_mm256_slli_epi64(_mm256_add_epi64(ki, bias), 52));
  };
  __m256d result = _mm256_mul_pd(_mm256_mul_pd(p, pow2(n1)), pow2(n2));

  result = _mm256_andnot_pd(underflow, result);
  result = _mm256_blendv_pd(result, _mm256_set1_pd(std::numeric_limits<double>::infinity()), overflow);
  return result;
}

void gaussian_loglik_add(const double* x, std::size_t n, double y, double inv_two_var, double log_norm, double* acc) {
  const __m256d vy = _mm256_set1_pd(y);
  const __m256d vneg = _mm256_set1_pd(-inv_two_var);
  const __m256d vnorm = _mm256_set1_pd(log_norm);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    const __m256d r = _mm256_sub_pd(vy, _mm256_loadu_pd(x + i));
    __m256d a = _mm256_loadu_pd(acc + i);
    a = _mm256_fmadd_pd(_mm256_mul_pd(r, r), vneg, a);
    _mm256_storeu_pd(acc + i, _mm256_sub_pd(a, vnorm));
  }
  for (; i < n; ++i) {
    const double r = y - x[i];
    acc[i] += -(r * r) * inv_two_var - log_norm;
  }
}

double max_value(const double* x, std::size_t n) {
  __m256d m = _mm256_set1_pd(-std::numeric_limits<double>::infinity());
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) m = _mm256_max_pd(m, _mm256_loadu_pd(x + i));
  double out = hmax(m);
  for (; i < n; ++i) out = std::max(out, x[i]);
  return out;
}

double exp_shift_sum(const double* x, std::size_t n, double shift, double* out) {
  const __m256d vs = _mm256_set1_pd(shift);
  __m256d acc = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    const __m256d e = exp_pd(_mm256_sub_pd(_mm256_loadu_pd(x + i), vs));
    _mm256_storeu_pd(out + i, e);
    acc = _mm256_add_pd(acc, e);
  }
  double s = hsum(acc);
  if (i < n) {
    alignas(32) double buf[4] = {-INFINITY, -INFINITY, -INFINITY, -INFINITY};
    for (std::size_t k = 0; i + k < n; ++k) buf[k] = x[i + k] - shift;
    alignas(32) double res[4];
    _mm256_store_pd(res, exp_pd(_mm256_load_pd(buf)));
    for (std::size_t k = 0; i + k < n; ++k) {
      out[i + k] = res[k];
      s += res[k];
    }
  }
  return s;
}

void scale(double* x, std::size_t n, double factor) {
  const __m256d f = _mm256_set1_pd(factor);
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) _mm256_storeu_pd(x + i, _mm256_mul_pd(_mm256_loadu_pd(x + i), f));
  for (; i < n; ++i) x[i] *= factor;
}

double sum_squares(const double* x, std::size_t n) {
  __m256d acc = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    const __m256d v = _mm256_loadu_pd(x + i);
    acc = _mm256_fmadd_pd(v, v, acc);
  }
  double s = hsum(acc);
  for (; i < n; ++i) s += x[i] * x[i];
  return s;
}

double dot(const double* a, const double* b, std::size_t n) {
  __m256d acc = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) acc = _mm256_fmadd_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i), acc);
  double s = hsum(acc);
  for (; i < n; ++i) s += a[i] * b[i];
  return s;
}

double min_sum(const double* a, const double* b, std::size_t n, double* out) {
  __m256d acc = _mm256_setzero_pd();
  std::size_t i = 0;
  for (; i + 4 <= n; i += 4) {
    const __m256d m = _mm256_min_pd(_mm256_loadu_pd(a + i), _mm256_loadu_pd(b + i));
    _mm256_storeu_pd(out + i, m);
    acc = _mm256_add_pd(acc, m);
  }
  double s = hsum(acc);
  for (; i < n; ++i) {
    out[i] = std::min(a[i], b[i]);
    s += out[i];
  }
  return s;
}

constexpr KernelTable kAvx2{Isa::avx2, gaussian_loglik_add, max_value, exp_shift_sum, scale,
                            sum_squares, dot,                 min_sum};

}  // namespace

const KernelTable* avx2_table() { return &kAvx2; }

}  // namespace mlpf::kernels
