#include <cmath>
#include <limits>
#include <random>
#include <vector>

#include "doctest.h"
#include "mlpf/errors.hpp"
#include "mlpf/kernels.hpp"

using namespace mlpf;

namespace {

std::vector<double> random_vector(std::mt19937_64& gen, std::size_t n, double lo, double hi) {
  std::uniform_real_distribution<double> d(lo, hi);
  std::vector<double> v(n);
  for (auto& x : v) x = d(gen);
  return v;
}

bool close(double a, double b, double rel) {
  if (a == b) return true;
  return std::abs(a - b) <= rel * std::max(std::abs(a), std::abs(b));
}

// Reduction order differs between the two tables, so sums agree to a few ulps per term.
constexpr double kSumTol = 1e-13;
constexpr double kElemTol = 4e-16 * 4;

}  // namespace

TEST_CASE("vector kernels match the scalar reference") {
  if (!kernels::isa_available(kernels::Isa::avx2)) {
    MESSAGE("AVX2 not available; skipping equivalence");
    return;
  }
  const auto& s = kernels::scalar_table();
  const auto& v = kernels::table(kernels::Isa::avx2);
  std::mt19937_64 gen(2024);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = static_cast<std::size_t>(trial % 38);
    const auto a = random_vector(gen, n, -3, 3);
    const auto b = random_vector(gen, n, -3, 3);
    const auto lw = random_vector(gen, n, -700, 0);

    CHECK(close(s.sum_squares(a.data(), n), v.sum_squares(a.data(), n), kSumTol));
    double abs_dot = 0;
    for (std::size_t i = 0; i < n; ++i) abs_dot += std::abs(a[i] * b[i]);
    CHECK(std::abs(s.dot(a.data(), b.data(), n) - v.dot(a.data(), b.data(), n)) <= kSumTol * abs_dot);
    if (n > 0) CHECK(s.max_value(lw.data(), n) == v.max_value(lw.data(), n));

    std::vector<double> o1(n), o2(n);
    CHECK(close(s.min_sum(a.data(), b.data(), n, o1.data()), v.min_sum(a.data(), b.data(), n, o2.data()), kSumTol));
    CHECK(o1 == o2);

    const double s1 = s.exp_shift_sum(lw.data(), n, -1.5, o1.data());
    const double s2 = v.exp_shift_sum(lw.data(), n, -1.5, o2.data());
    CHECK(close(s1, s2, kSumTol));
    for (std::size_t i = 0; i < n; ++i) CHECK(close(o1[i], o2[i], kElemTol));

    std::vector<double> acc1 = b, acc2 = b;
    s.gaussian_loglik_add(a.data(), n, 0.7, 1.0 / 0.4, 0.3, acc1.data());
    v.gaussian_loglik_add(a.data(), n, 0.7, 1.0 / 0.4, 0.3, acc2.data());
    for (std::size_t i = 0; i < n; ++i) {
      // FMA contraction: compare against the size of the terms, not the (possibly cancelling) result.
      const double scale = std::abs(b[i]) + (a[i] - 0.7) * (a[i] - 0.7) / 0.4 + 0.3;
      CHECK(std::abs(acc1[i] - acc2[i]) <= 1e-15 * scale);
    }

    std::vector<double> x1 = a, x2 = a;
    s.scale(x1.data(), n, 0.37);
    v.scale(x2.data(), n, 0.37);
    CHECK(x1 == x2);
  }
}

TEST_CASE("vector exp handles the extremes") {
  if (!kernels::isa_available(kernels::Isa::avx2)) return;
  const auto& v = kernels::table(kernels::Isa::avx2);
  const double ninf = -std::numeric_limits<double>::infinity();
  const std::vector<double> x = {0.0, -709.5, ninf, 709.0, -1e-300, 1e-300, -745.0, ninf};
  std::vector<double> out(x.size());
  v.exp_shift_sum(x.data(), x.size(), 0.0, out.data());
  CHECK(out[0] == 1.0);
  CHECK(out[1] == 0.0);
  CHECK(out[2] == 0.0);
  CHECK(close(out[3], std::exp(709.0), kElemTol));
  CHECK(out[4] == 1.0);
  CHECK(out[5] == 1.0);
  CHECK(out[6] == 0.0);
  CHECK(out[7] == 0.0);
}

TEST_CASE("normalize_log_weights") {
  SUBCASE("normalizes and returns the log total") {
    const std::vector<double> lw = {std::log(1.0), std::log(3.0), -std::numeric_limits<double>::infinity()};
    std::vector<double> w(3);
    CHECK(kernels::normalize_log_weights(lw, w) == doctest::Approx(std::log(4.0)).epsilon(1e-15));
    CHECK(w[0] == doctest::Approx(0.25).epsilon(1e-15));
    CHECK(w[1] == doctest::Approx(0.75).epsilon(1e-15));
    CHECK(w[2] == 0.0);
  }
  SUBCASE("shift keeps huge magnitudes finite") {
    const std::vector<double> lw = {-1e4, -1e4};
    std::vector<double> w(2);
    CHECK(kernels::normalize_log_weights(lw, w) == doctest::Approx(-1e4 + std::log(2.0)));
    CHECK(w[0] == 0.5);
  }
  SUBCASE("all -inf collapses") {
    const double ninf = -std::numeric_limits<double>::infinity();
    const std::vector<double> lw = {ninf, ninf};
    std::vector<double> w = {7, 7};
    CHECK(kernels::normalize_log_weights(lw, w) == ninf);
    CHECK(w[0] == 0.0);
  }
  SUBCASE("+inf or NaN is rejected") {
    std::vector<double> w(2);
    const std::vector<double> a = {0.0, std::numeric_limits<double>::infinity()};
    const std::vector<double> b = {0.0, std::numeric_limits<double>::quiet_NaN()};
    CHECK_THROWS_AS(kernels::normalize_log_weights(a, w), DegenerateWeights);
    CHECK_THROWS_AS(kernels::normalize_log_weights(b, w), DegenerateWeights);
  }
  SUBCASE("size mismatch") {
    std::vector<double> w(1);
    const std::vector<double> lw = {0.0, 0.0};
    CHECK_THROWS_AS(kernels::normalize_log_weights(lw, w), ContractError);
  }
}

TEST_CASE("gaussian_loglik_add wrapper") {
  const std::vector<double> x = {1.0, 2.0};
  std::vector<double> acc = {0.0, 1.0};
  kernels::gaussian_loglik_add(x, 1.0, 0.5, acc);
  const double norm = 0.5 * std::log(2.0 * M_PI * 0.5);
  CHECK(acc[0] == doctest::Approx(-norm));
  CHECK(acc[1] == doctest::Approx(1.0 - 1.0 - norm));
}

TEST_CASE("scalar table is always available") {
  CHECK(kernels::isa_available(kernels::Isa::scalar));
  CHECK(kernels::table(kernels::Isa::scalar).isa == kernels::Isa::scalar);
  CHECK(kernels::isa_name(kernels::active().isa).size() > 0);
}
