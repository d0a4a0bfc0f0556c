#include <cmath>
#include <vector>

#include "doctest.h"
#include "mlpf/errors.hpp"
#include "mlpf/neuro.hpp"

using namespace mlpf;

namespace {

double field_at(const PdmpModel& m, double t, const HybridState& x) {
  double dv = 0;
  m.field(t, x, std::span<double>(&dv, 1));
  return dv;
}

double q_total(const PdmpModel& m, const HybridState& pre) {
  double total = 0;
  for (int u = 0; u < *m.mode_count; ++u) total += m.jump.density(pre, HybridState{u, pre.v});
  return total;
}

}  // namespace

TEST_CASE("Morris-Lecar rates") {
  const MorrisLecarParams p;
  const PdmpModel m = ml_model(p);
  SUBCASE("all channels closed: only openings") {
    const HybridState x{0, {-20.0}};
    CHECK(m.rate(x) == doctest::Approx(100 * ml::alpha(p, -20.0)).epsilon(1e-14));
    CHECK(m.jump.density(x, HybridState{1, {-20.0}}) == 1.0);
    CHECK(m.jump.sample(x, 0.999).u == 1);
  }
  SUBCASE("V = V3 gives equal opening and closing") {
    CHECK(ml::n_inf(p, 2.0) == 0.5);
    CHECK(ml::alpha(p, 2.0) == doctest::Approx(0.02).epsilon(1e-14));
    CHECK(ml::beta(p, 2.0) == doctest::Approx(0.02).epsilon(1e-14));
    for (int u : {0, 17, 100}) CHECK(m.rate(HybridState{u, {2.0}}) == doctest::Approx(2.0).epsilon(1e-14));
  }
  SUBCASE("field at rest") {
    const double minf = 0.5 * (1 + std::tanh((-20.0 + 1.2) / 18.0));
    const double expect = (100.0 - 4.4 * minf * (-20.0 - 120.0) - 2.0 * (-20.0 + 60.0)) / 20.0;
    CHECK(field_at(m, 0.0, HybridState{0, {-20.0}}) == doctest::Approx(expect).epsilon(1e-14));
    CHECK(expect == doctest::Approx(4.38).epsilon(0.01));
  }
  SUBCASE("rate bound is the margin times the supremum on the box") {
    double sup = 0;
    for (double V = p.V_min; V <= p.V_max; V += 0.01) {
      sup = std::max({sup, 100 * ml::alpha(p, V), 100 * ml::beta(p, V)});
    }
    CHECK(m.rate_bound == doctest::Approx(1.05 * sup).epsilon(1e-6));
    CHECK(m.rate_upper < m.rate_bound);
    CHECK(m.rate_lower > 0.0);
  }
}

TEST_CASE("IKIL rates") {
  CHECK(ikil::alpha(-40.0) == 1.0);
  CHECK(ikil::alpha(-40.0 + 1e-6) == doctest::Approx(1.0).epsilon(1e-6));
  CHECK(ikil::alpha(-40.0 - 1e-6) == doctest::Approx(1.0).epsilon(1e-6));
  CHECK(ikil::beta(-65.0) == 4.0);
  CHECK(ikil::alpha(-30.0) == doctest::Approx(1.0 / (1.0 - std::exp(-1.0))).epsilon(1e-14));
  const PdmpModel m = ikil_model();
  const HybridState x{0, {-65.0}};
  CHECK(m.rate(x) == doctest::Approx(100 * ikil::alpha(-65.0)).epsilon(1e-14));
  CHECK(m.rate(HybridState{100, {-65.0}}) == doctest::Approx(400.0).epsilon(1e-14));
  // Drive is zero at t = 0 and peaks at t = 5.
  const IkIlParams p;
  const double base = field_at(m, 0.0, x);
  CHECK(field_at(m, 5.0, x) == doctest::Approx(base + p.drive_amplitude).epsilon(1e-12));
}

TEST_CASE("jump kernels are probability distributions on neighbours") {
  for (const PdmpModel& m : {ml_model(), ikil_model()}) {
    for (int u : {0, 1, 50, 99, 100}) {
      for (double V : {-80.0, -40.0, -25.0}) {
        const HybridState pre{u, {V}};
        CHECK(q_total(m, pre) == doctest::Approx(1.0).epsilon(1e-14));
        for (double w : {0.0, 0.2, 0.5, 0.8, 0.999999}) {
          const HybridState post = m.jump.sample(pre, w);
          CHECK(std::abs(post.u - u) == 1);
          CHECK(post.v == pre.v);
          CHECK(m.jump.density(pre, post) > 0.0);
          CHECK(m.mode_in_range(post.u));
        }
      }
    }
  }
}

TEST_CASE("simulated paths conserve the mode range and keep positive rates") {
  const NeuronSetup s = make_setup(ModelId::ml);
  for (std::uint64_t i = 0; i < 20; ++i) {
    Rng rng(i);
    const auto r = simulate(s.model, FlowSpec::at_level(5), s.x0, 0.0, 5.0, rng);
    for (const auto& x : r.record.jump_states) {
      CHECK(s.model.mode_in_range(x.u));
      CHECK(s.model.rate(x) > 0.0);
    }
    for (double rate : r.record.candidate_rates) CHECK(rate <= s.model.rate_bound);
  }
}

TEST_CASE("large channel counts follow the mean-field equations") {
  MorrisLecarParams p;
  p.N_n = 1000;
  const PdmpModel m = ml_model(p);
  constexpr int paths = 100;
  constexpr double T = 5.0;
  double mean_v = 0, mean_n = 0;
  for (int i = 0; i < paths; ++i) {
    Rng rng(derive_seed(3, {static_cast<std::uint64_t>(i)}));
    const auto r = simulate(m, FlowSpec::at_level(7), ml_initial_state(p), 0.0, T, rng);
    mean_v += r.path.endpoint.v[0] / paths;
    mean_n += r.path.endpoint.u / 1000.0 / paths;
  }
  // dV/dt from the field with n continuous; dn/dt = alpha (1 - n) - beta n.
  double V = p.V0, n = p.n0;
  const double h = 1e-4;
  for (int k = 0; k < static_cast<int>(T / h); ++k) {
    const double dV = (-p.g_Ca * ml::m_inf(p, V) * (V - p.E_Ca) - p.g_K * n * (V - p.E_K) - p.g_L * (V - p.E_L) +
                       p.I_ext) / p.C_m;
    const double dn = ml::alpha(p, V) * (1 - n) - ml::beta(p, V) * n;
    V += h * dV;
    n += h * dn;
  }
  CHECK(std::abs(mean_v - V) <= 0.05 * std::abs(V));
  CHECK(std::abs(mean_n - n) <= 0.05 * std::max(n, 0.05));
}

TEST_CASE("observation model") {
  const NeuronSetup ml = make_setup(ModelId::ml);
  const GaussianObservation g = ml.observation();
  CHECK(g.gap() == 0.5);
  CHECK(g.variance() == 0.1);
  CHECK(g.log_density(HybridState{4, {-20.0}}, -20.0) == doctest::Approx(-0.5 * std::log(2 * M_PI * 0.1)));
  CHECK(g.log_density(HybridState{4, {-20.0}}, -19.0) == doctest::Approx(-5.0 - 0.5 * std::log(0.2 * M_PI)));
  const NeuronSetup ik = make_setup(ModelId::ikil);
  CHECK(ik.observation().variance() == 0.2);
  CHECK(ik.x0.v[0] == -65.0);
  CHECK(ik.x0.u == 0);
}

TEST_CASE("parameter parsing") {
  SUBCASE("comments, spacing and values") {
    const KeyValues kv = parse_key_values("# header\n g_K = 9.5 \n\nN_n=50 # trailing\n");
    CHECK(kv.size() == 2);
    CHECK(kv.at("g_K") == 9.5);
    CHECK(kv.at("N_n") == 50.0);
  }
  SUBCASE("malformed lines") {
    CHECK_THROWS_AS(parse_key_values("g_K 9.5\n"), ConfigError);
    CHECK_THROWS_AS(parse_key_values("g_K = nine\n"), ConfigError);
    CHECK_THROWS_AS(parse_key_values("g_K = 1\ng_K = 2\n"), ConfigError);
  }
  SUBCASE("unknown key names the model") {
    MorrisLecarParams p;
    try {
      p.apply(parse_key_values("g_Na = 120\n"));
      FAIL("expected ConfigError");
    } catch (const ConfigError& e) {
      CHECK(std::string(e.what()).find("g_Na") != std::string::npos);
    }
  }
  SUBCASE("overrides apply") {
    const NeuronSetup s = make_setup(ModelId::ml, parse_key_values("N_n = 40\ntau2 = 0.3\nV0 = -10\n"));
    CHECK(*s.model.mode_count == 41);
    CHECK(s.tau2 == 0.3);
    CHECK(s.x0.v[0] == -10.0);
  }
  SUBCASE("non-integer channel count") {
    CHECK_THROWS_AS(make_setup(ModelId::ikil, parse_key_values("N_mK = 10.5\n")), ConfigError);
  }
  CHECK(parse_model_id("ml") == ModelId::ml);
  CHECK(parse_model_id("ikil") == ModelId::ikil);
  CHECK_THROWS_AS(parse_model_id("hh"), ConfigError);
  CHECK(model_name(ModelId::ikil) == "ikil");
}

TEST_CASE("explicit rate bounds") {
  SUBCASE("below the supremum fails at construction") {
    MorrisLecarParams p;
    p.rate_bound = 5.0;
    CHECK_THROWS_AS(ml_model(p), RateBoundViolation);
  }
  SUBCASE("above the supremum is used as given") {
    MorrisLecarParams p;
    p.rate_bound = 50.0;
    CHECK(ml_model(p).rate_bound == 50.0);
  }
  SUBCASE("margin must exceed one") {
    IkIlParams p;
    p.rate_margin = 1.0;
    CHECK_THROWS_AS(ikil_model(p), ConfigError);
  }
}

TEST_CASE("two_mode_model") {
  const PdmpModel m = two_mode_model(1.5, 4.0);
  const HybridState x{0, {0.3}};
  CHECK(m.rate(x) == 1.5);
  CHECK(m.rate_bound == 4.0);
  CHECK(m.jump.sample(x, 0.4).u == 1);
  CHECK(m.jump.density(x, HybridState{1, {0.3}}) == 1.0);
  CHECK(m.jump.density(x, x) == 0.0);
  CHECK(field_at(m, 1.0, x) == 0.0);
}
