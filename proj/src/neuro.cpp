#include "mlpf/neuro.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <limits>
#include <numbers>
#include <sstream>

#include "mlpf/errors.hpp"

namespace mlpf {

namespace {

std::string_view trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

int as_count(std::string_view key, double value) {
  if (!(value >= 1.0) || value != std::floor(value) || value > 1e7) {
    throw ConfigError(std::string(key) + " must be a positive integer");
  }
  return static_cast<int>(value);
}

struct Field {
  std::string_view key;
  double* real = nullptr;
  int* count = nullptr;
  std::optional<double>* optional = nullptr;
};

void apply_fields(std::span<const Field> fields, const KeyValues& kv, std::string_view model) {
  for (const auto& [key, value] : kv) {
    auto it = std::find_if(fields.begin(), fields.end(), [&](const Field& f) { return f.key == key; });
    if (it == fields.end()) throw ConfigError("unknown parameter '" + key + "' for model " + std::string(model));
    if (it->real) *it->real = value;
    if (it->count) *it->count = as_count(key, value);
    if (it->optional) *it->optional = value;
  }
}

/// Birth-death channel model: lambda = (N-u) alpha(V) + u beta(V), Q moves u by one.
struct OpenClose {
  double alpha;
  double beta;
};

struct ChannelKinetics {
  int N;
  /// Opening and closing rates per channel at V, computed together.
  std::function<OpenClose(double)> rates;

  double up(const HybridState& x, const OpenClose& r) const { return (N - x.u) * r.alpha; }
  double down(const HybridState& x, const OpenClose& r) const { return x.u * r.beta; }
  double up(const HybridState& x) const { return up(x, rates(x.v[0])); }
  double down(const HybridState& x) const { return down(x, rates(x.v[0])); }
};

PdmpModel channel_model(std::string name, const ChannelKinetics& k, VectorField field, double v_min, double v_max,
                        double margin, std::optional<double> bound_override) {
  if (!(v_min < v_max)) throw ConfigError(name + ": V_min must be below V_max");
  if (!(margin > 1.0)) throw ConfigError(name + ": rate_margin must exceed 1");

  // lambda is affine in u, so its extremes over u sit at u = 0 (N alpha) and u = N (N beta).
  constexpr int kGrid = 20000;
  double sup = 0.0, inf = std::numeric_limits<double>::infinity(), v_sup = v_min;
  int u_sup = 0;
  for (int j = 0; j <= kGrid; ++j) {
    const double V = v_min + (v_max - v_min) * j / kGrid;
    const OpenClose r = k.rates(V);
    const double a = k.N * r.alpha, b = k.N * r.beta;
    inf = std::min({inf, a, b});
    if (a > sup) sup = a, v_sup = V, u_sup = 0;
    if (b > sup) sup = b, v_sup = V, u_sup = k.N;
  }
  if (!(inf > 0.0)) throw ConfigError(name + ": jump rate not positive on the state box");

  PdmpModel m;
  m.name = std::move(name);
  m.dim = 1;
  m.field = std::move(field);
  m.mode_count = k.N + 1;
  m.state_box = StateBox{{v_min}, {v_max}};
  m.rate_lower = inf;
  m.rate_upper = sup;
  m.rate_bound = bound_override.value_or(margin * sup);
  if (!(m.rate_bound > sup)) {
    throw RateBoundViolation("configured rate bound is below the rate supremum on the state box", 0.0,
                             HybridState{u_sup, {v_sup}}, sup, m.rate_bound);
  }
  m.rate = [k](const HybridState& x) {
    const OpenClose r = k.rates(x.v[0]);
    return k.up(x, r) + k.down(x, r);
  };
  m.jump.sample = [k](const HybridState& pre, double w) {
    const OpenClose r = k.rates(pre.v[0]);
    const double up = k.up(pre, r), down = k.down(pre, r);
    HybridState post = pre;
    post.u += (w * (up + down) < up) ? 1 : -1;
    return post;
  };
  m.jump.density = [k](const HybridState& pre, const HybridState& post) {
    const OpenClose r = k.rates(pre.v[0]);
    const double up = k.up(pre, r), down = k.down(pre, r);
    if (post.u == pre.u + 1) return up / (up + down);
    if (post.u == pre.u - 1) return down / (up + down);
    return 0.0;
  };

  // Ratio bounds of Q between two states sharing u, as V ranges over the box. At u = 0 and
  // u = N the kernel is deterministic, so only interior modes contribute.
  constexpr int kQGrid = 400;
  double q_hi = 1.0;
  for (int u = 1; u < k.N; ++u) {
    double lo_up = 1.0, hi_up = 0.0, lo_dn = 1.0, hi_dn = 0.0;
    for (int j = 0; j <= kQGrid; ++j) {
      const HybridState x{u, {v_min + (v_max - v_min) * j / kQGrid}};
      const OpenClose r = k.rates(x.v[0]);
      const double up = k.up(x, r), down = k.down(x, r);
      const double q_up = up / (up + down), q_dn = down / (up + down);
      lo_up = std::min(lo_up, q_up), hi_up = std::max(hi_up, q_up);
      lo_dn = std::min(lo_dn, q_dn), hi_dn = std::max(hi_dn, q_dn);
    }
    q_hi = std::max({q_hi, hi_up / lo_up, hi_dn / lo_dn});
  }
  m.q_ratio_upper = q_hi;
  m.q_ratio_lower = 1.0 / q_hi;
  m.validate();
  return m;
}

}  // namespace

KeyValues parse_key_values(std::string_view text) {
  KeyValues out;
  std::size_t line_no = 0;
  while (!text.empty()) {
    const auto nl = text.find('\n');
    std::string_view line = text.substr(0, nl);
    text = nl == std::string_view::npos ? std::string_view{} : text.substr(nl + 1);
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) throw ConfigError("line " + std::to_string(line_no) + ": expected name = value");
    const std::string_view key = trim(line.substr(0, eq));
    const std::string_view value = trim(line.substr(eq + 1));
    double x = 0.0;
    const auto [ptr, ec] = std::from_chars(value.data(), value.data() + value.size(), x);
    if (key.empty() || ec != std::errc{} || ptr != value.data() + value.size() || !std::isfinite(x)) {
      throw ConfigError("line " + std::to_string(line_no) + ": bad entry '" + std::string(line) + "'");
    }
    if (!out.emplace(std::string(key), x).second) throw ConfigError("duplicate parameter '" + std::string(key) + "'");
  }
  return out;
}

KeyValues read_key_values(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read parameter file " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_key_values(ss.str());
}

void MorrisLecarParams::apply(const KeyValues& kv) {
  const Field fields[] = {
      {"C_m", &C_m},         {"g_Ca", &g_Ca},     {"g_K", &g_K},
      {"g_L", &g_L},         {"E_Ca", &E_Ca},     {"E_K", &E_K},
      {"E_L", &E_L},         {"I_ext", &I_ext},   {"lambda_n", &lambda_n},
      {"V1", &V1},           {"V2", &V2},         {"V3", &V3},
      {"V4", &V4},           {"N_n", nullptr, &N_n}, {"V0", &V0},
      {"n0", &n0},           {"delta", &delta},   {"tau2", &tau2},
      {"V_min", &V_min},     {"V_max", &V_max},   {"rate_margin", &rate_margin},
      {"rate_bound", nullptr, nullptr, &rate_bound},
  };
  apply_fields(fields, kv, "ml");
  validate();
}

void MorrisLecarParams::validate() const {
  if (!(C_m > 0 && g_Ca > 0 && g_K > 0 && g_L > 0)) throw ConfigError("ml: capacitance and conductances must be positive");
  if (!(lambda_n > 0 && V2 != 0 && V4 != 0)) throw ConfigError("ml: rate parameters invalid");
  if (N_n < 1) throw ConfigError("ml: N_n must be at least 1");
  if (!(n0 >= 0 && n0 <= 1)) throw ConfigError("ml: n0 must lie in [0, 1]");
  if (!(delta > 0 && tau2 > 0)) throw ConfigError("ml: delta and tau2 must be positive");
  if (!(V0 >= V_min && V0 <= V_max)) throw ConfigError("ml: V0 outside [V_min, V_max]");
}

void IkIlParams::apply(const KeyValues& kv) {
  const Field fields[] = {
      {"g_K", &g_K},
      {"g_L", &g_L},
      {"E_K", &E_K},
      {"E_L", &E_L},
      {"N_mK", nullptr, &N_mK},
      {"V0", &V0},
      {"mK0", &mK0},
      {"drive_amplitude", &drive_amplitude},
      {"drive_period", &drive_period},
      {"delta", &delta},
      {"tau2", &tau2},
      {"V_min", &V_min},
      {"V_max", &V_max},
      {"rate_margin", &rate_margin},
      {"rate_bound", nullptr, nullptr, &rate_bound},
  };
  apply_fields(fields, kv, "ikil");
  validate();
}

void IkIlParams::validate() const {
  if (!(g_K > 0 && g_L > 0)) throw ConfigError("ikil: conductances must be positive");
  if (N_mK < 1) throw ConfigError("ikil: N_mK must be at least 1");
  if (!(mK0 >= 0 && mK0 <= 1)) throw ConfigError("ikil: mK0 must lie in [0, 1]");
  if (!(drive_period > 0)) throw ConfigError("ikil: drive_period must be positive");
  if (!(delta > 0 && tau2 > 0)) throw ConfigError("ikil: delta and tau2 must be positive");
  if (!(V0 >= V_min && V0 <= V_max)) throw ConfigError("ikil: V0 outside [V_min, V_max]");
}

namespace ml {
double m_inf(const MorrisLecarParams& p, double V) { return 0.5 * (1.0 + std::tanh((V - p.V1) / p.V2)); }
double n_inf(const MorrisLecarParams& p, double V) { return 0.5 * (1.0 + std::tanh((V - p.V3) / p.V4)); }
double lambda(const MorrisLecarParams& p, double V) { return p.lambda_n * std::cosh((V - p.V3) / (2.0 * p.V4)); }
double alpha(const MorrisLecarParams& p, double V) { return lambda(p, V) * n_inf(p, V); }
double beta(const MorrisLecarParams& p, double V) { return lambda(p, V) * (1.0 - n_inf(p, V)); }
}  // namespace ml

namespace ikil {
double alpha(double V) {
  const double x = V + 40.0;
  if (std::abs(x) < 1e-12) return 1.0;
  return 0.1 * x / -std::expm1(-x / 10.0);
}
double beta(double V) { return 4.0 * std::exp(-(V + 65.0) / 18.0); }
}  // namespace ikil

PdmpModel ml_model(const MorrisLecarParams& p) {
  p.validate();
  // alpha + beta = lambda_n, so one cosh and one tanh give both rates.
  const ChannelKinetics k{p.N_n, [p](double V) {
                            const double lam = ml::lambda(p, V);
                            const double a = lam * ml::n_inf(p, V);
                            return OpenClose{a, lam - a};
                          }};
  VectorField field = [p](double, const HybridState& x, std::span<double> dv) {
    const double V = x.v[0];
    const double n = static_cast<double>(x.u) / p.N_n;
    dv[0] = (-p.g_Ca * ml::m_inf(p, V) * (V - p.E_Ca) - p.g_K * n * (V - p.E_K) - p.g_L * (V - p.E_L) + p.I_ext) /
            p.C_m;
  };
  return channel_model("ml", k, std::move(field), p.V_min, p.V_max, p.rate_margin, p.rate_bound);
}

PdmpModel ikil_model(const IkIlParams& p) {
  p.validate();
  const ChannelKinetics k{p.N_mK, [](double V) { return OpenClose{ikil::alpha(V), ikil::beta(V)}; }};
  VectorField field = [p](double t, const HybridState& x, std::span<double> dv) {
    const double V = x.v[0];
    const double m = static_cast<double>(x.u) / p.N_mK;
    const double drive = p.drive_amplitude * std::sin(std::numbers::pi * t / p.drive_period);
    dv[0] = -p.g_K * m * (V - p.E_K) - p.g_L * (V - p.E_L) + drive;
  };
  return channel_model("ikil", k, std::move(field), p.V_min, p.V_max, p.rate_margin, p.rate_bound);
}

HybridState ml_initial_state(const MorrisLecarParams& p) {
  return {static_cast<int>(std::lround(p.n0 * p.N_n)), {p.V0}};
}

HybridState ikil_initial_state(const IkIlParams& p) {
  return {static_cast<int>(std::lround(p.mK0 * p.N_mK)), {p.V0}};
}

GaussianObservation gaussian_obs(double delta, double tau2) { return GaussianObservation(delta, tau2, 0); }

PdmpModel two_mode_model(double rate, double bound) {
  PdmpModel m;
  m.name = "two_mode";
  m.dim = 1;
  m.field = [](double, const HybridState&, std::span<double> dv) { dv[0] = 0.0; };
  m.rate = [rate](const HybridState&) { return rate; };
  m.rate_bound = bound;
  m.rate_lower = rate;
  m.rate_upper = rate;
  m.jump.sample = [](const HybridState& pre, double) {
    HybridState post = pre;
    post.u = 1 - pre.u;
    return post;
  };
  m.jump.density = [](const HybridState& pre, const HybridState& post) { return post.u == 1 - pre.u ? 1.0 : 0.0; };
  m.mode_count = 2;
  m.exact_flow = [](const HybridState& x, double, double) { return x; };
  m.validate();
  return m;
}

ModelId parse_model_id(std::string_view name) {
  if (name == "ml") return ModelId::ml;
  if (name == "ikil") return ModelId::ikil;
  throw ConfigError("unknown model '" + std::string(name) + "' (expected ml or ikil)");
}

std::string_view model_name(ModelId id) { return id == ModelId::ml ? "ml" : "ikil"; }

NeuronSetup make_setup(ModelId id, const KeyValues& overrides) {
  NeuronSetup s;
  s.id = id;
  if (id == ModelId::ml) {
    MorrisLecarParams p;
    p.apply(overrides);
    s.model = ml_model(p);
    s.x0 = ml_initial_state(p);
    s.delta = p.delta;
    s.tau2 = p.tau2;
  } else {
    IkIlParams p;
    p.apply(overrides);
    s.model = ikil_model(p);
    s.x0 = ikil_initial_state(p);
    s.delta = p.delta;
    s.tau2 = p.tau2;
  }
  return s;
}

}  // namespace mlpf
