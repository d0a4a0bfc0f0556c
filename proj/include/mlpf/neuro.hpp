#pragma once

#include <map>
#include <optional>
#include <string>
#include <string_view>

#include "mlpf/pdmp.hpp"
#include "mlpf/smc.hpp"

namespace mlpf {

using KeyValues = std::map<std::string, double, std::less<>>;

/// Parses `name = value` lines; '#' starts a comment. Throws ConfigError on malformed lines.
KeyValues parse_key_values(std::string_view text);
KeyValues read_key_values(const std::string& path);

/// Stochastic Morris-Lecar: u open potassium channels out of N_n, v = (V).
struct MorrisLecarParams {
  double C_m = 20.0;
  double g_Ca = 4.4;
  double g_K = 8.0;
  double g_L = 2.0;
  double E_Ca = 120.0;
  double E_K = -84.0;
  double E_L = -60.0;
  double I_ext = 100.0;
  double lambda_n = 0.04;
  double V1 = -1.2;
  double V2 = 18.0;
  double V3 = 2.0;
  double V4 = 30.0;
  int N_n = 100;
  double V0 = -20.0;
  double n0 = 0.0;
  double delta = 0.5;
  double tau2 = 0.1;
  /// Box on V over which the rate bound is computed and enforced.
  double V_min = -100.0;
  double V_max = 100.0;
  /// lambda* = rate_margin * sup rate, unless rate_bound is given explicitly.
  double rate_margin = 1.05;
  std::optional<double> rate_bound;

  /// Applies overrides; unknown keys throw ConfigError.
  void apply(const KeyValues& kv);
  void validate() const;
};

/// I_K + I_L conductance model with drive I_ext(t) = drive_amplitude * sin(pi t / drive_period).
struct IkIlParams {
  double g_K = 36.0;
  double g_L = 0.3;
  double E_K = -77.0;
  double E_L = -54.4;
  int N_mK = 100;
  double V0 = -65.0;
  double mK0 = 0.0;
  double drive_amplitude = 10.0;
  double drive_period = 10.0;
  double delta = 0.5;
  double tau2 = 0.2;
  double V_min = -90.0;
  double V_max = -20.0;
  double rate_margin = 1.05;
  std::optional<double> rate_bound;

  void apply(const KeyValues& kv);
  void validate() const;
};

namespace ml {
double m_inf(const MorrisLecarParams& p, double V);
double n_inf(const MorrisLecarParams& p, double V);
double lambda(const MorrisLecarParams& p, double V);
double alpha(const MorrisLecarParams& p, double V);
double beta(const MorrisLecarParams& p, double V);
}  // namespace ml

namespace ikil {
double alpha(double V);
double beta(double V);
}  // namespace ikil

PdmpModel ml_model(const MorrisLecarParams& p = {});
PdmpModel ikil_model(const IkIlParams& p = {});
HybridState ml_initial_state(const MorrisLecarParams& p = {});
HybridState ikil_initial_state(const IkIlParams& p = {});

/// Y | x ~ N(V, tau2) observed every delta time units.
GaussianObservation gaussian_obs(double delta, double tau2);

/// Two modes {0, 1}, zero field, constant rate `rate` under bound `bound`, Q flips u.
/// The continuous part is a single inert coordinate.
PdmpModel two_mode_model(double rate = 1.0, double bound = 2.0);

enum class ModelId { ml, ikil };

ModelId parse_model_id(std::string_view name);
std::string_view model_name(ModelId id);

/// Everything a filter run needs for one of the neuron models.
struct NeuronSetup {
  ModelId id = ModelId::ml;
  PdmpModel model;
  HybridState x0;
  double delta = 0.5;
  double tau2 = 0.1;

  GaussianObservation observation() const { return gaussian_obs(delta, tau2); }
};

NeuronSetup make_setup(ModelId id, const KeyValues& overrides = {});

}  // namespace mlpf
