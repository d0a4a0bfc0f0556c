#include "mlpf/bench.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <random>
#include <sstream>

#include "json.hpp"
#include "mlpf/errors.hpp"
#include "mlpf/parallel.hpp"

namespace mlpf {

namespace {

// Stream tags under the base seed.
constexpr std::uint64_t kDataPath = 0x5101;
constexpr std::uint64_t kDataNoise = 0x5102;
constexpr std::uint64_t kTruth = 0x5103;
constexpr std::uint64_t kSingleLevel = 0x5201;
constexpr std::uint64_t kCoupledLevel = 0x5202;

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

std::string_view trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

std::vector<std::string_view> split(std::string_view s, char sep) {
  std::vector<std::string_view> out;
  for (;;) {
    const auto pos = s.find(sep);
    out.push_back(trim(s.substr(0, pos)));
    if (pos == std::string_view::npos) return out;
    s = s.substr(pos + 1);
  }
}

template <typename T>
T parse_number(std::string_view key, std::string_view s) {
  T x{};
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), x);
  if (ec != std::errc{} || ptr != s.data() + s.size()) {
    throw ConfigError("bad value '" + std::string(s) + "' for " + std::string(key));
  }
  if constexpr (std::is_floating_point_v<T>) {
    if (!std::isfinite(x)) throw ConfigError("non-finite value for " + std::string(key));
  }
  return x;
}

std::vector<int> parse_levels(std::string_view s) {
  std::vector<int> out;
  if (const auto dots = s.find(".."); dots != std::string_view::npos) {
    const int a = parse_number<int>("levels", trim(s.substr(0, dots)));
    const int b = parse_number<int>("levels", trim(s.substr(dots + 2)));
    if (a > b) throw ConfigError("levels range must be ascending");
    for (int l = a; l <= b; ++l) out.push_back(l);
    return out;
  }
  for (auto part : split(s, ',')) out.push_back(parse_number<int>("levels", part));
  return out;
}

std::vector<double> parse_reals(std::string_view key, std::string_view s) {
  std::vector<double> out;
  if (trim(s).empty()) return out;
  for (auto part : split(s, ',')) out.push_back(parse_number<double>(key, part));
  return out;
}

std::string fmt(double x) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

std::string join_levels(const std::vector<int>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
  return s;
}

std::string join_reals(const std::vector<double>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + fmt(v[i]);
  return s;
}

std::size_t checked_count(double x, std::size_t min_particles, std::size_t max_particles, int level) {
  const double c = std::ceil(x);
  if (!(c <= static_cast<double>(max_particles))) {
    throw BudgetError("particle count " + fmt(c) + " at level " + std::to_string(level) + " exceeds the budget of " +
                          std::to_string(max_particles),
                      level);
  }
  return std::max(min_particles, static_cast<std::size_t>(c));
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

constexpr const char* kColumns =
    "method,model,level,epsilon,replicate,epoch,estimate,sq_error,cost_euler,cost_candidates,cost_total,seed";

}  // namespace

std::string_view method_name(Method m) { return m == Method::pf ? "pf" : "mlpf"; }

std::map<std::string, std::string> parse_settings(std::string_view text) {
  std::map<std::string, std::string> out;
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
    std::string key(trim(line.substr(0, eq)));
    if (key.empty()) throw ConfigError("line " + std::to_string(line_no) + ": empty name");
    if (!out.emplace(key, std::string(trim(line.substr(eq + 1)))).second) {
      throw ConfigError("duplicate setting '" + key + "'");
    }
  }
  return out;
}

void ExperimentConfig::apply(const std::map<std::string, std::string>& settings) {
  for (const auto& [key, value] : settings) {
    if (key == "model") {
      model = parse_model_id(value);
    } else if (key == "params") {
      params_file = value;
    } else if (key.starts_with("param.")) {
      params[key.substr(6)] = parse_number<double>(key, value);
    } else if (key == "levels") {
      levels = parse_levels(value);
    } else if (key == "eps") {
      eps = parse_reals(key, value);
    } else if (key == "replicates") {
      replicates = parse_number<std::size_t>(key, value);
    } else if (key == "horizon") {
      horizon = parse_number<std::size_t>(key, value);
    } else if (key == "data_level") {
      data_level = parse_number<int>(key, value);
    } else if (key == "truth_level") {
      truth_level = parse_number<int>(key, value);
    } else if (key == "truth_replicates") {
      truth_replicates = parse_number<std::size_t>(key, value);
    } else if (key == "truth_multiplier") {
      truth_multiplier = parse_number<double>(key, value);
    } else if (key == "truth_particles") {
      truth_particles = parse_number<std::size_t>(key, value);
    } else if (key == "seed") {
      seed = parse_number<std::uint64_t>(key, value);
    } else if (key == "resampling") {
      if (value == "adaptive") resampling = ResamplingMode::adaptive;
      else if (value == "always") resampling = ResamplingMode::always;
      else throw ConfigError("resampling must be adaptive or always");
    } else if (key == "ess_gate") {
      if (value == "coarse") gate = EssGate::coarse;
      else if (value == "fine") gate = EssGate::fine;
      else if (value == "either") gate = EssGate::either;
      else throw ConfigError("ess_gate must be coarse, fine or either");
    } else if (key == "ess_fraction") {
      ess_fraction = parse_number<double>(key, value);
    } else if (key == "K") {
      particle_constant = parse_number<double>(key, value);
    } else if (key == "pf_K") {
      pf_constant = parse_number<double>(key, value);
    } else if (key == "min_particles") {
      min_particles = parse_number<std::size_t>(key, value);
    } else if (key == "max_particles") {
      max_particles = parse_number<std::size_t>(key, value);
    } else if (key == "workers") {
      workers = parse_number<std::size_t>(key, value);
    } else if (key == "phi") {
      phi = value;
    } else {
      throw ConfigError("unknown setting '" + key + "'");
    }
  }
}

void ExperimentConfig::validate() const {
  if (levels.empty() && eps.empty()) throw ConfigError("no levels or eps given");
  for (std::size_t i = 0; i < levels.size(); ++i) {
    if (levels[i] < 1 || levels[i] > kMaxLevel) throw ConfigError("levels must lie in 1.." + std::to_string(kMaxLevel));
    if (i > 0 && levels[i] <= levels[i - 1]) throw ConfigError("levels must be strictly ascending");
  }
  for (double e : eps) {
    if (!(e > 0.0 && e < 1.0)) throw ConfigError("eps values must lie in (0, 1)");
  }
  if (replicates < 2) throw ConfigError("replicates must be at least 2");
  if (horizon < 1) throw ConfigError("horizon must be at least 1");
  if (truth_replicates < 1) throw ConfigError("truth_replicates must be at least 1");
  if (!(truth_multiplier > 0.0)) throw ConfigError("truth_multiplier must be positive");
  if (!(particle_constant > 0.0 && pf_constant > 0.0)) throw ConfigError("particle constants must be positive");
  if (!(ess_fraction > 0.0 && ess_fraction <= 1.0)) throw ConfigError("ess_fraction must lie in (0, 1]");
  if (min_particles < 1 || max_particles < min_particles) throw ConfigError("invalid particle limits");
  if (phi != "V" && phi != "u") throw ConfigError("phi must be V or u");
  if (truth_level < 0 || truth_level > kMaxLevel || data_level < 0 || data_level > kMaxLevel) {
    throw ConfigError("truth_level and data_level must lie in 0.." + std::to_string(kMaxLevel));
  }
}

std::vector<double> ExperimentConfig::epsilons() const {
  if (!eps.empty()) return eps;
  std::vector<double> out;
  for (int l : levels) out.push_back(delta(Level(l)));
  return out;
}

int ExperimentConfig::resolved_truth_level() const {
  if (truth_level > 0) return truth_level;
  int finest = 1;
  for (double e : epsilons()) finest = std::max(finest, finest_level(e));
  return std::min(kMaxLevel, finest + 2);
}

int ExperimentConfig::resolved_data_level() const { return data_level > 0 ? data_level : resolved_truth_level(); }

FilterOptions ExperimentConfig::filter_options() const {
  FilterOptions o;
  o.resampling = resampling;
  o.gate = gate;
  o.ess_fraction = ess_fraction;
  o.workers = 1;
  return o;
}

NeuronSetup ExperimentConfig::setup() const {
  KeyValues kv;
  if (!params_file.empty()) kv = read_key_values(params_file);
  for (const auto& [k, v] : params) kv[k] = v;
  return make_setup(model, kv);
}

TestFunction ExperimentConfig::test_function() const {
  if (phi == "u") return [](const HybridState& x) { return static_cast<double>(x.u); };
  return [](const HybridState& x) { return x.v[0]; };
}

std::string ExperimentConfig::to_text() const {
  std::ostringstream os;
  os << "model = " << model_name(model) << "\n";
  os << "params = " << params_file << "\n";
  for (const auto& [k, v] : params) os << "param." << k << " = " << fmt(v) << "\n";
  os << "levels = " << join_levels(levels) << "\n";
  os << "eps = " << join_reals(eps) << "\n";
  os << "replicates = " << replicates << "\n";
  os << "horizon = " << horizon << "\n";
  os << "data_level = " << data_level << "\n";
  os << "truth_level = " << truth_level << "\n";
  os << "truth_replicates = " << truth_replicates << "\n";
  os << "truth_multiplier = " << fmt(truth_multiplier) << "\n";
  os << "truth_particles = " << truth_particles << "\n";
  os << "seed = " << seed << "\n";
  os << "resampling = " << (resampling == ResamplingMode::adaptive ? "adaptive" : "always") << "\n";
  os << "ess_gate = " << (gate == EssGate::coarse ? "coarse" : gate == EssGate::fine ? "fine" : "either") << "\n";
  os << "ess_fraction = " << fmt(ess_fraction) << "\n";
  os << "K = " << fmt(particle_constant) << "\n";
  os << "pf_K = " << fmt(pf_constant) << "\n";
  os << "min_particles = " << min_particles << "\n";
  os << "max_particles = " << max_particles << "\n";
  os << "workers = " << workers << "\n";
  os << "phi = " << phi << "\n";
  return os.str();
}

ExperimentConfig read_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  ExperimentConfig c;
  c.apply(parse_settings(ss.str()));
  c.validate();
  return c;
}

std::string config_template() {
  std::string out =
      "# Experiment configuration: one `name = value` per line, '#' starts a comment.\n"
      "# model: ml | ikil. params: flat parameter file; param.<name> overrides one entry.\n"
      "# levels: list or range a..b; eps overrides the accuracy grid (default 2^-l per level).\n"
      "# data_level / truth_level / truth_particles: 0 selects the automatic choice.\n"
      "# K and pf_K scale the multilevel and single-level particle counts.\n";
  out += ExperimentConfig{}.to_text();
  return out;
}

int finest_level(double eps) {
  if (!(eps > 0.0)) throw ContractError("eps must be positive");
  for (int l = 1; l <= kMaxLevel; ++l) {
    if (delta(Level(l)) <= eps) return l;
  }
  throw ContractError("eps below the finest supported level");
}

std::vector<std::size_t> allocate_particles(double eps, int L, double K, std::size_t min_particles,
                                            std::size_t max_particles) {
  if (!(eps > 0.0) || L < 1 || !(K > 0.0)) throw ContractError("allocate_particles: invalid arguments");
  std::vector<std::size_t> s;
  s.reserve(static_cast<std::size_t>(L));
  for (int l = 1; l <= L; ++l) {
    s.push_back(checked_count(K / (eps * eps) * delta(Level(l)) * L, min_particles, max_particles, l));
  }
  return s;
}

std::size_t pf_particles(double eps, double K, std::size_t min_particles, std::size_t max_particles, int level) {
  if (!(eps > 0.0) || !(K > 0.0)) throw ContractError("pf_particles: invalid arguments");
  return checked_count(K / (eps * eps), min_particles, max_particles, level);
}

Dataset generate_data(const NeuronSetup& setup, int level, std::size_t horizon, std::uint64_t seed) {
  if (horizon < 1) throw ContractError("generate_data: horizon must be at least 1");
  const double per_unit = 1.0 / setup.delta;
  const auto steps = static_cast<std::size_t>(std::llround(per_unit));
  if (std::abs(per_unit - static_cast<double>(steps)) > 1e-9 || steps == 0) {
    throw ConfigError("observation gap must divide the unit epoch");
  }
  Dataset d;
  d.seed = seed;
  d.level = level;
  const FlowSpec flow = FlowSpec::at_level(level);
  HybridState x = setup.x0;
  for (std::size_t n = 1; n <= horizon; ++n) {
    std::vector<double> times;
    for (std::size_t k = 1; k <= steps; ++k) times.push_back(static_cast<double>((n - 1) * steps + k) * setup.delta);
    Rng rng(derive_seed(seed, {kDataPath, n}));
    SimulationResult sim =
        simulate(setup.model, flow, x, static_cast<double>(n - 1), static_cast<double>(n), rng, times);
    for (std::size_t k = 0; k < steps; ++k) {
      d.observations.push_back({times[k], 0.0});
      d.latent.push_back(sim.snapshots[k]);
    }
    x = sim.path.endpoint;
  }
  Rng noise(derive_seed(seed, {kDataNoise}));
  std::normal_distribution<double> z(0.0, 1.0);
  const double sd = std::sqrt(setup.tau2);
  for (std::size_t k = 0; k < d.observations.size(); ++k) d.observations[k].value = d.latent[k].v[0] + sd * z(noise);
  return d;
}

std::size_t truth_particle_count(const ExperimentConfig& config) {
  if (config.truth_particles > 0) return config.truth_particles;
  std::size_t largest = 0;
  for (double e : config.epsilons()) {
    const int L = finest_level(e);
    largest = std::max(largest, pf_particles(e, config.pf_constant, config.min_particles,
                                             std::numeric_limits<std::size_t>::max(), L));
    const auto s = allocate_particles(e, L, config.particle_constant, config.min_particles,
                                      std::numeric_limits<std::size_t>::max());
    largest = std::max(largest, *std::max_element(s.begin(), s.end()));
  }
  return static_cast<std::size_t>(std::ceil(config.truth_multiplier * static_cast<double>(largest)));
}

std::vector<double> ground_truth(const NeuronSetup& setup, const ExperimentConfig& config, const Dataset& data) {
  const std::size_t S = truth_particle_count(config);
  const FlowSpec flow = FlowSpec::at_level(config.resolved_truth_level());
  const GaussianObservation obs = setup.observation();
  const TestFunction phi = config.test_function();
  std::vector<std::vector<double>> runs(config.truth_replicates);
  parallel_for(config.truth_replicates, config.workers, [&](std::size_t r) {
    runs[r] = run_particle_filter(setup.model, obs, data.observations, config.horizon, flow, S, setup.x0,
                                  derive_seed(config.seed, {kTruth, r}), phi, config.filter_options())
                  .estimates;
  });
  std::vector<double> truth(config.horizon, 0.0);
  for (const auto& run : runs) {
    for (std::size_t n = 0; n < config.horizon; ++n) truth[n] += run[n] / static_cast<double>(runs.size());
  }
  return truth;
}

std::uint64_t replicate_seed(std::uint64_t base, Method method, std::size_t setting, std::size_t replicate) {
  return derive_seed(base, {static_cast<std::uint64_t>(method) + 1, setting, replicate});
}

namespace {

std::vector<ResultRow> make_rows(const NeuronSetup& setup, Method method, int level, double epsilon,
                                 std::size_t replicate, std::uint64_t seed, const std::vector<double>& estimates,
                                 const CostCounter& cost, std::span<const double> truth) {
  std::vector<ResultRow> rows;
  rows.reserve(estimates.size());
  for (std::size_t n = 0; n < estimates.size(); ++n) {
    ResultRow r;
    r.method = method_name(method);
    r.model = model_name(setup.id);
    r.level = level;
    r.epsilon = epsilon;
    r.replicate = replicate;
    r.epoch = n + 1;
    r.estimate = estimates[n];
    if (n < truth.size()) {
      const double e = estimates[n] - truth[n];
      r.sq_error = e * e;
    } else {
      r.sq_error = kNaN;
    }
    r.cost_euler = cost.euler_steps;
    r.cost_candidates = cost.poisson_candidates;
    r.cost_total = cost.total();
    r.seed = seed;
    rows.push_back(std::move(r));
  }
  return rows;
}

}  // namespace

std::vector<ResultRow> run_pf(const NeuronSetup& setup, const ExperimentConfig& config, const Dataset& data,
                              int level, std::size_t S, double epsilon, std::size_t replicate, std::uint64_t seed,
                              std::span<const double> truth) {
  const GaussianObservation obs = setup.observation();
  FilterRun run = run_particle_filter(setup.model, obs, data.observations, config.horizon, FlowSpec::at_level(level),
                                      S, setup.x0, derive_seed(seed, {kSingleLevel, static_cast<std::uint64_t>(level)}),
                                      config.test_function(), config.filter_options());
  CostCounter cost;
  cost += run.cost;
  return make_rows(setup, Method::pf, level, epsilon, replicate, seed, run.estimates, cost, truth);
}

std::vector<ResultRow> run_mlpf(const NeuronSetup& setup, const ExperimentConfig& config, const Dataset& data,
                                double eps, std::size_t replicate, std::uint64_t seed, std::span<const double> truth) {
  const int L = finest_level(eps);
  const std::vector<std::size_t> S =
      allocate_particles(eps, L, config.particle_constant, config.min_particles, config.max_particles);
  const GaussianObservation obs = setup.observation();
  const TestFunction phi = config.test_function();
  const FilterOptions options = config.filter_options();

  CostCounter cost;
  FilterRun base = run_particle_filter(setup.model, obs, data.observations, config.horizon, FlowSpec::at_level(1),
                                       S[0], setup.x0, derive_seed(seed, {kSingleLevel, 1}), phi, options);
  cost += base.cost;

  std::vector<CoupledRun> coupled;
  for (int l = 2; l <= L; ++l) {
    coupled.push_back(run_coupled_filter(setup.model, obs, data.observations, config.horizon, Level(l),
                                         S[static_cast<std::size_t>(l - 1)], setup.x0,
                                         derive_seed(seed, {kCoupledLevel, static_cast<std::uint64_t>(l)}), phi,
                                         options));
    cost += coupled.back().cost;
  }

  std::vector<double> estimates(config.horizon);
  for (std::size_t n = 0; n < config.horizon; ++n) {
    std::vector<LevelDifference> diffs;
    for (std::size_t k = 0; k < coupled.size(); ++k) {
      diffs.push_back({static_cast<int>(k) + 2, n + 1, coupled[k].fine[n], coupled[k].coarse[n]});
    }
    estimates[n] = ml_estimate({base.estimates[n], n + 1, 1}, diffs);
  }
  return make_rows(setup, Method::mlpf, L, eps, replicate, seed, estimates, cost, truth);
}

std::vector<ResultRow> run_sweep(Method method, const NeuronSetup& setup, const ExperimentConfig& config,
                                 const Dataset& data, std::span<const double> truth) {
  const std::vector<double> eps = config.epsilons();
  // Check every allocation up front so a budget failure happens before any work.
  for (double e : eps) {
    const int L = finest_level(e);
    if (method == Method::pf) {
      pf_particles(e, config.pf_constant, config.min_particles, config.max_particles, L);
    } else {
      allocate_particles(e, L, config.particle_constant, config.min_particles, config.max_particles);
    }
  }
  const std::size_t tasks = eps.size() * config.replicates;
  std::vector<std::vector<ResultRow>> slots(tasks);
  parallel_for(tasks, config.workers, [&](std::size_t t) {
    const std::size_t setting = t / config.replicates;
    const std::size_t rep = t % config.replicates;
    const double e = eps[setting];
    const std::uint64_t seed = replicate_seed(config.seed, method, setting, rep);
    if (method == Method::pf) {
      const int level = finest_level(e);
      const std::size_t S = pf_particles(e, config.pf_constant, config.min_particles, config.max_particles, level);
      slots[t] = run_pf(setup, config, data, level, S, e, rep, seed, truth);
    } else {
      slots[t] = run_mlpf(setup, config, data, e, rep, seed, truth);
    }
  });
  std::vector<ResultRow> rows;
  for (auto& s : slots) rows.insert(rows.end(), s.begin(), s.end());
  return rows;
}

RateFit estimate_rate(std::span<const RatePoint> points) {
  std::vector<double> x, y;
  for (const auto& p : points) {
    if (p.cost > 0.0 && p.mse > 0.0 && std::isfinite(p.cost) && std::isfinite(p.mse)) {
      x.push_back(std::log10(p.cost));
      y.push_back(std::log10(p.mse));
    }
  }
  const std::size_t n = x.size();
  if (n < 3) throw InsufficientData("rate fit needs at least 3 points with positive cost and MSE");
  double mx = 0, my = 0;
  for (std::size_t i = 0; i < n; ++i) mx += x[i], my += y[i];
  mx /= n;
  my /= n;
  double sxx = 0, sxy = 0;
  for (std::size_t i = 0; i < n; ++i) {
    sxx += (x[i] - mx) * (x[i] - mx);
    sxy += (x[i] - mx) * (y[i] - my);
  }
  if (!(sxx > 0.0)) throw InsufficientData("rate fit needs at least two distinct costs");
  RateFit fit;
  fit.slope = sxy / sxx;
  fit.intercept = my - fit.slope * mx;
  fit.points = n;
  double rss = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const double r = y[i] - fit.intercept - fit.slope * x[i];
    rss += r * r;
  }
  fit.slope_se = n > 2 ? std::sqrt(rss / static_cast<double>(n - 2) / sxx) : 0.0;
  return fit;
}

std::vector<RatePoint> rate_points(std::span<const ResultRow> rows, std::string_view method) {
  struct Acc {
    double se = 0, cost = 0;
    std::size_t n = 0;
  };
  std::vector<std::pair<std::tuple<int, double, std::size_t>, Acc>> groups;
  for (const auto& r : rows) {
    if (r.method != method) continue;
    const auto key = std::make_tuple(r.level, r.epsilon, r.epoch);
    auto it = std::find_if(groups.begin(), groups.end(), [&](const auto& g) { return g.first == key; });
    if (it == groups.end()) {
      groups.push_back({key, {}});
      it = groups.end() - 1;
    }
    it->second.se += r.sq_error;
    it->second.cost += static_cast<double>(r.cost_total);
    ++it->second.n;
  }
  std::vector<RatePoint> out;
  for (const auto& [key, a] : groups) out.push_back({a.cost / a.n, a.se / a.n});
  return out;
}

std::vector<AggregateRow> aggregate(std::span<const ResultRow> rows) {
  struct Acc {
    AggregateRow row;
    double se = 0, cost = 0;
    std::size_t n = 0;
    std::vector<std::size_t> reps;
  };
  std::vector<Acc> groups;
  for (const auto& r : rows) {
    auto it = std::find_if(groups.begin(), groups.end(), [&](const Acc& g) {
      return g.row.method == r.method && g.row.model == r.model && g.row.level == r.level &&
             g.row.epsilon == r.epsilon;
    });
    if (it == groups.end()) {
      Acc a;
      a.row.method = r.method;
      a.row.model = r.model;
      a.row.level = r.level;
      a.row.epsilon = r.epsilon;
      groups.push_back(std::move(a));
      it = groups.end() - 1;
    }
    it->se += r.sq_error;
    it->cost += static_cast<double>(r.cost_total);
    ++it->n;
    if (std::find(it->reps.begin(), it->reps.end(), r.replicate) == it->reps.end()) it->reps.push_back(r.replicate);
  }
  std::vector<AggregateRow> out;
  for (auto& g : groups) {
    g.row.replicates = g.reps.size();
    g.row.mean_mse = g.se / g.n;
    g.row.mean_cost = g.cost / g.n;
    out.push_back(g.row);
  }
  return out;
}

Format parse_format(std::string_view s) {
  if (s == "csv") return Format::csv;
  if (s == "json") return Format::json;
  throw ConfigError("format must be csv or json");
}

std::string format_results(std::span<const ResultRow> rows, Format format, std::span<const std::string> header) {
  if (format == Format::json) {
    nlohmann::ordered_json doc;
    doc["header"] = nlohmann::json::array();
    for (const auto& h : header) doc["header"].push_back(h);
    doc["rows"] = nlohmann::json::array();
    for (const auto& r : rows) {
      nlohmann::ordered_json j;
      j["method"] = r.method;
      j["model"] = r.model;
      j["level"] = r.level;
      j["epsilon"] = r.epsilon;
      j["replicate"] = r.replicate;
      j["epoch"] = r.epoch;
      j["estimate"] = r.estimate;
      j["sq_error"] = r.sq_error;
      j["cost_euler"] = r.cost_euler;
      j["cost_candidates"] = r.cost_candidates;
      j["cost_total"] = r.cost_total;
      j["seed"] = r.seed;
      doc["rows"].push_back(std::move(j));
    }
    return doc.dump(1) + "\n";
  }
  std::string out;
  for (const auto& h : header) out += "# " + h + "\n";
  out += kColumns;
  out += "\n";
  for (const auto& r : rows) {
    out += r.method + "," + r.model + "," + std::to_string(r.level) + "," + fmt(r.epsilon) + "," +
           std::to_string(r.replicate) + "," + std::to_string(r.epoch) + "," + fmt(r.estimate) + "," +
           fmt(r.sq_error) + "," + std::to_string(r.cost_euler) + "," + std::to_string(r.cost_candidates) + "," +
           std::to_string(r.cost_total) + "," + std::to_string(r.seed) + "\n";
  }
  return out;
}

namespace {

double json_real(const nlohmann::json& j) { return j.is_null() ? kNaN : j.get<double>(); }

ResultRow parse_csv_row(std::string_view line) {
  const auto f = split(line, ',');
  if (f.size() != 12) throw IoError("results row has " + std::to_string(f.size()) + " fields, expected 12");
  auto real = [](std::string_view s) {
    const std::string str(s);
    char* end = nullptr;
    const double x = std::strtod(str.c_str(), &end);
    if (end != str.c_str() + str.size()) throw IoError("bad number '" + str + "' in results");
    return x;
  };
  auto integer = [](std::string_view s) {
    std::uint64_t x = 0;
    const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), x);
    if (ec != std::errc{} || ptr != s.data() + s.size()) throw IoError("bad integer '" + std::string(s) + "'");
    return x;
  };
  ResultRow r;
  r.method = f[0];
  r.model = f[1];
  r.level = static_cast<int>(integer(f[2]));
  r.epsilon = real(f[3]);
  r.replicate = integer(f[4]);
  r.epoch = integer(f[5]);
  r.estimate = real(f[6]);
  r.sq_error = real(f[7]);
  r.cost_euler = integer(f[8]);
  r.cost_candidates = integer(f[9]);
  r.cost_total = integer(f[10]);
  r.seed = integer(f[11]);
  return r;
}

}  // namespace

std::vector<ResultRow> parse_results(std::string_view text) {
  std::vector<ResultRow> rows;
  const auto first = text.find_first_not_of(" \t\r\n");
  if (first != std::string_view::npos && text[first] == '{') {
    nlohmann::json doc;
    try {
      doc = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
      throw IoError(std::string("malformed results JSON: ") + e.what());
    }
    for (const auto& j : doc.at("rows")) {
      ResultRow r;
      r.method = j.at("method").get<std::string>();
      r.model = j.at("model").get<std::string>();
      r.level = j.at("level").get<int>();
      r.epsilon = json_real(j.at("epsilon"));
      r.replicate = j.at("replicate").get<std::size_t>();
      r.epoch = j.at("epoch").get<std::size_t>();
      r.estimate = json_real(j.at("estimate"));
      r.sq_error = json_real(j.at("sq_error"));
      r.cost_euler = j.at("cost_euler").get<std::uint64_t>();
      r.cost_candidates = j.at("cost_candidates").get<std::uint64_t>();
      r.cost_total = j.at("cost_total").get<std::uint64_t>();
      r.seed = j.at("seed").get<std::uint64_t>();
      rows.push_back(std::move(r));
    }
    return rows;
  }
  bool seen_header = false;
  while (!text.empty()) {
    const auto nl = text.find('\n');
    std::string_view line = trim(text.substr(0, nl));
    text = nl == std::string_view::npos ? std::string_view{} : text.substr(nl + 1);
    if (line.empty() || line.front() == '#') continue;
    if (!seen_header) {
      if (line != kColumns) throw IoError("unexpected results header: " + std::string(line));
      seen_header = true;
      continue;
    }
    rows.push_back(parse_csv_row(line));
  }
  return rows;
}

std::vector<ResultRow> read_results(const std::string& path) { return parse_results(read_file(path)); }

std::string format_aggregate(std::span<const ResultRow> rows, Format format) {
  const std::vector<AggregateRow> agg = aggregate(rows);
  std::map<std::string, RateFit> fits;
  for (const auto& a : agg) {
    if (fits.count(a.method)) continue;
    const auto points = rate_points(rows, a.method);
    try {
      fits[a.method] = estimate_rate(points);
    } catch (const InsufficientData&) {
      fits[a.method] = RateFit{kNaN, kNaN, kNaN, 0};
    }
  }
  if (format == Format::json) {
    nlohmann::ordered_json doc = nlohmann::json::array();
    for (const auto& a : agg) {
      const RateFit& f = fits[a.method];
      nlohmann::ordered_json j;
      j["method"] = a.method;
      j["model"] = a.model;
      j["level"] = a.level;
      j["epsilon"] = a.epsilon;
      j["replicates"] = a.replicates;
      j["mean_mse"] = a.mean_mse;
      j["mean_cost"] = a.mean_cost;
      j["log10_mse"] = std::log10(a.mean_mse);
      j["log10_cost"] = std::log10(a.mean_cost);
      j["slope_mse_vs_cost"] = f.slope;
      j["rate_cost_vs_mse"] = f.rate();
      doc.push_back(std::move(j));
    }
    return doc.dump(1) + "\n";
  }
  std::string out =
      "method,model,level,epsilon,replicates,mean_mse,mean_cost,log10_mse,log10_cost,slope_mse_vs_cost,"
      "rate_cost_vs_mse\n";
  for (const auto& a : agg) {
    const RateFit& f = fits[a.method];
    out += a.method + "," + a.model + "," + std::to_string(a.level) + "," + fmt(a.epsilon) + "," +
           std::to_string(a.replicates) + "," + fmt(a.mean_mse) + "," + fmt(a.mean_cost) + "," +
           fmt(std::log10(a.mean_mse)) + "," + fmt(std::log10(a.mean_cost)) + "," + fmt(f.slope) + "," +
           fmt(f.rate()) + "\n";
  }
  return out;
}

std::string format_dataset(const Dataset& data, Format format, std::span<const std::string> header) {
  if (format == Format::json) {
    nlohmann::ordered_json doc;
    doc["header"] = nlohmann::json::array();
    for (const auto& h : header) doc["header"].push_back(h);
    doc["rows"] = nlohmann::json::array();
    for (std::size_t k = 0; k < data.observations.size(); ++k) {
      nlohmann::ordered_json j;
      j["time"] = data.observations[k].time;
      j["observation"] = data.observations[k].value;
      j["latent_u"] = data.latent[k].u;
      j["latent_V"] = data.latent[k].v[0];
      doc["rows"].push_back(std::move(j));
    }
    return doc.dump(1) + "\n";
  }
  std::string out;
  for (const auto& h : header) out += "# " + h + "\n";
  out += "time,observation,latent_u,latent_V\n";
  for (std::size_t k = 0; k < data.observations.size(); ++k) {
    out += fmt(data.observations[k].time) + "," + fmt(data.observations[k].value) + "," +
           std::to_string(data.latent[k].u) + "," + fmt(data.latent[k].v[0]) + "\n";
  }
  return out;
}

void write_atomic(const std::string& path, std::string_view content) {
  namespace fs = std::filesystem;
  const fs::path target(path);
  fs::path tmp = target;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + tmp.string());
    out.write(content.data(), static_cast<std::streamsize>(content.size()));
    out.flush();
    if (!out) throw IoError("write failed for " + tmp.string());
  }
  std::error_code ec;
  fs::rename(tmp, target, ec);
  if (ec) {
    fs::remove(tmp, ec);
    throw IoError("cannot move output into place at " + path);
  }
}

void emit(std::span<const ResultRow> rows, Format format, const std::string& path, std::span<const std::string> header) {
  if (rows.empty()) throw ContractError("emit: no results");
  write_atomic(path, format_results(rows, format, header));
  write_atomic(aggregate_path(path), format_aggregate(rows, format));
}

std::string aggregate_path(const std::string& path) {
  std::filesystem::path p(path);
  const std::string ext = p.extension().string();
  p.replace_extension();
  return p.string() + ".aggregate" + ext;
}

std::vector<std::string> run_header(const ExperimentConfig& config) {
  std::vector<std::string> h;
  h.push_back("model=" + std::string(model_name(config.model)) + " base_seed=" + std::to_string(config.seed));
  h.push_back("seed scheme: task = derive_seed(base, {method+1, setting, replicate}); level-1 and single-level filters "
              "use derive_seed(task, {0x5201, l}); coupled levels derive_seed(task, {0x5202, l}); epoch n "
              "derive_seed(level, {n}); particle i derive_seed(epoch, {i}); data derive_seed(base, {0x5101, n}) and "
              "{0x5102}; truth replicate r derive_seed(base, {0x5103, r}); derive_seed is a splitmix64 chain");
  h.push_back("truth_level=" + std::to_string(config.resolved_truth_level()) +
              " truth_particles=" + std::to_string(truth_particle_count(config)) +
              " truth_replicates=" + std::to_string(config.truth_replicates) +
              " data_level=" + std::to_string(config.resolved_data_level()));
  std::string eps = "eps=";
  const auto e = config.epsilons();
  for (std::size_t i = 0; i < e.size(); ++i) eps += (i ? "," : "") + fmt(e[i]);
  h.push_back(eps + " K=" + fmt(config.particle_constant) + " pf_K=" + fmt(config.pf_constant) +
              " replicates=" + std::to_string(config.replicates) + " horizon=" + std::to_string(config.horizon));
  return h;
}

}  // namespace mlpf
