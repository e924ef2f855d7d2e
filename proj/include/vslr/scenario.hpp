#pragma once

// Scenario file: one JSON document with a schema_version. Missing keys take
// the calibrated defaults; unknown keys are errors.

#include <cstdint>
#include <fstream>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "vslr/budget_mpc.hpp"
#include "vslr/corridor_sim.hpp"
#include "vslr/demand_model.hpp"
#include "vslr/errors.hpp"
#include "vslr/ou_capacity.hpp"
#include "vslr/reliability_optimizer.hpp"
#include "vslr/smpc_gain.hpp"

namespace vslr {

inline constexpr int kSchemaVersion = 1;

struct CorridorSettings {
  double length_km = 9.3;
  int n_cells = 62;
  double q_bn_vph = 6240.0;
  double drop_fraction = 0.1;
  double v_min_kmh = 40.0;
  double v_f_kmh = 112.0, k_c_per_km = 70.0, k_j_per_km = 420.0;

  FundamentalDiagram fd() const { return {v_f_kmh, k_c_per_km, k_j_per_km}; }
  CorridorConfig config(double drop) const {
    auto c = CorridorConfig::cfl_tight(length_km, n_cells, q_bn_vph, drop, fd());
    c.v_min = v_min_kmh;
    c.validate();
    return c;
  }
  CorridorConfig config() const { return config(drop_fraction); }
  double free_flow_min() const { return 60.0 * length_km / v_f_kmh; }
};

struct OptimizerSettings {
  std::vector<double> alphas{0.6, 0.5, 0.4, 0.3, 0.2};
  PipelineVariant pipeline = PipelineVariant::corrected;
  double free_flow_min = 5.0;  // floor of the analytic curve [min]
  double baseline_drop = 0.1;  // uncontrolled capacity drop
  double mc_alpha = 0.5;       // weight for the demand Monte Carlo targets
};

struct MPCSettings {
  double gamma = 1.0;
  double u_min_vph = 5800.0;
  int n_steps = 240;
  double dt_min = 1.0;
  double meter_constant = 7840.0;
  double jam_spread = 350.0;
};

struct GainSettings {
  double K_min = 0.0, K_max = 0.1;  // per control step
  int n_grid = 60;
  int horizon_steps = 180;
  double dt_min = 1.0;
  double length_km = 9.34;
  int n_cells = 31;
  double drop_fraction = 0.0;  // capacity is the OU path alone
  std::vector<double> alphas{0.75, 0.5};
  int mc_paths = 500;
};

struct Scenario {
  int schema_version = kSchemaVersion;
  std::optional<std::uint64_t> seed;
  std::string output_dir = "out";
  CorridorSettings corridor;
  TrapezoidDemand trapezoid;
  DeterministicDemand deterministic;
  PeakDistribution peak;
  OptimizerSettings optimizer;
  MPCSettings mpc;
  OUParams ou;
  GainSettings gain;

  void validate() const {
    if (schema_version != kSchemaVersion) throw ConfigError("scenario: unsupported schema_version");
    corridor.config();
    config(gain.drop_fraction, gain.length_km, gain.n_cells);
    peak.validate();
    ou.validate();
    if (!(trapezoid.rise_hours > 0.0) || !(trapezoid.fall_hours > 0.0) || trapezoid.a < 0.0 || trapezoid.b < 0.0)
      throw ConfigError("scenario: bad trapezoid demand");
    if (!(deterministic.horizon > DeterministicDemand::kBreak))
      throw ConfigError("scenario: deterministic horizon must pass the break point");
    if (optimizer.alphas.empty()) throw ConfigError("scenario: optimizer.alphas is empty");
    for (double a : optimizer.alphas)
      if (a < 0.0 || a > 1.0) throw ConfigError("scenario: optimizer alpha outside [0, 1]");
    if (optimizer.mc_alpha <= 0.0 || optimizer.mc_alpha > 1.0)
      throw ConfigError("scenario: optimizer.mc_alpha outside (0, 1]");
    if (!(optimizer.free_flow_min > 0.0)) throw ConfigError("scenario: free_flow_min must be positive");
    if (optimizer.baseline_drop < 0.0 || optimizer.baseline_drop >= 1.0)
      throw ConfigError("scenario: baseline_drop outside [0, 1)");
    if (!(mpc.gamma > 0.0) || mpc.n_steps < 1 || !(mpc.dt_min > 0.0) || !(mpc.u_min_vph >= 0.0))
      throw ConfigError("scenario: bad mpc settings");
    if (!(mpc.meter_constant > 0.0) || !(mpc.jam_spread > 0.0)) throw ConfigError("scenario: bad speed map");
    gain_config(0.5).validate();
    for (double a : gain.alphas)
      if (a < 0.0 || a > 1.0) throw ConfigError("scenario: gain alpha outside [0, 1]");
    if (gain.mc_paths < 2) throw ConfigError("scenario: gain.mc_paths must be >= 2");
  }

  MinTTParams min_tt(double free_flow) const {
    MinTTParams p;
    p.demand = trapezoid;
    p.q_bn = corridor.q_bn_vph;
    p.free_flow_min = free_flow;
    p.q_p_limit = peak.upper;
    return p;
  }

  MPCParams mpc_params(double length) const {
    MPCParams p;
    p.dt_h = mpc.dt_min / 60.0;
    p.capacity = corridor.q_bn_vph;
    p.u_min_rate = mpc.u_min_vph;
    p.length = length;
    p.v_f = corridor.v_f_kmh;
    p.v_min = corridor.v_min_kmh;
    p.k_c = corridor.k_c_per_km;
    p.jam_spread = mpc.jam_spread;
    p.meter_constant = mpc.meter_constant;
    return p;
  }

  CorridorConfig config(double drop, double length, int n_cells) const {
    CorridorSettings c = corridor;
    c.length_km = length;
    c.n_cells = n_cells;
    return c.config(drop);
  }

  GainSearchConfig gain_config(double alpha) const {
    GainSearchConfig g;
    g.K_min = gain.K_min;
    g.K_max = gain.K_max;
    g.n_grid = gain.n_grid;
    g.alpha = alpha;
    g.horizon = gain.horizon_steps;
    g.dt_h = gain.dt_min / 60.0;
    g.v_min = corridor.v_min_kmh;
    g.v_f = corridor.v_f_kmh;
    g.length = gain.length_km;
    g.speed_map = mpc_params(gain.length_km);
    g.speed_map.dt_h = g.dt_h;
    return g;
  }

  CorridorConfig gain_corridor() const { return config(gain.drop_fraction, gain.length_km, gain.n_cells); }

  std::uint64_t require_seed() const {
    if (!seed) throw ConfigError("scenario: a seed is required for stochastic runs");
    return *seed;
  }
};

namespace detail {

using nlohmann::json;

// Reads an object key by key and rejects whatever was not consumed.
class StrictReader {
 public:
  StrictReader(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(path_ + ": expected an object");
  }
  void done() const {
    for (const auto& [k, v] : j_.items())
      if (!seen_.count(k)) throw ConfigError(path_ + ": unknown key '" + k + "'");
  }

  template <class T>
  void get(const char* key, T& out) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    try {
      out = j_.at(key).get<T>();
    } catch (const json::exception& e) {
      throw ConfigError(path_ + "." + key + ": " + e.what());
    }
  }

  const json* child(const char* key) {
    seen_.insert(key);
    return j_.contains(key) ? &j_.at(key) : nullptr;
  }

  std::string path(const char* key) const { return path_ + "." + key; }

 private:
  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

inline std::string pipeline_name(PipelineVariant v) {
  return v == PipelineVariant::corrected ? "corrected" : "verbatim";
}

inline PipelineVariant parse_pipeline(const std::string& s) {
  if (s == "corrected") return PipelineVariant::corrected;
  if (s == "verbatim") return PipelineVariant::verbatim;
  throw ConfigError("optimizer.pipeline: expected 'corrected' or 'verbatim', got '" + s + "'");
}

}  // namespace detail

inline nlohmann::ordered_json to_json(const Scenario& s) {
  nlohmann::ordered_json j;
  j["schema_version"] = s.schema_version;
  if (s.seed) j["seed"] = *s.seed;
  j["output_dir"] = s.output_dir;
  const auto& c = s.corridor;
  j["corridor"] = {{"length_km", c.length_km},       {"n_cells", c.n_cells},       {"q_bn_vph", c.q_bn_vph},
                   {"drop_fraction", c.drop_fraction}, {"v_min_kmh", c.v_min_kmh},   {"v_f_kmh", c.v_f_kmh},
                   {"k_c_per_km", c.k_c_per_km},       {"k_j_per_km", c.k_j_per_km}};
  j["demand"] = {{"trapezoid",
                  {{"a_vph", s.trapezoid.a},
                   {"b_vph", s.trapezoid.b},
                   {"rise_hours", s.trapezoid.rise_hours},
                   {"fall_hours", s.trapezoid.fall_hours}}},
                 {"deterministic", {{"horizon_hours", s.deterministic.horizon}}}};
  j["peak"] = {{"mean_vph", s.peak.mean}, {"sd_vph", s.peak.sd}, {"lower_vph", s.peak.lower},
               {"upper_vph", s.peak.upper}};
  const auto& o = s.optimizer;
  j["optimizer"] = {{"alphas", o.alphas},
                    {"pipeline", detail::pipeline_name(o.pipeline)},
                    {"free_flow_min", o.free_flow_min},
                    {"baseline_drop", o.baseline_drop},
                    {"mc_alpha", o.mc_alpha}};
  const auto& m = s.mpc;
  j["mpc"] = {{"gamma", m.gamma},         {"u_min_vph", m.u_min_vph},           {"n_steps", m.n_steps},
              {"dt_min", m.dt_min},       {"meter_constant", m.meter_constant}, {"jam_spread", m.jam_spread}};
  j["ou"] = {{"kappa_per_min", s.ou.kappa}, {"c_max_vph", s.ou.c_max}, {"sigma", s.ou.sigma}};
  const auto& g = s.gain;
  j["gain_search"] = {{"K_min", g.K_min},
                      {"K_max", g.K_max},
                      {"n_grid", g.n_grid},
                      {"horizon_steps", g.horizon_steps},
                      {"dt_min", g.dt_min},
                      {"length_km", g.length_km},
                      {"n_cells", g.n_cells},
                      {"drop_fraction", g.drop_fraction},
                      {"alphas", g.alphas},
                      {"mc_paths", g.mc_paths}};
  return j;
}

inline Scenario scenario_from_json(const nlohmann::json& j) {
  using detail::StrictReader;
  Scenario s;
  {
    StrictReader r(j, "scenario");
    if (!j.is_object() || !j.contains("schema_version")) throw ConfigError("scenario: schema_version is required");
    r.get("schema_version", s.schema_version);
    if (s.schema_version != kSchemaVersion) throw ConfigError("scenario: unsupported schema_version");
    if (const auto* v = r.child("seed")) {
      if (!v->is_number_unsigned()) throw ConfigError("scenario.seed: expected a non-negative integer");
      s.seed = v->get<std::uint64_t>();
    }
    r.get("output_dir", s.output_dir);
    if (const auto* c = r.child("corridor")) {
      StrictReader rc(*c, r.path("corridor"));
      auto& x = s.corridor;
      rc.get("length_km", x.length_km);
      rc.get("n_cells", x.n_cells);
      rc.get("q_bn_vph", x.q_bn_vph);
      rc.get("drop_fraction", x.drop_fraction);
      rc.get("v_min_kmh", x.v_min_kmh);
      rc.get("v_f_kmh", x.v_f_kmh);
      rc.get("k_c_per_km", x.k_c_per_km);
      rc.get("k_j_per_km", x.k_j_per_km);
      rc.done();
    }
    if (const auto* d = r.child("demand")) {
      StrictReader rd(*d, r.path("demand"));
      if (const auto* t = rd.child("trapezoid")) {
        StrictReader rt(*t, rd.path("trapezoid"));
        rt.get("a_vph", s.trapezoid.a);
        rt.get("b_vph", s.trapezoid.b);
        rt.get("rise_hours", s.trapezoid.rise_hours);
        rt.get("fall_hours", s.trapezoid.fall_hours);
        rt.done();
      }
      if (const auto* t = rd.child("deterministic")) {
        StrictReader rt(*t, rd.path("deterministic"));
        rt.get("horizon_hours", s.deterministic.horizon);
        rt.done();
      }
      rd.done();
    }
    if (const auto* p = r.child("peak")) {
      StrictReader rp(*p, r.path("peak"));
      rp.get("mean_vph", s.peak.mean);
      rp.get("sd_vph", s.peak.sd);
      rp.get("lower_vph", s.peak.lower);
      rp.get("upper_vph", s.peak.upper);
      rp.done();
    }
    if (const auto* o = r.child("optimizer")) {
      StrictReader ro(*o, r.path("optimizer"));
      ro.get("alphas", s.optimizer.alphas);
      std::string pipe = detail::pipeline_name(s.optimizer.pipeline);
      ro.get("pipeline", pipe);
      s.optimizer.pipeline = detail::parse_pipeline(pipe);
      ro.get("free_flow_min", s.optimizer.free_flow_min);
      ro.get("baseline_drop", s.optimizer.baseline_drop);
      ro.get("mc_alpha", s.optimizer.mc_alpha);
      ro.done();
    }
    if (const auto* m = r.child("mpc")) {
      StrictReader rm(*m, r.path("mpc"));
      rm.get("gamma", s.mpc.gamma);
      rm.get("u_min_vph", s.mpc.u_min_vph);
      rm.get("n_steps", s.mpc.n_steps);
      rm.get("dt_min", s.mpc.dt_min);
      rm.get("meter_constant", s.mpc.meter_constant);
      rm.get("jam_spread", s.mpc.jam_spread);
      rm.done();
    }
    if (const auto* o = r.child("ou")) {
      StrictReader ro(*o, r.path("ou"));
      ro.get("kappa_per_min", s.ou.kappa);
      ro.get("c_max_vph", s.ou.c_max);
      ro.get("sigma", s.ou.sigma);
      ro.done();
    }
    if (const auto* g = r.child("gain_search")) {
      StrictReader rg(*g, r.path("gain_search"));
      rg.get("K_min", s.gain.K_min);
      rg.get("K_max", s.gain.K_max);
      rg.get("n_grid", s.gain.n_grid);
      rg.get("horizon_steps", s.gain.horizon_steps);
      rg.get("dt_min", s.gain.dt_min);
      rg.get("length_km", s.gain.length_km);
      rg.get("n_cells", s.gain.n_cells);
      rg.get("drop_fraction", s.gain.drop_fraction);
      rg.get("alphas", s.gain.alphas);
      rg.get("mc_paths", s.gain.mc_paths);
      rg.done();
    }
    r.done();
  }
  s.validate();
  return s;
}

inline Scenario parse_scenario(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(std::string("scenario: ") + e.what());
  }
  return scenario_from_json(j);
}

inline Scenario load_scenario(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("scenario: cannot open " + path);
  const std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return parse_scenario(text);
}

inline std::string serialize(const Scenario& s) { return to_json(s).dump(2) + "\n"; }

}  // namespace vslr
