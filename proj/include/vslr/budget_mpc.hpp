#pragma once

// Per-minute delay-budget controller: admit the largest inflow whose
// one-step delay prediction stays under a power-law budget trajectory,
// and turn admitted flows into posted speeds.
//
// Counts u, d, L in vehicles per step; D in veh*h; times T in minutes.

#include <algorithm>
#include <cmath>
#include <ostream>
#include <span>
#include <vector>

#include "vslr/corridor_sim.hpp"
#include "vslr/demand_model.hpp"
#include "vslr/errors.hpp"

namespace vslr {

struct BudgetSchedule {
  double D_tot = 0.0;  // [veh*h]
  double gamma = 1.0;
  int N = 240;          // horizon steps
  double T_tar = 5.0;   // [min]
  double T0 = 60.0 * 9.3 / 112.0;  // [min]

  void validate() const {
    if (!(gamma > 0.0)) throw ConfigError("budget: gamma must be positive");
    if (N < 1) throw ConfigError("budget: need N >= 1");
    if (D_tot < 0.0) throw ConfigError("budget: negative delay budget");
  }
};

// Budget that spreads V (T_tar - T0) over N steps.
inline BudgetSchedule make_schedule(double T_tar, double T0, double vehicles, int N, double gamma = 1.0) {
  if (T_tar < T0 - 1e-9) throw InfeasibleTargetError("budget: target below the free-flow time");
  BudgetSchedule s{vehicles * std::max(0.0, T_tar - T0) / 60.0, gamma, N, T_tar, T0};
  s.validate();
  return s;
}

inline double budget(int k, const BudgetSchedule& s) {
  s.validate();
  if (k < 0) throw DomainError("budget: negative step");
  if (k >= s.N) return s.D_tot;
  return s.D_tot * std::pow(static_cast<double>(k) / s.N, s.gamma);
}

struct MPCParams {
  double dt_h = 1.0 / 60.0;        // control step [h]
  double capacity = 6240.0;        // C, undropped [veh/h]
  double u_min_rate = 5800.0;      // soft floor [veh/h]
  double length = 9.3;             // [km]
  double v_f = 112.0, v_min = 40.0;
  double k_c = 70.0;
  double jam_spread = 350.0;       // k_j - k_c [veh/km]
  double meter_constant = 7840.0;  // 7640 in the original speed map

  double u_min() const { return u_min_rate * dt_h; }
  double free_flow_min() const { return 60.0 * length / v_f; }
};

struct MPCState {
  double L = 0.0;  // entrance queue [veh]
  double D = 0.0;  // cumulative delay [veh*h]
  double V = 0.0;  // cumulative admitted [veh]
  int k = 0;
};

// Speed map for metering rate u and demand rate d (veh/h):
// v_f if d <= u, else u / (350/7840 (7840 - d) + 70). Demand above the
// constant (a queue included) is read at the constant, so the density
// stays in [k_c, k_j].
inline double map_density(double d_rate, const MPCParams& p) {
  const double d = std::clamp(d_rate, 0.0, p.meter_constant);
  return p.jam_spread / p.meter_constant * (p.meter_constant - d) + p.k_c;
}

inline double metering_to_speed_raw(double u_rate, double d_rate, const MPCParams& p) {
  if (d_rate <= u_rate) return p.v_f;
  return u_rate / map_density(d_rate, p);
}

inline double metering_to_speed(double u_rate, double d_rate, const MPCParams& p) {
  return std::clamp(metering_to_speed_raw(u_rate, d_rate, p), p.v_min, p.v_f);
}

// Cruise time [min] predicted for admitting u of d vehicles this step.
inline double predicted_tt(double u, double d, const MPCParams& p) {
  return 60.0 * p.length / metering_to_speed(u / p.dt_h, d / p.dt_h, p);
}

// One-step delay prediction
// D_k + L dt + u (tau(u, d) - T0)/60 + max(L + u - C dt, 0) dt.
inline double predicted_delay(double u, const MPCState& s, double d_k, const MPCParams& p,
                              double T0) {
  if (u < 0.0) throw DomainError("predicted_delay: negative admission");
  return s.D + s.L * p.dt_h + u * (predicted_tt(u, d_k, p) - T0) / 60.0 +
         std::max(s.L + u - p.capacity * p.dt_h, 0.0) * p.dt_h;
}

// Binary feasibility rule: u_max if its prediction fits the next budget,
// u_min otherwise; demand below u_min passes untouched.
inline double step_control(const MPCState& s, double d_k, const BudgetSchedule& sched,
                           const MPCParams& p) {
  if (d_k < 0.0) throw DomainError("step_control: negative demand");
  if (d_k < p.u_min()) return d_k;
  const double u_max = std::min(d_k, p.capacity * p.dt_h);
  if (predicted_delay(u_max, s, d_k, p, sched.T0) <= budget(s.k + 1, sched)) return u_max;
  return std::min(p.u_min(), u_max);
}

// Largest v <= v_cand with l/v >= l/v_prev - dt: later entrants may not
// overtake earlier ones. Speeds in km/h, dt in hours.
inline double fifo_filter(double v_prev, double v_cand, double dt, double length) {
  if (!(v_prev > 0.0) || !(v_cand > 0.0)) throw DomainError("fifo_filter: speeds must be positive");
  const double t_min = length / v_prev - dt;
  if (t_min <= 0.0) return v_cand;
  return std::min(v_cand, length / t_min);
}

struct MPCLogRow {
  int k;
  double d_k, u_star, D_k, D_k_max, L_k, v_posted;
};

inline void write_mpc_log_csv(std::ostream& os, std::span<const MPCLogRow> rows) {
  os << "k,d_k,u_star,D_k,D_k_max,L_k,v_posted\n";
  for (const auto& r : rows)
    os << r.k << ',' << r.d_k << ',' << r.u_star << ',' << r.D_k << ',' << r.D_k_max << ',' << r.L_k
       << ',' << r.v_posted << '\n';
}

struct ControlledRun {
  Trajectory trajectory;
  std::vector<MPCLogRow> log;
  double T_avg = 0.0;  // [min]
};

// Closed loop against the simulator. The controller acts every dt_h; in
// between the posted speed is held. Measured delay is the area between
// the free-flow-shifted arrival curve and the exit curve.
inline ControlledRun run_controlled(const PiecewiseLinearProfile& demand, const BudgetSchedule& sched,
                                    const MPCParams& p, const CorridorConfig& cfg,
                                    const CapacityPath& capacity = {}, RunOptions opt = {}) {
  sched.validate();
  cfg.validate();
  const double t_start = demand.start();
  const double T0h = sched.T0 / 60.0;
  auto arrived = [&](double t) {
    return t <= t_start ? 0.0 : demand.cumulative(t) - demand.cumulative(t_start);
  };

  ControlledRun run;
  double init = -1.0;
  double next_control = t_start;
  double v_posted = cfg.fd.free_speed();
  double last_t = t_start, last_gap = 0.0, delay = 0.0;
  MPCState st;

  auto policy = [&](double t, const TrafficState& s) {
    if (init < 0.0) init = s.link_vehicles(cfg.cell_length());
    const double gap = arrived(t - T0h) - std::max(0.0, s.Nl - init);
    delay += 0.5 * (gap + last_gap) * (t - last_t);
    last_gap = gap;
    last_t = t;
    if (t + 1e-12 < next_control) return v_posted;

    st.L = s.queue;
    st.D = std::max(0.0, delay);
    st.V = s.N0;
    const double d_k = s.queue + arrived(t + p.dt_h) - arrived(t);
    const double u = step_control(st, d_k, sched, p);
    // Throttled: gate at u/dt. Otherwise the gate still never passes more
    // than C once a queue or an in-step peak could push it above C.
    const double peak = std::max(demand.rate(t), demand.rate(std::min(t + p.dt_h, demand.end())));
    double gate = -1.0;
    if (u < d_k - 1e-9)
      gate = u / p.dt_h;
    else if (s.queue > 1e-9 || peak > p.capacity)
      gate = p.capacity;
    double v = cfg.fd.free_speed();
    if (gate >= 0.0 && gate < cfg.fd.capacity()) v = cfg.fd.speed_for_metering(gate);
    v = std::clamp(v, cfg.v_min, cfg.fd.free_speed());
    v = fifo_filter(v_posted, v, p.dt_h, p.length);
    run.log.push_back({st.k, d_k, u, st.D, budget(st.k, sched), st.L, v});
    v_posted = v;
    ++st.k;
    next_control = t_start + st.k * p.dt_h;
    return v_posted;
  };

  run.trajectory = simulate(cfg, demand, policy, capacity, opt);
  run.T_avg = 60.0 * average_travel_time(run.trajectory);
  return run;
}

}  // namespace vslr
