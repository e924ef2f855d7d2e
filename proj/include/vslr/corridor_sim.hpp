#pragma once

// Cell-transmission (Godunov) simulation of a single corridor with an
// upstream point queue, a speed-limit gate at x = 0 and a capacity-drop
// bottleneck at x = l. Units: km, h, veh/h, veh/km.

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <ostream>
#include <span>
#include <utility>
#include <vector>

#include "vslr/demand_model.hpp"
#include "vslr/errors.hpp"
#include "vslr/fundamental_diagram.hpp"

namespace vslr {

struct CorridorConfig {
  double length = 9.3;  // [km]
  int n_cells = 31;
  double dt = 9.3 / 31 / 112.0;  // [h]
  double q_bn = 6240.0;          // [veh/h]
  double drop_fraction = 0.1;
  double v_min = 40.0;  // lowest speed the gate may post [km/h]
  FundamentalDiagram fd{112.0, 70.0, 420.0};

  double cell_length() const { return length / n_cells; }
  double free_flow_hours() const { return length / fd.free_speed(); }
  double dropped_capacity() const { return (1.0 - drop_fraction) * q_bn; }

  void validate() const {
    if (!(length > 0.0) || n_cells < 1 || !(dt > 0.0)) throw ConfigError("corridor: bad geometry");
    if (fd.free_speed() * dt > cell_length() * (1.0 + 1e-9))
      throw ConfigError("corridor: CFL condition violated (v_f dt > cell length)");
    if (!(q_bn > 0.0) || q_bn > fd.capacity()) throw ConfigError("corridor: need 0 < q_bn <= q_max");
    if (drop_fraction < 0.0 || drop_fraction >= 1.0)
      throw ConfigError("corridor: drop fraction outside [0, 1)");
    if (!(v_min > 0.0) || v_min > fd.free_speed()) throw ConfigError("corridor: bad v_min");
  }

  // Step length at the CFL limit for the given cell count.
  static CorridorConfig cfl_tight(double length, int n_cells, double q_bn, double drop,
                                  FundamentalDiagram fd = {112.0, 70.0, 420.0}) {
    CorridorConfig c;
    c.length = length;
    c.n_cells = n_cells;
    c.q_bn = q_bn;
    c.drop_fraction = drop;
    c.fd = fd;
    c.dt = c.cell_length() / fd.free_speed();
    c.validate();
    return c;
  }
};

struct TrafficState {
  std::vector<double> k;  // per-cell density
  double queue = 0.0;     // upstream point queue [veh]
  double N0 = 0.0;        // admitted at x = 0
  double Nl = 0.0;        // discharged at x = l
  double offered = 0.0;   // cumulative demand that reached the gate
  bool dropped = false;

  double link_vehicles(double dx) const { return std::accumulate(k.begin(), k.end(), 0.0) * dx; }
};

// Empty corridor (or free-flow seeding at inflow q0).
inline TrafficState initial_state(const CorridorConfig& cfg, double q0 = 0.0) {
  TrafficState s;
  const double k0 = std::clamp(q0, 0.0, cfg.fd.capacity()) / cfg.fd.free_speed();
  s.k.assign(cfg.n_cells, k0);
  return s;
}

struct BottleneckOutflow {
  double flow;
  bool dropped;
};

// Phenomenological capacity drop: discharge falls to (1-D) q_bn once the
// upstream demand exceeds q_bn and recovers once it is back at or below
// the dropped capacity.
inline BottleneckOutflow bottleneck_outflow(double k_last, bool dropped, const CorridorConfig& cfg,
                                            double q_bn_now) {
  const double d = cfg.fd.demand(k_last);
  const double q_star = (1.0 - cfg.drop_fraction) * q_bn_now;
  if (dropped) return d <= q_star ? BottleneckOutflow{d, false} : BottleneckOutflow{q_star, true};
  // Relative slack absorbs round-off of a gate metered exactly at q_bn.
  if (d <= q_bn_now * (1.0 + 1e-12)) return {std::min(d, q_bn_now), false};
  return {q_star, true};
}

inline BottleneckOutflow bottleneck_outflow(double k_last, bool dropped, const CorridorConfig& cfg) {
  return bottleneck_outflow(k_last, dropped, cfg, cfg.q_bn);
}

struct StepFlows {
  double inflow = 0.0;   // admitted at x = 0 [veh/h]
  double outflow = 0.0;  // discharged at x = l [veh/h]
};

// Advance one step. `demand_in` is the mean arrival rate at the gate over
// the step; `v_limit` caps the entrance flow at the congested-branch flow
// for that speed; `q_bn_now` is the current bottleneck capacity.
inline StepFlows step(TrafficState& s, double demand_in, double v_limit, const CorridorConfig& cfg,
                      double q_bn_now) {
  if (demand_in < 0.0) throw DomainError("step: negative demand");
  if (v_limit < cfg.v_min * (1.0 - 1e-12) || v_limit > cfg.fd.free_speed() * (1.0 + 1e-12))
    throw DomainError("step: speed limit outside [v_min, v_f]");
  const auto& fd = cfg.fd;
  const int n = cfg.n_cells;
  const double ratio = cfg.dt / cfg.cell_length();

  std::vector<double> flux(n + 1);
  const double available = s.queue / cfg.dt + demand_in;
  const double gate_cap = fd.congested_flow_at_speed(std::min(v_limit, fd.free_speed()));
  flux[0] = std::min({fd.supply(s.k[0]), gate_cap, available});
  for (int i = 1; i < n; ++i) flux[i] = std::min(fd.demand(s.k[i - 1]), fd.supply(s.k[i]));
  const auto out = bottleneck_outflow(s.k[n - 1], s.dropped, cfg, q_bn_now);
  flux[n] = out.flow;

  for (int i = 0; i < n; ++i)
    s.k[i] = std::clamp(s.k[i] + ratio * (flux[i] - flux[i + 1]), 0.0, fd.jam_density());
  s.queue = std::max(0.0, s.queue + (demand_in - flux[0]) * cfg.dt);
  s.N0 += flux[0] * cfg.dt;
  s.Nl += flux[n] * cfg.dt;
  s.offered += demand_in * cfg.dt;
  s.dropped = out.dropped;
  return {flux[0], flux[n]};
}

inline StepFlows step(TrafficState& s, double demand_in, double v_limit, const CorridorConfig& cfg) {
  return step(s, demand_in, v_limit, cfg, cfg.q_bn);
}

// Time series of one run; index n is the state at time[n].
struct Trajectory {
  double dt = 0.0;
  double cell_length = 0.0;
  double initial_vehicles = 0.0;  // on the link at t = 0, not admitted
  std::vector<double> time, queue, inflow, outflow, vsl, mean_density, N0, Nl, offered;
  std::vector<double> link_vehicles;
  std::vector<std::vector<double>> densities;  // optional snapshots
  bool drained = false;

  std::size_t size() const { return time.size(); }
  double end_time() const { return time.empty() ? 0.0 : time.back(); }

  void record(double t, const TrafficState& s, StepFlows f, double v, bool keep_k) {
    time.push_back(t);
    queue.push_back(s.queue);
    inflow.push_back(f.inflow);
    outflow.push_back(f.outflow);
    vsl.push_back(v);
    const double veh = s.link_vehicles(cell_length);
    link_vehicles.push_back(veh);
    mean_density.push_back(s.k.empty() ? 0.0 : veh / (cell_length * s.k.size()));
    N0.push_back(s.N0);
    Nl.push_back(s.Nl);
    offered.push_back(s.offered);
    if (keep_k) densities.push_back(s.k);
  }

  void write_csv(std::ostream& os) const {
    os << "time_h,queue_veh,inflow_vph,outflow_vph,vsl_kmh,mean_density_vpkm,N0,Nl\n";
    for (std::size_t i = 0; i < size(); ++i)
      os << time[i] << ',' << queue[i] << ',' << inflow[i] << ',' << outflow[i] << ',' << vsl[i]
         << ',' << mean_density[i] << ',' << N0[i] << ',' << Nl[i] << '\n';
  }
};

// Posted speed chosen at the start of each step, given time and state.
using VslPolicy = std::function<double(double t, const TrafficState&)>;
// Bottleneck capacity during the step starting at t.
using CapacityPath = std::function<double(double t)>;

struct RunOptions {
  double max_hours = 12.0;      // hard stop
  double drain_tolerance = 1e-6;  // vehicles left when the run may stop
  bool keep_densities = false;
  bool seed_initial = true;  // free-flow seeding at the first step's demand
};

// Runs until demand has ended and the corridor is empty (or max_hours).
inline Trajectory simulate(const CorridorConfig& cfg, const PiecewiseLinearProfile& demand,
                           const VslPolicy& policy = {}, const CapacityPath& capacity = {},
                           RunOptions opt = {}) {
  cfg.validate();
  const double t0 = demand.start();
  const double first_rate = (demand.cumulative(t0 + cfg.dt) - demand.cumulative(t0)) / cfg.dt;
  TrafficState s = initial_state(cfg, opt.seed_initial ? first_rate : 0.0);

  Trajectory tr;
  tr.dt = cfg.dt;
  tr.cell_length = cfg.cell_length();
  tr.initial_vehicles = s.link_vehicles(tr.cell_length);
  tr.record(t0, s, {}, cfg.fd.free_speed(), opt.keep_densities);

  const auto steps_max = static_cast<long>(std::ceil(opt.max_hours / cfg.dt));
  for (long n = 0; n < steps_max; ++n) {
    const double t = t0 + n * cfg.dt;
    const double rate = (demand.cumulative(t + cfg.dt) - demand.cumulative(t)) / cfg.dt;
    const double v = policy ? std::clamp(policy(t, s), cfg.v_min, cfg.fd.free_speed())
                            : cfg.fd.free_speed();
    const double cap = capacity ? capacity(t) : cfg.q_bn;
    const auto f = step(s, rate, v, cfg, cap);
    tr.record(t + cfg.dt, s, f, v, opt.keep_densities);
    if (t + cfg.dt >= demand.end() &&
        s.queue + s.link_vehicles(tr.cell_length) < opt.drain_tolerance) {
      tr.drained = true;
      break;
    }
  }
  return tr;
}

namespace detail {

// First time at which the nondecreasing series `counts` reaches `target`,
// by linear interpolation; the earliest crossing wins on plateaus.
inline double first_crossing(std::span<const double> time, std::span<const double> counts,
                             double target, std::size_t from) {
  for (std::size_t i = std::max<std::size_t>(from, 1); i < counts.size(); ++i) {
    if (counts[i] >= target) {
      if (counts[i - 1] >= target) return time[i - 1];
      const double f = (target - counts[i - 1]) / (counts[i] - counts[i - 1]);
      return time[i - 1] + f * (time[i] - time[i - 1]);
    }
  }
  return -1.0;
}

inline double interp(std::span<const double> time, std::span<const double> y, double t) {
  if (t <= time.front()) return y.front();
  if (t >= time.back()) return y.back();
  const auto it = std::upper_bound(time.begin(), time.end(), t);
  const std::size_t i = static_cast<std::size_t>(it - time.begin());
  const double f = (t - time[i - 1]) / (time[i] - time[i - 1]);
  return y[i - 1] + f * (y[i] - y[i - 1]);
}

}  // namespace detail

// Travel time of the vehicle entering at t (horizontal distance between
// the entrance and exit count curves). With `include_queue` the entrance
// curve is the arrival curve at the gate, so point-queue waiting counts.
inline double travel_time(const Trajectory& tr, double t, bool include_queue = false) {
  if (tr.size() < 2 || t < tr.time.front() || t > tr.end_time())
    throw DomainError("travel_time: t outside the simulated horizon");
  const auto& entry = include_queue ? tr.offered : tr.N0;
  const double label = tr.initial_vehicles + detail::interp(tr.time, entry, t);
  // Strict crossing: nobody entering after t means the exit count never
  // exceeds the label.
  if (detail::interp(tr.time, entry, t) >= entry.back() - 1e-9)
    throw HorizonError("travel_time: no vehicle enters at or after t", 0.0);
  const double hit = detail::first_crossing(tr.time, tr.Nl, label - 1e-9, 1);
  if (hit < 0.0) throw HorizonError("travel_time: vehicle does not exit within horizon",
                                    tr.end_time() - t);
  return std::max(0.0, hit - t);
}

// Mean time in system per admitted vehicle [h], point-queue waiting
// included: integral of (arrived - exited) over the arrived total.
inline double average_travel_time(const Trajectory& tr) {
  if (tr.size() < 2 || !(tr.offered.back() > 0.0))
    throw DomainError("average_travel_time: no admitted vehicles");
  double total = 0.0;
  auto in_system = [&](std::size_t i) {
    return tr.offered[i] - std::max(0.0, tr.Nl[i] - tr.initial_vehicles);
  };
  for (std::size_t i = 1; i < tr.size(); ++i)
    total += 0.5 * (in_system(i - 1) + in_system(i)) * (tr.time[i] - tr.time[i - 1]);
  if (!tr.drained) throw HorizonError("average_travel_time: corridor not drained", total / tr.offered.back());
  return total / tr.offered.back();
}

// N+(l, t): count at x = l without the bottleneck, from the variational
// minimum over characteristics leaving x = 0 at t0 <= t - l/v_f.
inline double uncongested_count(const PiecewiseLinearProfile& demand, double t, double length,
                                const FundamentalDiagram& fd) {
  const double latest = t - length / fd.free_speed();
  if (latest < demand.start()) return 0.0;
  auto candidate = [&](double t0) {
    const double p = length / (t - t0);
    return demand.cumulative(t0) + fd.legendre(p) * (t - t0);
  };
  double best = candidate(latest);
  // Piecewise quadratic in t0: check segment ends and interior stationary
  // points where the arrival rate equals capacity.
  for (const auto& seg : demand.segments()) {
    for (double t0 : {seg.t0, seg.t1}) {
      if (t0 >= demand.start() && t0 < latest) best = std::min(best, candidate(t0));
    }
    const double slope = (seg.v1 - seg.v0) / (seg.t1 - seg.t0);
    if (slope != 0.0) {
      const double ts = seg.t0 + (fd.capacity() - seg.v0) / slope;
      if (ts > seg.t0 && ts < seg.t1 && ts < latest) best = std::min(best, candidate(ts));
    }
  }
  return best;
}

// Exit curve of a D/D/1 server of rate `service` fed by the uniformly
// sampled arrival curve `n_plus` (step dt).
inline std::vector<double> dd1_exit_counts(std::span<const double> n_plus, double service, double dt) {
  std::vector<double> out(n_plus.size());
  for (std::size_t i = 0; i < n_plus.size(); ++i) {
    if (i > 0 && n_plus[i] < n_plus[i - 1] - 1e-12)
      throw DomainError("dd1_exit_counts: arrival curve decreases");
    out[i] = i == 0 ? n_plus[0] : std::min(n_plus[i], out[i - 1] + service * dt);
  }
  return out;
}

}  // namespace vslr
