#pragma once

// Stochastic-capacity controller: queue-proportional metering, speeds
// with FIFO filtering, travel-time moments from the inverse-Gaussian
// queue delay, and the grid search for the feedback gain.
//
// The gain is expressed per control step: admitting q dt = C dt - K S
// vehicles per step, i.e. a rate K/dt against the queue S.

#include <algorithm>
#include <cmath>
#include <deque>
#include <limits>
#include <ostream>
#include <random>
#include <span>
#include <tuple>
#include <utility>
#include <vector>

#include "vslr/budget_mpc.hpp"
#include "vslr/corridor_sim.hpp"
#include "vslr/demand_model.hpp"
#include "vslr/errors.hpp"
#include "vslr/numerics.hpp"
#include "vslr/ou_capacity.hpp"

namespace vslr {

struct GainSearchConfig {
  double K_min = 0.0, K_max = 0.1;  // per step
  int n_grid = 60;
  double alpha = 0.5;
  int horizon = 180;  // steps
  double dt_h = 1.0 / 60.0;
  double v_min = 40.0, v_f = 112.0;
  double length = 9.34;  // [km]
  MPCParams speed_map{};  // density map for the cruise-time model

  void validate() const {
    if (!(K_min >= 0.0) || !(K_max > K_min)) throw ConfigError("gain search: need 0 <= K_min < K_max");
    if (n_grid < 2) throw ConfigError("gain search: need n_grid >= 2");
    if (alpha < 0.0 || alpha > 1.0) throw ConfigError("gain search: alpha outside [0, 1]");
    if (horizon < 1 || !(dt_h > 0.0)) throw ConfigError("gain search: bad horizon");
    if (!(v_min > 0.0) || v_min > v_f || !(length > 0.0)) throw ConfigError("gain search: bad speeds");
  }

  std::vector<double> grid() const {
    std::vector<double> k(n_grid);
    for (int i = 0; i < n_grid; ++i) k[i] = K_min + (K_max - K_min) * i / (n_grid - 1);
    return k;
  }
};

struct MeteringDecision {
  double flow = 0.0;
  bool clamped = false;  // raised to the v_min floor
};

// min{d, C - K S} with K in 1/h (flows veh/h, S veh); a throttled flow is
// never set below `floor`.
inline MeteringDecision metering_law(double d, double C, double S, double K, double floor = 0.0) {
  if (S < 0.0 || K < 0.0) throw DomainError("metering_law: need S >= 0 and K >= 0");
  const double law = C - K * S;
  if (d <= law) return {d, false};
  if (law < floor) return {std::min(d, floor), true};
  return {law, false};
}

struct TravelTimeMoments {
  double mean = 0.0;    // [min]
  double stddev = 0.0;  // [min]
};

// Moments of max{tau_c, tau_q} with tau_q inverse Gaussian for backlog B:
// an atom of mass F(tau_c) at tau_c plus the density above it.
inline TravelTimeMoments tt_moments(double tau_c_min, double B, const OUParams& p,
                                    VarianceRate rate = VarianceRate::kernel) {
  if (tau_c_min < 0.0 || B < 0.0) throw DomainError("tt_moments: negative input");
  if (B == 0.0) return {tau_c_min, 0.0};
  const auto q = queue_delay_moments(B, p, rate);
  const double tc = tau_c_min / 60.0;
  if (q.variance == 0.0) return {60.0 * std::max(tc, q.mean), 0.0};

  const double m = q.mean, lam = q.shape, sd = std::sqrt(q.variance);
  const double lo = std::max(tc, std::max(0.0, m - 15.0 * sd));
  const double hi = m + 40.0 * sd;
  const double atom = inverse_gaussian_cdf(tc, m, lam);
  auto f = [&](double x) { return inverse_gaussian_pdf(x, m, lam); };
  auto body = [&](auto g) {
    if (lo >= hi) return 0.0;
    if (lo < m) return num::integrate(g, lo, m, 1e-12) + num::integrate(g, m, hi, 1e-12);
    return num::integrate(g, lo, hi, 1e-12);
  };
  const double mean = tc * atom + body([&](double x) { return x * f(x); });
  const double var = (tc - mean) * (tc - mean) * atom +
                     body([&](double x) { return (x - mean) * (x - mean) * f(x); });
  return {60.0 * mean, 60.0 * std::sqrt(std::max(var, 0.0))};
}

struct ControlStep {
  double t_min, C_expected, q_m, v_posted, S, E_T, Std_T, cost;
  double demand = 0.0;  // [veh/h]
};

struct ControlTrace {
  std::vector<ControlStep> steps;
  double J = 0.0;  // [veh*min]
  double dt_h = 0.0;

  // The cost of the same rollout under another weight.
  double cost(double alpha) const {
    double J = 0.0;
    for (const auto& s : steps) J += s.demand * (alpha * s.E_T + (1.0 - alpha) * s.Std_T) * dt_h;
    return J;
  }

  double min_speed() const {
    double v = std::numeric_limits<double>::infinity();
    for (const auto& s : steps) v = std::min(v, s.v_posted);
    return v;
  }
  // Minutes with the posted speed below v_f.
  double vsl_window(double v_f) const {
    if (steps.size() < 2) return 0.0;
    const double dt = steps[1].t_min - steps[0].t_min;
    double w = 0.0;
    for (const auto& s : steps) w += s.v_posted < v_f - 1e-9 ? dt : 0.0;
    return w;
  }

  void write_csv(std::ostream& os) const {
    os << "t_min,C_expected_vph,q_m_vph,v_posted_kmh,S_veh,E_T_min,Std_T_min\n";
    for (const auto& s : steps)
      os << s.t_min << ',' << s.C_expected << ',' << s.q_m << ',' << s.v_posted << ',' << s.S << ','
         << s.E_T << ',' << s.Std_T << '\n';
  }
};

namespace detail {

// Mean and variance of max(X, 0) for X ~ N(m, v).
inline std::pair<double, double> positive_part_moments(double m, double v) {
  if (v <= 0.0) return {std::max(m, 0.0), 0.0};
  const double s = std::sqrt(v), z = m / s;
  const double P = num::norm_cdf(z), ph = num::norm_pdf(z);
  const double e1 = m * P + s * ph;
  const double e2 = (m * m + v) * P + m * s * ph;
  return {e1, std::max(e2 - e1 * e1, 0.0)};
}

}  // namespace detail

// Expectation-based rollout of the metering law over the horizon. The
// bottleneck queue is a Gaussian moment-matched vertical queue fed by link
// arrivals (admitted flow delayed by the cruise time) and served by E[C].
inline ControlTrace horizon_cost(double K, const GainSearchConfig& g, const PiecewiseLinearProfile& demand,
                                 const OUParams& ou, VarianceRate rate = VarianceRate::kernel) {
  g.validate();
  ou.validate();
  if (K < 0.0) throw DomainError("horizon_cost: negative gain");
  const double dt = g.dt_h;
  const double s2 = variance_rate(ou, rate);
  const double t0 = demand.start();

  ControlTrace tr;
  tr.dt_h = dt;
  double P = 0.0, mS = 0.0, vS = 0.0, v_prev = g.v_f, in_link = 0.0;
  struct Packet {
    double start, size, left;  // first arrival at the bottleneck, vehicles
  };
  std::deque<Packet> link;
  for (int k = 0; k < g.horizon; ++k) {
    const double t = t0 + k * dt;
    const double d = (demand.cumulative(t + dt) - demand.cumulative(t)) / dt;
    const double Cb = capped_mean(60.0 * (t - t0), ou.c_max, ou);
    const double avail = d + P / dt;
    const double rho = map_density(d, g.speed_map);

    double q = metering_law(avail, Cb, mS, K / dt, g.v_min * rho).flow;
    double v = q < avail ? std::clamp(q / rho, g.v_min, g.v_f) : g.v_f;
    if (v > v_prev) v = fifo_filter(v_prev, v, dt, g.length);
    if (v < g.v_f) q = std::min(avail, v * rho);
    q = std::clamp(q, 0.0, avail);

    const double tc_min = 60.0 * g.length / v;
    const double B = in_link + mS + q * dt;
    const auto tt = tt_moments(tc_min, B, ou, rate);
    const double cost = d * (g.alpha * tt.mean + (1.0 - g.alpha) * tt.stddev) * dt;
    tr.J += cost;
    tr.steps.push_back({60.0 * (t - t0), Cb, q, v, mS, tt.mean, tt.stddev, cost, d});

    P = std::max(0.0, P + (d - q) * dt);
    // Entries spread uniformly over the step reach the bottleneck over
    // [t + tau_c, t + tau_c + dt].
    link.push_back({t + tc_min / 60.0, q * dt, q * dt});
    in_link += q * dt;
    double arrived = 0.0;
    for (auto& pk : link) {
      const double overlap = std::clamp(t + dt - pk.start, 0.0, dt) / dt * pk.size;
      const double take = std::min(pk.left, overlap - (pk.size - pk.left));
      if (take > 0.0) {
        arrived += take;
        pk.left -= take;
      }
    }
    in_link -= arrived;
    while (!link.empty() && link.front().left <= 1e-12 * link.front().size) link.pop_front();
    std::tie(mS, vS) = detail::positive_part_moments(mS + arrived - Cb * dt, vS + s2 * dt);
    v_prev = v;
  }
  return tr;
}

struct GainSearchResult {
  double K_star = 0.0;
  std::vector<double> K, J;
  ControlTrace trace;  // at K_star

  void write_sweep_csv(std::ostream& os) const {
    os << "K,J\n";
    for (std::size_t i = 0; i < K.size(); ++i) os << K[i] << ',' << J[i] << '\n';
  }
};

// Rollouts over the gain grid; the state path does not depend on alpha.
inline std::vector<ControlTrace> gain_sweep(const GainSearchConfig& g, const PiecewiseLinearProfile& demand,
                                            const OUParams& ou, VarianceRate rate = VarianceRate::kernel) {
  g.validate();
  std::vector<ControlTrace> out;
  for (double K : g.grid()) out.push_back(horizon_cost(K, g, demand, ou, rate));
  return out;
}

// Exhaustive grid search at weight alpha; ties go to the smaller gain.
inline GainSearchResult select_gain(const GainSearchConfig& g, std::span<const ControlTrace> sweep,
                                    double alpha) {
  GainSearchResult r;
  r.K = g.grid();
  if (sweep.size() != r.K.size()) throw DomainError("select_gain: sweep does not match the grid");
  std::size_t best = 0;
  for (std::size_t i = 0; i < r.K.size(); ++i) {
    r.J.push_back(sweep[i].cost(alpha));
    if (r.J[i] < r.J[best]) best = i;
  }
  r.K_star = r.K[best];
  r.trace = sweep[best];
  r.trace.J = r.J[best];
  for (auto& st : r.trace.steps)
    st.cost = st.demand * (alpha * st.E_T + (1.0 - alpha) * st.Std_T) * r.trace.dt_h;
  return r;
}

inline GainSearchResult optimize_gain(const GainSearchConfig& g, const PiecewiseLinearProfile& demand,
                                      const OUParams& ou, VarianceRate rate = VarianceRate::kernel) {
  const auto sweep = gain_sweep(g, demand, ou, rate);
  return select_gain(g, sweep, g.alpha);
}

// ---- closed loop against the simulator -------------------------------------

// Capacity path sampled on the simulator grid, held over each step.
inline CapacityPath held_capacity(std::vector<double> samples, double t0, double dt) {
  return [c = std::move(samples), t0, dt](double t) {
    const auto i = static_cast<std::size_t>(std::max(0.0, std::floor((t - t0) / dt + 1e-9)));
    return c[std::min(i, c.size() - 1)];
  };
}

struct SmpcRun {
  Trajectory trajectory;
  std::vector<ControlStep> steps;  // E_T, Std_T, cost unused
};

// Metering law acting every dt_h on the realized capacity and the measured
// bottleneck queue S = N0(t - l/v_f) - exits. The gate is set with the
// simulator's congested-branch map; speeds go through the FIFO filter.
inline SmpcRun run_smpc(double K, const GainSearchConfig& g, const PiecewiseLinearProfile& demand,
                        const CorridorConfig& cfg, const CapacityPath& capacity, RunOptions opt = {}) {
  g.validate();
  cfg.validate();
  const double t_start = demand.start();
  const double T_ff = cfg.free_flow_hours();
  const auto& fd = cfg.fd;
  const double q_floor = fd.congested_flow_at_speed(cfg.v_min);

  SmpcRun run;
  std::vector<double> hist_t, hist_N0;
  double init = -1.0, next_control = t_start, v_posted = fd.free_speed();
  int k = 0;
  auto policy = [&](double t, const TrafficState& s) {
    if (init < 0.0) init = s.link_vehicles(cfg.cell_length());
    hist_t.push_back(t);
    hist_N0.push_back(s.N0);
    if (t + 1e-12 < next_control) return v_posted;

    const double entered = t - T_ff <= t_start ? 0.0 : detail::interp(hist_t, hist_N0, t - T_ff);
    const double S = std::max(0.0, entered - std::max(0.0, s.Nl - init));
    const double C = capacity ? capacity(t) : cfg.q_bn;
    const double d = (demand.cumulative(t + g.dt_h) - demand.cumulative(t)) / g.dt_h;
    const double avail = d + s.queue / g.dt_h;
    const double q = metering_law(avail, C, S, K / g.dt_h, q_floor).flow;
    const double cap = std::max(C - K / g.dt_h * S, q_floor);  // what the law would admit
    const double peak = std::max(demand.rate(t), demand.rate(std::min(t + g.dt_h, demand.end())));

    // Throttled: gate at q. Unthrottled: gate at the law's cap only if a
    // queue or an in-step peak could exceed it.
    double v = fd.free_speed();
    if (q < avail - 1e-9)
      v = fd.speed_for_metering(std::min(q, fd.capacity()));
    else if (s.queue > 1e-9 || peak > cap * (1.0 + 1e-12))
      v = fd.speed_for_metering(std::min(cap, fd.capacity()));
    v = std::clamp(v, cfg.v_min, fd.free_speed());
    v = fifo_filter(v_posted, v, g.dt_h, cfg.length);
    run.steps.push_back({60.0 * (t - t_start), C, q, v, S, 0.0, 0.0, 0.0});
    v_posted = v;
    ++k;
    next_control = t_start + k * g.dt_h;
    return v_posted;
  };
  run.trajectory = simulate(cfg, demand, policy, capacity, opt);
  return run;
}

struct TravelTimeSummary {
  std::vector<double> departure_min, mean, stddev;  // per departure minute
  double E = 0.0, Std = 0.0;                        // demand-weighted [min]
};

struct SmpcMonteCarlo {
  TravelTimeSummary link;       // from entering the corridor (max{tau_c, tau_q})
  TravelTimeSummary with_wait;  // from arriving at the gate
};

namespace detail {

struct MomentAccumulator {
  std::vector<double> s1, s2;
  explicit MomentAccumulator(int n) : s1(n, 0.0), s2(n, 0.0) {}
  void add(int j, double x) {
    s1[j] += x;
    s2[j] += x * x;
  }
  TravelTimeSummary summarize(int n_paths, const PiecewiseLinearProfile& demand, double dt_h) const {
    TravelTimeSummary out;
    double w_sum = 0.0;
    for (std::size_t j = 0; j < s1.size(); ++j) {
      const double t = demand.start() + j * dt_h;
      const double w = demand.cumulative(t + dt_h) - demand.cumulative(t);
      const double m = s1[j] / n_paths;
      const double sd = std::sqrt(std::max(0.0, (s2[j] - n_paths * m * m) / (n_paths - 1)));
      out.departure_min.push_back(60.0 * j * dt_h);
      out.mean.push_back(m);
      out.stddev.push_back(sd);
      out.E += w * m;
      out.Std += w * sd;
      w_sum += w;
    }
    out.E /= w_sum;
    out.Std /= w_sum;
    return out;
  }
};

}  // namespace detail

// Cross-path travel-time statistics per departure minute for gain K over
// n capacity paths (path i seeded with {seed, i}, so every gain sees the
// same paths). Paths start at c_max, like the rollout.
inline SmpcMonteCarlo smpc_monte_carlo(double K, const GainSearchConfig& g, const PiecewiseLinearProfile& demand,
                                       const CorridorConfig& cfg, const OUParams& ou, int n_paths,
                                       std::uint64_t seed) {
  if (n_paths < 2) throw DomainError("smpc_monte_carlo: need at least two paths");
  const int n_dep = g.horizon;
  detail::MomentAccumulator link(n_dep), wait(n_dep);
  RunOptions opt;
  const int n_steps = static_cast<int>(std::ceil(opt.max_hours / cfg.dt)) + 1;
  for (int i = 0; i < n_paths; ++i) {
    std::seed_seq ss{seed, static_cast<std::uint64_t>(i)};
    std::mt19937_64 rng(ss);
    auto path = sample_path(ou, ou.c_max, 60.0 * cfg.dt, n_steps, rng);
    const auto run = run_smpc(K, g, demand, cfg, held_capacity(std::move(path), demand.start(), cfg.dt), opt);
    for (int j = 0; j < n_dep; ++j) {
      const double t = demand.start() + j * g.dt_h;
      link.add(j, 60.0 * travel_time(run.trajectory, t, false));
      wait.add(j, 60.0 * travel_time(run.trajectory, t, true));
    }
  }
  return {link.summarize(n_paths, demand, g.dt_h), wait.summarize(n_paths, demand, g.dt_h)};
}

}  // namespace vslr
