#pragma once

// Day-to-day reliability layer: minimum average travel time per demand
// realization, mean/std threshold policy (discrete and continuous), and
// the table of joint metrics across risk weights.

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <numeric>
#include <ostream>
#include <span>
#include <vector>

#include "vslr/demand_model.hpp"
#include "vslr/errors.hpp"
#include "vslr/numerics.hpp"

namespace vslr {

enum class PipelineVariant { verbatim, corrected };

struct MinTTParams {
  TrapezoidDemand demand{};
  double q_bn = 6240.0;           // [veh/h]
  double free_flow_min = 5.0;     // [min]
  double q_p_limit = 10152.0;     // queue must dissipate below this peak
};

// Intermediate quantities of one evaluation; flows in veh/h, times in h,
// queues in veh, T_queue in veh*h.
struct MinTTResult {
  double T_min = 0.0;  // [min]
  bool congested = false;
  double alpha = 0.0, beta = 0.0, H = 0.0, t0 = 0.0, t1 = 0.0, s1 = 0.0;
  double L2 = 0.0, Q0 = 0.0, T_queue = 0.0, denominator = 0.0;
};

inline MinTTResult min_avg_tt(double q_p, PipelineVariant variant, const MinTTParams& p = {}) {
  const auto& dm = p.demand;
  if (q_p < dm.a) throw DomainError("min_avg_tt: peak below the initial flow");
  if (q_p > p.q_p_limit) throw DomainError("min_avg_tt: queue persists (peak above limit)");
  MinTTResult r;
  r.T_min = p.free_flow_min;
  r.denominator = variant == PipelineVariant::verbatim ? 2.0 * q_p + dm.a + dm.b : dm.total(q_p);
  if (q_p <= p.q_bn) return r;
  if (dm.a >= p.q_bn) throw DomainError("min_avg_tt: initial flow already above capacity");

  r.congested = true;
  r.alpha = dm.rise_slope(q_p);
  r.H = q_p - p.q_bn;
  r.t0 = (p.q_bn - dm.a) / r.alpha;
  const double rise_part = r.alpha / 6.0 * std::pow(dm.rise_hours - r.t0, 3);

  if (variant == PipelineVariant::verbatim) {
    r.beta = (q_p - dm.b) / 3.0;
    r.L2 = r.H * r.H / 2.0 * (1.0 / r.alpha + 1.0 / r.beta);
    r.t1 = 2.0 + 2.0 * std::sqrt(r.L2 / (q_p - dm.b));
    r.s1 = r.t1 - 2.0;
    r.T_queue = rise_part + r.L2 * r.s1 + r.H / 2.0 * r.s1 * r.s1 - r.beta / 6.0 * std::pow(r.s1, 3);
  } else {
    // Queue at the peak is H^2/(2 alpha); afterwards Q(s) = Q0 + H s - beta s^2/2.
    r.beta = dm.fall_slope(q_p);
    r.Q0 = r.H * r.H / (2.0 * r.alpha);
    r.L2 = r.Q0;
    r.s1 = (r.H + std::sqrt(r.H * r.H + 2.0 * r.beta * r.Q0)) / r.beta;
    auto area = [&](double s) {
      return r.Q0 * s + r.H / 2.0 * s * s - r.beta / 6.0 * s * s * s;
    };
    if (r.s1 <= dm.fall_hours) {
      r.T_queue = rise_part + area(r.s1);
    } else {
      // Demand ends with a queue left; it drains at q_bn.
      const double f = dm.fall_hours;
      const double q_end = r.Q0 + r.H * f - r.beta / 2.0 * f * f;
      r.T_queue = rise_part + area(f) + q_end * q_end / (2.0 * p.q_bn);
      r.s1 = f + q_end / p.q_bn;
    }
    r.t1 = dm.rise_hours + r.s1;
  }
  r.T_min = p.free_flow_min + 60.0 * r.T_queue / r.denominator;
  return r;
}

// Area under a point queue fed by `demand` and served at `service` once
// the arrival rate first exceeds `onset` (capacity-drop baseline when
// service < onset); the queue is piecewise quadratic, so this is exact.
// Result in veh*h.
inline double queue_area(const PiecewiseLinearProfile& demand, double onset, double service) {
  if (!(service > 0.0)) throw DomainError("queue_area: service rate must be positive");
  double Q = 0.0, area = 0.0;
  bool active = false;
  for (const auto& seg : demand.segments()) {
    const double s = (seg.v1 - seg.v0) / (seg.t1 - seg.t0);
    auto rate = [&](double t) { return seg.v0 + s * (t - seg.t0); };
    double ta = seg.t0;
    while (ta < seg.t1) {
      if (!active) {
        if (rate(ta) > onset) {
          active = true;
        } else if (s > 0.0 && seg.v1 > onset) {
          ta = std::max(ta, seg.t0 + (onset - seg.v0) / s);
          active = true;
        } else {
          break;
        }
      }
      // Q(x) = Q + c x + s x^2 / 2 on [ta, t1].
      const double len = seg.t1 - ta;
      const double c = rate(ta) - service;
      const double eps = 1e-12 * std::max(1.0, len);
      double root = std::numeric_limits<double>::infinity();
      if (std::abs(s) < 1e-12) {
        if (c < 0.0) root = -Q / c;
      } else {
        const double disc = c * c - 2.0 * s * Q;
        if (disc >= 0.0) {
          const double sq = std::sqrt(disc);
          for (double x : {(-c - sq) / s, (-c + sq) / s})
            if (x > eps && x < root) root = x;
        }
      }
      const double x = std::min(root, len);
      area += Q * x + c * x * x / 2.0 + s * x * x * x / 6.0;
      if (root <= len) {
        Q = 0.0;
        active = false;
        ta += root;
      } else {
        Q = std::max(0.0, Q + c * x + s * x * x / 2.0);
        ta = seg.t1;
      }
    }
  }
  return area + Q * Q / (2.0 * service);  // drain after demand ends
}

// Average travel time without control when the bottleneck drops to
// (1-drop) q_bn as soon as a queue forms [min].
inline double uncontrolled_avg_tt(double q_p, double drop, const MinTTParams& p = {}) {
  if (q_p <= p.q_bn) return p.free_flow_min;
  const auto prof = p.demand.profile(q_p);
  return p.free_flow_min + 60.0 * queue_area(prof, p.q_bn, (1.0 - drop) * p.q_bn) / prof.total();
}

// Law of T = curve(q_p) under the peak distribution; curve is constant
// (= floor) up to q_free and strictly increasing above.
class TravelTimeDistribution {
 public:
  TravelTimeDistribution(std::function<double(double)> curve, PeakDistribution dist, double q_free,
                         double floor)
      : curve_(std::move(curve)), dist_(dist), q_free_(q_free), floor_(floor) {
    dist_.validate();
    q_hi_ = std::min(dist_.upper, dist_.mean + 12.0 * dist_.sd);
    q_lo_ = std::max(q_free_, dist_.lower);
    t_sup_ = curve_(q_hi_);
    const double d1 = moment_above(q_lo_, floor_, 1);
    E_ = floor_ + d1;
    Std_ = std::sqrt(std::max(0.0, moment_above(q_lo_, floor_, 2) - d1 * d1));
  }

  static TravelTimeDistribution calibrated(PipelineVariant v, const MinTTParams& p = {},
                                           PeakDistribution d = {}) {
    return TravelTimeDistribution([v, p](double q) { return min_avg_tt(q, v, p).T_min; }, d,
                                  p.q_bn, p.free_flow_min);
  }

  double floor() const { return floor_; }
  double essential_sup() const { return t_sup_; }
  double mean() const { return E_; }
  double stddev() const { return Std_; }
  double curve(double q) const { return curve_(q); }
  const PeakDistribution& peak() const { return dist_; }

  // P(T = floor): all peaks that never congest.
  double atom() const { return dist_.cdf(q_free_); }

  // Peak flow with curve(q) = t, for floor < t <= sup.
  double inverse(double t) const {
    if (t <= floor_) return q_free_;
    if (t >= t_sup_) return q_hi_;
    return num::bisect([&](double q) { return curve_(q) - t; }, q_lo_, q_hi_, 1e-9);
  }

  double cdf(double t) const {
    if (t < floor_) return 0.0;
    if (t >= t_sup_) return 1.0;
    return dist_.cdf(inverse(t));
  }

  // Continuous part of the density (change of variables); the atom at
  // the floor is reported separately.
  double density(double t) const {
    if (t <= floor_ || t >= t_sup_) return 0.0;
    const double q = inverse(t);
    const double h = 1e-3;
    const double slope = (curve_(q + h) - curve_(std::max(q_lo_, q - h))) / (q + h - std::max(q_lo_, q - h));
    return dist_.pdf(q) / slope;
  }

  struct FloorMoments {
    double P, mean, stddev;
  };

  // Moments of max(T, r).
  FloorMoments floored(double r) const {
    if (r <= floor_) return {r < floor_ ? 0.0 : atom(), E_, Std_};
    if (r >= t_sup_) return {1.0, r, 0.0};
    const double qr = inverse(r);
    const double P = dist_.cdf(qr);
    const double d1 = moment_above(qr, r, 1);
    return {P, r + d1, std::sqrt(std::max(0.0, moment_above(qr, r, 2) - d1 * d1))};
  }

 private:
  // int_{q_from} (curve - shift)^power dF. Taking moments about the
  // threshold avoids cancellation when almost all mass sits on it.
  double moment_above(double q_from, double shift, int power) const {
    if (q_from >= q_hi_) return 0.0;
    auto f = [&](double q) { return std::pow(curve_(q) - shift, power) * dist_.pdf(q); };
    return num::integrate(f, q_from, q_hi_, 1e-12);
  }

  std::function<double(double)> curve_;
  PeakDistribution dist_;
  double q_free_, floor_;
  double q_lo_ = 0.0, q_hi_ = 0.0, t_sup_ = 0.0, E_ = 0.0, Std_ = 0.0;
};

struct ObjectiveValue {
  double J, dJ, mean, stddev, P;
};

// J(r) = alpha E[max(T,r)] + (1-alpha) Std[max(T,r)] and its exact slope.
inline ObjectiveValue objective_J(double r, double alpha, const TravelTimeDistribution& dist) {
  const auto m = dist.floored(r);
  ObjectiveValue o{alpha * m.mean + (1.0 - alpha) * m.stddev, 0.0, m.mean, m.stddev, m.P};
  if (r < dist.floor()) return o;
  o.dJ = m.stddev > 0.0 ? alpha * m.P + (1.0 - alpha) * (r - m.mean) * m.P / m.stddev : alpha;
  return o;
}

// Alternative slope with the extra r^2 phi(r)/2 term. Kept for reference.
inline double objective_derivative_alt(double r, double alpha, const TravelTimeDistribution& dist) {
  const auto m = dist.floored(r);
  if (m.stddev <= 0.0) return alpha;
  return alpha * m.P +
         (1.0 - alpha) * (r * m.P + 0.5 * r * r * dist.density(r) - m.mean * m.P) / m.stddev;
}

inline double critical_alpha(const TravelTimeDistribution& dist) {
  const double gap = dist.mean() - dist.floor();
  return gap / (gap + dist.stddev());
}

struct ThresholdSolution {
  double r_star = 0.0;
  double alpha = 0.0;
  double mean = 0.0, stddev = 0.0, J = 0.0;
  std::size_t j_star = 0;        // number of realizations lifted to the floor
  std::vector<double> targets;   // discrete case, input order
};

inline ThresholdSolution solve_threshold(double alpha, const TravelTimeDistribution& dist,
                                         int max_iter = 60) {
  if (alpha < 0.0 || alpha > 1.0) throw DomainError("solve_threshold: alpha outside [0,1]");
  ThresholdSolution s;
  s.alpha = alpha;
  if (alpha == 0.0) {
    s.r_star = dist.essential_sup();
  } else if (alpha == 1.0 || alpha >= critical_alpha(dist)) {
    s.r_star = dist.floor();
  } else {
    double lo = dist.floor(), hi = dist.essential_sup();
    for (int i = 0; i < max_iter && hi - lo > 1e-9; ++i) {
      const double mid = 0.5 * (lo + hi);
      (objective_J(mid, alpha, dist).dJ < 0.0 ? lo : hi) = mid;
    }
    s.r_star = 0.5 * (lo + hi);
  }
  const auto o = objective_J(s.r_star, alpha, dist);
  s.mean = o.mean;
  s.stddev = o.stddev;
  s.J = o.J;
  return s;
}

// ---- discrete scenario problem ------------------------------------------

namespace detail {

struct Moments {
  double mean, stddev;
};

inline Moments weighted_moments(std::span<const double> x, std::span<const double> p) {
  double m = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) m += p[i] * x[i];
  double v = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) v += p[i] * (x[i] - m) * (x[i] - m);
  return {m, std::sqrt(std::max(0.0, v))};
}

}  // namespace detail

inline double discrete_objective(std::span<const double> targets, std::span<const double> p, double alpha) {
  const auto mo = detail::weighted_moments(targets, p);
  return alpha * mo.mean + (1.0 - alpha) * mo.stddev;
}

// min alpha E[T] + (1-alpha) Std[T] s.t. T_i >= m_i. Scans every floor
// candidate: the sorted bounds and the stationary floor on each segment
// between consecutive bounds (J is convex along each segment).
inline ThresholdSolution discrete_solve(std::span<const double> m, std::span<const double> p, double alpha) {
  if (m.empty() || m.size() != p.size()) throw DomainError("discrete_solve: empty or mismatched input");
  if (alpha < 0.0 || alpha > 1.0) throw DomainError("discrete_solve: alpha outside [0,1]");
  double psum = 0.0;
  for (double pi : p) {
    if (!(pi > 0.0)) throw DomainError("discrete_solve: probabilities must be positive");
    psum += pi;
  }
  if (std::abs(psum - 1.0) > 1e-9) throw DomainError("discrete_solve: probabilities must sum to 1");

  const std::size_t n = m.size();
  std::vector<double> sorted(m.begin(), m.end());
  std::sort(sorted.begin(), sorted.end());
  std::vector<double> T(n);
  auto J_at = [&](double r) {
    for (std::size_t i = 0; i < n; ++i) T[i] = std::max(m[i], r);
    return discrete_objective(T, p, alpha);
  };
  auto slope_at = [&](double r) {
    for (std::size_t i = 0; i < n; ++i) T[i] = std::max(m[i], r);
    const auto mo = detail::weighted_moments(T, p);
    double P = 0.0;
    for (std::size_t i = 0; i < n; ++i)
      if (m[i] <= r) P += p[i];
    return mo.stddev > 0.0 ? alpha * P + (1.0 - alpha) * (r - mo.mean) * P / mo.stddev : alpha;
  };

  double best_r = sorted.front();
  double best_J = J_at(best_r);
  auto consider = [&](double r) {
    const double j = J_at(r);
    if (j < best_J - 1e-15 || (j <= best_J + 1e-15 && r < best_r)) {
      best_J = j;
      best_r = r;
    }
  };
  for (double r : sorted) consider(r);
  if (alpha < 1.0) {
    for (std::size_t j = 0; j + 1 < n; ++j) {
      double lo = sorted[j], hi = sorted[j + 1];
      if (!(hi > lo)) continue;
      // Interior stationary floor: slope changes sign inside the segment.
      const double slo = slope_at(lo + 1e-15 * std::max(1.0, std::abs(lo)));
      const double shi = slope_at(hi - 1e-15 * std::max(1.0, std::abs(hi)));
      if (!(slo < 0.0 && shi > 0.0)) continue;
      for (int it = 0; it < 200 && hi - lo > 1e-15 * std::max(1.0, std::abs(hi)); ++it) {
        const double mid = 0.5 * (lo + hi);
        (slope_at(mid) < 0.0 ? lo : hi) = mid;
      }
      consider(0.5 * (lo + hi));
    }
  }

  ThresholdSolution s;
  s.alpha = alpha;
  s.r_star = best_r;
  s.targets.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    s.targets[i] = std::max(m[i], best_r);
    if (m[i] < best_r) ++s.j_star;
  }
  const auto mo = detail::weighted_moments(s.targets, p);
  s.mean = mo.mean;
  s.stddev = mo.stddev;
  s.J = alpha * mo.mean + (1.0 - alpha) * mo.stddev;
  return s;
}

struct KKTReport {
  double stationarity = 0.0;   // max |dJ/dT_i| over non-binding targets
  double slackness = 0.0;      // max |lambda_i (T_i - m_i)|
  double min_dual = 0.0;       // min lambda_i
  double min_primal = 0.0;     // min (T_i - m_i)
  std::vector<double> lambda;

  bool stationarity_ok(double tol = 1e-8) const { return stationarity <= tol; }
  bool slackness_ok(double tol = 1e-8) const { return slackness <= tol; }
  bool dual_ok(double tol = 1e-10) const { return min_dual >= -tol; }
  bool primal_ok() const { return min_primal >= 0.0; }
  bool ok() const { return stationarity_ok() && slackness_ok() && dual_ok() && primal_ok(); }
};

// Multipliers lambda_i = p_i (alpha + (1-alpha) z_i) with z = (T - E)/Std
// and the four optimality conditions. At a constant target vector Std is
// not differentiable; z is then the subgradient with z_i = -alpha/(1-alpha)
// on free targets and the balancing value on binding ones, and the
// stationarity residual measures how far it leaves the unit ball.
inline KKTReport kkt_verify(std::span<const double> targets, std::span<const double> m,
                            std::span<const double> p, double alpha, double binding_tol = 1e-9) {
  if (targets.size() != m.size() || m.size() != p.size()) throw DomainError("kkt_verify: size mismatch");
  const std::size_t n = m.size();
  const auto mo = detail::weighted_moments(targets, p);
  std::vector<bool> binding(n);
  double P_free = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    binding[i] = std::abs(targets[i] - m[i]) <= binding_tol * std::max(1.0, std::abs(m[i]));
    if (!binding[i]) P_free += p[i];
  }

  KKTReport rep;
  std::vector<double> z(n, 0.0);
  const bool flat = mo.stddev <= 1e-12 * std::max(1.0, std::abs(mo.mean));
  if (flat && alpha < 1.0) {
    const double c = alpha / (1.0 - alpha);
    const double P_bind = 1.0 - P_free;
    const double zb = P_bind > 0.0 ? c * P_free / P_bind : 0.0;
    for (std::size_t i = 0; i < n; ++i) z[i] = binding[i] ? zb : -c;
    const double norm2 = c * c * P_free + (P_bind > 0.0 ? zb * zb * P_bind : 0.0);
    rep.stationarity = std::max(0.0, std::sqrt(norm2) - 1.0);
  } else if (!flat) {
    for (std::size_t i = 0; i < n; ++i) z[i] = (targets[i] - mo.mean) / mo.stddev;
  }

  rep.min_dual = std::numeric_limits<double>::infinity();
  rep.min_primal = std::numeric_limits<double>::infinity();
  rep.lambda.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double grad = p[i] * (alpha + (1.0 - alpha) * z[i]);
    const double gap = targets[i] - m[i];
    rep.lambda[i] = binding[i] ? grad : 0.0;
    if (!binding[i]) rep.stationarity = std::max(rep.stationarity, std::abs(grad));
    rep.slackness = std::max(rep.slackness, std::abs(rep.lambda[i] * gap));
    rep.min_dual = std::min(rep.min_dual, rep.lambda[i]);
    rep.min_primal = std::min(rep.min_primal, gap);
  }
  return rep;
}

// ---- joint metrics table ------------------------------------------------

struct Table1Row {
  double alpha, tau_star, q_p_star, E_tau, Std_tau, J_min, delta_J, rel_improvement;
};

// `baseline` is the uncontrolled law the improvements are measured against.
inline Table1Row table1_row(double alpha, const TravelTimeDistribution& controlled,
                            const TravelTimeDistribution& baseline) {
  const auto s = solve_threshold(alpha, controlled);
  const double J0 = alpha * baseline.mean() + (1.0 - alpha) * baseline.stddev();
  Table1Row row{alpha, s.r_star, controlled.inverse(s.r_star), s.mean, s.stddev, s.J, J0 - s.J, 0.0};
  row.rel_improvement = J0 > 0.0 ? row.delta_J / J0 : 0.0;
  return row;
}

inline void write_table1_csv(std::ostream& os, std::span<const Table1Row> rows) {
  os << "alpha,tau_star,q_p_star,E_tau,Std_tau,J_min,delta_J,rel_improvement\n";
  for (const auto& r : rows)
    os << r.alpha << ',' << r.tau_star << ',' << r.q_p_star << ',' << r.E_tau << ',' << r.Std_tau << ','
       << r.J_min << ',' << r.delta_J << ',' << r.rel_improvement << '\n';
}

}  // namespace vslr
