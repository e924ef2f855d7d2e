#pragma once

// Upstream demand profiles (veh/h over hours) and the day-to-day peak
// distribution.

#include <algorithm>
#include <cmath>
#include <random>
#include <span>
#include <vector>

#include "vslr/errors.hpp"
#include "vslr/numerics.hpp"

namespace vslr {

// Piecewise-linear rate profile made of closed segments. Consecutive
// segments share an end time; a value mismatch there is a jump, and the
// left segment wins at the shared instant. Zero outside the support.
class PiecewiseLinearProfile {
 public:
  struct Segment {
    double t0, t1;  // [h]
    double v0, v1;  // [veh/h]
  };

  PiecewiseLinearProfile() = default;

  explicit PiecewiseLinearProfile(std::vector<Segment> segs) : segs_(std::move(segs)) {
    for (std::size_t i = 0; i < segs_.size(); ++i) {
      const auto& s = segs_[i];
      if (!(s.t1 > s.t0)) throw DomainError("profile: segment times must increase");
      if (s.v0 < 0.0 || s.v1 < 0.0) throw DomainError("profile: negative flow");
      if (i > 0 && std::abs(s.t0 - segs_[i - 1].t1) > 1e-12)
        throw DomainError("profile: segments must be contiguous");
    }
  }

  // Continuous profile through (times[i], values[i]).
  static PiecewiseLinearProfile from_points(std::span<const double> times,
                                            std::span<const double> values) {
    if (times.size() != values.size() || times.size() < 2)
      throw DomainError("profile: need at least two matching breakpoints");
    std::vector<Segment> segs;
    for (std::size_t i = 0; i + 1 < times.size(); ++i)
      segs.push_back({times[i], times[i + 1], values[i], values[i + 1]});
    return PiecewiseLinearProfile(std::move(segs));
  }

  double start() const { return segs_.empty() ? 0.0 : segs_.front().t0; }
  double end() const { return segs_.empty() ? 0.0 : segs_.back().t1; }
  const std::vector<Segment>& segments() const { return segs_; }

  double rate(double t) const {
    for (const auto& s : segs_) {
      if (t >= s.t0 && t <= s.t1) return s.v0 + (s.v1 - s.v0) * (t - s.t0) / (s.t1 - s.t0);
    }
    return 0.0;
  }

  // Exact integral of the rate over [start, t].
  double cumulative(double t) const {
    double total = 0.0;
    for (const auto& s : segs_) {
      if (t <= s.t0) break;
      const double te = std::min(t, s.t1);
      const double slope = (s.v1 - s.v0) / (s.t1 - s.t0);
      const double h = te - s.t0;
      total += s.v0 * h + 0.5 * slope * h * h;
    }
    return total;
  }

  double total() const { return cumulative(end()); }

 private:
  std::vector<Segment> segs_;
};

// Calibrated deterministic demand (hours after the start of the evening
// peak). Two-piece form as calibrated, including its jump at t = 1.5.
struct DeterministicDemand {
  static constexpr double kBreak = 1.5;
  double horizon = 3.0;

  double operator()(double t) const {
    if (t < 0.0 || t > horizon) throw DomainError("det_profile: t outside horizon");
    return t <= kBreak ? 447.23 * t + 5795.46 : -620.37 * t + 7708.81;
  }

  PiecewiseLinearProfile profile() const {
    return PiecewiseLinearProfile({{0.0, kBreak, (*this)(0.0), (*this)(kBreak)},
                                   {kBreak, horizon, -620.37 * kBreak + 7708.81, (*this)(horizon)}});
  }
};

// Day-specific trapezoid: rises linearly from `a` at t=0 to the peak at
// t=rise_hours, then falls linearly to `b` at t=rise_hours+fall_hours.
struct TrapezoidDemand {
  double a = 5571.84;
  double b = 4606.96;
  double rise_hours = 2.0;
  double fall_hours = 2.0;

  double rise_slope(double q_p) const { return (q_p - a) / rise_hours; }
  double fall_slope(double q_p) const { return (q_p - b) / fall_hours; }
  double end() const { return rise_hours + fall_hours; }

  double operator()(double q_p, double t) const {
    check(q_p);
    if (t < 0.0) throw DomainError("trapezoid_profile: negative time");
    if (t <= rise_hours) return a + rise_slope(q_p) * t;
    if (t <= end()) return std::max(0.0, q_p - fall_slope(q_p) * (t - rise_hours));
    return 0.0;
  }

  PiecewiseLinearProfile profile(double q_p) const {
    check(q_p);
    return PiecewiseLinearProfile({{0.0, rise_hours, a, q_p}, {rise_hours, end(), q_p, b}});
  }

  // A(end) = rise (a + q_p)/2 + fall (q_p + b)/2.
  double total(double q_p) const {
    return 0.5 * rise_hours * (a + q_p) + 0.5 * fall_hours * (q_p + b);
  }

 private:
  void check(double q_p) const {
    if (q_p < a) throw DomainError("trapezoid_profile: peak below the initial flow");
  }
};

// Stochastic upstream profile as calibrated, kept for reference. Not used by the analysis: its breakpoints and endpoint values
// do not match the trapezoid the travel-time pipeline is built on.
inline double stoch_up_verbatim(double q_p, double x) {
  if (x < 0.0 || x > 3.0) throw DomainError("stoch_up_verbatim: x outside [0, 3]");
  if (x <= 1.5) return (q_p - 5795.46) / 1.5 * x + 5571.84;
  return (5227.33 - q_p) / 1.5 * x + (q_p - 2.0 * (5847.7 - q_p) / 1.5);
}

// Truncated normal law of the daily peak flow.
struct PeakDistribution {
  double mean = 6620.0;
  double sd = 191.0;
  double lower = 5571.84;
  double upper = 10152.0;

  void validate() const {
    if (!(sd > 0.0)) throw ConfigError("peak distribution: sd must be positive");
    if (lower < 0.0 || upper < lower) throw ConfigError("peak distribution: bad truncation");
  }

  double mass() const { return num::norm_cdf(z(upper)) - num::norm_cdf(z(lower)); }

  double pdf(double q) const {
    if (q < lower || q > upper) return 0.0;
    return num::norm_pdf(z(q)) / (sd * mass());
  }

  double cdf(double q) const {
    if (q <= lower) return 0.0;
    if (q >= upper) return 1.0;
    return (num::norm_cdf(z(q)) - num::norm_cdf(z(lower))) / mass();
  }

  // Inverse-CDF draw; one uniform per sample keeps streams aligned.
  template <class Rng>
  double sample(Rng& rng) const {
    if (upper == lower) return lower;
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    const double plo = num::norm_cdf(z(lower));
    const double phi = num::norm_cdf(z(upper));
    const double p = plo + unif(rng) * (phi - plo);
    const double q = mean + sd * num::norm_quantile(std::clamp(p, 1e-300, 1.0 - 1e-16));
    return std::clamp(q, lower, upper);
  }

 private:
  double z(double q) const { return (q - mean) / sd; }
};

}  // namespace vslr
