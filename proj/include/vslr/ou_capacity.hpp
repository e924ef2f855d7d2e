#pragma once

// Capped Ornstein-Uhlenbeck bottleneck capacity C_t = min(X_t, c_max),
// dX = kappa (c_max - X) dt + sigma dW.
//
// Time runs in minutes inside the process; flows are veh/h. Cumulative
// discharge M(u) = int_0^u C_t dt is reported in vehicles (divide by 60),
// and its variance in veh^2. Queue-delay moments are in hours.

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <ostream>
#include <random>
#include <span>
#include <vector>

#include "vslr/errors.hpp"
#include "vslr/numerics.hpp"

namespace vslr {

struct OUParams {
  double kappa = 0.2;     // [1/min]
  double c_max = 6240.0;  // cap and long-run mean [veh/h]
  double sigma = 139.5;   // [veh/h per sqrt(min)]

  double delta() const { return sigma / std::sqrt(4.0 * std::numbers::pi * kappa); }
  double stationary_sd() const { return sigma / std::sqrt(2.0 * kappa); }

  void validate() const {
    if (!(kappa > 0.0) || !(sigma >= 0.0) || !(c_max > 0.0)) throw ConfigError("ou: bad parameters");
    if (delta() >= c_max) throw ConfigError("ou: delta must stay below c_max");
  }

  // Uncapped mean and variance after s minutes from X_0 = x0.
  double free_mean(double s, double x0) const { return c_max - (c_max - x0) * std::exp(-kappa * s); }
  double free_var(double s) const {
    return sigma * sigma / (2.0 * kappa) * -std::expm1(-2.0 * kappa * s);
  }
};

// ---- sampling -------------------------------------------------------------

// Exact Gaussian transition of the free process on a grid of n steps of
// dt minutes; element 0 is x0.
template <class Rng>
std::vector<double> sample_free_path(const OUParams& p, double x0, double dt, int n, Rng& rng) {
  std::normal_distribution<double> z(0.0, 1.0);
  const double decay = std::exp(-p.kappa * dt);
  const double sd = std::sqrt(p.free_var(dt));
  std::vector<double> x(n + 1);
  x[0] = x0;
  for (int i = 1; i <= n; ++i) x[i] = p.c_max - (p.c_max - x[i - 1]) * decay + sd * z(rng);
  return x;
}

template <class Rng>
std::vector<double> sample_path(const OUParams& p, double C0, double dt, int n, Rng& rng) {
  if (C0 > p.c_max) throw DomainError("sample_path: C0 above the cap");
  auto x = sample_free_path(p, C0, dt, n, rng);
  for (auto& v : x) v = std::min(v, p.c_max);
  return x;
}

template <class Rng>
double sample_stationary(const OUParams& p, Rng& rng) {
  std::normal_distribution<double> z(0.0, 1.0);
  return p.c_max + p.stationary_sd() * z(rng);
}

inline void write_capacity_csv(std::ostream& os, double dt, std::span<const double> C) {
  os << "t_min,C_vph\n";
  for (std::size_t i = 0; i < C.size(); ++i) os << i * dt << ',' << C[i] << '\n';
}

// ---- moments of the capped process ---------------------------------------

// E[C_{t0+s} | C_{t0} = C0] = c_max - a e^{-ks} Phi(d_s) - sqrt(v_s) phi(d_s),
// a = c_max - C0, d_s = a e^{-ks} / sqrt(v_s).
inline double capped_mean(double s, double C0, const OUParams& p) {
  if (s < 0.0) throw DomainError("capped_mean: negative lag");
  const double gap = (p.c_max - C0) * std::exp(-p.kappa * s);
  const double v = p.free_var(s);
  if (v <= 0.0) return p.c_max - std::max(gap, 0.0);
  const double sd = std::sqrt(v);
  const double d = gap / sd;
  return p.c_max - gap * num::norm_cdf(d) - sd * num::norm_pdf(d);
}

// E[M(u)] in vehicles: exact integral of capped_mean over [0, u] minutes.
inline double discharge_mean(double u, double C0, const OUParams& p) {
  if (u < 0.0) throw DomainError("discharge_mean: negative horizon");
  if (u == 0.0) return 0.0;
  return num::integrate([&](double s) { return capped_mean(s, C0, p); }, 0.0, u, 1e-12) / 60.0;
}

// Closed-form approximation of E[M(u)] (vehicles).
inline double discharge_mean_closed_form(double u, double C0, const OUParams& p) {
  const double a = p.c_max - C0, k = p.kappa, d = p.delta();
  return (p.c_max * u - a / k * -std::expm1(-k * u) - d * u + d / (4.0 * k) * -std::expm1(-2.0 * k * u)) /
         60.0;
}

// h(rho) = Cov(min(Z1,0), min(Z2,0)) for a standard bivariate normal with
// correlation rho. Conditioning on Z1 leaves a one-dimensional integral
// whose inner expectation is closed form.
inline double clipped_kernel(double rho) {
  if (rho < 0.0 || rho > 1.0) throw DomainError("clipped_kernel: rho outside [0,1]");
  constexpr double kCross = 1.0 / (2.0 * std::numbers::pi);  // E[min(Z,0)]^2
  if (rho == 0.0) return 0.0;
  if (rho == 1.0) return 0.5 - kCross;
  const double s = std::sqrt(1.0 - rho * rho);
  const double joint = num::integrate(
      [&](double z) { return z * num::norm_pdf(z) * num::mean_min_zero(rho * z, s); }, -40.0, 0.0, 1e-14);
  return joint - kCross;
}

// K = int_0^1 h(r)/r dr (cached).
inline double kernel_constant() {
  static const double K = num::integrate([](double r) { return clipped_kernel(r) / r; }, 0.0, 1.0, 1e-12);
  return K;
}

// int_0^1 h(r) |ln r| / r dr, the finite-horizon correction of Var[M(u)].
inline double kernel_log_moment() {
  static const double K2 =
      num::integrate([](double r) { return clipped_kernel(r) * -std::log(r) / r; }, 0.0, 1.0, 1e-12);
  return K2;
}

// Var[M(u)] in veh^2 for a stationary start:
// sigma^2/kappa^3 int_{e^{-ku}}^1 (ku + ln r) h(r)/r dr.
inline double discharge_var(double u, const OUParams& p) {
  if (u < 0.0) throw DomainError("discharge_var: negative horizon");
  if (u == 0.0 || p.sigma == 0.0) return 0.0;
  const double ku = p.kappa * u;
  const double I = num::integrate([&](double r) { return (ku + std::log(r)) * clipped_kernel(r) / r; },
                                  std::exp(-ku), 1.0, 1e-11);
  return p.sigma * p.sigma / std::pow(p.kappa, 3) * I / 3600.0;
}

// Linear growth law K sigma^2 u / kappa^2 (veh^2).
inline double discharge_var_asymptotic(double u, const OUParams& p) {
  return kernel_constant() * p.sigma * p.sigma * u / (p.kappa * p.kappa) / 3600.0;
}

// Var[M(u) | C_0 = C0] in veh^2: double integral of the exact covariance of
// the capped non-stationary process, Cov(C_s, C_t) from the conditional
// law X_t | X_s = m_t + e^{-k(t-s)} (X_s - m_s) + N(0, v_{t-s}).
inline double discharge_var(double u, double C0, const OUParams& p) {
  if (u < 0.0) throw DomainError("discharge_var: negative horizon");
  if (C0 > p.c_max) throw DomainError("discharge_var: C0 above the cap");
  if (u == 0.0 || p.sigma == 0.0) return 0.0;
  const double c = p.c_max;
  auto cov = [&](double s, double t) {
    const double vs = p.free_var(s);
    if (vs <= 1e-12) return 0.0;
    const double ms = p.free_mean(s, C0) - c, ss = std::sqrt(vs);
    const double mt = p.free_mean(t, C0) - c;
    const double rho = std::exp(-p.kappa * (t - s));
    const double st = std::sqrt(p.free_var(t - s));
    const double z_hi = std::min(8.0, -ms / ss);  // y = ms + ss z < 0
    if (z_hi <= -8.0) return 0.0;
    const double joint = num::integrate_gl(
        [&](double z) {
          const double y = ms + ss * z;
          return y * num::norm_pdf(z) * num::mean_min_zero(mt + rho * (y - ms), st);
        },
        -8.0, z_hi);
    return joint - num::mean_min_zero(ms, ss) * num::mean_min_zero(mt, std::sqrt(p.free_var(t)));
  };
  const int panels = std::max(4, static_cast<int>(std::ceil(p.kappa * u)));
  const double total = num::integrate_panels(
      [&](double t) { return num::integrate_panels([&](double s) { return cov(s, t); }, 0.0, t, 2); }, 0.0,
      u, panels);
  return 2.0 * total / 3600.0;
}

// ---- first passage of the cumulative discharge ----------------------------

enum class VarianceRate { kernel, bare };  // bare: sigma^2 without the kernel factor

// Variance growth rate of M in veh^2/h.
inline double variance_rate(const OUParams& p, VarianceRate rate = VarianceRate::kernel) {
  if (rate == VarianceRate::bare) return p.sigma * p.sigma;
  return kernel_constant() * p.sigma * p.sigma / (60.0 * p.kappa * p.kappa);
}

struct QueueDelayMoments {
  double mean = 0.0;      // [h]
  double variance = 0.0;  // [h^2]
  double shape = 0.0;     // inverse-Gaussian lambda [h]
};

// Time for M to clear a backlog of B vehicles, drift c_max - delta.
inline QueueDelayMoments queue_delay_moments(double B, const OUParams& p,
                                             VarianceRate rate = VarianceRate::kernel) {
  if (B < 0.0) throw DomainError("queue_delay_moments: negative backlog");
  if (B == 0.0) return {};
  const double mu = p.c_max - p.delta();
  const double s2 = variance_rate(p, rate);
  if (s2 == 0.0) return {B / mu, 0.0, std::numeric_limits<double>::infinity()};
  return {B / mu, B * s2 / (mu * mu * mu), B * B / s2};
}

namespace detail {

// log P(Z > z), stable far into the tail.
inline double log_norm_sf(double z) {
  if (z < 30.0) return std::log(num::norm_cdf(-z));
  const double z2 = z * z;
  return -0.5 * z2 - std::log(z * std::sqrt(2.0 * std::numbers::pi)) + std::log1p(-1.0 / z2 + 3.0 / (z2 * z2));
}

}  // namespace detail

// Simulated time [h] for M to reach B from a stationary start, exact OU
// transitions on a dt-minute grid, trapezoidal discharge within a step.
template <class Rng>
double sample_first_passage(const OUParams& p, double B, double dt, Rng& rng) {
  if (!(B > 0.0) || !(dt > 0.0)) throw DomainError("sample_first_passage: need B > 0 and dt > 0");
  std::normal_distribution<double> z(0.0, 1.0);
  const double decay = std::exp(-p.kappa * dt), sd = std::sqrt(p.free_var(dt));
  double x = sample_stationary(p, rng), M = 0.0, t = 0.0;
  for (;;) {
    const double c0 = std::min(x, p.c_max);
    x = p.c_max - (p.c_max - x) * decay + sd * z(rng);
    const double inc = 0.5 * (c0 + std::min(x, p.c_max)) * dt / 60.0;
    if (inc > 0.0 && M + inc >= B) return (t + dt * (B - M) / inc) / 60.0;
    M += std::max(inc, 0.0);
    t += dt;
  }
}

inline double inverse_gaussian_pdf(double x, double mean, double shape) {
  if (x <= 0.0) return 0.0;
  return std::sqrt(shape / (2.0 * std::numbers::pi * x * x * x)) *
         std::exp(-shape * (x - mean) * (x - mean) / (2.0 * mean * mean * x));
}

inline double inverse_gaussian_cdf(double x, double mean, double shape) {
  if (x <= 0.0) return 0.0;
  const double r = std::sqrt(shape / x);
  const double first = num::norm_cdf(r * (x / mean - 1.0));
  const double second = std::exp(2.0 * shape / mean + detail::log_norm_sf(r * (x / mean + 1.0)));
  return std::min(1.0, first + second);
}

}  // namespace vslr
