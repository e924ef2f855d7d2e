#pragma once

// Small numeric toolbox shared by the analytic modules: normal pdf/cdf,
// adaptive quadrature and a bracketing root finder.

#include <boost/math/distributions/normal.hpp>
#include <boost/math/quadrature/gauss.hpp>
#include <boost/math/quadrature/gauss_kronrod.hpp>

#include <cmath>
#include <functional>
#include <limits>
#include <numbers>

#include "vslr/errors.hpp"

namespace vslr::num {

inline constexpr double kInvSqrt2Pi = 0.3989422804014327;

inline double norm_pdf(double z) { return kInvSqrt2Pi * std::exp(-0.5 * z * z); }

inline double norm_cdf(double z) { return 0.5 * std::erfc(-z / std::numbers::sqrt2); }

inline double norm_quantile(double p) {
  static const boost::math::normal_distribution<double> std_normal(0.0, 1.0);
  return boost::math::quantile(std_normal, p);
}

// E[min(W, 0)] for W ~ N(m, s^2); s == 0 collapses to min(m, 0).
inline double mean_min_zero(double m, double s) {
  if (s <= 0.0) return std::min(m, 0.0);
  const double z = m / s;
  return m * norm_cdf(-z) - s * norm_pdf(z);
}

// Adaptive 31-point Gauss-Kronrod on [a, b] (b may be +inf).
template <class F>
double integrate(F&& f, double a, double b, double tol = 1e-10, unsigned max_depth = 15) {
  if (a == b) return 0.0;
  double err = 0.0;
  return boost::math::quadrature::gauss_kronrod<double, 31>::integrate(f, a, b, max_depth, tol,
                                                                       &err);
}

// Fixed-order Gauss-Legendre, for smooth integrands evaluated many times.
template <class F>
double integrate_gl(F&& f, double a, double b) {
  return boost::math::quadrature::gauss<double, 64>::integrate(f, a, b);
}

// Composite fixed-order rule over `panels` equal pieces.
template <class F>
double integrate_panels(F&& f, double a, double b, int panels) {
  const double w = (b - a) / panels;
  double s = 0.0;
  for (int i = 0; i < panels; ++i)
    s += boost::math::quadrature::gauss<double, 20>::integrate(f, a + i * w, a + (i + 1) * w);
  return s;
}

// Bisection for a sign change of f on [lo, hi]. Assumes f(lo) and f(hi)
// differ in sign; returns the midpoint of the final bracket.
template <class F>
double bisect(F&& f, double lo, double hi, double tol = 1e-12, int max_iter = 200) {
  double flo = f(lo);
  const double fhi = f(hi);
  if (flo == 0.0) return lo;
  if (fhi == 0.0) return hi;
  if ((flo > 0) == (fhi > 0)) throw DomainError("bisect: no sign change on bracket");
  for (int i = 0; i < max_iter && hi - lo > tol; ++i) {
    const double mid = 0.5 * (lo + hi);
    const double fm = f(mid);
    if (fm == 0.0) return mid;
    if ((fm > 0) == (flo > 0)) {
      lo = mid;
      flo = fm;
    } else {
      hi = mid;
    }
  }
  return 0.5 * (lo + hi);
}

}  // namespace vslr::num
