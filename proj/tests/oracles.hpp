#pragma once

// Independent reference computations shared by the unit and acceptance
// tests. Nothing here calls the code it is used to check.

#include <algorithm>
#include <cmath>
#include <random>
#include <utility>
#include <vector>

namespace vslr::oracle {

struct Instance {
  std::vector<double> m, p;
  double alpha;
};

inline Instance random_instance(std::mt19937_64& rng) {
  std::uniform_int_distribution<int> n_dist(1, 10);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Instance in;
  const int n = n_dist(rng);
  double s = 0.0;
  for (int i = 0; i < n; ++i) {
    in.m.push_back(5.0 + 5.0 * u(rng));
    in.p.push_back(0.05 + u(rng));
    s += in.p.back();
  }
  for (auto& p : in.p) p /= s;
  in.alpha = 0.02 + 0.96 * u(rng);
  return in;
}

// Brute-force oracle: accelerated projected gradient on {T >= m} for the
// full n-dimensional objective, no threshold structure assumed. Std is
// smoothed as sqrt(var + eps^2) with eps driven to 1e-9 by continuation.
inline double projected_gradient_min(const Instance& in) {
  const std::size_t n = in.m.size();
  double eps = 1e-2;
  auto smooth = [&](const std::vector<double>& T) {
    double E = 0.0;
    for (std::size_t i = 0; i < n; ++i) E += in.p[i] * T[i];
    double v = 0.0;
    for (std::size_t i = 0; i < n; ++i) v += in.p[i] * (T[i] - E) * (T[i] - E);
    return std::pair{E, std::sqrt(v + eps * eps)};
  };
  auto f = [&](const std::vector<double>& T) {
    const auto [E, sd] = smooth(T);
    return in.alpha * E + (1.0 - in.alpha) * sd;
  };
  auto grad = [&](const std::vector<double>& T) {
    const auto [E, sd] = smooth(T);
    std::vector<double> g(n);
    for (std::size_t i = 0; i < n; ++i) g[i] = in.p[i] * (in.alpha + (1.0 - in.alpha) * (T[i] - E) / sd);
    return g;
  };
  std::vector<double> x = in.m;
  for (; eps >= 1e-9; eps *= 0.1) {
    std::vector<double> y = x;
    double step = 1.0, tk = 1.0;
    for (int it = 0; it < 3000; ++it) {
      const auto g = grad(y);
      const double fy = f(y);
      std::vector<double> xn(n);
      for (;;) {
        double lin = 0.0, quad = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
          xn[i] = std::max(in.m[i], y[i] - step * g[i]);
          lin += g[i] * (xn[i] - y[i]);
          quad += (xn[i] - y[i]) * (xn[i] - y[i]);
        }
        if (f(xn) <= fy + lin + quad / (2 * step) + 1e-16 || step < 1e-16) break;
        step *= 0.5;
      }
      const double tn = 0.5 * (1.0 + std::sqrt(1.0 + 4.0 * tk * tk));
      const bool restart = f(xn) > f(x);
      for (std::size_t i = 0; i < n; ++i) y[i] = restart ? xn[i] : xn[i] + (tk - 1.0) / tn * (xn[i] - x[i]);
      tk = restart ? 1.0 : tn;
      x = xn;
      step = std::min(step * 1.5, 1e3);
    }
  }
  double E = 0.0, v = 0.0;
  for (std::size_t i = 0; i < n; ++i) E += in.p[i] * x[i];
  for (std::size_t i = 0; i < n; ++i) v += in.p[i] * (x[i] - E) * (x[i] - E);
  return in.alpha * E + (1.0 - in.alpha) * std::sqrt(v);
}

// Michael-Schucany-Haas transformation sampler.
inline double draw_inverse_gaussian(double mu, double lam, std::mt19937_64& rng) {
  std::normal_distribution<double> z(0.0, 1.0);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const double y = std::pow(z(rng), 2);
  const double x = mu + mu * mu * y / (2.0 * lam) - mu / (2.0 * lam) * std::sqrt(4.0 * mu * lam * y + mu * mu * y * y);
  return u(rng) <= mu / (mu + x) ? x : mu * mu / x;
}

}  // namespace vslr::oracle
