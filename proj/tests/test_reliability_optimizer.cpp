#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <random>
#include <utility>
#include <sstream>
#include <vector>

#include "oracles.hpp"
#include "vslr/reliability_optimizer.hpp"

using namespace vslr;
using namespace vslr::oracle;

namespace {

const auto& canonical() {
  static const auto d = TravelTimeDistribution::calibrated(PipelineVariant::corrected);
  return d;
}

// Independent queue-area oracle: explicit time stepping of the point
// queue for the trapezoid demand with a fixed service rate.
double queue_area_stepping(double qp, double service, double h = 1e-5) {
  TrapezoidDemand tz;
  double Q = 0.0, area = 0.0;
  for (double t = 0.0; t < 12.0; t += h) {
    const double d = t <= tz.end() ? tz(qp, t + 0.5 * h) : 0.0;
    const double next = std::max(0.0, Q + (d - service) * h);
    area += 0.5 * (Q + next) * h;
    Q = next;
    if (t > tz.end() && Q == 0.0) break;
  }
  return area;
}

TEST(MinAvgTT, FreeFlowBelowCapacity) {
  EXPECT_DOUBLE_EQ(min_avg_tt(6240.0, PipelineVariant::corrected).T_min, 5.0);
  EXPECT_DOUBLE_EQ(min_avg_tt(6240.0, PipelineVariant::verbatim).T_min, 5.0);
  EXPECT_DOUBLE_EQ(min_avg_tt(5800.0, PipelineVariant::corrected).T_min, 5.0);
}

TEST(MinAvgTT, CalibratedPeak) {
  const auto c = min_avg_tt(6620.0, PipelineVariant::corrected);
  EXPECT_NEAR(c.T_min, 5.50, 0.01);
  EXPECT_NEAR(c.H, 380.0, 1e-9);
  EXPECT_NEAR(c.alpha, (6620.0 - 5571.84) / 2.0, 1e-9);
  EXPECT_NEAR(c.Q0, 380.0 * 380.0 / (2.0 * c.alpha), 1e-9);
  EXPECT_NEAR(c.denominator, 23418.8, 1e-9);
  // Regression value of the verbatim pipeline, frozen at first computation.
  EXPECT_NEAR(min_avg_tt(6620.0, PipelineVariant::verbatim).T_min, 5.6640, 5e-4);
}

TEST(MinAvgTT, CorrectedMatchesQueueStepping) {
  for (double qp : {6300.0, 6620.0, 7000.0, 8000.0, 9500.0, 10152.0}) {
    const auto r = min_avg_tt(qp, PipelineVariant::corrected);
    const double oracle = 5.0 + 60.0 * queue_area_stepping(qp, 6240.0) / TrapezoidDemand{}.total(qp);
    EXPECT_NEAR(r.T_min, oracle, 1e-3) << qp;
  }
}

TEST(MinAvgTT, QueueClearsAtS1) {
  const auto r = min_avg_tt(6900.0, PipelineVariant::corrected);
  const double s = r.s1;
  EXPECT_NEAR(r.Q0 + r.H * s - r.beta / 2.0 * s * s, 0.0, 1e-6);
}

TEST(MinAvgTT, StrictlyIncreasingAboveCapacity) {
  double prev = 5.0;
  for (double qp = 6250.0; qp <= 10152.0; qp += 25.0) {
    const double t = min_avg_tt(qp, PipelineVariant::corrected).T_min;
    EXPECT_GT(t, prev);
    prev = t;
  }
}

TEST(MinAvgTT, Errors) {
  EXPECT_THROW(min_avg_tt(10200.0, PipelineVariant::corrected), DomainError);
  EXPECT_THROW(min_avg_tt(5000.0, PipelineVariant::corrected), DomainError);
}

TEST(QueueArea, ExactVersusStepping) {
  TrapezoidDemand tz;
  for (double qp : {6500.0, 7200.0}) {
    EXPECT_NEAR(queue_area(tz.profile(qp), 6240.0, 6240.0), queue_area_stepping(qp, 6240.0), 1e-3);
    // With drop the onset is at 6240 but service is 5616.
    double Q = 0.0, area = 0.0;
    bool on = false;
    const double h = 1e-5;
    for (double t = 0.0; t < 20.0; t += h) {
      const double d = t <= tz.end() ? tz(qp, t + 0.5 * h) : 0.0;
      if (!on && d > 6240.0) on = true;
      const double next = on ? std::max(0.0, Q + (d - 5616.0) * h) : 0.0;
      area += 0.5 * (Q + next) * h;
      Q = next;
      if (on && Q == 0.0) on = false;
    }
    EXPECT_NEAR(queue_area(tz.profile(qp), 6240.0, 5616.0), area, 1e-3 * area);
  }
}

TEST(TTDistribution, AtomAndNormalization) {
  const auto& d = canonical();
  // Truncation below at a shifts the plain normal value by ~2e-8.
  EXPECT_NEAR(d.atom(), 0.5 * std::erfc((6620.0 - 6240.0) / 191.0 / std::sqrt(2.0)), 1e-7);
  EXPECT_NEAR(d.atom(), 0.0234, 2e-4);
  // The density has an integrable singularity at the floor; t = 5 + u^3
  // removes it.
  const double span = std::cbrt(d.essential_sup() - d.floor());
  const double cont = num::integrate(
      [&](double u) { return d.density(d.floor() + u * u * u) * 3.0 * u * u; }, 0.0, span, 1e-10);
  EXPECT_NEAR(cont + d.atom(), 1.0, 1e-6);
  EXPECT_EQ(d.density(4.9), 0.0);
}

TEST(TTDistribution, MeanMatchesMonteCarlo) {
  const auto& d = canonical();
  PeakDistribution peak;
  std::mt19937_64 rng(2024);
  const int n = 100000;
  double s = 0.0, s2 = 0.0;
  for (int i = 0; i < n; ++i) {
    const double t = min_avg_tt(peak.sample(rng), PipelineVariant::corrected).T_min;
    s += t;
    s2 += t * t;
  }
  const double mean = s / n, sd = std::sqrt(s2 / n - mean * mean);
  EXPECT_NEAR(d.mean(), mean, 3.0 * sd / std::sqrt(n));
  // Same mean from the density of T.
  const double span = std::cbrt(d.essential_sup() - d.floor());
  const double from_density =
      d.floor() * d.atom() + num::integrate(
                                 [&](double u) {
                                   const double t = d.floor() + u * u * u;
                                   return t * d.density(t) * 3.0 * u * u;
                                 },
                                 0.0, span, 1e-10);
  EXPECT_NEAR(from_density, mean, 3.0 * sd / std::sqrt(n));
}

TEST(ObjectiveJ, FloorInactiveBelowInfimum) {
  const auto& d = canonical();
  const auto o = objective_J(4.0, 0.5, d);
  EXPECT_NEAR(o.J, 0.5 * d.mean() + 0.5 * d.stddev(), 1e-12);
  EXPECT_EQ(o.dJ, 0.0);
}

TEST(ObjectiveJ, DerivativeMatchesFiniteDifferences) {
  const auto& d = canonical();
  const double lo = d.floor() + 0.05, hi = d.essential_sup() * 0.999;
  for (double alpha : {0.2, 0.5}) {
    for (int i = 0; i < 50; ++i) {
      const double r = lo + (std::min(hi, 12.0) - lo) * i / 49.0;
      const double h = 1e-4;
      const double fd = (objective_J(r + h, alpha, d).J - objective_J(r - h, alpha, d).J) / (2 * h);
      const double an = objective_J(r, alpha, d).dJ;
      EXPECT_LT(std::abs(fd - an), 1e-5 * std::max(std::abs(an), 1e-2)) << r;
    }
  }
}

// Far tail: nearly all mass sits on the threshold, so Std[max(T,r)] is
// tiny and must not be lost to cancellation.
TEST(ObjectiveJ, DerivativeInTheTail) {
  const auto& d = canonical();
  for (double alpha : {0.2, 0.5}) {
    for (double r = 12.0; r < d.essential_sup(); r += 0.37) {
      for (double h : {1e-3, 1e-5}) {
        const double fd = (objective_J(r + h, alpha, d).J - objective_J(r - h, alpha, d).J) / (2 * h);
        EXPECT_NEAR(fd, objective_J(r, alpha, d).dJ, 1e-6) << r << ' ' << h;
      }
    }
  }
}

TEST(ObjectiveJ, AlternativeSlopeHasNoRoot) {
  const auto& d = canonical();
  for (double r = 5.05; r < 9.0; r += 0.05) EXPECT_GT(objective_derivative_alt(r, 0.5, d), 0.0);
}

TEST(ObjectiveJ, UnimodalOnSupport) {
  const auto& d = canonical();
  for (double alpha : {0.2, 0.3, 0.4, 0.5}) {
    int changes = 0;
    double prev = objective_J(d.floor() + 1e-6, alpha, d).dJ;
    for (double r = d.floor() + 0.01; r < 12.0; r += 0.01) {
      const double s = objective_J(r, alpha, d).dJ;
      if ((s > 0) != (prev > 0)) ++changes;
      prev = s;
    }
    EXPECT_EQ(changes, 1) << alpha;
  }
}

TEST(SolveThreshold, StationaryRoot) {
  const auto& d = canonical();
  for (double alpha : {0.2, 0.3, 0.4, 0.5}) {
    const auto s = solve_threshold(alpha, d);
    EXPECT_GT(s.r_star, d.floor());
    EXPECT_NEAR(objective_J(s.r_star, alpha, d).dJ, 0.0, 1e-6);
    // Floor identity r* = E - alpha/(1-alpha) Std at the optimum.
    EXPECT_NEAR(s.r_star, s.mean - alpha / (1.0 - alpha) * s.stddev, 1e-6);
  }
}

TEST(SolveThreshold, SpecialCases) {
  const auto& d = canonical();
  const double ac = critical_alpha(d);
  EXPECT_NEAR(ac, (d.mean() - 5.0) / (d.mean() - 5.0 + d.stddev()), 1e-15);
  EXPECT_EQ(solve_threshold(std::min(1.0, ac + 0.01), d).r_star, 5.0);
  EXPECT_EQ(solve_threshold(1.0, d).r_star, 5.0);
  const auto s0 = solve_threshold(0.0, d);
  EXPECT_EQ(s0.r_star, d.essential_sup());
  EXPECT_NEAR(s0.stddev, 0.0, 1e-12);
  EXPECT_THROW(solve_threshold(1.5, d), DomainError);
}

TEST(SolveThreshold, TargetsDominateBounds) {
  const auto& d = canonical();
  const auto s = solve_threshold(0.3, d);
  PeakDistribution peak;
  std::mt19937_64 rng(5);
  for (int i = 0; i < 10000; ++i) {
    const double tmin = min_avg_tt(peak.sample(rng), PipelineVariant::corrected).T_min;
    EXPECT_GE(std::max(s.r_star, tmin), tmin);
  }
}

// ---- discrete problem -----------------------------------------------------

TEST(DiscreteSolve, DegenerateEqualBounds) {
  const std::vector<double> m{5, 5, 5}, p{1.0 / 3, 1.0 / 3, 1.0 / 3};
  for (double alpha : {0.0, 0.3, 1.0}) {
    const auto s = discrete_solve(m, p, alpha);
    EXPECT_EQ(s.r_star, 5.0);
    EXPECT_NEAR(s.stddev, 0.0, 1e-15);
    EXPECT_NEAR(s.J, alpha * 5.0, 1e-12);
    EXPECT_TRUE(kkt_verify(s.targets, m, p, alpha).ok());
  }
}

TEST(DiscreteSolve, PureMeanKeepsBounds) {
  const std::vector<double> m{7, 5, 6.5, 9}, p{0.1, 0.2, 0.3, 0.4};
  const auto s = discrete_solve(m, p, 1.0);
  for (std::size_t i = 0; i < m.size(); ++i) EXPECT_EQ(s.targets[i], m[i]);
}

TEST(DiscreteSolve, Errors) {
  EXPECT_THROW(discrete_solve(std::vector<double>{}, std::vector<double>{}, 0.5), DomainError);
  EXPECT_THROW(discrete_solve(std::vector<double>{1, 2}, std::vector<double>{0.5, 0.6}, 0.5), DomainError);
}

TEST(DiscreteSolve, MatchesBruteForceAndKKT) {
  std::mt19937_64 rng(99);
  for (int k = 0; k < 200; ++k) {
    const auto in = random_instance(rng);
    const auto s = discrete_solve(in.m, in.p, in.alpha);
    const double oracle = projected_gradient_min(in);
    EXPECT_LE(s.J, oracle + 1e-9);
    EXPECT_NEAR(s.J, oracle, 1e-6);
    const auto rep = kkt_verify(s.targets, in.m, in.p, in.alpha);
    EXPECT_TRUE(rep.ok()) << rep.stationarity << ' ' << rep.slackness << ' ' << rep.min_dual;
  }
}

TEST(DiscreteSolve, ThresholdStructureAndIdentity) {
  std::mt19937_64 rng(3);
  for (int k = 0; k < 1000; ++k) {
    const auto in = random_instance(rng);
    const auto s = discrete_solve(in.m, in.p, in.alpha);
    std::size_t lifted = 0;
    for (std::size_t i = 0; i < in.m.size(); ++i) {
      if (s.targets[i] > in.m[i]) {
        EXPECT_DOUBLE_EQ(s.targets[i], s.r_star);
        ++lifted;
      } else {
        EXPECT_DOUBLE_EQ(s.targets[i], in.m[i]);
      }
    }
    EXPECT_LE(lifted, s.j_star);
    if (lifted > 0 && s.stddev > 0.0) {
      EXPECT_NEAR(s.r_star, s.mean - in.alpha / (1.0 - in.alpha) * s.stddev, 1e-6);
    }
  }
}

TEST(KKTVerify, DetectsViolations) {
  const std::vector<double> m{5.0, 6.0, 8.0, 9.0}, p{0.25, 0.25, 0.25, 0.25};
  const auto s = discrete_solve(m, p, 0.3);
  ASSERT_TRUE(kkt_verify(s.targets, m, p, 0.3).ok());
  ASSERT_GT(s.j_star, 0u);

  auto bumped = s.targets;
  for (std::size_t i = 0; i < m.size(); ++i)
    if (bumped[i] > m[i]) {
      bumped[i] += 0.1;
      break;
    }
  EXPECT_FALSE(kkt_verify(bumped, m, p, 0.3).stationarity_ok());

  auto below = s.targets;
  below[3] = m[3] - 0.1;
  EXPECT_FALSE(kkt_verify(below, m, p, 0.3).primal_ok());
}

// Averaging two unequal lifted targets (mean-preserving contraction) does
// not raise J, and strictly lowers it when they differ.
TEST(DiscreteSolve, ContractionImproves) {
  const std::vector<double> m{5.0, 5.5, 8.0, 9.0}, p{0.25, 0.25, 0.25, 0.25};
  const double alpha = 0.3;
  std::vector<double> T{6.0, 6.8, 8.0, 9.0};
  const double before = discrete_objective(T, p, alpha);
  const double avg = 0.5 * (T[0] + T[1]);
  T[0] = T[1] = avg;
  EXPECT_LT(discrete_objective(T, p, alpha), before);
}

TEST(Table1, RowAndCsv) {
  const auto& d = canonical();
  MinTTParams mp;
  const TravelTimeDistribution base([mp](double q) { return uncontrolled_avg_tt(q, 0.1, mp); },
                                    PeakDistribution{}, mp.q_bn, mp.free_flow_min);
  EXPECT_GT(base.mean(), d.mean());
  const auto row = table1_row(0.5, d, base);
  EXPECT_GT(row.delta_J, 0.0);
  EXPECT_NEAR(d.curve(row.q_p_star), row.tau_star, 1e-6);
  std::ostringstream os;
  const std::vector<Table1Row> rows{row};
  write_table1_csv(os, rows);
  EXPECT_EQ(os.str().substr(0, os.str().find('\n')),
            "alpha,tau_star,q_p_star,E_tau,Std_tau,J_min,delta_J,rel_improvement");
}

}  // namespace
