#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <sstream>

#include "vslr/budget_mpc.hpp"
#include "vslr/reliability_optimizer.hpp"

using namespace vslr;

namespace {

const MPCParams P{};

CorridorConfig corridor() { return CorridorConfig::cfl_tight(9.3, 62, 6240.0, 0.1); }

double analytic_tmin(double q_p) {
  MinTTParams mt;
  mt.free_flow_min = P.free_flow_min();
  return min_avg_tt(q_p, PipelineVariant::corrected, mt).T_min;
}

ControlledRun run(double q_p, double target) {
  const auto prof = TrapezoidDemand{}.profile(q_p);
  const auto sched = make_schedule(target, P.free_flow_min(), prof.total(), 240);
  return run_controlled(prof, sched, P, corridor());
}

TEST(Budget, Schedule) {
  BudgetSchedule s{100.0, 1.0, 240, 5.5, 5.0};
  EXPECT_EQ(budget(240, s), 100.0);
  EXPECT_EQ(budget(0, s), 0.0);
  EXPECT_DOUBLE_EQ(budget(120, s), 50.0);
  s.gamma = 2.5;
  double prev = -1.0;
  for (int k = 0; k <= 240; ++k) {
    EXPECT_GE(budget(k, s), prev);
    prev = budget(k, s);
  }
  EXPECT_EQ(budget(240, s), 100.0);
  s.gamma = 0.0;
  EXPECT_THROW(budget(1, s), ConfigError);
}

TEST(Budget, ScheduleFromTarget) {
  const auto s = make_schedule(6.0, 5.0, 6000.0, 240);
  EXPECT_DOUBLE_EQ(s.D_tot, 100.0);
  EXPECT_THROW(make_schedule(4.5, 5.0, 6000.0, 240), InfeasibleTargetError);
}

TEST(MeteringToSpeed, Examples) {
  EXPECT_EQ(metering_to_speed(6000.0, 5000.0, P), 112.0);
  EXPECT_NEAR(metering_to_speed(5600.0, 7840.0, P), 80.0, 1e-12);
  EXPECT_EQ(metering_to_speed_raw(0.0, 7000.0, P), 0.0);
  EXPECT_EQ(metering_to_speed(0.0, 7000.0, P), P.v_min);
  // Original constant: density 350/7640 (7640 - 7840) + 70.
  MPCParams orig = P;
  orig.meter_constant = 7640.0;
  const double rho = 350.0 / 7640.0 * (7640.0 - 7840.0) + 70.0;
  EXPECT_NEAR(metering_to_speed_raw(5600.0, 7840.0, orig), 5600.0 / std::max(rho, 70.0), 1e-12);
}

TEST(MeteringToSpeed, TravelTime) {
  EXPECT_NEAR(predicted_tt(50.0, 40.0, P), P.free_flow_min(), 1e-12);
  EXPECT_NEAR(predicted_tt(5600.0 / 60.0, 7840.0 / 60.0, P), 60.0 * 9.3 / 80.0, 1e-9);
}

TEST(PredictedDelay, Examples) {
  MPCState s{0.0, 12.0, 0.0, 3};
  EXPECT_NEAR(predicted_delay(90.0, s, 80.0, P, P.free_flow_min()), 12.0, 1e-12);
  s.L = 100.0;
  EXPECT_NEAR(predicted_delay(0.0, s, 120.0, P, P.free_flow_min()), 12.0 + 100.0 / 60.0, 1e-12);
  EXPECT_THROW(predicted_delay(-1.0, s, 10.0, P, 5.0), DomainError);
}

// The predictor is monotone where the speed map is clamped at
// v_min and once u reaches d; in between u (tau(u) - T0) falls with u.
TEST(PredictedDelay, MonotoneOnClampedBranches) {
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> L(0.0, 300.0), D(0.0, 500.0), d(60.0, 160.0);
  for (int i = 0; i < 1000; ++i) {
    const MPCState s{L(rng), D(rng), 0.0, 0};
    const double dk = d(rng);
    const double rho = 350.0 / 7840.0 * (7840.0 - std::min(dk * 60.0, 7840.0)) + 70.0;
    const double u_clamp = P.v_min * rho / 60.0;  // v hits v_min below this
    double prev = -1e300;
    for (double u = 0.0; u <= std::min(u_clamp, dk) - 1e-9; u += u_clamp / 50.0) {
      const double v = predicted_delay(u, s, dk, P, P.free_flow_min());
      EXPECT_GE(v, prev - 1e-9);
      prev = v;
    }
    prev = -1e300;
    for (double u = dk; u <= dk + 100.0; u += 5.0) {
      const double v = predicted_delay(u, s, dk, P, P.free_flow_min());
      EXPECT_GE(v, prev - 1e-9);
      prev = v;
    }
  }
}

TEST(PredictedDelay, NotMonotoneOnMeteredBranch) {
  const MPCState s{0.0, 0.0, 0.0, 0};
  const double dk = 7000.0 / 60.0;
  // u/rho(d) between v_min and v_f: term l rho(d) - u T0/60 decreases.
  const double a = predicted_delay(90.0, s, dk, P, P.free_flow_min());
  const double b = predicted_delay(100.0, s, dk, P, P.free_flow_min());
  EXPECT_LT(b, a);
}

TEST(StepControl, Rule) {
  const BudgetSchedule loose{1e6, 1.0, 240, 10.0, P.free_flow_min()};
  const BudgetSchedule tight{0.0, 1.0, 240, P.free_flow_min(), P.free_flow_min()};
  MPCState s{50.0, 10.0, 0.0, 10};
  EXPECT_DOUBLE_EQ(step_control(s, 120.0, loose, P), 104.0);
  EXPECT_DOUBLE_EQ(step_control(s, 100.0, loose, P), 100.0);
  EXPECT_DOUBLE_EQ(step_control(s, 120.0, tight, P), 5800.0 / 60.0);
  EXPECT_DOUBLE_EQ(step_control(s, 50.0, tight, P), 50.0);
}

TEST(FifoFilter, Examples) {
  EXPECT_EQ(fifo_filter(80.0, 60.0, 1.0 / 60.0, 9.34), 60.0);
  EXPECT_NEAR(fifo_filter(40.0, 112.0, 1.0 / 60.0, 9.34), 9.34 / (9.34 / 40.0 - 1.0 / 60.0), 1e-12);
  EXPECT_NEAR(fifo_filter(40.0, 112.0, 1.0 / 60.0, 9.34), 43.1, 0.05);
  EXPECT_EQ(fifo_filter(112.0, 112.0, 1.0 / 60.0, 9.34), 112.0);
  EXPECT_EQ(fifo_filter(112.0, 100.0, 1.0 / 60.0, 9.34), 100.0);
}

TEST(RunControlled, FreeFlowNeverMeters) {
  const auto r = run(6200.0, 5.0);
  for (const auto& row : r.log) EXPECT_EQ(row.v_posted, 112.0);
  EXPECT_NEAR(r.T_avg, P.free_flow_min(), 1e-9);
}

TEST(RunControlled, InfeasibleTarget) { EXPECT_THROW(run(6525.0, 4.0), InfeasibleTargetError); }

// With a budget that never binds the loop meters at C and reproduces the
// analytic minimum average travel time.
TEST(RunControlled, LooseBudgetAttainsAnalyticMinimum) {
  for (double q_p : {6400.0, 6525.0, 7000.0}) {
    const double tmin = analytic_tmin(q_p);
    const auto r = run(q_p, tmin + 2.0);
    EXPECT_NEAR(r.T_avg, tmin, 1e-3) << q_p;
    for (const auto& row : r.log) EXPECT_LE(row.D_k, row.D_k_max + 1e-9);
  }
}

TEST(RunControlled, TracksTightTargets) {
  for (double q_p : {6525.0, 6800.0}) {
    const double target = analytic_tmin(q_p);
    const auto r = run(q_p, target);
    EXPECT_NEAR(r.T_avg, target, 0.03 * target) << q_p;
  }
}

TEST(RunControlled, Invariants) {
  for (double q_p : {6525.0, 6800.0, 7200.0}) {
    const auto r = run(q_p, analytic_tmin(q_p));
    const auto& tr = r.trajectory;
    double prev_v = 112.0;
    for (const auto& row : r.log) {
      const double u_max = std::min(row.d_k, P.capacity * P.dt_h);
      const bool structured = std::abs(row.u_star - u_max) < 1e-9 ||
                              std::abs(row.u_star - P.u_min()) < 1e-9 || std::abs(row.u_star - row.d_k) < 1e-9;
      EXPECT_TRUE(structured) << row.k;
      EXPECT_GE(row.v_posted, 40.0);
      EXPECT_LE(row.v_posted, 112.0);
      EXPECT_GE(9.3 / row.v_posted, 9.3 / prev_v - P.dt_h - 1e-12);
      EXPECT_GE(row.L_k, 0.0);
      EXPECT_GE(row.D_k, 0.0);
      prev_v = row.v_posted;
    }
    for (std::size_t i = 0; i < tr.size(); ++i) {
      const double balance = tr.initial_vehicles + tr.offered[i] - tr.queue[i] - tr.link_vehicles[i] - tr.Nl[i];
      EXPECT_NEAR(balance, 0.0, 1e-9 * (tr.initial_vehicles + tr.offered[i]));
      if (i > 0) {
        EXPECT_GE(tr.N0[i], tr.N0[i - 1]);
      }
    }
    for (double q : tr.outflow) EXPECT_LE(q, 6240.0 * (1.0 + 1e-12));
    EXPECT_LT(r.T_avg, 60.0 * average_travel_time(simulate(corridor(), TrapezoidDemand{}.profile(q_p))));
  }
}

TEST(RunControlled, MonotoneDemandResponse) {
  const auto lo = run(6525.0, analytic_tmin(6525.0));
  const auto hi = run(6800.0, analytic_tmin(6800.0));
  const double tN = 4.0;
  EXPECT_GE(detail::interp(hi.trajectory.time, hi.trajectory.N0, tN),
            detail::interp(lo.trajectory.time, lo.trajectory.N0, tN));
}

TEST(MpcLog, Csv) {
  std::ostringstream os;
  const std::vector<MPCLogRow> rows{{0, 90.0, 90.0, 0.0, 0.0, 0.0, 112.0}};
  write_mpc_log_csv(os, rows);
  EXPECT_EQ(os.str(), "k,d_k,u_star,D_k,D_k_max,L_k,v_posted\n0,90,90,0,0,0,112\n");
}

}  // namespace
