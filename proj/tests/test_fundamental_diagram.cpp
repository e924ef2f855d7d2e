#include <gtest/gtest.h>

#include "vslr/fundamental_diagram.hpp"

using vslr::FundamentalDiagram;

namespace {

const FundamentalDiagram fd{112.0, 70.0, 420.0};

TEST(FundamentalDiagram, DerivedParameters) {
  EXPECT_DOUBLE_EQ(fd.capacity(), 7840.0);
  EXPECT_DOUBLE_EQ(fd.wave_speed(), 22.4);
}

TEST(FundamentalDiagram, FlowExamples) {
  EXPECT_DOUBLE_EQ(fd.flow(70.0), 7840.0);
  EXPECT_DOUBLE_EQ(fd.flow(0.0), 0.0);
  EXPECT_NEAR(fd.flow(245.0), 22.4 * (420.0 - 245.0), 1e-9);
  EXPECT_NEAR(fd.flow(420.0), 0.0, 1e-12);
  EXPECT_THROW(fd.flow(-1.0), vslr::DomainError);
  EXPECT_THROW(fd.flow(421.0), vslr::DomainError);
}

TEST(FundamentalDiagram, DemandSupply) {
  EXPECT_DOUBLE_EQ(fd.demand(100.0), 7840.0);
  EXPECT_DOUBLE_EQ(fd.supply(50.0), 7840.0);
  EXPECT_NEAR(fd.supply(245.0), 3920.0, 1e-9);
  EXPECT_THROW(fd.demand(500.0), vslr::DomainError);
}

TEST(FundamentalDiagram, Speed) {
  EXPECT_DOUBLE_EQ(fd.speed(35.0), 112.0);
  EXPECT_DOUBLE_EQ(fd.speed(70.0), 112.0);
  EXPECT_NEAR(fd.speed(245.0), 16.0, 1e-12);
  EXPECT_DOUBLE_EQ(fd.speed(0.0), 112.0);
}

TEST(FundamentalDiagram, CongestedInverse) {
  EXPECT_DOUBLE_EQ(fd.congested_density_for_flow(7840.0), 70.0);
  EXPECT_DOUBLE_EQ(fd.congested_density_for_flow(0.0), 420.0);
  EXPECT_NEAR(fd.congested_density_for_flow(3920.0), 245.0, 1e-9);
  EXPECT_THROW(fd.congested_density_for_flow(7900.0), vslr::InfeasibleFlowError);
}

TEST(FundamentalDiagram, Legendre) {
  EXPECT_DOUBLE_EQ(fd.legendre(112.0), 0.0);
  EXPECT_DOUBLE_EQ(fd.legendre(0.0), 7840.0);
  EXPECT_NEAR(fd.legendre(-22.4), 9408.0, 1e-9);
  EXPECT_THROW(fd.legendre(113.0), vslr::DomainError);
  EXPECT_THROW(fd.legendre(-30.0), vslr::DomainError);
}

TEST(FundamentalDiagram, MeteringSpeedRoundTrip) {
  // 5600 veh/h on the congested branch: k = 420 - 5600/22.4 = 170.
  EXPECT_NEAR(fd.speed_for_metering(5600.0), 5600.0 / 170.0, 1e-12);
  for (double v : {40.0, 60.0, 80.0, 112.0})
    EXPECT_NEAR(fd.speed_for_metering(fd.congested_flow_at_speed(v)), v, 1e-9);
}

// Properties on a dense grid.
TEST(FundamentalDiagram, GridProperties) {
  const int n = 1000;
  double prev_d = -1.0, prev_s = 1e300;
  for (int i = 0; i <= n; ++i) {
    const double k = 420.0 * i / n;
    const double d = fd.demand(k), s = fd.supply(k), q = fd.flow(k);
    EXPECT_NEAR(std::min(d, s), q, 1e-9);
    EXPECT_NEAR(std::max(d, s), 7840.0, 1e-9);
    EXPECT_GE(d, prev_d);
    EXPECT_LE(s, prev_s);
    prev_d = d;
    prev_s = s;
    if (k >= 70.0 && k < 420.0) {
      const double back = fd.congested_density_for_flow(q);
      EXPECT_NEAR(back, k, 1e-12 * k);
    }
  }
  for (int j = 0; j <= 50; ++j) {
    const double p = -22.4 + (112.0 + 22.4) * j / 50;
    for (int i = 0; i <= 200; ++i) {
      const double k = 420.0 * i / 200;
      EXPECT_GE(fd.legendre(p) - (fd.flow(k) - k * p), -1e-9);
    }
  }
}

TEST(FundamentalDiagram, RejectsBadParameters) {
  EXPECT_THROW(FundamentalDiagram(0.0, 70.0, 420.0), vslr::ConfigError);
  EXPECT_THROW(FundamentalDiagram(112.0, 420.0, 70.0), vslr::ConfigError);
}

}  // namespace
