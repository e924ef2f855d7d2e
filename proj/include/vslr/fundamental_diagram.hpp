#pragma once

#include <algorithm>
#include <string>

#include "vslr/errors.hpp"

namespace vslr {

// Triangular flow-density law. Units: km/h, veh/km, veh/h.
//
// Only v_f, k_c and k_j are stored; capacity and the congested wave speed
// are derived, so the branch slope ratio is a calibration input.
class FundamentalDiagram {
 public:
  FundamentalDiagram(double v_f, double k_c, double k_j) : v_f_(v_f), k_c_(k_c), k_j_(k_j) {
    if (!(v_f > 0.0)) throw ConfigError("fundamental diagram: v_f must be positive");
    if (!(k_c > 0.0 && k_c < k_j)) throw ConfigError("fundamental diagram: need 0 < k_c < k_j");
  }

  double free_speed() const { return v_f_; }
  double critical_density() const { return k_c_; }
  double jam_density() const { return k_j_; }
  double capacity() const { return v_f_ * k_c_; }
  // Magnitude of the congested-branch slope.
  double wave_speed() const { return capacity() / (k_j_ - k_c_); }

  double flow(double k) const {
    check_density(k);
    return k <= k_c_ ? v_f_ * k : std::max(0.0, wave_speed() * (k_j_ - k));
  }

  double demand(double k) const {
    check_density(k);
    return flow(std::min(k, k_c_));
  }

  double supply(double k) const {
    check_density(k);
    return flow(std::max(k, k_c_));
  }

  double speed(double k) const {
    check_density(k);
    return k == 0.0 ? v_f_ : flow(k) / k;
  }

  // Largest density carrying flow q (congested branch).
  double congested_density_for_flow(double q) const {
    if (q < 0.0) throw DomainError("congested_density_for_flow: negative flow");
    if (q > capacity() * (1.0 + 1e-12))
      throw InfeasibleFlowError("congested_density_for_flow: flow above capacity");
    return std::max(k_c_, k_j_ - std::min(q, capacity()) / wave_speed());
  }

  // Speed of the congested state carrying q; the metering-to-speed map.
  double speed_for_metering(double q) const {
    return q / congested_density_for_flow(q);
  }

  // Inverse of speed_for_metering: flow of the congested state whose
  // speed is v. Equals capacity at v = v_f.
  double congested_flow_at_speed(double v) const {
    if (!(v > 0.0) || v > v_f_ * (1.0 + 1e-12))
      throw DomainError("congested_flow_at_speed: speed outside (0, v_f]");
    const double w = wave_speed();
    return std::min(capacity(), v * w * k_j_ / (v + w));
  }

  // sup_k { Q(k) - k p } for p in [-w, v_f]; attained at k_c.
  double legendre(double p) const {
    if (p < -wave_speed() * (1.0 + 1e-12) || p > v_f_ * (1.0 + 1e-12))
      throw DomainError("legendre: wave speed outside [-w, v_f]");
    return k_c_ * (v_f_ - p);
  }

 private:
  void check_density(double k) const {
    if (!(k >= 0.0 && k <= k_j_ * (1.0 + 1e-12)))
      throw DomainError("density " + std::to_string(k) + " outside [0, k_j]");
  }

  double v_f_;
  double k_c_;
  double k_j_;
};

}  // namespace vslr
