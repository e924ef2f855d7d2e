// vslr: command-line driver for the experiment suites.
//
//   vslr table1    --config F
//   vslr demand-mc --config F --days N
//   vslr capacity  --config F
//   vslr validate
//
// --seed and --out override the scenario. Exit 0 on success, 2 on a
// validation failure (bad config or a failed hard check), 1 otherwise.

#include <CLI11.hpp>

#include <cstdint>
#include <filesystem>
#include <iomanip>
#include <iostream>
#include <optional>
#include <string>

#include "vslr/experiments.hpp"
#include "vslr/scenario.hpp"

#ifndef VSLR_DEFAULT_SCENARIO
#define VSLR_DEFAULT_SCENARIO "scenarios/default.json"
#endif

namespace {

constexpr int kValidationFailure = 2;

struct Common {
  std::string config = VSLR_DEFAULT_SCENARIO;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;

  void attach(CLI::App* cmd) {
    cmd->add_option("--config", config, "scenario file (JSON)")->capture_default_str();
    cmd->add_option("--seed", seed, "override the scenario seed");
    cmd->add_option("--out", out, "override the output directory");
  }

  vslr::Scenario load() const {
    auto sc = vslr::load_scenario(config);
    if (seed) sc.seed = *seed;
    if (out) sc.output_dir = *out;
    return sc;
  }
};

int cmd_table1(const vslr::Scenario& sc) {
  const auto r = vslr::run_table1(sc);
  vslr::write_table1(r, sc, sc.output_dir);
  std::cout << std::fixed << std::setprecision(3) << "alpha_crit " << r.alpha_crit << " (other pipeline "
            << r.alpha_crit_verbatim << ")\n"
            << "uncontrolled E " << r.baseline_E << " Std " << r.baseline_Std << "\n";
  std::cout << "alpha  tau*    E       Std     J_min   rel.impr\n";
  for (const auto& row : r.rows)
    std::cout << std::setw(5) << row.alpha << "  " << row.tau_star << "  " << row.E_tau << "  " << row.Std_tau
              << "  " << row.J_min << "  " << row.rel_improvement << '\n';
  std::cout << "wrote " << sc.output_dir << "/table1*.csv\n";
  return 0;
}

int cmd_demand_mc(const vslr::Scenario& sc, int days, unsigned threads) {
  const auto r = vslr::run_demand_mc(sc, days, sc.require_seed(), threads);
  vslr::write_demand_mc(r, sc.output_dir);
  std::cout << std::fixed << std::setprecision(3) << days << " days, alpha " << r.alpha << ", r* " << r.r_star
            << " min\n"
            << "controlled   E " << r.controlled.E << " Std " << r.controlled.Std << " J " << r.controlled.J << '\n'
            << "uncontrolled E " << r.uncontrolled.E << " Std " << r.uncontrolled.Std << " J " << r.uncontrolled.J
            << '\n'
            << "wrote " << sc.output_dir << "/demand_mc_*.csv\n";
  return 0;
}

int cmd_capacity(const vslr::Scenario& sc) {
  const auto r = vslr::run_capacity(sc, sc.require_seed());
  vslr::write_capacity(r, sc, sc.output_dir);
  std::cout << std::fixed << std::setprecision(4);
  for (const auto& o : r.outcomes) {
    std::cout << "alpha " << o.alpha << ": K* " << o.search.K_star << " per step, J " << o.search.trace.J
              << ", VSL window " << o.search.trace.vsl_window(sc.corridor.v_f_kmh) << " min, floor "
              << o.search.trace.min_speed() << " km/h\n"
              << "  link travel time  K=0 E " << o.off.link.E << " Std " << o.off.link.Std << " | K* E "
              << o.on.link.E << " Std " << o.on.link.Std << '\n';
  }
  std::cout << "wrote " << sc.output_dir << "/capacity_report.csv and traces\n";
  return 0;
}

int cmd_validate(const vslr::Scenario& sc) {
  const auto rep = vslr::run_validate(sc, sc.require_seed());
  rep.write(std::cout);
  auto os = vslr::open_output(sc.output_dir, "validation_report.txt");
  rep.write(os);
  return rep.ok() ? 0 : kValidationFailure;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"variable speed limits for travel-time reliability"};
  app.require_subcommand(1);

  Common t1, mc, cap, val;
  auto* table1 = app.add_subcommand("table1", "reliability table for the configured weights");
  t1.attach(table1);

  int days = 2000;
  unsigned threads = 0;
  auto* demand = app.add_subcommand("demand-mc", "Monte Carlo over peak demand with the budget controller");
  mc.attach(demand);
  demand->add_option("--days", days, "number of sampled days")->required()->check(CLI::PositiveNumber);
  demand->add_option("--threads", threads, "worker threads (0 = all cores)");

  auto* capacity = app.add_subcommand("capacity", "gain search and Monte Carlo under stochastic capacity");
  cap.attach(capacity);

  auto* validate = app.add_subcommand("validate", "invariant and oracle checks");
  val.attach(validate);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : kValidationFailure;
  }

  try {
    if (*table1) return cmd_table1(t1.load());
    if (*demand) return cmd_demand_mc(mc.load(), days, threads);
    if (*capacity) return cmd_capacity(cap.load());
    if (*validate) return cmd_validate(val.load());
  } catch (const vslr::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kValidationFailure;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
