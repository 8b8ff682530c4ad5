// gridshield command-line front end.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "gridshield/grid.hpp"
#include "gridshield/linearize.hpp"
#include "gridshield/modred.hpp"
#include "gridshield/scenario.hpp"
#include "gridshield/synth.hpp"
#include "gridshield/textio.hpp"

namespace fs = std::filesystem;
using namespace gridshield;
using nlohmann::json;

namespace {

struct Common {
  std::string case_ref = "ne39";
  std::string scenario;
  std::string out;
  std::optional<std::uint64_t> seed;
  std::optional<double> dt;
  std::optional<int> order;
  std::optional<double> a1;
  bool no_plots = false;
  bool no_pss = false;
  double energy = 0.99;
  unsigned threads = 1;
  std::vector<std::string> scenarios;
};

void emit(const std::string& out, const std::string& text) {
  if (out.empty() || out == "-") {
    std::cout << text;
    return;
  }
  const fs::path p(out);
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  textio::write_file(out, text);
  std::cerr << "wrote " << out << "\n";
}

GridCase load_grid(const Common& c) {
  return with_pss(load_case_file(resolve_case(c.case_ref, fs::current_path()).string()), !c.no_pss);
}

StateSpaceModel linear_model(const GridCase& grid) {
  const auto pf = solve_powerflow(grid);
  const Plant plant = Plant::create(grid, pf);
  return linearize_model(plant, plant.initial_state());
}

Scenario scenario_with_overrides(const Common& c) {
  Scenario sc = load_scenario(c.scenario);
  if (c.seed) sc.seed = *c.seed;
  if (c.dt) sc.dt = *c.dt;
  if (c.order) sc.design.order = *c.order;
  if (c.a1) sc.design.a1 = *c.a1;
  sc.validate();
  return sc;
}

int cmd_pf(const Common& c) {
  const GridCase grid = load_grid(c);
  const auto s = solve_powerflow(grid);
  json j;
  j["schema"] = "gridshield/powerflow/1";
  j["case"] = grid.name;
  j["iterations"] = s.iterations;
  j["mismatch"] = s.mismatch;
  json buses = json::array();
  for (std::size_t i = 0; i < grid.buses.size(); ++i) {
    buses.push_back({{"id", grid.buses[i].id},
                     {"v", s.v(static_cast<Eigen::Index>(i))},
                     {"theta", s.theta(static_cast<Eigen::Index>(i))}});
  }
  j["buses"] = buses;
  json gens = json::array();
  for (std::size_t k = 0; k < grid.machines.size(); ++k) {
    gens.push_back({{"bus", grid.machines[k].bus},
                    {"p_gen", s.p_gen(static_cast<Eigen::Index>(k))},
                    {"q_gen", s.q_gen(static_cast<Eigen::Index>(k))}});
  }
  j["machines"] = gens;
  emit(c.out, j.dump(2) + "\n");
  return 0;
}

int cmd_lin(const Common& c) {
  emit(c.out, model_to_json(linear_model(load_grid(c))));
  return 0;
}

int cmd_reduce(const Common& c) {
  ReductionTarget target;
  target.energy = c.energy;
  target.order = c.order;
  const auto rm = balanced_truncate(linear_model(load_grid(c)), target);
  std::cerr << "kept order " << rm.kept_order << " of " << rm.hankel_values.size() << ", energy fraction "
            << rm.energy_fraction << "\n";
  emit(c.out, reduced_to_json(rm));
  return 0;
}

int cmd_synth(const Common& c) {
  DesignOptions d;
  GridCase grid;
  if (!c.scenario.empty()) {
    const Scenario sc = scenario_with_overrides(c);
    grid = scenario_grid(sc);
    d.reduction.energy = sc.design.energy;
    d.reduction.order = sc.design.order;
    d.hinf.a1 = sc.design.a1;
    d.hinf.gain_bound = sc.design.gain_bound;
    d.q_scale = sc.design.q_scale;
    d.r_scale = sc.design.r_scale;
    d.effort_weight = sc.design.effort_weight;
    d.active_power_only = sc.design.active_power_only;
    const GridCase all = with_pss(load_case_file(resolve_case(sc.case_ref, sc.base_dir).string()), sc.pss_enabled);
    const Eigen::VectorXd caps = split_capacity(all, all.ev_buses, fleet_capacity(sc.fleet).capacity_mw);
    d.channel_capacity_mw.resize(static_cast<Eigen::Index>(grid.ev_buses.size()));
    for (std::size_t k = 0; k < grid.ev_buses.size(); ++k) {
      const auto it = std::find(all.ev_buses.begin(), all.ev_buses.end(), grid.ev_buses[k]);
      d.channel_capacity_mw(static_cast<Eigen::Index>(k)) = caps(it - all.ev_buses.begin());
    }
  } else {
    grid = load_grid(c);
    d.reduction.energy = c.energy;
    d.reduction.order = c.order;
    if (c.a1) d.hinf.a1 = *c.a1;
    d.channel_capacity_mw = split_capacity(grid, grid.ev_buses, fleet_capacity(FleetModel{}).capacity_mw);
  }
  const auto art = design_controller(linear_model(grid), d);
  std::cerr << "order " << art.reduced.kept_order << ", rho " << art.hinf.rho << "\n";
  for (const auto& chk : art.verification.checks) {
    std::cerr << "  " << (chk.passed ? "pass " : "FAIL ") << chk.name << ": " << chk.value << " (bound "
              << chk.bound << ")\n";
  }
  emit(c.out, synthesis_to_json(art));
  return art.verification.all_passed() ? 0 : 2;
}

void print_summary(const RunReport& r) {
  std::cout << r.name << ": max |df| " << r.max_freq_deviation_hz << " Hz, " << to_string(r.stability);
  if (r.impact_reduction_pct) std::cout << ", reduction " << *r.impact_reduction_pct << " %";
  if (r.settling_time_s) {
    std::cout << ", settles at " << *r.settling_time_s << " s";
  } else {
    std::cout << ", does not settle";
  }
  std::cout << "\n";
}

int cmd_run(const Common& c) {
  const Scenario sc = scenario_with_overrides(c);
  RunOptions ro;
  ro.plots = !c.no_plots;
  if (!c.out.empty()) ro.output_override = c.out;
  const auto res = run_scenario(sc, ro);
  for (const auto& line : res.log) std::cerr << line << "\n";
  print_summary(res.report);
  return 0;
}

int cmd_batch(const Common& c) {
  std::vector<std::string> paths = c.scenarios;
  if (!c.scenario.empty()) paths.push_back(c.scenario);
  std::vector<Scenario> list;
  // A .txt argument lists one scenario path per line, relative to itself.
  for (const auto& p : paths) {
    if (fs::path(p).extension() == ".txt") {
      std::istringstream in(textio::read_file(p));
      for (std::string line; std::getline(in, line);) {
        const auto t = std::string(textio::trim(line));
        if (t.empty() || t[0] == '#') continue;
        list.push_back(load_scenario(fs::path(p).parent_path() / t));
      }
    } else {
      list.push_back(load_scenario(p));
    }
  }
  if (list.empty()) throw Error(ErrorCode::InvariantViolation, "batch: no scenarios given");
  if (c.dt || c.order || c.a1) {
    for (auto& sc : list) {
      if (c.dt) sc.dt = *c.dt;
      if (c.order) sc.design.order = *c.order;
      if (c.a1) sc.design.a1 = *c.a1;
      sc.validate();
    }
  }
  const fs::path out = c.out.empty() ? fs::path("runs") : fs::path(c.out);
  const auto entries = run_batch(list, c.seed.value_or(1), out, c.threads, !c.no_plots);
  int code = 0;
  json index = json::array();
  for (const auto& e : entries) {
    if (e.report) {
      print_summary(*e.report);
    } else {
      std::cout << e.name << ": error: " << e.error << "\n";
      code = std::max(code, e.exit_code);
    }
    index.push_back({{"name", e.name},
                     {"seed", e.seed},
                     {"output", e.output.string()},
                     {"ok", e.report.has_value()},
                     {"error", e.error}});
  }
  fs::create_directories(out);
  textio::write_file((out / "batch.json").string(), index.dump(2) + "\n");
  return code;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"EV-based mitigation of load-altering attacks: grid simulation and controller synthesis"};
  app.require_subcommand(1);
  Common c;

  auto add_case = [&](CLI::App* sub) {
    sub->add_option("--case", c.case_ref, "case file or bundled case name")->capture_default_str();
    sub->add_flag("--no-pss", c.no_pss, "switch every stabilizer off");
  };
  auto add_out = [&](CLI::App* sub, const char* what) { sub->add_option("--out", c.out, what); };

  auto* pf = app.add_subcommand("pf", "solve the power flow");
  add_case(pf);
  add_out(pf, "output file (default stdout)");

  auto* lin = app.add_subcommand("lin", "linearize around the power-flow equilibrium");
  add_case(lin);
  add_out(lin, "output file (default stdout)");

  auto* reduce = app.add_subcommand("reduce", "balanced truncation of the linear model");
  add_case(reduce);
  add_out(reduce, "output file (default stdout)");
  reduce->add_option("--order", c.order, "reduced order");
  reduce->add_option("--energy", c.energy, "Hankel energy fraction to keep")->capture_default_str();

  auto* synth = app.add_subcommand("synth", "design the observer and mitigation gain");
  add_case(synth);
  add_out(synth, "output file (default stdout)");
  synth->add_option("--scenario", c.scenario, "take design settings from a scenario");
  synth->add_option("--order", c.order, "reduced order");
  synth->add_option("--energy", c.energy, "Hankel energy fraction to keep")->capture_default_str();
  synth->add_option("--a1", c.a1, "pole-region bound");

  auto* run = app.add_subcommand("run", "run one scenario");
  run->add_option("--scenario", c.scenario, "scenario document")->required();
  add_out(run, "output directory (default from the scenario)");
  run->add_option("--seed", c.seed, "override the scenario seed");
  run->add_option("--dt", c.dt, "integration step (s)");
  run->add_option("--order", c.order, "reduced order");
  run->add_option("--a1", c.a1, "pole-region bound");
  run->add_flag("--no-plots", c.no_plots, "skip SVG plots");

  auto* batch = app.add_subcommand("batch", "run several scenarios");
  batch->add_option("scenarios", c.scenarios, "scenario documents, or .txt lists of them");
  batch->add_option("--scenario", c.scenario, "one more scenario document");
  add_out(batch, "output directory (default runs)");
  batch->add_option("--seed", c.seed, "batch seed");
  batch->add_option("--dt", c.dt, "integration step (s)");
  batch->add_option("--order", c.order, "reduced order");
  batch->add_option("--a1", c.a1, "pole-region bound");
  batch->add_option("--threads", c.threads, "parallel scenarios")->capture_default_str();
  batch->add_flag("--no-plots", c.no_plots, "skip SVG plots");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 1;
  }

  try {
    if (*pf) return cmd_pf(c);
    if (*lin) return cmd_lin(c);
    if (*reduce) return cmd_reduce(c);
    if (*synth) return cmd_synth(c);
    if (*run) return cmd_run(c);
    if (*batch) return cmd_batch(c);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return exit_code_for(e.code());
  } catch (const fs::filesystem_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 1;
}
