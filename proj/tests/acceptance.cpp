// Acceptance run: one PASS/FAIL line per criterion.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <map>
#include <sstream>
#include <string>

#include <Eigen/Dense>

#include "gridshield/attacks.hpp"
#include "gridshield/error.hpp"
#include "gridshield/mitigation.hpp"
#include "gridshield/modred.hpp"
#include "gridshield/scenario.hpp"
#include "gridshield/synth.hpp"
#include "test_support.hpp"

using namespace gridshield;
using gridshield::testing::Ne39;
using gridshield::testing::scenario_path;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

struct Outcome {
  bool pass = true;
  std::ostringstream detail;

  void require(bool ok, const std::string& what) {
    if (!ok) {
      pass = false;
      detail << " [failed: " << what << "]";
    }
  }
};

double max_eig_sym(const Eigen::MatrixXd& m) {
  return Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(m, Eigen::EigenvaluesOnly).eigenvalues().maxCoeff();
}

double max_real(const Eigen::MatrixXd& a) {
  return Eigen::EigenSolver<Eigen::MatrixXd>(a, false).eigenvalues().real().maxCoeff();
}

// Bounded-real block assembled from the certificate.
Eigen::MatrixXd attenuation_block(const StateSpaceModel& s, const Eigen::MatrixXd& x, const Eigen::MatrixXd& w,
                                  double rho) {
  const Eigen::Index n = s.states(), q = s.disturbances(), p = s.outputs();
  const Eigen::MatrixXd top = s.a * x + s.b * w;
  const Eigen::MatrixXd out = s.c * x + s.d * w;
  Eigen::MatrixXd m(n + q + p, n + q + p);
  m << top + top.transpose(), s.b_d, out.transpose(),
       s.b_d.transpose(), -rho * Eigen::MatrixXd::Identity(q, q), s.d_d.transpose(),
       out, s.d_d, -rho * Eigen::MatrixXd::Identity(p, p);
  return m;
}

LtiSystem error_system(const StateSpaceModel& g, const StateSpaceModel& r) {
  const auto n = g.states(), k = r.states(), m = g.inputs() + g.disturbances();
  LtiSystem e;
  e.a = Eigen::MatrixXd::Zero(n + k, n + k);
  e.a.topLeftCorner(n, n) = g.a;
  e.a.bottomRightCorner(k, k) = r.a;
  e.b.resize(n + k, m);
  e.b << g.b, g.b_d, r.b, r.b_d;
  e.c.resize(g.outputs(), n + k);
  e.c << g.c, -r.c;
  e.d.resize(g.outputs(), m);
  e.d << g.d - r.d, g.d_d - r.d_d;
  return e;
}

// Design exactly as the scenario pipeline does for the bundled case.
struct Design {
  SynthesisArtifacts art;
  DesignOptions options;
  double seconds = 0.0;
};

const Design& ne39_design() {
  static const Design d = [] {
    Design out;
    const Scenario sc;
    const auto& n = Ne39::get(true);
    out.options.hinf.a1 = sc.design.a1;
    out.options.hinf.gain_bound = sc.design.gain_bound;
    out.options.q_scale = sc.design.q_scale;
    out.options.r_scale = sc.design.r_scale;
    out.options.effort_weight = sc.design.effort_weight;
    out.options.reduction.energy = sc.design.energy;
    out.options.active_power_only = sc.design.active_power_only;
    out.options.channel_capacity_mw = split_capacity(n.grid, n.model.ev_buses, fleet_capacity(sc.fleet).capacity_mw);
    const auto t0 = Clock::now();
    out.art = design_controller(n.model, out.options);
    out.seconds = seconds_since(t0);
    return out;
  }();
  return d;
}

// Scenario runs shared by criteria 7 to 11.
class Runs {
 public:
  const RunReport& get(const std::string& name) {
    auto it = reports_.find(name);
    if (it != reports_.end()) return it->second;
    const Scenario sc = load_scenario(scenario_path(name + ".json"));
    RunOptions o;
    o.write_artifacts = false;
    o.plots = false;
    if (!sc.baseline.empty()) {
      const std::string base = std::filesystem::path(sc.baseline).stem().string();
      (void)get(base);
      o.baseline = &trajectories_.at(base);
    }
    const auto t0 = Clock::now();
    RunResult r = run_scenario(sc, o);
    seconds_[name] = seconds_since(t0);
    trajectories_.emplace(name, std::move(r.trajectory));
    return reports_.emplace(name, std::move(r.report)).first->second;
  }
  double seconds(const std::string& name) const { return seconds_.at(name); }

 private:
  std::map<std::string, RunReport> reports_;
  std::map<std::string, Trajectory> trajectories_;
  std::map<std::string, double> seconds_;
};

Runs& runs() {
  static Runs r;
  return r;
}

Outcome criterion1() {
  Outcome o;
  const auto t0 = Clock::now();
  const Eigen::MatrixXd one = Eigen::MatrixXd::Ones(1, 1);
  const double s = solve_care(-one, one, one, one)(0, 0);
  o.require(std::abs(s - (std::sqrt(2.0) - 1.0)) < 1e-10, "scalar Riccati root");

  Eigen::MatrixXd a = Eigen::Vector2d(-1.0, -3.0).asDiagonal();
  Eigen::MatrixXd q(2, 2);
  q << 2.0, 1.0, 1.0, 6.0;
  const Eigen::MatrixXd p = lyapunov_solve(a, q);
  Eigen::MatrixXd expect(2, 2);
  expect << 1.0, 0.25, 0.25, 1.0;
  o.require((p - expect).cwiseAbs().maxCoeff() < 1e-10, "Lyapunov diagonal case");

  const double h = hankel_values(gridshield::testing::scalar_model(-1.0, 1.0, 0.0, 1.0))(0);
  o.require(std::abs(h - 0.5) < 1e-10, "Hankel value of 1/(s+1)");

  const LtiSystem g{-one, one, one, Eigen::MatrixXd::Zero(1, 1)};
  const double hinf = hinf_norm(g);
  o.require(std::abs(hinf - 1.0) < 1e-6, "hinf norm of 1/(s+1)");

  const double secs = seconds_since(t0);
  o.require(secs < 1.0, "runtime under 1 s");
  o.detail << "care " << s << ", hankel " << h << ", hinf " << hinf << ", " << secs << " s";
  return o;
}

Outcome criterion2() {
  Outcome o;
  const auto& d = ne39_design();
  const auto& art = d.art;
  const auto& obs = art.observer;
  const double res = care_residual(obs.a_o, obs.b_o, obs.q_weight, obs.r_weight, obs.s);
  const double bound = 1e-8 * std::max(1.0, obs.s.norm());
  o.require(res <= bound, "Riccati residual");

  const StateSpaceModel perf = performance_model(art.reduced.model, art.hinf);
  const double lmi_att = max_eig_sym(attenuation_block(perf, art.hinf.x_cert, art.hinf.w_cert, art.hinf.rho));
  const Eigen::MatrixXd axbw = perf.a * art.hinf.x_cert + perf.b * art.hinf.w_cert;
  const double lmi_pole = max_eig_sym(axbw + axbw.transpose() + 2.0 * art.hinf.a1 * art.hinf.x_cert);
  const double x_min =
      Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(art.hinf.x_cert, Eigen::EigenvaluesOnly).eigenvalues().minCoeff();
  o.require(lmi_att < -1e-9, "attenuation LMI");
  o.require(lmi_pole < -1e-9, "pole-region LMI");
  o.require(x_min > 0.0, "X positive definite");
  o.require(d.seconds < 60.0, "runtime under 60 s");
  o.detail << "order " << art.reduced.kept_order << ", residual " << res << " (bound " << bound << "), lmi max eig "
           << lmi_att << " / " << lmi_pole << ", min eig X " << x_min << ", " << d.seconds << " s";
  return o;
}

Outcome criterion3() {
  Outcome o;
  const auto& art = ne39_design().art;
  const auto& rm = art.reduced.model;
  const double norm = hinf_norm(disturbance_channel(performance_model(rm, art.hinf), art.hinf.k_mit));
  const double pole = max_real(rm.a + rm.b * art.hinf.k_mit);
  o.require(norm <= art.hinf.rho * (1.0 + 1e-6), "closed-loop norm within rho");
  o.require(pole < -art.hinf.a1, "poles left of -a1");
  o.detail << "norm " << norm << " vs rho " << art.hinf.rho << ", max Re " << pole << " vs -" << art.hinf.a1;
  return o;
}

Outcome criterion4() {
  Outcome o;
  const auto s = gridshield::testing::scalar_model(1.0, 1.0, 1.0, 1.0);
  HinfOptions opt;
  opt.gain_bound = 100.0;
  opt.a1 = 0.5;
  const double rho = hinf_synthesize(s, opt).rho;
  double best = std::numeric_limits<double>::infinity();
  for (int i = 0; i <= 200000; ++i) {
    const double k = -opt.gain_bound * i / 200000.0;
    if (1.0 + k < -opt.a1) best = std::min(best, 1.0 / std::abs(1.0 + k));
  }
  const double rel = std::abs(rho - best) / best;
  o.require(rel <= 0.02, "within 2% of the grid optimum");
  o.detail << "lmi rho " << rho << ", grid " << best << ", rel diff " << rel;
  return o;
}

Outcome criterion5() {
  Outcome o;
  const auto& ss = Ne39::get(true).model;
  const auto chosen = balanced_truncate(ss);
  const int n = static_cast<int>(ss.states());
  o.require(chosen.energy_fraction >= 0.99, "energy fraction");
  o.detail << "chosen order " << chosen.kept_order << " (energy " << chosen.energy_fraction << ")";
  for (int k : {n - 1, n / 2, chosen.kept_order}) {
    ReductionTarget t;
    t.order = k;
    const auto rm = balanced_truncate(ss, t);
    const double tail = rm.hankel_values.tail(n - k).sum();
    const double err = hinf_norm(error_system(ss, rm.model));
    o.require(err <= 2.0 * tail + 1e-6, "bound at order " + std::to_string(k));
    o.detail << "; k=" << k << ": " << err << " <= " << 2.0 * tail << " + 1e-6";
  }
  return o;
}

Outcome criterion6() {
  Outcome o;
  const auto& n = Ne39::get(true);
  SimulationOptions sim;
  sim.record_states = false;
  sim.record_stride = 50;
  const auto hold = simulate(n.plant, n.plant.initial_state(), {}, 60.0, sim);
  o.require(!hold.diverged() && hold.max_abs_dev_hz < 1e-6, "equilibrium hold");

  InjectionSchedule step;
  step.channels.push_back({4, StepFunction{1.0, 100.0}, ZeroFunction{}});
  sim.record_stride = 25;
  const auto st = simulate(n.plant, n.plant.initial_state(), {step}, 40.0, sim);
  const double settled = st.freq_hz.bottomRows(20).mean() - st.f_nominal;
  double stiffness = 0.0;
  for (const auto& m : n.grid.machines) stiffness += 1.0 / m.governor.r_droop + m.d;
  const double predicted = -(100.0 / n.grid.base_mva) / stiffness * n.grid.f_nominal;
  const double droop_err = std::abs(settled - predicted) / std::abs(predicted);
  o.require(droop_err <= 0.05, "droop within 5%");

  Scenario sc = load_scenario(scenario_path("attack2-pss-on.json"));
  RunOptions ro;
  ro.write_artifacts = false;
  ro.plots = false;
  const double coarse = run_scenario(sc, ro).report.max_freq_deviation_hz;
  sc.dt *= 0.5;
  sc.record_stride *= 2;
  const double fine = run_scenario(sc, ro).report.max_freq_deviation_hz;
  o.require(std::abs(coarse - fine) < 1e-4, "dt halving");
  o.detail << "hold " << hold.max_abs_dev_hz << " Hz over 60 s; step " << settled << " vs droop " << predicted
           << " (" << 100.0 * droop_err << "%); attack 2 max " << coarse << " vs " << fine << " at dt/2";
  return o;
}

Outcome criterion7() {
  Outcome o;
  auto& r = runs();
  for (const char* name : {"attack2-pss-off", "attack3-pss-off"}) {
    const auto& rep = r.get(name);
    const bool unstable = rep.stability == StabilityFlag::Divergent ||
                          (rep.stability == StabilityFlag::SustainedOscillation &&
                           rep.final_third_max_hz >= rep.first_third_max_hz);
    o.require(unstable, std::string(name) + " growing or sustained");
    o.detail << name << ": " << to_string(rep.stability) << ", thirds " << rep.first_third_max_hz << " -> "
             << rep.final_third_max_hz << "; ";
  }
  const auto& a1 = r.get("attack1-pss-on");
  o.require(a1.stability == StabilityFlag::Stable && a1.envelope_settling_time_s.has_value(),
            "attack 1 decays to the band");
  o.detail << "attack1-pss-on: " << to_string(a1.stability) << ", settles about " << a1.final_offset_hz
           << " Hz offset at " << a1.envelope_settling_time_s.value_or(-1.0) << " s; ";
  for (const char* name : {"attack2-pss-on", "attack3-pss-on"}) {
    const auto& rep = r.get(name);
    o.require(rep.final_third_max_hz >= 0.3 && rep.stability != StabilityFlag::Stable,
              std::string(name) + " sustains 0.3 Hz");
    o.detail << name << ": final third " << rep.final_third_max_hz << " Hz; ";
  }
  return o;
}

Outcome criterion8() {
  Outcome o;
  auto& r = runs();
  double total = 0.0;
  for (int k = 1; k <= 3; ++k) {
    const std::string base = "attack" + std::to_string(k) + "-pss-on";
    const auto& rep = r.get(base + "-mitigated");
    total += r.seconds(base) + r.seconds(base + "-mitigated");
    const double red = rep.impact_reduction_pct.value_or(0.0);
    o.require(rep.max_freq_deviation_hz <= 0.1, "attack " + std::to_string(k) + " at most 0.1 Hz");
    o.require(red >= 90.0, "attack " + std::to_string(k) + " reduction 90%");
    o.require(rep.verification && rep.verification->all_passed(), "attack " + std::to_string(k) + " design verified");
    o.detail << "attack " << k << ": " << rep.max_freq_deviation_hz << " Hz, " << red << "%; ";
  }
  o.require(total <= 600.0, "pipeline within 10 min");
  o.detail << "pipeline " << total << " s";
  return o;
}

Outcome criterion9() {
  Outcome o;
  auto& r = runs();
  const auto& deg = r.get("attack2-75pct");
  const double full = r.get("attack2-pss-on-mitigated").max_freq_deviation_hz;
  const double none = r.get("attack2-pss-on").max_freq_deviation_hz;
  o.require(deg.stability == StabilityFlag::Stable, "stable");
  o.require(deg.max_freq_deviation_hz > full && deg.max_freq_deviation_hz < none, "strictly between");
  o.detail << "75% capacity " << deg.max_freq_deviation_hz << " Hz (" << to_string(deg.stability) << "), full "
           << full << ", unmitigated " << none;
  return o;
}

Outcome criterion10() {
  Outcome o;
  auto& r = runs();
  const auto& del = r.get("attack2-delay");
  const double undelayed = r.get("attack2-pss-on-mitigated").max_freq_deviation_hz;
  o.require(del.max_freq_deviation_hz <= 0.1, "at most 0.1 Hz");
  o.require(del.max_freq_deviation_hz <= 1.5 * undelayed, "within 1.5x undelayed");
  o.require(del.max_delay_ms <= 10.0, "delays within 10 ms");
  o.detail << "delayed " << del.max_freq_deviation_hz << " Hz vs undelayed " << undelayed << ", delays mean "
           << del.mean_delay_ms << " ms, max " << del.max_delay_ms << " ms";
  return o;
}

Outcome criterion11() {
  Outcome o;
  auto& r = runs();
  for (const char* name : {"attack2-no-colocation", "attack3-no-colocation"}) {
    const auto& rep = r.get(name);
    o.require(rep.max_freq_deviation_hz <= 0.15, std::string(name) + " at most 0.15 Hz");
    o.detail << name << ": " << rep.max_freq_deviation_hz << " Hz; ";
  }
  return o;
}

Outcome criterion12() {
  Outcome o;
  const FleetModel fm;
  const auto c = fleet_capacity(fm);
  o.require(c.evs == 2'577'841.0, "EV count");
  o.require(c.public_evcs == 257'785.0, "EVCS count");
  o.require(std::round(c.connected_evs / 1e4) * 1e4 == 80'000.0, "connected EVs");
  o.require(std::round(c.capacity_mw / 10.0) * 10.0 == 1'920.0, "capacity");

  const Scenario sc;
  const auto cost = event_cost(30.0, fm, sc.participating_evs);
  const double cents = std::round(cost.per_ev_cost * 1e4) / 1e2;
  o.require(cents == 6.28, "per-EV cost");
  o.require(std::round(cost.total_cost) == 2072.0, "event total");

  // Every connected EV discharging at the average rate for 30 s.
  std::vector<double> t, discharge;
  for (int i = 0; i <= 300; ++i) {
    t.push_back(0.1 * i);
    discharge.push_back(-fm.avg_rate_kw * c.connected_evs / 1000.0);
  }
  const auto full = energy_impact(t, discharge, c.connected_evs, fm);
  o.require(std::round(full.opportunity_kwh_per_ev * 10.0) / 10.0 == 0.2, "0.2 kWh forgone");
  o.require(std::round(full.total_kwh_per_ev * 10.0) / 10.0 == 0.4, "0.4 kWh total");
  o.require(std::round(full.range_miles_per_ev) == 2.0, "2 miles");
  o.detail << c.evs << " EVs, " << c.public_evcs << " EVCSs, " << c.connected_evs << " connected, " << c.capacity_mw
           << " MW; " << cents << " cents, " << cost.total_cost << " CAD for " << sc.participating_evs
           << " EVs; " << full.opportunity_kwh_per_ev << " kWh, " << full.total_kwh_per_ev << " kWh -> "
           << full.range_miles_per_ev << " mi";
  return o;
}

}  // namespace

int main() {
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
      {"analytic oracles", criterion1},
      {"certificate re-verification", criterion2},
      {"independent attenuation check", criterion3},
      {"scalar brute-force equivalence", criterion4},
      {"model reduction bound", criterion5},
      {"plant fidelity", criterion6},
      {"attack efficacy ordering", criterion7},
      {"mitigation efficacy", criterion8},
      {"degraded mitigation ordering", criterion9},
      {"delay robustness", criterion10},
      {"no colocation", criterion11},
      {"economics", criterion12},
  };
  int failures = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const auto& [name, fn] = criteria[i];
    const auto t0 = Clock::now();
    bool pass = false;
    std::string detail;
    try {
      Outcome o = fn();
      pass = o.pass;
      detail = o.detail.str();
    } catch (const std::exception& e) {
      detail = std::string("error: ") + e.what();
    }
    failures += pass ? 0 : 1;
    std::printf("criterion %2zu %s: %s (%.1f s) %s\n", i + 1, pass ? "PASS" : "FAIL", name.c_str(),
                seconds_since(t0), detail.c_str());
    std::fflush(stdout);
  }
  return failures == 0 ? 0 : 1;
}
