#include <cmath>

#include "doctest.h"

#include "gridshield/attacks.hpp"
#include "gridshield/dynamics.hpp"
#include "gridshield/error.hpp"
#include "gridshield/linearize.hpp"
#include "test_support.hpp"

using namespace gridshield;
using gridshield::testing::Ne39;

namespace {

InjectionSchedule step_at(int bus, double t0, double mw) {
  InjectionSchedule s;
  s.kind = ScheduleKind::Static;
  s.channels.push_back({bus, StepFunction{t0, mw}, ZeroFunction{}});
  return s;
}

// Aggregate droop: a constant-power step dP (pu) settles where governors and
// damping together pick it up, sum_i (1/R_i + D_i) * dw = -dP.
double droop_prediction_hz(const GridCase& g, double mw) {
  double stiffness = 0.0;
  for (const auto& m : g.machines) stiffness += 1.0 / m.governor.r_droop + m.d;
  return -(mw / g.base_mva) / stiffness * g.f_nominal;
}

}  // namespace

TEST_SUITE("dynamics") {

TEST_CASE("time functions") {
  CHECK(evaluate(ZeroFunction{}, 3.0) == 0.0);
  CHECK(evaluate(StepFunction{1.0, 5.0}, 0.999) == 0.0);
  CHECK(evaluate(StepFunction{1.0, 5.0}, 1.0) == 5.0);
  const SquareWave w{2.0, 10.0, 0.5, 0.25};  // 2 s period, on for 0.5 s
  CHECK(evaluate(w, 1.9) == 0.0);
  CHECK(evaluate(w, 2.0) == 10.0);
  CHECK(evaluate(w, 2.4) == 10.0);
  CHECK(evaluate(w, 2.6) == 0.0);
  CHECK(evaluate(w, 4.0) == 10.0);
  CHECK(evaluate(w, 5.9) == 0.0);
  const SampledFunction s{1.0, 0.5, {0.0, 2.0, 4.0}};
  CHECK(evaluate(s, 0.0) == 0.0);
  CHECK(evaluate(s, 1.25) == doctest::Approx(1.0));
  CHECK(evaluate(s, 9.0) == 4.0);
}

TEST_CASE("schedule validation") {
  const auto& n = Ne39::get(true);
  CHECK_NOTHROW(validate_schedule(n.grid, step_at(4, 1.0, 10.0)));
  try {
    validate_schedule(n.grid, step_at(99, 1.0, 10.0));
    FAIL("unknown bus accepted");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::UnknownBusRef);
  }
  CHECK_THROWS_AS(validate_schedule(n.grid, step_at(4, 1.0, std::nan(""))), Error);
}

TEST_CASE("initial state is an equilibrium") {
  const auto& n = Ne39::get(true);
  CHECK(n.plant.init_report().derivative_norm < 1e-8);
  CHECK_FALSE(n.plant.init_report().warning);
  SimulationOptions o;
  o.record_stride = 50;
  const auto tr = simulate(n.plant, n.plant.initial_state(), {}, 10.0, o);
  CHECK_FALSE(tr.diverged());
  CHECK(tr.max_abs_dev_hz < 1e-6);
}

TEST_CASE("load step settles at the droop prediction") {
  const auto& n = Ne39::get(true);
  SimulationOptions o;
  o.record_stride = 25;
  o.record_states = false;
  const auto tr = simulate(n.plant, n.plant.initial_state(), {step_at(4, 1.0, 100.0)}, 40.0, o);
  REQUIRE_FALSE(tr.diverged());
  const double settled = tr.freq_hz.bottomRows(20).mean() - tr.f_nominal;
  const double predicted = droop_prediction_hz(n.grid, 100.0);
  CHECK(settled < 0.0);
  CHECK(std::abs(settled - predicted) <= 0.05 * std::abs(predicted));
}

TEST_CASE("trajectory CSV round trip") {
  const auto& n = Ne39::get(true);
  SimulationOptions o;
  o.record_stride = 20;
  const auto tr = simulate(n.plant, n.plant.initial_state(), {step_at(24, 0.2, 50.0)}, 1.0, o);
  const auto back = trajectory_from_csv(trajectory_to_csv(tr));
  CHECK(back.time == tr.time);
  CHECK(back.machine_buses == tr.machine_buses);
  CHECK(back.freq_hz == tr.freq_hz);
  CHECK(back.attack_p_mw == tr.attack_p_mw);
  CHECK(back.v_mag == tr.v_mag);
  CHECK(trajectory_to_csv(back) == trajectory_to_csv(tr));
}

}  // TEST_SUITE

TEST_SUITE("linearize") {

TEST_CASE("model dimensions and output map") {
  const auto& ss = Ne39::get(true).model;
  CHECK_NOTHROW(ss.validate());
  CHECK(ss.states() == 79);
  CHECK(ss.inputs() == 38);
  CHECK(ss.disturbances() == 8);
  CHECK(ss.outputs() == 10);
  // Output is 60 times each machine's speed deviation.
  CHECK(ss.c.cwiseAbs().maxCoeff() == doctest::Approx(60.0));
  CHECK((ss.c.array() != 0.0).count() == 10);
}

TEST_CASE("relative coordinates round trip") {
  const auto& n = Ne39::get(true);
  const Eigen::VectorXd x = n.plant.initial_state().to_vector();
  const Eigen::VectorXd z = to_relative(x);
  CHECK(z.size() == x.size() - 1);
  CHECK((from_relative(z, x(0)) - x).cwiseAbs().maxCoeff() < 1e-14);
}

TEST_CASE("operating point is asymptotically stable") {
  for (bool pss : {false, true}) {
    Eigen::EigenSolver<Eigen::MatrixXd> es(Ne39::get(pss).model.a, false);
    CHECK(es.eigenvalues().real().maxCoeff() < 0.0);
  }
}

TEST_CASE("linear model tracks the nonlinear plant for a small step") {
  const auto& n = Ne39::get(true);
  const auto& ss = n.model;
  const double mw = 10.0, t_end = 5.0, dt = 2e-3;
  SimulationOptions o;
  o.dt = dt;
  o.record_states = false;
  const auto tr = simulate(n.plant, n.plant.initial_state(), {step_at(4, 0.0, mw)}, t_end, o);

  const auto it = std::find(ss.attack_buses.begin(), ss.attack_buses.end(), 4);
  REQUIRE(it != ss.attack_buses.end());
  const auto col = 2 * (it - ss.attack_buses.begin());
  Eigen::VectorXd w = Eigen::VectorXd::Zero(ss.disturbances());
  w(col) = mw / ss.base_mva;
  const auto [ad, bd] = discretize_zoh(ss.a, ss.b_d, dt);
  Eigen::VectorXd x = Eigen::VectorXd::Zero(ss.states());
  double err = 0.0, peak = 0.0;
  for (Eigen::Index r = 0; r < tr.samples(); ++r) {
    const Eigen::VectorXd y = ss.c * x + ss.d_d * w;
    const Eigen::VectorXd dev = tr.freq_hz.row(r).transpose().array() - tr.f_nominal;
    err = std::max(err, (y - dev).cwiseAbs().maxCoeff());
    peak = std::max(peak, dev.cwiseAbs().maxCoeff());
    x = ad * x + bd * w;
  }
  CHECK(peak > 1e-3);
  CHECK(err < 0.03 * peak);
}

TEST_CASE("model document round trip") {
  const auto& ss = Ne39::get(false).model;
  const auto back = model_from_json(model_to_json(ss));
  CHECK(back.a == ss.a);
  CHECK(back.b_d == ss.b_d);
  CHECK(back.output_labels == ss.output_labels);
  CHECK(back.ev_buses == ss.ev_buses);
}

}  // TEST_SUITE
