#include <cmath>
#include <numbers>

#include "doctest.h"

#include "gridshield/attacks.hpp"
#include "gridshield/error.hpp"
#include "test_support.hpp"

using namespace gridshield;
using gridshield::testing::Ne39;

namespace {

ErrorCode code_of(auto&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  return ErrorCode::NumericalFailure;
}

// Block-diagonal model with the given complex pairs and one real pole.
StateSpaceModel modal_model(const std::vector<std::pair<double, double>>& pairs, double real_pole) {
  const auto n = static_cast<Eigen::Index>(2 * pairs.size() + 1);
  StateSpaceModel s = gridshield::testing::scalar_model(0.0, 1.0, 1.0, 1.0);
  s.a = Eigen::MatrixXd::Zero(n, n);
  for (std::size_t k = 0; k < pairs.size(); ++k) {
    const auto i = static_cast<Eigen::Index>(2 * k);
    const auto [sigma, omega] = pairs[k];
    s.a.block(i, i, 2, 2) << sigma, omega, -omega, sigma;
  }
  s.a(n - 1, n - 1) = real_pole;
  s.b = Eigen::MatrixXd::Ones(n, 1);
  s.b_d = Eigen::MatrixXd::Ones(n, 1);
  s.c = Eigen::MatrixXd::Ones(1, n);
  s.state_labels.assign(static_cast<std::size_t>(n), "x");
  return s;
}

AttackSpec spec_on(const std::vector<int>& buses, AttackKind kind) {
  AttackSpec a;
  a.kind = kind;
  a.total_mw = 800.0;
  a.targets = AttackSpec::equal_split(buses);
  a.t_start = 1.0;
  return a;
}

}  // namespace

TEST_SUITE("attacks") {

TEST_CASE("target mode is the least-damped pair in band") {
  const double two_pi = 2.0 * std::numbers::pi;
  const auto s = modal_model({{-1.0, two_pi * 1.2}, {-0.1, two_pi * 0.5}, {-0.01, two_pi * 7.0}}, -3.0);
  const ModeInfo m = identify_target_mode(s);
  CHECK(m.freq_hz == doctest::Approx(0.5).epsilon(1e-10));
  const double zeta = 0.1 / std::hypot(0.1, two_pi * 0.5);
  CHECK(m.damping_ratio == doctest::Approx(zeta).epsilon(1e-10));
  CHECK(m.eigenvalue.real() == doctest::Approx(-0.1).epsilon(1e-10));

  CHECK(code_of([] { (void)identify_target_mode(modal_model({}, -2.0)); }) == ErrorCode::NoOscillatoryMode);
}

TEST_CASE("ne39 target mode lies in the electromechanical band") {
  const ModeInfo m = identify_target_mode(Ne39::get(true).model);
  CHECK(m.freq_hz > 0.05);
  CHECK(m.freq_hz < 5.0);
  CHECK(m.damping_ratio > 0.0);
}

TEST_CASE("equal split") {
  const auto t = AttackSpec::equal_split({3, 4, 24, 29});
  REQUIRE(t.size() == 4);
  for (const auto& x : t) CHECK(x.fraction == 0.25);
}

TEST_CASE("attack validation") {
  const auto& g = Ne39::get(true).grid;
  CHECK_NOTHROW(validate_attack(spec_on({3, 4, 24, 29}, AttackKind::Static), g));
  CHECK(code_of([&] { validate_attack(spec_on({3, 5}, AttackKind::Static), g); }) == ErrorCode::UnknownBusRef);
  auto a = spec_on({3, 4}, AttackKind::Static);
  a.targets[0].fraction = 0.7;
  CHECK(code_of([&] { validate_attack(a, g); }) == ErrorCode::InvariantViolation);
  a = spec_on({3, 4}, AttackKind::Switching);
  a.freq_hz = 1.0;
  a.duty = 1.0;
  CHECK(code_of([&] { validate_attack(a, g); }) == ErrorCode::InvariantViolation);
  a = spec_on({3}, AttackKind::Static);
  a.total_mw = -1.0;
  CHECK(code_of([&] { validate_attack(a, g); }) == ErrorCode::InvariantViolation);
  a.targets.clear();
  a.total_mw = 1.0;
  CHECK(code_of([&] { validate_attack(a, g); }) == ErrorCode::InvariantViolation);
}

TEST_CASE("static schedule steps every target at onset") {
  const auto s = static_attack(spec_on({3, 4, 24, 29}, AttackKind::Static), Ne39::get(true).grid);
  REQUIRE(s.channels.size() == 4);
  double before = 0.0, after = 0.0;
  for (const auto& c : s.channels) {
    before += evaluate(c.p_mw, 0.999);
    after += evaluate(c.p_mw, 1.0);
    CHECK(evaluate(c.p_mw, 30.0) == 200.0);
  }
  CHECK(before == 0.0);
  CHECK(after == 800.0);
}

TEST_CASE("switching schedule: duty and frequency") {
  auto a = spec_on({3, 4}, AttackKind::Switching);
  a.freq_hz = 0.8;
  a.duty = 0.3;
  const auto s = switching_attack(a, Ne39::get(true).grid);
  REQUIRE(s.channels.size() == 2);
  const auto& fn = s.channels[0].p_mw;
  // Mean over whole periods and the count of rising edges.
  const double dt = 1e-4, t0 = a.t_start, t1 = t0 + 10.0 / a.freq_hz;
  double area = 0.0;
  int rising = 0;
  double prev = evaluate(fn, t0 - dt);
  for (double t = t0; t < t1 - 0.5 * dt; t += dt) {
    const double v = evaluate(fn, t);
    area += v * dt;
    if (v > prev) ++rising;
    prev = v;
    CHECK((v == 0.0 || v == 400.0));
  }
  CHECK(area / (t1 - t0) == doctest::Approx(0.3 * 400.0).epsilon(1e-3));
  CHECK(rising == 10);
}

TEST_CASE("mode-targeted switching uses the identified frequency") {
  const auto& n = Ne39::get(true);
  auto a = spec_on({3, 4}, AttackKind::Switching);
  a.freq_hz = 0.0;
  const auto s = make_attack(a, n.grid, &n.model);
  REQUIRE(s.channels.size() == 2);
  const auto* w = std::get_if<SquareWave>(&s.channels[0].p_mw);
  REQUIRE(w != nullptr);
  CHECK(w->freq_hz == doctest::Approx(identify_target_mode(n.model).freq_hz).epsilon(1e-12));
  CHECK(code_of([&] { (void)make_attack(a, n.grid, nullptr); }) == ErrorCode::InvariantViolation);
}

TEST_CASE("dynamic attack gain moves the target pair to the requested real part") {
  const auto& ss = Ne39::get(true).model;
  auto a = spec_on({3, 4, 24, 29}, AttackKind::Dynamic);
  const auto d = design_dynamic_attack(ss, a);
  const std::complex<double> want(a.sigma_target, d.target.eigenvalue.imag());
  Eigen::EigenSolver<Eigen::MatrixXd> es(ss.a + d.b_p * d.k_att, false);
  double dist = std::numeric_limits<double>::infinity();
  for (Eigen::Index i = 0; i < es.eigenvalues().size(); ++i) dist = std::min(dist, std::abs(es.eigenvalues()(i) - want));
  CHECK(dist < 1e-6 * std::abs(want));
  CHECK(d.max_mw.sum() == doctest::Approx(800.0));
  CHECK((d.bias_mw - 0.5 * d.max_mw).cwiseAbs().maxCoeff() == 0.0);
  // Attacker observer error dynamics are stable.
  Eigen::EigenSolver<Eigen::MatrixXd> eo(ss.a + d.l_obs * ss.c, false);
  CHECK(eo.eigenvalues().real().maxCoeff() < 0.0);
}

TEST_CASE("dynamic attack load stays within its ceiling and drives the target mode") {
  const auto& n = Ne39::get(true);
  auto a = spec_on({3, 4, 24, 29}, AttackKind::Dynamic);
  const auto sched = make_attack(a, n.grid, &n.model);
  SimulationOptions o;
  o.record_states = false;
  const auto tr = simulate(n.plant, n.plant.initial_state(), {sched}, 15.0, o);
  REQUIRE(tr.attack_p_mw.cols() == 4);
  CHECK(tr.attack_p_mw.minCoeff() >= 0.0);
  CHECK(tr.attack_p_mw.maxCoeff() <= 200.0 + 1e-9);
  // The load keeps switching after onset rather than settling.
  const Eigen::Index half = tr.samples() / 2;
  const Eigen::VectorXd total = tr.attack_p_mw.bottomRows(tr.samples() - half).rowwise().sum();
  CHECK(total.maxCoeff() - total.minCoeff() > 100.0);
  CHECK(tr.max_abs_dev_hz > 0.1);
}

TEST_CASE("model perturbation") {
  const auto& ss = Ne39::get(true).model;
  CHECK(perturb_model(ss, 0.0, 3).a == ss.a);
  const auto p1 = perturb_model(ss, 0.1, 3), p2 = perturb_model(ss, 0.1, 3), p3 = perturb_model(ss, 0.1, 4);
  CHECK(p1.a == p2.a);
  CHECK(p1.a != p3.a);
  const Eigen::ArrayXXd rel = ((p1.a - ss.a).array().abs() / ss.a.array().abs().max(1e-300));
  CHECK((rel <= 0.1 + 1e-12).all());
  CHECK(p1.c == ss.c);
}

}  // TEST_SUITE
