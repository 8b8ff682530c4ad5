#include <cmath>
#include <numbers>

#include "doctest.h"

#include "gridshield/error.hpp"
#include "gridshield/synth.hpp"
#include "test_support.hpp"

using namespace gridshield;
using gridshield::testing::Ne39;
using gridshield::testing::scalar_model;

namespace {

LtiSystem tf_first_order() {
  return {Eigen::MatrixXd::Constant(1, 1, -1.0), Eigen::MatrixXd::Ones(1, 1), Eigen::MatrixXd::Ones(1, 1),
          Eigen::MatrixXd::Zero(1, 1)};
}

ErrorCode code_of(auto&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  return ErrorCode::NumericalFailure;
}

// Golden-section refinement of sigma_max around a grid maximum.
double refined_sweep(const LtiSystem& sys) {
  double best_w = 0.0, best = sigma_max_at(sys, 0.0);
  for (int i = 0; i <= 4000; ++i) {
    const double w = std::pow(10.0, -2.0 + 4.0 * i / 4000.0);
    const double s = sigma_max_at(sys, w);
    if (s > best) best = s, best_w = w;
  }
  double lo = best_w / 1.01, hi = best_w * 1.01;
  const double g = (std::sqrt(5.0) - 1.0) / 2.0;
  for (int it = 0; it < 80; ++it) {
    const double m1 = hi - g * (hi - lo), m2 = lo + g * (hi - lo);
    if (sigma_max_at(sys, m1) > sigma_max_at(sys, m2)) {
      hi = m2;
    } else {
      lo = m1;
    }
  }
  return std::max(best, sigma_max_at(sys, 0.5 * (lo + hi)));
}

}  // namespace

TEST_SUITE("synth") {

TEST_CASE("scalar Riccati root") {
  const Eigen::MatrixXd one = Eigen::MatrixXd::Ones(1, 1);
  const Eigen::MatrixXd s = solve_care(-one, one, one, one);
  CHECK(std::abs(s(0, 0) - (std::sqrt(2.0) - 1.0)) < 1e-10);
  CHECK(care_residual(-one, one, one, one, s) < 1e-12);
}

TEST_CASE("Riccati solution is stabilizing on ne39") {
  const auto& ss = Ne39::get(true).model;
  const auto n = ss.states();
  const Eigen::MatrixXd q = Eigen::MatrixXd::Identity(n, n);
  const Eigen::MatrixXd r = Eigen::MatrixXd::Identity(ss.outputs(), ss.outputs());
  const Eigen::MatrixXd s = solve_care(ss.a.transpose(), ss.c.transpose(), q, r);
  CHECK(care_residual(ss.a.transpose(), ss.c.transpose(), q, r, s) <= 1e-8 * std::max(1.0, s.norm()));
  CHECK((s - s.transpose()).cwiseAbs().maxCoeff() < 1e-10 * s.norm());
  const Eigen::MatrixXd cl = ss.a.transpose() - ss.c.transpose() * r.inverse() * ss.c * s;
  Eigen::EigenSolver<Eigen::MatrixXd> es(cl, false);
  CHECK(es.eigenvalues().real().maxCoeff() < 0.0);
}

TEST_CASE("Riccati rejects an unstabilizable pair") {
  const Eigen::MatrixXd one = Eigen::MatrixXd::Ones(1, 1);
  CHECK(code_of([&] { (void)solve_care(one, Eigen::MatrixXd::Zero(1, 1), one, one); }) ==
        ErrorCode::NotStabilizable);
}

TEST_CASE("observer gain of an unstable scalar plant") {
  const Eigen::MatrixXd one = Eigen::MatrixXd::Ones(1, 1);
  // Dual Riccati s^2 - 2s - 1 = 0 gives s = 1 + sqrt(2), so a + l c = -sqrt(2).
  const auto obs = observer_gain(one, one, one, one);
  CHECK(obs.l(0, 0) == doctest::Approx(-(1.0 + std::sqrt(2.0))).epsilon(1e-12));
  CHECK(1.0 + obs.l(0, 0) == doctest::Approx(-std::sqrt(2.0)).epsilon(1e-12));
}

TEST_CASE("hinf norm oracles") {
  CHECK(std::abs(hinf_norm(tf_first_order()) - 1.0) < 1e-6);

  LtiSystem gain = tf_first_order();
  gain.b.setZero();
  gain.d(0, 0) = 3.0;
  CHECK(std::abs(hinf_norm(gain) - 3.0) < 1e-6);

  LtiSystem integrator = tf_first_order();
  integrator.a(0, 0) = 0.0;
  CHECK(code_of([&] { (void)hinf_norm(integrator); }) == ErrorCode::Unstable);

  // Second-order resonance: peak 1 / (2 z sqrt(1 - z^2)).
  const double wn = 3.0, z = 0.05;
  LtiSystem res;
  res.a = Eigen::Matrix2d{{0.0, 1.0}, {-wn * wn, -2.0 * z * wn}};
  res.b = Eigen::Vector2d(0.0, wn * wn);
  res.c = Eigen::RowVector2d(1.0, 0.0);
  res.d = Eigen::MatrixXd::Zero(1, 1);
  const double peak = 1.0 / (2.0 * z * std::sqrt(1.0 - z * z));
  CHECK(hinf_norm(res) == doctest::Approx(peak).epsilon(1e-6));
}

TEST_CASE("hinf norm agrees with a frequency sweep on ne39") {
  const LtiSystem sys = disturbance_channel(Ne39::get(true).model);
  const double bisection = hinf_norm(sys);
  const double sweep = refined_sweep(sys);
  CHECK(bisection >= sweep * (1.0 - 1e-6));
  CHECK(bisection <= sweep * (1.0 + 1e-4));
}

TEST_CASE("scalar LMI matches a gain-grid search") {
  // x' = x + u + w, y = x. With |k| <= 100 the best closed loop is 1/(s + 99).
  const auto s = scalar_model(1.0, 1.0, 1.0, 1.0);
  HinfOptions o;
  o.gain_bound = 100.0;
  o.a1 = 0.5;
  const auto sol = hinf_synthesize(s, o);
  double best = std::numeric_limits<double>::infinity();
  for (int i = 0; i <= 100000; ++i) {
    const double k = -100.0 * i / 100000.0;
    if (!(1.0 + k < -o.a1)) continue;
    best = std::min(best, 1.0 / std::abs(1.0 + k));
  }
  CHECK(best == doctest::Approx(1.0 / 99.0).epsilon(1e-9));
  CHECK(std::abs(sol.rho - best) <= 0.02 * best);
  CHECK(sol.k_mit(0, 0) < -o.a1 - 1.0);
}

TEST_CASE("certificates re-verify and rho grows with the pole-region bound") {
  // Effort-weighted first-order plant: the pole constraint binds for large a1.
  const auto s = with_effort_output(scalar_model(-1.0, 1.0, 1.0, 1.0), Eigen::VectorXd::Constant(1, 0.5));
  double prev = 0.0;
  for (double a1 : {0.1, 2.0, 5.0, 20.0}) {
    HinfOptions o;
    o.a1 = a1;
    const auto sol = hinf_synthesize(s, o);
    CHECK(sol.rho >= prev * (1.0 - 1e-6));
    prev = sol.rho;
    const double pole = s.a(0, 0) + s.b(0, 0) * sol.k_mit(0, 0);
    CHECK(pole < -a1);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> br(bounded_real_matrix(s, sol.x_cert, sol.w_cert, sol.rho));
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> pr(pole_region_matrix(s, sol.x_cert, sol.w_cert, a1));
    CHECK(br.eigenvalues().maxCoeff() < 0.0);
    CHECK(pr.eigenvalues().maxCoeff() < 0.0);
    CHECK(hinf_norm(disturbance_channel(s, sol.k_mit)) <= sol.rho * (1.0 + 1e-6));
  }
}

TEST_CASE("effort output rows") {
  const auto& ss = Ne39::get(true).model;
  Eigen::VectorXd w = Eigen::VectorXd::Zero(ss.inputs());
  w(0) = 2.0;
  w(4) = 0.5;
  const auto p = with_effort_output(ss, w);
  CHECK(p.outputs() == ss.outputs() + 2);
  CHECK(p.d(ss.outputs(), 0) == 2.0);
  CHECK(p.d(ss.outputs() + 1, 4) == 0.5);
  CHECK(p.c.bottomRows(2).cwiseAbs().maxCoeff() == 0.0);
  CHECK(p.output_labels.back().rfind("effort_", 0) == 0);
}

TEST_CASE("ne39 design passes its own verification and round-trips") {
  const auto& n = Ne39::get(true);
  DesignOptions d;
  d.channel_capacity_mw = Eigen::VectorXd::Constant(n.model.inputs() / 2, 100.0);
  const auto art = design_controller(n.model, d);
  CHECK(art.verification.all_passed());
  CHECK(art.hinf.rho > 0.0);
  CHECK(art.hinf.k_mit.rows() == n.model.inputs());
  // Reactive rows are zero in active-power-only mode.
  for (Eigen::Index i = 1; i < art.hinf.k_mit.rows(); i += 2) CHECK(art.hinf.k_mit.row(i).norm() == 0.0);
  const auto back = synthesis_from_json(synthesis_to_json(art));
  CHECK(back.hinf.k_mit == art.hinf.k_mit);
  CHECK(back.observer.l == art.observer.l);
  CHECK(back.hinf.rho == art.hinf.rho);
  CHECK(back.verification.checks.size() == art.verification.checks.size());
}

}  // TEST_SUITE
