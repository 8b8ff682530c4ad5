#include <cmath>
#include <numbers>

#include "doctest.h"

#include "gridshield/attacks.hpp"
#include "gridshield/error.hpp"
#include "gridshield/mitigation.hpp"
#include "test_support.hpp"

using namespace gridshield;
using gridshield::testing::Ne39;

namespace {

const SynthesisArtifacts& ne39_design() {
  static const SynthesisArtifacts art = [] {
    const auto& n = Ne39::get(true);
    DesignOptions d;
    d.channel_capacity_mw = split_capacity(n.grid, n.model.ev_buses, fleet_capacity({}).capacity_mw);
    return design_controller(n.model, d);
  }();
  return art;
}

Eigen::VectorXd ne39_caps(double scale = 1.0) {
  const auto& n = Ne39::get(true);
  return split_capacity(n.grid, n.model.ev_buses, scale * fleet_capacity({}).capacity_mw);
}

}  // namespace

TEST_SUITE("mitigation") {

TEST_CASE("fleet capacity chain") {
  const auto c = fleet_capacity({});
  CHECK(c.evs == 2'577'841.0);
  CHECK(c.public_evcs == 257'785.0);
  CHECK(std::round(c.connected_evs / 1000.0) == 80.0);
  CHECK(c.connected_evs == doctest::Approx(79'913.35));
  CHECK(std::round(c.capacity_mw / 10.0) * 10.0 == 1920.0);
  CHECK(c.capacity_mw == doctest::Approx(1917.92));
}

TEST_CASE("event cost") {
  const auto c = event_cost(30.0, {}, 33'020.0);
  CHECK(std::round(c.per_ev_cost * 1e4) / 1e2 == doctest::Approx(6.28));
  CHECK(std::round(c.total_cost) == 2072.0);
  CHECK(event_cost(0.0, {}, 1000.0).total_cost == 0.0);
  CHECK_THROWS_AS(event_cost(-1.0, {}, 1.0), Error);
}

TEST_CASE("energy impact") {
  const double n = 1000.0;
  std::vector<double> t, zero, discharge;
  for (int i = 0; i <= 300; ++i) {
    t.push_back(0.1 * i);
    zero.push_back(0.0);
    discharge.push_back(-24.0 * n / 1000.0);
  }
  const auto e0 = energy_impact(t, zero, n, {});
  CHECK(e0.total_kwh_per_ev == 0.0);
  CHECK(e0.range_miles_per_ev == 0.0);

  const auto e = energy_impact(t, discharge, n, {});
  CHECK(e.opportunity_kwh_per_ev == doctest::Approx(0.2).epsilon(1e-12));
  CHECK(e.net_kwh_per_ev == doctest::Approx(0.2).epsilon(1e-12));
  CHECK(e.total_kwh_per_ev == doctest::Approx(0.4).epsilon(1e-12));
  CHECK(std::round(e.range_miles_per_ev) == 2.0);
  CHECK_THROWS_AS(energy_impact(t, std::vector<double>(3, 0.0), n, {}), Error);
}

TEST_CASE("capacity split follows bus loads") {
  const auto& g = Ne39::get(true).grid;
  const auto caps = split_capacity(g, g.ev_buses, 1000.0);
  CHECK(caps.sum() == doctest::Approx(1000.0));
  CHECK(caps.minCoeff() >= 0.0);
  double load3 = 0.0, load4 = 0.0;
  for (const auto& l : g.loads) {
    if (l.bus == 3) load3 += l.p_load;
    if (l.bus == 4) load4 += l.p_load;
  }
  const auto i3 = std::find(g.ev_buses.begin(), g.ev_buses.end(), 3) - g.ev_buses.begin();
  const auto i4 = std::find(g.ev_buses.begin(), g.ev_buses.end(), 4) - g.ev_buses.begin();
  CHECK(caps(i3) / caps(i4) == doctest::Approx(load3 / load4));
}

TEST_CASE("controller: zero in gives zero out") {
  ControllerRuntime c(ne39_design(), ne39_caps(), {});
  const auto p = ne39_design().reduced.model.outputs();
  for (int k = 0; k < 100; ++k) CHECK(c.sample(Eigen::VectorXd::Zero(p)).cwiseAbs().maxCoeff() == 0.0);
  CHECK_FALSE(c.saturated());
}

TEST_CASE("controller: commands respect capacity and v2g") {
  const auto& art = ne39_design();
  const auto p = art.reduced.model.outputs();
  const Eigen::VectorXd caps = ne39_caps(0.01);
  for (bool v2g : {true, false}) {
    ControllerOptions o;
    o.v2g = v2g;
    ControllerRuntime c(art, caps, o);
    bool saturated = false;
    for (int k = 0; k < 400; ++k) {
      const double sign = (k / 50) % 2 == 0 ? 1.0 : -1.0;
      const Eigen::VectorXd u = c.sample(Eigen::VectorXd::Constant(p, 0.3 * sign));
      saturated = saturated || c.saturated();
      for (Eigen::Index b = 0; b < caps.size(); ++b) {
        const double cap = caps(b) / art.reduced.model.base_mva;
        CHECK(u(2 * b) >= -cap - 1e-15);
        CHECK(u(2 * b) <= (v2g ? cap : 0.0) + 1e-15);
      }
    }
    CHECK(saturated);
  }
  CHECK_THROWS_AS(ControllerRuntime(art, Eigen::VectorXd::Ones(3), {}), Error);
}

TEST_CASE("controller: delays are bounded and reproducible") {
  const auto& art = ne39_design();
  ControllerOptions o;
  o.delay.enabled = true;
  o.delay.seed = 11;
  auto run = [&] {
    ControllerRuntime c(art, ne39_caps(), o);
    std::vector<BusPower> out;
    std::vector<double> f(static_cast<std::size_t>(art.reduced.model.outputs()), 60.0), seen;
    for (int k = 0; k < 2000; ++k) {
      const double t = 1e-3 * k;
      for (auto& v : f) v = 60.0 + 0.1 * std::sin(2.0 * std::numbers::pi * t);
      c.command(t, f, out);
      for (double d : c.applied_delays_ms()) seen.push_back(d);
    }
    return seen;
  };
  const auto a = run(), b = run();
  CHECK(a == b);
  REQUIRE_FALSE(a.empty());
  CHECK(*std::min_element(a.begin(), a.end()) >= 0.0);
  CHECK(*std::max_element(a.begin(), a.end()) <= 10.0);
  double mean = 0.0;
  for (double d : a) mean += d;
  mean /= static_cast<double>(a.size());
  CHECK(mean == doctest::Approx(5.0).epsilon(0.1));
}

TEST_CASE("sampled observer gain") {
  // Scalar x+ = x sampled from x' = 0: the gain matches the discrete
  // Riccati fixed point p = p - p^2 / (p + rd) + qd.
  const double period = 0.1, q = 2.0, r = 0.5;
  const Eigen::MatrixXd one = Eigen::MatrixXd::Ones(1, 1);
  const Eigen::MatrixXd l = sampled_observer_gain(one, one, q * one, r * one, period);
  const double qd = q * period, rd = r / period;
  const double p = 0.5 * (qd + std::sqrt(qd * qd + 4.0 * qd * rd));
  CHECK(l(0, 0) == doctest::Approx(p / (p + rd)).epsilon(1e-10));
}

TEST_CASE("estimator error decays at the observer rate") {
  const auto& art = ne39_design();
  const auto& rm = art.reduced.model;
  const double period = 0.01;
  ControllerOptions o;
  o.sample_period = period;
  ControllerRuntime c(art, ne39_caps(), o);
  // Exact samples of the continuous reduced plant under held commands.
  const auto [phi, gamma] = discretize_zoh(rm.a, rm.b, period);
  Eigen::VectorXd x = Eigen::VectorXd::Ones(rm.states());
  std::vector<double> t, log_e;
  for (int k = 0; k < 3000; ++k) {
    const Eigen::VectorXd u = c.sample(rm.c * x);
    t.push_back(k * period);
    log_e.push_back(std::log((x - c.estimate()).norm()));
    x = phi * x + gamma * u;
  }
  // Least-squares slope of log |e| over the tail.
  double st = 0.0, se = 0.0, stt = 0.0, ste = 0.0, cnt = 0.0;
  for (std::size_t i = 0; i < t.size(); ++i) {
    if (t[i] < 10.0 || !std::isfinite(log_e[i])) continue;
    st += t[i], se += log_e[i], stt += t[i] * t[i], ste += t[i] * log_e[i], cnt += 1.0;
  }
  const double slope = (cnt * ste - st * se) / (cnt * stt - st * st);
  Eigen::EigenSolver<Eigen::MatrixXd> es(rm.a + art.observer.l * rm.c, false);
  const double alpha = es.eigenvalues().real().maxCoeff();
  MESSAGE("fitted decay " << slope << " slowest observer pole " << alpha);
  CHECK(alpha < 0.0);
  CHECK(slope == doctest::Approx(alpha).epsilon(0.2));
}

}  // TEST_SUITE
