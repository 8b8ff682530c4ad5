#include <cmath>
#include <random>

#include "doctest.h"

#include "gridshield/error.hpp"
#include "gridshield/modred.hpp"
#include "gridshield/synth.hpp"
#include "test_support.hpp"

using namespace gridshield;
using gridshield::testing::Ne39;
using gridshield::testing::scalar_model;

namespace {

// Error system G - G_r over the combined input [B, B_d].
LtiSystem error_system(const StateSpaceModel& g, const StateSpaceModel& r) {
  const auto n = g.states(), k = r.states();
  const auto m = g.inputs() + g.disturbances();
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

StateSpaceModel random_stable_model(int n, unsigned seed) {
  std::mt19937 rng(seed);
  std::normal_distribution<double> nd;
  StateSpaceModel s;
  Eigen::MatrixXd m(n, n);
  for (auto& v : m.reshaped()) v = nd(rng);
  Eigen::EigenSolver<Eigen::MatrixXd> es(m, false);
  s.a = m - (es.eigenvalues().real().maxCoeff() + 0.5) * Eigen::MatrixXd::Identity(n, n);
  s.b = Eigen::MatrixXd(n, 2);
  s.b_d = Eigen::MatrixXd(n, 1);
  s.c = Eigen::MatrixXd(2, n);
  for (auto& v : s.b.reshaped()) v = nd(rng);
  for (auto& v : s.b_d.reshaped()) v = nd(rng);
  for (auto& v : s.c.reshaped()) v = nd(rng);
  s.d = Eigen::MatrixXd::Zero(2, 2);
  s.d_d = Eigen::MatrixXd::Zero(2, 1);
  for (int i = 0; i < n; ++i) s.state_labels.push_back("x" + std::to_string(i));
  s.input_labels = {"u0", "u1"};
  s.disturbance_labels = {"w"};
  s.output_labels = {"y0", "y1"};
  return s;
}

}  // namespace

TEST_SUITE("modred") {

TEST_CASE("lyapunov: diagonal cases") {
  Eigen::MatrixXd a = Eigen::Vector2d(-1.0, -2.0).asDiagonal();
  Eigen::MatrixXd p = lyapunov_solve(a, Eigen::MatrixXd::Identity(2, 2));
  CHECK(std::abs(p(0, 0) - 0.5) < 1e-10);
  CHECK(std::abs(p(1, 1) - 0.25) < 1e-10);
  CHECK(std::abs(p(0, 1)) < 1e-10);

  a = Eigen::Vector2d(-1.0, -3.0).asDiagonal();
  Eigen::MatrixXd q(2, 2);
  q << 2.0, 1.0, 1.0, 6.0;
  p = lyapunov_solve(a, q);
  // p_ij = q_ij / -(a_ii + a_jj)
  CHECK(std::abs(p(0, 0) - 1.0) < 1e-10);
  CHECK(std::abs(p(0, 1) - 0.25) < 1e-10);
  CHECK(std::abs(p(1, 0) - 0.25) < 1e-10);
  CHECK(std::abs(p(1, 1) - 1.0) < 1e-10);
}

TEST_CASE("lyapunov: residual on a dense problem and rejection of unstable a") {
  const auto s = random_stable_model(12, 7);
  const Eigen::MatrixXd q = s.b * s.b.transpose();
  const Eigen::MatrixXd p = lyapunov_solve(s.a, q);
  CHECK((s.a * p + p * s.a.transpose() + q).cwiseAbs().maxCoeff() < 1e-10 * std::max(1.0, p.norm()));
  CHECK_THROWS_AS(lyapunov_solve(Eigen::MatrixXd::Identity(2, 2), q.topLeftCorner(2, 2)), Error);
}

TEST_CASE("hankel value of 1/(s+1)") {
  const auto s = scalar_model(-1.0, 1.0, 0.0, 1.0);
  const Eigen::VectorXd h = hankel_values(s);
  REQUIRE(h.size() == 1);
  CHECK(std::abs(h(0) - 0.5) < 1e-10);
}

TEST_CASE("truncation error bound on a random model") {
  const auto s = random_stable_model(10, 3);
  for (int k : {9, 5, 2}) {
    ReductionTarget t;
    t.order = k;
    const auto rm = balanced_truncate(s, t);
    CHECK(rm.kept_order == k);
    const double tail = rm.hankel_values.tail(10 - k).sum();
    CHECK(hinf_norm(error_system(s, rm.model)) <= 2.0 * tail + 1e-6);
  }
}

TEST_CASE("energy target picks the smallest order") {
  const auto& ss = Ne39::get(true).model;
  const auto rm = balanced_truncate(ss);
  const Eigen::VectorXd& h = rm.hankel_values;
  CHECK(rm.energy_fraction >= 0.99);
  const double total = h.sum();
  CHECK(h.head(rm.kept_order - 1).sum() / total < 0.99);
  for (Eigen::Index i = 1; i < h.size(); ++i) CHECK(h(i) <= h(i - 1));
  CHECK(rm.model.states() == rm.kept_order);
  CHECK(rm.t_left.cols() == rm.kept_order);
  CHECK((rm.t_left.transpose() * rm.t_right - Eigen::MatrixXd::Identity(rm.kept_order, rm.kept_order))
            .cwiseAbs()
            .maxCoeff() < 1e-8);
}

TEST_CASE("reduction argument checks") {
  const auto s = random_stable_model(4, 1);
  ReductionTarget t;
  t.order = 5;
  CHECK_THROWS_AS(balanced_truncate(s, t), Error);
  t.order.reset();
  t.energy = 1.5;
  CHECK_THROWS_AS(balanced_truncate(s, t), Error);
}

TEST_CASE("reduced model document round trip") {
  const auto rm = balanced_truncate(random_stable_model(6, 9));
  const auto back = reduced_from_json(reduced_to_json(rm));
  CHECK(back.kept_order == rm.kept_order);
  CHECK(back.model.a == rm.model.a);
  CHECK(back.hankel_values == rm.hankel_values);
}

}  // TEST_SUITE
