#include <cmath>
#include <random>

#include "doctest.h"

#include "gridshield/sdp.hpp"

using namespace gridshield;

TEST_SUITE("sdp") {

TEST_CASE("2x2 scalar bound") {
  // min t  s.t.  [[t, 1], [1, t]] >= 0, optimum t = 1.
  sdp::Problem p;
  const int t = p.add_scalar();
  sdp::Block b;
  b.constant = Eigen::Matrix2d{{0.0, 1.0}, {1.0, 0.0}};
  sdp::Problem::add_term(b, t, 0.5 * Eigen::MatrixXd::Identity(2, 2), Eigen::MatrixXd::Identity(2, 2));
  p.add_block(b);
  p.set_cost(t, 1.0);
  const auto r = sdp::solve(p);
  REQUIRE(r.optimal());
  CHECK(r.y(0) == doctest::Approx(1.0).epsilon(1e-7));
  CHECK(std::abs(r.primal_objective - r.dual_objective) < 1e-7);
}

TEST_CASE("largest eigenvalue") {
  std::mt19937 rng(4);
  std::normal_distribution<double> nd;
  Eigen::MatrixXd m(5, 5);
  for (auto& v : m.reshaped()) v = nd(rng);
  m = (m + m.transpose()).eval();
  sdp::Problem p;
  const int t = p.add_scalar();
  sdp::Block b;
  b.constant = -m;
  sdp::Problem::add_term(b, t, 0.5 * Eigen::MatrixXd::Identity(5, 5), Eigen::MatrixXd::Identity(5, 5));
  p.add_block(b);
  p.set_cost(t, 1.0);
  const auto r = sdp::solve(p);
  REQUIRE(r.optimal());
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(m);
  CHECK(r.y(0) == doctest::Approx(es.eigenvalues().maxCoeff()).epsilon(1e-7));
}

TEST_CASE("symmetric variable: smallest Lyapunov certificate") {
  // min t  s.t.  -(A X + X A^T) - I >= 0,  t I - X >= 0. The optimum X is
  // the Lyapunov solution, so t = max(1/2, 1/4).
  const Eigen::MatrixXd a = Eigen::Vector2d(-1.0, -2.0).asDiagonal();
  const Eigen::MatrixXd eye = Eigen::MatrixXd::Identity(2, 2);
  sdp::Problem p;
  const int x = p.add_symmetric(2);
  const int t = p.add_scalar();
  sdp::Block lyap;
  lyap.constant = -eye;
  sdp::Problem::add_term(lyap, x, -a, eye);
  p.add_block(lyap);
  sdp::Block bound;
  bound.constant = Eigen::MatrixXd::Zero(2, 2);
  sdp::Problem::add_term(bound, t, 0.5 * eye, eye);
  sdp::Problem::add_term(bound, x, -0.5 * eye, eye);
  p.add_block(bound);
  p.set_cost(t, 1.0);
  const auto r = sdp::solve(p);
  REQUIRE(r.optimal());
  CHECK(r.y(p.variables()[static_cast<std::size_t>(t)].offset) == doctest::Approx(0.5).epsilon(1e-6));
  const Eigen::MatrixXd xv = p.value(x, r.y);
  CHECK(xv(0, 0) == doctest::Approx(0.5).epsilon(1e-5));
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(p.block_value(0, r.y));
  CHECK(es.eigenvalues().minCoeff() > -1e-8);
}

TEST_CASE("full variable packing round trip") {
  sdp::Problem p;
  const int s = p.add_symmetric(3);
  const int f = p.add_full(2, 3);
  Eigen::VectorXd y = Eigen::VectorXd::Zero(p.dimension());
  Eigen::MatrixXd sv(3, 3);
  sv << 1, 2, 3, 2, 4, 5, 3, 5, 6;
  Eigen::MatrixXd fv(2, 3);
  fv << 1, -2, 3, -4, 5, -6;
  p.pack(s, sv, y);
  p.pack(f, fv, y);
  CHECK(p.dimension() == 6 + 6);
  CHECK(p.value(s, y) == sv);
  CHECK(p.value(f, y) == fv);
}

TEST_CASE("infeasible program is not reported optimal") {
  // [[-1, 0], [0, t]] >= 0 has no solution.
  sdp::Problem p;
  const int t = p.add_scalar();
  sdp::Block b;
  b.constant = Eigen::Vector2d(-1.0, 0.0).asDiagonal();
  Eigen::MatrixXd l = Eigen::MatrixXd::Zero(2, 1);
  l(1, 0) = 0.5;
  Eigen::MatrixXd rr = Eigen::MatrixXd::Zero(1, 2);
  rr(0, 1) = 1.0;
  sdp::Problem::add_term(b, t, l, rr);
  p.add_block(b);
  p.set_cost(t, 1.0);
  const auto r = sdp::solve(p);
  CHECK_FALSE(r.optimal());
}

}  // TEST_SUITE
