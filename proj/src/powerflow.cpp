#include <cmath>

#include "gridshield/error.hpp"
#include "gridshield/grid.hpp"

namespace gridshield {

using cd = std::complex<double>;

ComplexMatrix build_ybus(const GridCase& grid) {
  const auto n = static_cast<Eigen::Index>(grid.buses.size());
  ComplexMatrix y = ComplexMatrix::Zero(n, n);
  for (const auto& br : grid.branches) {
    const auto f = static_cast<Eigen::Index>(grid.bus_index(br.from_bus));
    const auto t = static_cast<Eigen::Index>(grid.bus_index(br.to_bus));
    const cd ys = 1.0 / cd(br.r, br.x);
    const cd half_charging(0.0, br.b_charging / 2.0);
    y(f, f) += (ys + half_charging) / (br.tap * br.tap);
    y(t, t) += ys + half_charging;
    y(f, t) -= ys / br.tap;
    y(t, f) -= ys / br.tap;
  }
  for (Eigen::Index i = 0; i < n; ++i) {
    y(i, i) += cd(0.0, grid.buses[static_cast<std::size_t>(i)].shunt_b);
  }
  return y;
}

ComplexVector PowerFlowSolution::voltage() const {
  ComplexVector out(v.size());
  for (Eigen::Index i = 0; i < v.size(); ++i) out(i) = std::polar(v(i), theta(i));
  return out;
}

namespace {

struct Specified {
  Eigen::VectorXd p;  // net injection, pu
  Eigen::VectorXd q;
};

Specified specified_injections(const GridCase& grid) {
  const auto n = static_cast<Eigen::Index>(grid.buses.size());
  Specified s{Eigen::VectorXd::Zero(n), Eigen::VectorXd::Zero(n)};
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& bus = grid.buses[static_cast<std::size_t>(i)];
    s.p(i) = -bus.p_load;
    s.q(i) = -bus.q_load;
  }
  for (const auto& m : grid.machines) {
    s.p(static_cast<Eigen::Index>(grid.bus_index(m.bus))) += m.p_gen;
  }
  return s;
}

ComplexVector power_injection(const ComplexMatrix& ybus, const ComplexVector& v) {
  ComplexVector current = ybus * v;
  return v.cwiseProduct(current.conjugate());
}

}  // namespace

double powerflow_mismatch(const GridCase& grid, const ComplexMatrix& ybus,
                          const Eigen::VectorXd& v, const Eigen::VectorXd& theta) {
  ComplexVector vc(v.size());
  for (Eigen::Index i = 0; i < v.size(); ++i) vc(i) = std::polar(v(i), theta(i));
  const ComplexVector s = power_injection(ybus, vc);
  const Specified spec = specified_injections(grid);
  double worst = 0.0;
  for (Eigen::Index i = 0; i < v.size(); ++i) {
    const auto kind = grid.buses[static_cast<std::size_t>(i)].kind;
    if (kind == BusKind::Slack) continue;
    worst = std::max(worst, std::abs(spec.p(i) - s(i).real()));
    if (kind == BusKind::PQ) worst = std::max(worst, std::abs(spec.q(i) - s(i).imag()));
  }
  return worst;
}

PowerFlowSolution solve_powerflow(const GridCase& grid,
                                  const PowerFlowOptions& options) {
  if (!(options.tol > 0.0)) {
    throw Error(ErrorCode::InvariantViolation, "power flow tolerance must be > 0");
  }
  const ComplexMatrix ybus = build_ybus(grid);
  const auto n = static_cast<Eigen::Index>(grid.buses.size());
  const Specified spec = specified_injections(grid);

  std::vector<Eigen::Index> pvpq;  // angle unknowns
  std::vector<Eigen::Index> pq;    // magnitude unknowns
  Eigen::VectorXd vm = Eigen::VectorXd::Ones(n);
  Eigen::VectorXd va = Eigen::VectorXd::Zero(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& bus = grid.buses[static_cast<std::size_t>(i)];
    if (bus.v_setpoint) vm(i) = *bus.v_setpoint;
    if (bus.kind != BusKind::Slack) pvpq.push_back(i);
    if (bus.kind == BusKind::PQ) pq.push_back(i);
  }
  if (!options.flat_start && options.warm_start != nullptr &&
      options.warm_start->v.size() == n) {
    for (Eigen::Index i = 0; i < n; ++i) {
      if (grid.buses[static_cast<std::size_t>(i)].kind == BusKind::PQ) {
        vm(i) = options.warm_start->v(i);
      }
      if (grid.buses[static_cast<std::size_t>(i)].kind != BusKind::Slack) {
        va(i) = options.warm_start->theta(i);
      }
    }
  }

  const auto n_ang = static_cast<Eigen::Index>(pvpq.size());
  const auto n_mag = static_cast<Eigen::Index>(pq.size());
  const Eigen::Index dim = n_ang + n_mag;

  auto residual = [&](const ComplexVector& v, Eigen::VectorXd& f) {
    const ComplexVector s = power_injection(ybus, v);
    f.resize(dim);
    for (Eigen::Index k = 0; k < n_ang; ++k) {
      f(k) = s(pvpq[static_cast<std::size_t>(k)]).real() - spec.p(pvpq[static_cast<std::size_t>(k)]);
    }
    for (Eigen::Index k = 0; k < n_mag; ++k) {
      f(n_ang + k) = s(pq[static_cast<std::size_t>(k)]).imag() - spec.q(pq[static_cast<std::size_t>(k)]);
    }
    return f.size() == 0 ? 0.0 : f.lpNorm<Eigen::Infinity>();
  };

  ComplexVector v(n);
  for (Eigen::Index i = 0; i < n; ++i) v(i) = std::polar(vm(i), va(i));

  Eigen::VectorXd f;
  double mismatch = residual(v, f);
  int iterations = 0;
  while (mismatch > options.tol) {
    if (iterations >= options.max_iter) {
      throw Error(ErrorCode::NonConvergence,
                  "power flow stopped after " + std::to_string(iterations) +
                      " iterations with mismatch " + std::to_string(mismatch));
    }
    // Complex power derivatives in polar form.
    const ComplexVector ibus = ybus * v;
    ComplexVector vnorm(n);
    for (Eigen::Index i = 0; i < n; ++i) vnorm(i) = v(i) / std::abs(v(i));
    const ComplexMatrix dva =
        cd(0.0, 1.0) * v.asDiagonal() *
        (ComplexMatrix(ibus.asDiagonal()) - ybus * v.asDiagonal()).conjugate();
    const ComplexMatrix dvm =
        v.asDiagonal() * (ybus * vnorm.asDiagonal()).conjugate() +
        ComplexMatrix(ibus.conjugate().asDiagonal()) * vnorm.asDiagonal();

    Eigen::MatrixXd jac(dim, dim);
    for (Eigen::Index r = 0; r < n_ang; ++r) {
      const auto i = pvpq[static_cast<std::size_t>(r)];
      for (Eigen::Index c = 0; c < n_ang; ++c) jac(r, c) = dva(i, pvpq[static_cast<std::size_t>(c)]).real();
      for (Eigen::Index c = 0; c < n_mag; ++c) jac(r, n_ang + c) = dvm(i, pq[static_cast<std::size_t>(c)]).real();
    }
    for (Eigen::Index r = 0; r < n_mag; ++r) {
      const auto i = pq[static_cast<std::size_t>(r)];
      for (Eigen::Index c = 0; c < n_ang; ++c) jac(n_ang + r, c) = dva(i, pvpq[static_cast<std::size_t>(c)]).imag();
      for (Eigen::Index c = 0; c < n_mag; ++c) jac(n_ang + r, n_ang + c) = dvm(i, pq[static_cast<std::size_t>(c)]).imag();
    }
    Eigen::FullPivLU<Eigen::MatrixXd> lu(jac);
    if (!lu.isInvertible()) {
      throw Error(ErrorCode::SingularJacobian,
                  "power flow Jacobian is singular at iteration " +
                      std::to_string(iterations));
    }
    const Eigen::VectorXd dx = lu.solve(-f);
    for (Eigen::Index k = 0; k < n_ang; ++k) va(pvpq[static_cast<std::size_t>(k)]) += dx(k);
    for (Eigen::Index k = 0; k < n_mag; ++k) vm(pq[static_cast<std::size_t>(k)]) += dx(n_ang + k);
    for (Eigen::Index i = 0; i < n; ++i) v(i) = std::polar(vm(i), va(i));
    ++iterations;
    mismatch = residual(v, f);
    if (!std::isfinite(mismatch)) {
      throw Error(ErrorCode::NonConvergence, "power flow diverged");
    }
  }

  PowerFlowSolution sol;
  sol.v = vm;
  sol.theta = va;
  sol.mismatch = mismatch;
  sol.iterations = iterations;
  const ComplexVector s = power_injection(ybus, v);
  sol.p_gen.resize(static_cast<Eigen::Index>(grid.machines.size()));
  sol.q_gen.resize(static_cast<Eigen::Index>(grid.machines.size()));
  for (std::size_t k = 0; k < grid.machines.size(); ++k) {
    const auto i = grid.bus_index(grid.machines[k].bus);
    const auto& bus = grid.buses[i];
    const auto ki = static_cast<Eigen::Index>(k);
    const auto ii = static_cast<Eigen::Index>(i);
    sol.p_gen(ki) = bus.kind == BusKind::Slack ? s(ii).real() + bus.p_load
                                               : grid.machines[k].p_gen;
    sol.q_gen(ki) = s(ii).imag() + bus.q_load;
  }
  return sol;
}

}  // namespace gridshield
