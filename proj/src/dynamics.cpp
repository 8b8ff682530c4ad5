#include "gridshield/dynamics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <set>

#include "gridshield/error.hpp"

namespace gridshield {

using cd = std::complex<double>;

namespace {

constexpr int kMaxNetworkIterations = 30;
constexpr double kNetworkTol = 1e-13;

/// Machine-frame (d, q) components of a network-frame phasor.
cd to_machine_frame(cd phasor, double delta) {
  return phasor * std::polar(1.0, -(delta - std::numbers::pi / 2.0));
}

}  // namespace

Eigen::VectorXd DynamicState::to_vector() const {
  Eigen::VectorXd x(static_cast<Eigen::Index>(machines.size()) * kStatesPerMachine);
  for (std::size_t i = 0; i < machines.size(); ++i) {
    const auto& m = machines[i];
    const auto o = static_cast<Eigen::Index>(i) * kStatesPerMachine;
    x(o + kDelta) = m.delta;
    x(o + kOmega) = m.omega;
    x(o + kEqPrime) = m.e_q_prime;
    x(o + kEfd) = m.e_fd;
    x(o + kPm) = m.p_m;
    x(o + kPgv) = m.p_gv;
    x(o + kPss1) = m.pss_1;
    x(o + kPss2) = m.pss_2;
  }
  return x;
}

DynamicState DynamicState::from_vector(const Eigen::VectorXd& x, double time) {
  DynamicState s;
  s.time = time;
  const auto n = x.size() / kStatesPerMachine;
  s.machines.resize(static_cast<std::size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto o = i * kStatesPerMachine;
    s.machines[static_cast<std::size_t>(i)] = {x(o + kDelta), x(o + kOmega),
                                               x(o + kEqPrime), x(o + kEfd),
                                               x(o + kPm), x(o + kPgv),
                                               x(o + kPss1), x(o + kPss2)};
  }
  return s;
}

double Plant::omega_base() const {
  return 2.0 * std::numbers::pi * grid_.f_nominal;
}

Plant Plant::create(const GridCase& grid, const PowerFlowSolution& pf,
                    const InitOptions& options) {
  validate_case(grid);
  Plant plant;
  plant.grid_ = grid;
  const auto nb = static_cast<Eigen::Index>(grid.buses.size());
  const auto nm = static_cast<Eigen::Index>(grid.machines.size());
  if (pf.v.size() != nb || pf.p_gen.size() != nm) {
    throw Error(ErrorCode::InfeasibleInit, "power flow does not match the case");
  }

  // Reactive demand is a constant admittance at the power-flow voltage;
  // active demand stays a constant-power term solved with the injections.
  ComplexMatrix y_aug = build_ybus(grid);
  plant.load_p_ = Eigen::VectorXd::Zero(nb);
  for (Eigen::Index i = 0; i < nb; ++i) {
    const auto& bus = grid.buses[static_cast<std::size_t>(i)];
    const double v2 = pf.v(i) * pf.v(i);
    y_aug(i, i) += cd(0.0, -bus.q_load) / v2;
    plant.load_p_(i) = bus.p_load;
  }
  for (Eigen::Index k = 0; k < nm; ++k) {
    const auto& m = grid.machines[static_cast<std::size_t>(k)];
    const auto b = static_cast<Eigen::Index>(grid.bus_index(m.bus));
    plant.gen_bus_.push_back(b);
    y_aug(b, b) += 1.0 / cd(0.0, m.x_d_prime);
  }
  Eigen::FullPivLU<ComplexMatrix> lu(y_aug);
  if (!lu.isInvertible()) {
    throw Error(ErrorCode::SingularNetwork, "augmented admittance is singular");
  }
  plant.z_bus_ = lu.inverse();

  // Machine internal quantities from the power-flow terminal conditions.
  const ComplexVector v_pf = pf.voltage();
  DynamicState state;
  state.machines.resize(static_cast<std::size_t>(nm));
  for (Eigen::Index k = 0; k < nm; ++k) {
    const auto& m = grid.machines[static_cast<std::size_t>(k)];
    const cd vt = v_pf(plant.gen_bus_[static_cast<std::size_t>(k)]);
    const cd current = std::conj(cd(pf.p_gen(k), pf.q_gen(k)) / vt);
    const cd e = vt + cd(0.0, m.x_d_prime) * current;
    if (!std::isfinite(std::abs(e)) || std::abs(e) <= 0.0) {
      throw Error(ErrorCode::InfeasibleInit,
                  "machine at bus " + std::to_string(m.bus) +
                      " has no feasible internal voltage");
    }
    auto& ms = state.machines[static_cast<std::size_t>(k)];
    ms.delta = std::arg(e);
    ms.omega = 1.0;
    ms.e_q_prime = std::abs(e);
  }

  // Close the loop through the network so the initial state is an exact
  // equilibrium of this plant, then compare with the supplied power flow.
  Eigen::VectorXd x = state.to_vector();
  const ComplexVector v_net = plant.solve_network(x, plant.zero_injection());
  plant.report_.voltage_mismatch = (v_net - v_pf).cwiseAbs().maxCoeff();

  plant.setpoints_.p_ref.resize(nm);
  plant.setpoints_.v_ref.resize(nm);
  for (Eigen::Index k = 0; k < nm; ++k) {
    const auto& m = grid.machines[static_cast<std::size_t>(k)];
    auto& ms = state.machines[static_cast<std::size_t>(k)];
    const cd vt = v_net(plant.gen_bus_[static_cast<std::size_t>(k)]);
    const cd e = std::polar(ms.e_q_prime, ms.delta);
    const cd current = (e - vt) / cd(0.0, m.x_d_prime);
    const cd i_dq = to_machine_frame(current, ms.delta);
    const double p_e = (e * std::conj(current)).real();
    ms.e_fd = ms.e_q_prime + (m.x_d - m.x_d_prime) * i_dq.real();
    ms.p_m = p_e;
    ms.p_gv = p_e;
    ms.pss_1 = 0.0;
    ms.pss_2 = 0.0;
    if (!(ms.e_q_prime > 0.0) || !std::isfinite(ms.e_fd)) {
      throw Error(ErrorCode::InfeasibleInit,
                  "machine at bus " + std::to_string(m.bus) +
                      " cannot reach its terminal conditions");
    }
    plant.setpoints_.p_ref(k) = p_e;
    plant.setpoints_.v_ref(k) = std::abs(vt) + ms.e_fd / m.exciter.k_a;
    plant.grid_.machines[static_cast<std::size_t>(k)].exciter.v_ref =
        plant.setpoints_.v_ref(k);
  }
  plant.initial_ = state;
  x = state.to_vector();
  plant.report_.derivative_norm =
      plant.derivatives(x, plant.zero_injection()).lpNorm<Eigen::Infinity>();
  plant.report_.warning = plant.report_.voltage_mismatch > options.voltage_tol;
  if (plant.report_.warning && options.strict) {
    throw Error(ErrorCode::InfeasibleInit,
                "network re-solve differs from the power flow by " +
                    std::to_string(plant.report_.voltage_mismatch) +
                    " pu; the power flow is not converged");
  }
  return plant;
}

DynamicState init_dynamics(const GridCase& grid, const PowerFlowSolution& pf,
                           const InitOptions& options) {
  return Plant::create(grid, pf, options).initial_state();
}

ComplexVector Plant::norton_currents(const Eigen::VectorXd& x) const {
  ComplexVector current = ComplexVector::Zero(bus_count());
  for (std::size_t k = 0; k < grid_.machines.size(); ++k) {
    const auto o = static_cast<Eigen::Index>(k) * kStatesPerMachine;
    const cd e = std::polar(x(o + kEqPrime), x(o + kDelta));
    current(gen_bus_[k]) += e / cd(0.0, grid_.machines[k].x_d_prime);
  }
  return current;
}

ComplexVector Plant::solve_network(const Eigen::VectorXd& x,
                                   const BusInjection& injection,
                                   const ComplexVector* guess) const {
  const Eigen::Index nb = bus_count();
  const ComplexVector i_norton = norton_currents(x);
  ComplexVector v = ComplexVector::Zero(nb);
  for (std::size_t k = 0; k < gen_bus_.size(); ++k) {
    // Norton sources only exist at generator buses.
    const auto b = gen_bus_[k];
    v += z_bus_.col(b) * i_norton(b);
  }
  std::vector<Eigen::Index> active;
  ComplexVector demand = injection;
  demand.real() += load_p_;
  for (Eigen::Index i = 0; i < nb; ++i) {
    if (demand(i) != cd(0.0, 0.0)) active.push_back(i);
  }
  if (active.empty()) return v;

  const auto na = static_cast<Eigen::Index>(active.size());
  ComplexVector v_active(na);
  for (Eigen::Index a = 0; a < na; ++a) {
    const auto i = active[static_cast<std::size_t>(a)];
    v_active(a) = (guess != nullptr && guess->size() == nb) ? (*guess)(i) : v(i);
  }
  // Newton on F(V) = V - V_source - Z I(V) with I = -conj(S / V), split
  // into real and imaginary parts since I depends on conj(V).
  ComplexVector i_inj(na);
  ComplexMatrix z_aa(na, na);
  for (Eigen::Index r = 0; r < na; ++r) {
    for (Eigen::Index c = 0; c < na; ++c) {
      z_aa(r, c) = z_bus_(active[static_cast<std::size_t>(r)], active[static_cast<std::size_t>(c)]);
    }
  }
  Eigen::MatrixXd jac(2 * na, 2 * na);
  Eigen::PartialPivLU<Eigen::MatrixXd> lu;
  Eigen::VectorXd rhs(2 * na);
  ComplexVector slope(na);
  bool converged = false;
  double last_residual = std::numeric_limits<double>::infinity();
  for (int it = 0; it < kMaxNetworkIterations; ++it) {
    for (Eigen::Index a = 0; a < na; ++a) {
      const auto i = active[static_cast<std::size_t>(a)];
      i_inj(a) = -std::conj(demand(i) / v_active(a));
    }
    const ComplexVector zi = z_aa * i_inj;
    double residual = 0.0;
    for (Eigen::Index a = 0; a < na; ++a) {
      const cd f = v_active(a) - v(active[static_cast<std::size_t>(a)]) - zi(a);
      rhs(2 * a) = -f.real();
      rhs(2 * a + 1) = -f.imag();
      residual = std::max(residual, std::abs(f));
    }
    if (!std::isfinite(residual)) break;
    if (residual < kNetworkTol) {
      converged = true;
      break;
    }
    // Chord iterations; the Jacobian is rebuilt only when they stall.
    if (it == 0 || residual > 0.1 * last_residual) {
      for (Eigen::Index a = 0; a < na; ++a) {
        const auto i = active[static_cast<std::size_t>(a)];
        slope(a) = std::conj(demand(i)) / (std::conj(v_active(a)) * std::conj(v_active(a)));
      }
      for (Eigen::Index c = 0; c < na; ++c) {
        for (Eigen::Index r = 0; r < na; ++r) {
          const cd dx = (r == c ? cd(1.0, 0.0) : cd(0.0, 0.0)) - z_aa(r, c) * slope(c);
          const cd dy = (r == c ? cd(0.0, 1.0) : cd(0.0, 0.0)) + cd(0.0, 1.0) * z_aa(r, c) * slope(c);
          jac(2 * r, 2 * c) = dx.real();
          jac(2 * r + 1, 2 * c) = dx.imag();
          jac(2 * r, 2 * c + 1) = dy.real();
          jac(2 * r + 1, 2 * c + 1) = dy.imag();
        }
      }
      lu.compute(jac);
    }
    last_residual = residual;
    const Eigen::VectorXd step = lu.solve(rhs);
    for (Eigen::Index a = 0; a < na; ++a) v_active(a) += cd(step(2 * a), step(2 * a + 1));
  }
  if (!converged) {
    throw Error(ErrorCode::SingularNetwork,
                "constant-power network iteration did not converge");
  }
  for (Eigen::Index a = 0; a < na; ++a) {
    const auto i = active[static_cast<std::size_t>(a)];
    i_inj(a) = -std::conj(demand(i) / v_active(a));
  }
  for (Eigen::Index a = 0; a < na; ++a) {
    v += z_bus_.col(active[static_cast<std::size_t>(a)]) * i_inj(a);
  }
  return v;
}

Eigen::VectorXd Plant::derivatives_at(const Eigen::VectorXd& x,
                                      const ComplexVector& v) const {
  Eigen::VectorXd dx(x.size());
  const double wb = omega_base();
  for (std::size_t k = 0; k < grid_.machines.size(); ++k) {
    const auto& m = grid_.machines[k];
    const auto o = static_cast<Eigen::Index>(k) * kStatesPerMachine;
    const double delta = x(o + kDelta);
    const double omega = x(o + kOmega);
    const double eq = x(o + kEqPrime);
    const double efd = x(o + kEfd);
    const double pm = x(o + kPm);
    const double pgv = x(o + kPgv);
    const double xw = x(o + kPss1);
    const double xll = x(o + kPss2);

    const cd vt = v(gen_bus_[k]);
    const cd e = std::polar(eq, delta);
    const cd current = (e - vt) / cd(0.0, m.x_d_prime);
    const double i_d = to_machine_frame(current, delta).real();
    const double p_e = (e * std::conj(current)).real();
    const double dw = omega - 1.0;

    double v_pss = 0.0;
    const double washout_out = m.pss.k_pss * dw - xw;
    if (m.pss.enabled) {
      v_pss = xll + (m.pss.t_1 / m.pss.t_2) * (washout_out - xll);
    }

    dx(o + kDelta) = wb * dw;
    dx(o + kOmega) = (pm - p_e - m.d * dw) / (2.0 * m.h);
    dx(o + kEqPrime) = (efd - eq - (m.x_d - m.x_d_prime) * i_d) / m.t_d0_prime;
    dx(o + kEfd) =
        (m.exciter.k_a * (setpoints_.v_ref(static_cast<Eigen::Index>(k)) -
                          std::abs(vt) + v_pss) -
         efd) /
        m.exciter.t_a;
    dx(o + kPm) = (pgv - pm) / m.turbine.t_ch;
    dx(o + kPgv) = (setpoints_.p_ref(static_cast<Eigen::Index>(k)) -
                    dw / m.governor.r_droop - pgv) /
                   m.governor.t_g;
    dx(o + kPss1) = washout_out / m.pss.t_w;
    dx(o + kPss2) = (washout_out - xll) / m.pss.t_2;
  }
  return dx;
}

Eigen::VectorXd Plant::derivatives(const Eigen::VectorXd& x,
                                   const BusInjection& injection,
                                   ComplexVector* voltages,
                                   const ComplexVector* guess) const {
  ComplexVector v = solve_network(x, injection, guess);
  Eigen::VectorXd dx = derivatives_at(x, v);
  if (voltages != nullptr) *voltages = std::move(v);
  return dx;
}

Eigen::VectorXd Plant::electrical_power(const Eigen::VectorXd& x,
                                        const BusInjection& injection) const {
  const ComplexVector v = solve_network(x, injection);
  Eigen::VectorXd pe(static_cast<Eigen::Index>(grid_.machines.size()));
  for (std::size_t k = 0; k < grid_.machines.size(); ++k) {
    const auto o = static_cast<Eigen::Index>(k) * kStatesPerMachine;
    const cd e = std::polar(x(o + kEqPrime), x(o + kDelta));
    const cd current = (e - v(gen_bus_[k])) / cd(0.0, grid_.machines[k].x_d_prime);
    pe(static_cast<Eigen::Index>(k)) = (e * std::conj(current)).real();
  }
  return pe;
}

Eigen::VectorXd Plant::frequencies(const Eigen::VectorXd& x) const {
  const auto nm = static_cast<Eigen::Index>(grid_.machines.size());
  Eigen::VectorXd f(nm);
  for (Eigen::Index k = 0; k < nm; ++k) {
    f(k) = grid_.f_nominal * x(k * kStatesPerMachine + kOmega);
  }
  return f;
}

// ---------------------------------------------------------------------------

double evaluate(const TimeFunction& fn, double t) {
  return std::visit(
      [t](const auto& f) -> double {
        using T = std::decay_t<decltype(f)>;
        if constexpr (std::is_same_v<T, ZeroFunction>) {
          return 0.0;
        } else if constexpr (std::is_same_v<T, StepFunction>) {
          return t >= f.t_start ? f.amplitude : 0.0;
        } else if constexpr (std::is_same_v<T, SquareWave>) {
          if (t < f.t_start) return 0.0;
          const double phase = (t - f.t_start) * f.freq_hz;
          const double frac = phase - std::floor(phase);
          // Guard the period boundary against rounding in (t - t_start) * f.
          const double near = std::round(phase);
          if (std::abs(phase - near) < 1e-9) return f.amplitude;
          return frac < f.duty ? f.amplitude : 0.0;
        } else {
          if (f.values.empty()) return 0.0;
          const double s = (t - f.t0) / f.dt;
          if (s <= 0.0) return f.values.front();
          const auto last = static_cast<double>(f.values.size() - 1);
          if (s >= last) return f.values.back();
          const auto i = static_cast<std::size_t>(std::floor(s));
          const double w = s - static_cast<double>(i);
          return (1.0 - w) * f.values[i] + w * f.values[i + 1];
        }
      },
      fn);
}

namespace {

void validate_function(const TimeFunction& fn, const std::string& who) {
  std::visit(
      [&](const auto& f) {
        using T = std::decay_t<decltype(f)>;
        auto bad = [&](const std::string& what) {
          throw Error(ErrorCode::InvariantViolation, who + ": " + what);
        };
        if constexpr (std::is_same_v<T, StepFunction>) {
          if (!std::isfinite(f.amplitude) || !std::isfinite(f.t_start)) bad("non-finite step");
        } else if constexpr (std::is_same_v<T, SquareWave>) {
          if (!std::isfinite(f.amplitude) || !std::isfinite(f.t_start)) bad("non-finite wave");
          if (!(f.freq_hz > 0.0)) bad("switching frequency must be > 0");
          if (!(f.duty > 0.0 && f.duty < 1.0)) bad("duty must lie in (0, 1)");
        } else if constexpr (std::is_same_v<T, SampledFunction>) {
          if (!(f.dt > 0.0)) bad("sample spacing must be > 0");
          for (double v : f.values) {
            if (!std::isfinite(v)) bad("non-finite sample");
          }
        }
      },
      fn);
}

}  // namespace

void validate_schedule(const GridCase& grid, const InjectionSchedule& schedule) {
  if (schedule.kind == ScheduleKind::Composite) {
    for (const auto& part : schedule.parts) validate_schedule(grid, part);
    return;
  }
  for (const auto& ch : schedule.channels) {
    (void)grid.bus_index(ch.bus);
    const std::string who = "schedule channel at bus " + std::to_string(ch.bus);
    validate_function(ch.p_mw, who);
    validate_function(ch.q_mvar, who);
  }
  if (schedule.kind == ScheduleKind::Dynamic && !schedule.law) {
    throw Error(ErrorCode::InvariantViolation, "dynamic schedule without a feedback law");
  }
}

// ---------------------------------------------------------------------------

namespace {

struct FlatSchedule {
  const InjectionSchedule* schedule;
  std::unique_ptr<FeedbackRuntime> runtime;
  std::vector<double> held_p;
};

void flatten(const InjectionSchedule& s, std::vector<const InjectionSchedule*>& out) {
  if (s.kind == ScheduleKind::Composite) {
    for (const auto& p : s.parts) flatten(p, out);
  } else {
    out.push_back(&s);
  }
}

Eigen::MatrixXd numeric_jacobian(const Plant& plant, const Eigen::VectorXd& x,
                                 const BusInjection& inj) {
  const Eigen::Index n = x.size();
  Eigen::MatrixXd jac(n, n);
  ComplexVector v0;
  const Eigen::VectorXd f0 = plant.derivatives(x, inj, &v0);
  Eigen::VectorXd xp = x;
  for (Eigen::Index j = 0; j < n; ++j) {
    const double h = 1e-7 * std::max(1.0, std::abs(x(j)));
    xp(j) = x(j) + h;
    jac.col(j) = (plant.derivatives(xp, inj, nullptr, &v0) - f0) / h;
    xp(j) = x(j);
  }
  return jac;
}

}  // namespace

Trajectory simulate(const Plant& plant, const DynamicState& state0,
                    const std::vector<InjectionSchedule>& schedules,
                    double t_end, const SimulationOptions& options,
                    Controller* controller) {
  const GridCase& grid = plant.grid();
  if (!(options.dt > 0.0) || !(t_end > 0.0)) {
    throw Error(ErrorCode::InvariantViolation, "dt and t_end must be > 0");
  }
  if (options.record_stride < 1) {
    throw Error(ErrorCode::InvariantViolation, "record_stride must be >= 1");
  }
  for (const auto& s : schedules) validate_schedule(grid, s);

  const double base = grid.base_mva;
  const double dt = options.dt;
  const auto nm = static_cast<Eigen::Index>(grid.machines.size());
  const Eigen::Index nb = plant.bus_count();

  std::vector<const InjectionSchedule*> flat_ptrs;
  for (const auto& s : schedules) flatten(s, flat_ptrs);
  std::vector<FlatSchedule> flat;
  std::set<int> attack_set, defender_set;
  for (const auto* s : flat_ptrs) {
    FlatSchedule f{s, nullptr, {}};
    if (s->kind == ScheduleKind::Dynamic) {
      f.runtime = s->law->instantiate(dt);
      f.held_p.assign(s->channels.size(), 0.0);
    }
    for (const auto& ch : s->channels) {
      (s->is_defender() ? defender_set : attack_set).insert(ch.bus);
    }
    flat.push_back(std::move(f));
  }
  if (controller != nullptr) {
    for (int bus : grid.ev_buses) defender_set.insert(bus);
  }

  Trajectory traj;
  traj.f_nominal = grid.f_nominal;
  for (const auto& m : grid.machines) traj.machine_buses.push_back(m.bus);
  traj.attack_buses.assign(attack_set.begin(), attack_set.end());
  traj.defender_buses.assign(defender_set.begin(), defender_set.end());
  if (options.record_voltages) {
    for (const auto& bus : grid.buses) traj.voltage_buses.push_back(bus.id);
  }
  if (controller != nullptr) traj.telemetry_labels = controller->telemetry_labels();

  const auto n_steps = static_cast<long>(std::llround(t_end / dt));
  const auto n_records = n_steps / options.record_stride + 1;
  const auto na = static_cast<Eigen::Index>(traj.attack_buses.size());
  const auto nd = static_cast<Eigen::Index>(traj.defender_buses.size());
  const auto nv = static_cast<Eigen::Index>(traj.voltage_buses.size());
  const auto ntel = static_cast<Eigen::Index>(traj.telemetry_labels.size());
  traj.time.reserve(static_cast<std::size_t>(n_records));
  traj.freq_hz.resize(n_records, nm);
  if (options.record_states) traj.states.resize(n_records, plant.state_count());
  traj.attack_p_mw.resize(n_records, na);
  traj.attack_q_mvar.resize(n_records, na);
  traj.defender_p_mw.resize(n_records, nd);
  traj.defender_q_mvar.resize(n_records, nd);
  traj.v_mag.resize(n_records, nv);
  traj.telemetry.resize(n_records, ntel);

  auto bus_pos = [&](const std::vector<int>& list, int bus) {
    return static_cast<Eigen::Index>(
        std::lower_bound(list.begin(), list.end(), bus) - list.begin());
  };

  // Per-step held quantities (MW / MVAr, indexed by recorded bus lists).
  Eigen::VectorXd defender_p = Eigen::VectorXd::Zero(nd);
  Eigen::VectorXd defender_q = Eigen::VectorXd::Zero(nd);
  std::vector<BusPower> commands;
  std::vector<double> telemetry_row;

  auto attack_at = [&](double t, Eigen::VectorXd& ap, Eigen::VectorXd& aq,
                       Eigen::VectorXd& dp, Eigen::VectorXd& dq) {
    ap.setZero(na);
    aq.setZero(na);
    dp = defender_p;
    dq = defender_q;
    for (const auto& f : flat) {
      const bool def = f.schedule->is_defender();
      for (std::size_t c = 0; c < f.schedule->channels.size(); ++c) {
        const auto& ch = f.schedule->channels[c];
        double p = f.runtime ? f.held_p[c] : evaluate(ch.p_mw, t);
        double q = f.runtime ? 0.0 : evaluate(ch.q_mvar, t);
        if (def) {
          const auto k = bus_pos(traj.defender_buses, ch.bus);
          dp(k) += p;
          dq(k) += q;
        } else {
          const auto k = bus_pos(traj.attack_buses, ch.bus);
          ap(k) += p;
          aq(k) += q;
        }
      }
    }
  };

  auto to_injection = [&](const Eigen::VectorXd& ap, const Eigen::VectorXd& aq,
                          const Eigen::VectorXd& dp, const Eigen::VectorXd& dq) {
    BusInjection inj = BusInjection::Zero(nb);
    for (Eigen::Index k = 0; k < na; ++k) {
      inj(static_cast<Eigen::Index>(grid.bus_index(traj.attack_buses[static_cast<std::size_t>(k)]))) +=
          cd(ap(k), aq(k)) / base;
    }
    for (Eigen::Index k = 0; k < nd; ++k) {
      inj(static_cast<Eigen::Index>(grid.bus_index(traj.defender_buses[static_cast<std::size_t>(k)]))) +=
          cd(dp(k), dq(k)) / base;
    }
    return inj;
  };

  Eigen::VectorXd x = state0.to_vector();
  if (x.size() != plant.state_count()) {
    throw Error(ErrorCode::InvariantViolation, "initial state size mismatch");
  }
  double t = state0.time;
  const double t_stop = t + static_cast<double>(n_steps) * dt;

  Eigen::MatrixXd jac = numeric_jacobian(plant, x, plant.zero_injection());
  Eigen::PartialPivLU<Eigen::MatrixXd> newton_lu(
      Eigen::MatrixXd::Identity(x.size(), x.size()) - 0.5 * dt * jac);

  ComplexVector v_prev;
  Eigen::VectorXd ap, aq, dp, dq;
  Eigen::VectorXd freq(nm), dev(nm);

  auto record = [&](long step, double tr, const ComplexVector& v) {
    if (step % options.record_stride != 0) return;
    const auto r = static_cast<Eigen::Index>(traj.time.size());
    traj.time.push_back(tr);
    traj.freq_hz.row(r) = plant.frequencies(x).transpose();
    if (options.record_states) traj.states.row(r) = x.transpose();
    traj.attack_p_mw.row(r) = ap.transpose();
    traj.attack_q_mvar.row(r) = aq.transpose();
    traj.defender_p_mw.row(r) = dp.transpose();
    traj.defender_q_mvar.row(r) = dq.transpose();
    if (nv > 0) traj.v_mag.row(r) = v.cwiseAbs().transpose();
    if (ntel > 0) {
      telemetry_row.clear();
      controller->telemetry(telemetry_row);
      for (Eigen::Index c = 0; c < ntel; ++c) {
        traj.telemetry(r, c) = c < static_cast<Eigen::Index>(telemetry_row.size())
                                   ? telemetry_row[static_cast<std::size_t>(c)]
                                   : 0.0;
      }
    }
  };

  auto update_feedback = [&](double tn) {
    freq = plant.frequencies(x);
    dev = freq.array() - grid.f_nominal;
    const std::span<const double> dev_span(dev.data(), static_cast<std::size_t>(nm));
    for (auto& f : flat) {
      if (f.runtime) f.runtime->step(tn, dev_span, f.held_p);
    }
    if (controller != nullptr) {
      commands.clear();
      controller->command(tn, std::span<const double>(freq.data(), static_cast<std::size_t>(nm)),
                          commands);
      defender_p.setZero();
      defender_q.setZero();
      for (const auto& c : commands) {
        const auto k = bus_pos(traj.defender_buses, c.bus);
        if (k >= nd || traj.defender_buses[static_cast<std::size_t>(k)] != c.bus) {
          throw Error(ErrorCode::UnknownBusRef,
                      "controller commanded bus " + std::to_string(c.bus) +
                          " outside ev_buses");
        }
        defender_p(k) += c.p_mw;
        defender_q(k) += c.q_mvar;
      }
    }
  };

  auto finalize = [&](DivergenceKind kind, double when) {
    traj.divergence = kind;
    traj.divergence_time = when;
    const auto r = static_cast<Eigen::Index>(traj.time.size());
    traj.freq_hz.conservativeResize(r, Eigen::NoChange);
    if (options.record_states) traj.states.conservativeResize(r, Eigen::NoChange);
    traj.attack_p_mw.conservativeResize(r, Eigen::NoChange);
    traj.attack_q_mvar.conservativeResize(r, Eigen::NoChange);
    traj.defender_p_mw.conservativeResize(r, Eigen::NoChange);
    traj.defender_q_mvar.conservativeResize(r, Eigen::NoChange);
    traj.v_mag.conservativeResize(r, Eigen::NoChange);
    traj.telemetry.conservativeResize(r, Eigen::NoChange);
    if (!options.record_states) traj.states.resize(0, 0);
    return traj;
  };

  update_feedback(t);
  attack_at(t, ap, aq, dp, dq);
  BusInjection inj_n = to_injection(ap, aq, dp, dq);
  Eigen::VectorXd f_n = plant.derivatives(x, inj_n, &v_prev);
  record(0, t, v_prev);

  for (long step = 1; step <= n_steps; ++step) {
    const double t_next = step == n_steps ? t_stop : state0.time + static_cast<double>(step) * dt;

    Eigen::VectorXd ap1, aq1, dp1, dq1;
    attack_at(t_next, ap1, aq1, dp1, dq1);
    const BusInjection inj_next = to_injection(ap1, aq1, dp1, dq1);

    // Trapezoidal step: x1 - x - dt/2 (f(x) + f(x1)) = 0, solved by Newton
    // with a frozen Jacobian that is refreshed when progress stalls.
    Eigen::VectorXd x1 = x + dt * f_n;
    ComplexVector v1 = v_prev;
    bool converged = false;
    try {
      for (int refresh = 0; refresh < 3 && !converged; ++refresh) {
        if (refresh > 0) {
          jac = numeric_jacobian(plant, x1, inj_next);
          newton_lu.compute(Eigen::MatrixXd::Identity(x.size(), x.size()) - 0.5 * dt * jac);
        }
        for (int it = 0; it < options.newton_max_iter; ++it) {
          const Eigen::VectorXd f1 = plant.derivatives(x1, inj_next, &v1, &v1);
          const Eigen::VectorXd g = x1 - x - 0.5 * dt * (f_n + f1);
          const Eigen::VectorXd delta = newton_lu.solve(g);
          x1 -= delta;
          if (!x1.allFinite()) break;
          if (delta.lpNorm<Eigen::Infinity>() < options.newton_tol) {
            converged = true;
            break;
          }
        }
        if (!x1.allFinite()) break;
      }
    } catch (const Error&) {
      converged = false;
    }
    if (!converged) {
      return finalize(DivergenceKind::StepDivergence, t_next);
    }

    x = x1;
    t = t_next;
    update_feedback(t);
    attack_at(t, ap, aq, dp, dq);
    inj_n = to_injection(ap, aq, dp, dq);
    try {
      f_n = plant.derivatives(x, inj_n, &v_prev, &v1);
    } catch (const Error&) {
      return finalize(DivergenceKind::StepDivergence, t);
    }

    double worst = 0.0;
    bool blown = !x.allFinite();
    for (Eigen::Index k = 0; k < nm && !blown; ++k) {
      const double omega = x(k * kStatesPerMachine + kOmega);
      if (!(omega > 0.5 && omega < 1.5)) blown = true;
      worst = std::max(worst, std::abs(grid.f_nominal * (omega - 1.0)));
    }
    traj.max_abs_dev_hz = std::max(traj.max_abs_dev_hz, worst);
    if (blown || worst > options.max_freq_dev_hz) {
      if (x.allFinite()) {
        record(0, t, v_prev);
      }
      return finalize(DivergenceKind::StateBlowup, t);
    }
    record(step, t, v_prev);
  }
  return finalize(DivergenceKind::None, 0.0);
}

}  // namespace gridshield
