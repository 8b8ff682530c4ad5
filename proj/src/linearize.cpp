#include "gridshield/linearize.hpp"

#include <cmath>

#include "gridshield/error.hpp"
#include "json_util.hpp"

namespace gridshield {

namespace {

const char* const kStateNames[kStatesPerMachine] = {
    "delta", "omega", "eq_prime", "efd", "pm", "pgv", "pss1", "pss2"};

constexpr const char* kSchema = "gridshield/statespace/1";

Eigen::Index machine_count(Eigen::Index full_states) {
  return full_states / kStatesPerMachine;
}

// Reverse map of to_relative with the reference angle at zero.
Eigen::MatrixXd embedding(Eigen::Index n_full) {
  Eigen::MatrixXd q = Eigen::MatrixXd::Zero(n_full, n_full - 1);
  Eigen::Index row = 0;
  for (Eigen::Index col = 0; col < n_full; ++col) {
    if (col == kDelta) continue;
    q(col, row++) = 1.0;
  }
  return q;
}

Eigen::VectorXd relative_rhs(const Plant& plant, const Eigen::VectorXd& x,
                             const BusInjection& inj, const ComplexVector* guess) {
  return to_relative(plant.derivatives(x, inj, nullptr, guess));
}

}  // namespace

Eigen::VectorXd to_relative(const Eigen::VectorXd& x) {
  Eigen::VectorXd z(x.size() - 1);
  Eigen::Index row = 0;
  for (Eigen::Index k = 0; k < x.size(); ++k) {
    if (k == kDelta) continue;
    z(row++) = (k % kStatesPerMachine == kDelta) ? x(k) - x(kDelta) : x(k);
  }
  return z;
}

Eigen::VectorXd from_relative(const Eigen::VectorXd& z, double delta_ref) {
  Eigen::VectorXd x(z.size() + 1);
  x(kDelta) = delta_ref;
  Eigen::Index row = 0;
  for (Eigen::Index k = 0; k < x.size(); ++k) {
    if (k == kDelta) continue;
    x(k) = (k % kStatesPerMachine == kDelta) ? z(row) + delta_ref : z(row);
    ++row;
  }
  return x;
}

void StateSpaceModel::validate() const {
  const Eigen::Index n = a.rows();
  auto fail = [](const std::string& what) {
    throw Error(ErrorCode::InvariantViolation, "state-space model: " + what);
  };
  if (a.cols() != n) fail("A is not square");
  if (b.rows() != n || b_d.rows() != n) fail("B/B_d row count differs from A");
  if (c.cols() != n) fail("C column count differs from A");
  if (d.rows() != c.rows() || d.cols() != b.cols()) fail("D has wrong shape");
  if (d_d.rows() != c.rows() || d_d.cols() != b_d.cols()) fail("D_d has wrong shape");
  if (static_cast<Eigen::Index>(state_labels.size()) != n) fail("state labels");
  if (static_cast<Eigen::Index>(input_labels.size()) != b.cols()) fail("input labels");
  if (static_cast<Eigen::Index>(disturbance_labels.size()) != b_d.cols()) fail("disturbance labels");
  if (static_cast<Eigen::Index>(output_labels.size()) != c.rows()) fail("output labels");
  if (!a.allFinite() || !b.allFinite() || !b_d.allFinite() || !c.allFinite() ||
      !d.allFinite() || !d_d.allFinite()) {
    fail("non-finite entries");
  }
}

DynamicState find_equilibrium(const Plant& plant, const DynamicState& init,
                              const EquilibriumOptions& options) {
  Eigen::VectorXd x = init.to_vector();
  const double delta_ref = x(kDelta);
  Eigen::VectorXd z = to_relative(x);
  const BusInjection inj = plant.zero_injection();
  ComplexVector v;
  Eigen::VectorXd f = to_relative(plant.derivatives(x, inj, &v));
  const Eigen::Index n = z.size();

  for (int it = 0; f.lpNorm<Eigen::Infinity>() >= options.tol; ++it) {
    if (it >= options.max_iter || !f.allFinite()) {
      throw Error(ErrorCode::NonConvergence,
                  "equilibrium search stopped with residual " +
                      std::to_string(f.lpNorm<Eigen::Infinity>()));
    }
    Eigen::MatrixXd jac(n, n);
    for (Eigen::Index k = 0; k < n; ++k) {
      Eigen::VectorXd zp = z, zm = z;
      zp(k) += options.dx_eps;
      zm(k) -= options.dx_eps;
      jac.col(k) = (relative_rhs(plant, from_relative(zp, delta_ref), inj, &v) -
                    relative_rhs(plant, from_relative(zm, delta_ref), inj, &v)) /
                   (2.0 * options.dx_eps);
    }
    Eigen::PartialPivLU<Eigen::MatrixXd> lu(jac);
    z -= lu.solve(f);
    x = from_relative(z, delta_ref);
    f = to_relative(plant.derivatives(x, inj, &v, &v));
  }
  return DynamicState::from_vector(x, init.time);
}

StateSpaceModel linearize_model(const Plant& plant, const DynamicState& eq,
                                const LinearizeOptions& options) {
  if (!(options.dp_eps > 0.0) || !(options.dx_eps > 0.0)) {
    throw Error(ErrorCode::InvariantViolation, "perturbation sizes must be > 0");
  }
  const GridCase& grid = plant.grid();
  const Eigen::VectorXd x0 = eq.to_vector();
  const Eigen::Index n_full = x0.size();
  const Eigen::Index n = n_full - 1;
  const Eigen::Index m = machine_count(n_full);
  const double delta_ref = x0(kDelta);
  const Eigen::VectorXd z0 = to_relative(x0);
  const BusInjection zero = plant.zero_injection();
  ComplexVector v0;
  (void)plant.derivatives(x0, zero, &v0);

  StateSpaceModel ss;
  ss.case_name = grid.name;
  ss.base_mva = grid.base_mva;
  ss.f_nominal = grid.f_nominal;
  ss.x_eq = x0;
  ss.ev_buses = grid.ev_buses;
  ss.attack_buses = grid.attack_buses;

  ss.a.resize(n, n);
  for (Eigen::Index k = 0; k < n; ++k) {
    Eigen::VectorXd zp = z0, zm = z0;
    zp(k) += options.dx_eps;
    zm(k) -= options.dx_eps;
    ss.a.col(k) = (relative_rhs(plant, from_relative(zp, delta_ref), zero, &v0) -
                   relative_rhs(plant, from_relative(zm, delta_ref), zero, &v0)) /
                  (2.0 * options.dx_eps);
  }

  auto injection_columns = [&](const std::vector<int>& buses) {
    Eigen::MatrixXd out(n, 2 * static_cast<Eigen::Index>(buses.size()));
    for (std::size_t k = 0; k < buses.size(); ++k) {
      const auto bi = static_cast<Eigen::Index>(grid.bus_index(buses[k]));
      for (int part = 0; part < 2; ++part) {
        const std::complex<double> unit = part == 0 ? std::complex<double>(1.0, 0.0)
                                                    : std::complex<double>(0.0, 1.0);
        BusInjection up = zero, down = zero;
        up(bi) += options.dp_eps * unit;
        down(bi) -= options.dp_eps * unit;
        out.col(2 * static_cast<Eigen::Index>(k) + part) =
            (relative_rhs(plant, x0, up, &v0) - relative_rhs(plant, x0, down, &v0)) /
            (2.0 * options.dp_eps);
      }
    }
    return out;
  };
  ss.b = injection_columns(grid.ev_buses);
  ss.b_d = injection_columns(grid.attack_buses);

  // Frequency outputs in Hz.
  Eigen::MatrixXd c_full = Eigen::MatrixXd::Zero(m, n_full);
  for (Eigen::Index i = 0; i < m; ++i) c_full(i, i * kStatesPerMachine + kOmega) = grid.f_nominal;
  ss.c = c_full * embedding(n_full);
  ss.d = Eigen::MatrixXd::Zero(m, ss.b.cols());
  ss.d_d = Eigen::MatrixXd::Zero(m, ss.b_d.cols());

  for (Eigen::Index i = 0; i < m; ++i) {
    const int bus = grid.machines[static_cast<std::size_t>(i)].bus;
    ss.machine_buses.push_back(bus);
    ss.output_labels.push_back("f_gen_" + std::to_string(bus));
    for (int s = 0; s < kStatesPerMachine; ++s) {
      if (i == 0 && s == kDelta) continue;
      std::string label = std::string(kStateNames[s]) + "_" + std::to_string(bus);
      if (s == kDelta) label += "_rel_" + std::to_string(grid.machines[0].bus);
      ss.state_labels.push_back(label);
    }
  }
  for (int bus : grid.ev_buses) {
    ss.input_labels.push_back("ev_p_" + std::to_string(bus));
    ss.input_labels.push_back("ev_q_" + std::to_string(bus));
  }
  for (int bus : grid.attack_buses) {
    ss.disturbance_labels.push_back("attack_p_" + std::to_string(bus));
    ss.disturbance_labels.push_back("attack_q_" + std::to_string(bus));
  }
  ss.validate();
  return ss;
}

std::string model_to_json(const StateSpaceModel& ss) {
  using jsonio::json;
  json j;
  j["schema"] = kSchema;
  j["case_name"] = ss.case_name;
  j["base_mva"] = ss.base_mva;
  j["f_nominal"] = ss.f_nominal;
  j["a"] = jsonio::matrix(ss.a);
  j["b"] = jsonio::matrix(ss.b);
  j["b_d"] = jsonio::matrix(ss.b_d);
  j["c"] = jsonio::matrix(ss.c);
  j["d"] = jsonio::matrix(ss.d);
  j["d_d"] = jsonio::matrix(ss.d_d);
  j["state_labels"] = ss.state_labels;
  j["input_labels"] = ss.input_labels;
  j["disturbance_labels"] = ss.disturbance_labels;
  j["output_labels"] = ss.output_labels;
  j["x_eq"] = jsonio::vector(ss.x_eq);
  j["ev_buses"] = ss.ev_buses;
  j["attack_buses"] = ss.attack_buses;
  j["machine_buses"] = ss.machine_buses;
  return j.dump(1);
}

StateSpaceModel model_from_json(std::string_view text) {
  const auto j = jsonio::parse(text);
  jsonio::expect_schema(j, kSchema);
  StateSpaceModel ss;
  ss.case_name = jsonio::get<std::string>(j, "case_name");
  ss.base_mva = jsonio::get<double>(j, "base_mva");
  ss.f_nominal = jsonio::get<double>(j, "f_nominal");
  ss.a = jsonio::to_matrix(jsonio::field(j, "a"));
  ss.b = jsonio::to_matrix(jsonio::field(j, "b"));
  ss.b_d = jsonio::to_matrix(jsonio::field(j, "b_d"));
  ss.c = jsonio::to_matrix(jsonio::field(j, "c"));
  ss.d = jsonio::to_matrix(jsonio::field(j, "d"));
  ss.d_d = jsonio::to_matrix(jsonio::field(j, "d_d"));
  ss.state_labels = jsonio::get<std::vector<std::string>>(j, "state_labels");
  ss.input_labels = jsonio::get<std::vector<std::string>>(j, "input_labels");
  ss.disturbance_labels = jsonio::get<std::vector<std::string>>(j, "disturbance_labels");
  ss.output_labels = jsonio::get<std::vector<std::string>>(j, "output_labels");
  ss.x_eq = jsonio::to_vector(jsonio::field(j, "x_eq"));
  ss.ev_buses = jsonio::get<std::vector<int>>(j, "ev_buses");
  ss.attack_buses = jsonio::get<std::vector<int>>(j, "attack_buses");
  ss.machine_buses = jsonio::get<std::vector<int>>(j, "machine_buses");
  try {
    ss.validate();
  } catch (const Error& e) {
    throw Error(ErrorCode::MalformedDocument, e.what());
  }
  return ss;
}

}  // namespace gridshield
