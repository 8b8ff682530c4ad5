#pragma once

#include <filesystem>
#include <sstream>
#include <string>

#include <Eigen/Dense>

#include "gridshield/dynamics.hpp"
#include "gridshield/grid.hpp"
#include "gridshield/linearize.hpp"

namespace gridshield::testing {

inline std::string data_path(const std::string& name) {
  return (std::filesystem::path(GRIDSHIELD_TEST_DATA_DIR) / name).string();
}

inline std::string scenario_path(const std::string& name) {
  return (std::filesystem::path(GRIDSHIELD_TEST_SCENARIO_DIR) / name).string();
}

/// Slack bus 1 with one machine feeding a PQ load at bus 2.
inline std::string two_bus_text(double p_load, double q_load, double r, double x, double b_charging = 0.0) {
  auto num = [](double v) {
    std::ostringstream os;
    os.precision(17);
    os << v;
    return os.str();
  };
  return "schema = gridcase/1\nname = two-bus\n\n[base]\nbase_mva = 100\nf_nominal = 60\n\n"
         "[buses]\nid kind v_setpoint shunt_b\n1 slack 1.0 0\n2 PQ - 0\n\n"
         "[branches]\nfrom_bus to_bus r x b_charging tap\n1 2 " +
         num(r) + " " + num(x) + " " + num(b_charging) +
         " 1\n\n"
         "[machines]\nbus p_gen h d x_d x_d_prime t_d0_prime k_a t_a v_ref r_droop t_g t_ch k_pss t_w t_1 t_2 "
         "pss_enabled\n1 0 5 1 0.2 0.05 6 20 0.05 0 0.05 0.2 0.3 10 10 0.3 0.02 0\n\n"
         "[loads]\nbus p_load q_load\n2 " +
         num(p_load) + " " + num(q_load) + "\n\n[ev_buses]\n2\n\n[attack_buses]\n2\n";
}

/// Bundled case with its operating point and linear model, built once.
struct Ne39 {
  GridCase grid;
  PowerFlowSolution pf;
  Plant plant;
  StateSpaceModel model;

  static const Ne39& get(bool pss) {
    static const Ne39 on = build(true);
    static const Ne39 off = build(false);
    return pss ? on : off;
  }

 private:
  static Ne39 build(bool pss) {
    GridCase g = with_pss(load_case_file(data_path("ne39.case")), pss);
    PowerFlowSolution pf = solve_powerflow(g);
    Plant plant = Plant::create(g, pf);
    StateSpaceModel ss = linearize_model(plant, plant.initial_state());
    return Ne39{std::move(g), std::move(pf), std::move(plant), std::move(ss)};
  }
};

/// Single-state model x' = a x + b u + bd w, y = c x.
inline StateSpaceModel scalar_model(double a, double b, double bd, double c) {
  StateSpaceModel s;
  s.a = Eigen::MatrixXd::Constant(1, 1, a);
  s.b = Eigen::MatrixXd::Constant(1, 1, b);
  s.b_d = Eigen::MatrixXd::Constant(1, 1, bd);
  s.c = Eigen::MatrixXd::Constant(1, 1, c);
  s.d = Eigen::MatrixXd::Zero(1, 1);
  s.d_d = Eigen::MatrixXd::Zero(1, 1);
  s.state_labels = {"x"};
  s.input_labels = {"u"};
  s.disturbance_labels = {"w"};
  s.output_labels = {"y"};
  return s;
}

}  // namespace gridshield::testing
