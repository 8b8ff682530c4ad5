#pragma once

#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "gridshield/dynamics.hpp"

namespace gridshield {

/// Linear model dx/dt = A x + B u + B_d w, y = C x + D u + D_d w around an
/// equilibrium. States are deviations in relative coordinates: rotor angles
/// are taken relative to the first machine, whose own angle is dropped, so
/// the model has 8m - 1 states. Inputs are per-unit ΔP/ΔQ increments of
/// consumption at each EV bus; disturbances the same at each attack bus;
/// outputs are machine frequency deviations in Hz.
struct StateSpaceModel {
  Eigen::MatrixXd a, b, b_d, c, d, d_d;
  std::vector<std::string> state_labels;
  std::vector<std::string> input_labels;
  std::vector<std::string> disturbance_labels;
  std::vector<std::string> output_labels;

  // Operating point.
  std::string case_name;
  double base_mva = 100.0;
  double f_nominal = 60.0;
  Eigen::VectorXd x_eq;  // full nonlinear state, 8 per machine
  std::vector<int> ev_buses;
  std::vector<int> attack_buses;
  std::vector<int> machine_buses;

  [[nodiscard]] Eigen::Index states() const { return a.rows(); }
  [[nodiscard]] Eigen::Index inputs() const { return b.cols(); }
  [[nodiscard]] Eigen::Index disturbances() const { return b_d.cols(); }
  [[nodiscard]] Eigen::Index outputs() const { return c.rows(); }

  /// Throws InvariantViolation on inconsistent dimensions or labels.
  void validate() const;
};

/// Maps between the full nonlinear state and the relative-angle coordinates
/// of StateSpaceModel.
Eigen::VectorXd to_relative(const Eigen::VectorXd& x);
Eigen::VectorXd from_relative(const Eigen::VectorXd& z, double delta_ref);

struct EquilibriumOptions {
  double tol = 1e-10;
  int max_iter = 20;
  double dx_eps = 1e-6;
};

/// Newton on the differential residual with the reference angle held.
DynamicState find_equilibrium(const Plant& plant, const DynamicState& init,
                              const EquilibriumOptions& options = {});

struct LinearizeOptions {
  double dp_eps = 1e-5;  // per-unit injection perturbation
  double dx_eps = 1e-6;  // state perturbation
};

StateSpaceModel linearize_model(const Plant& plant, const DynamicState& eq,
                                const LinearizeOptions& options = {});

std::string model_to_json(const StateSpaceModel& ss);
StateSpaceModel model_from_json(std::string_view text);

}  // namespace gridshield
