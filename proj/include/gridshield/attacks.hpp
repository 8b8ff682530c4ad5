#pragma once

#include <complex>
#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "gridshield/dynamics.hpp"
#include "gridshield/linearize.hpp"

namespace gridshield {

enum class AttackKind { None, Static, Switching, Dynamic };

std::string to_string(AttackKind kind);
AttackKind attack_kind_from_string(const std::string& text);

struct AttackTarget {
  int bus = 0;
  double fraction = 0.0;
};

struct AttackSpec {
  AttackKind kind = AttackKind::Static;
  double total_mw = 800.0;
  std::vector<AttackTarget> targets;
  double t_start = 5.0;
  // switching
  double freq_hz = 0.0;  // 0 selects the identified mode
  double duty = 0.5;
  // dynamic
  double sigma_target = 1.0;   // 1/s, real part given to the target mode
  double observer_q = 1.0;     // attacker observer weights
  double observer_r = 1.0;
  double parameter_noise = 0.0;  // relative noise on the attacker's model copy
  std::uint64_t seed = 1;

  /// Equal split over the given buses.
  static std::vector<AttackTarget> equal_split(const std::vector<int>& buses);
};

/// Throws InvariantViolation / UnknownBusRef when the spec cannot run on grid.
void validate_attack(const AttackSpec& spec, const GridCase& grid);

struct ModeInfo {
  double freq_hz = 0.0;
  double damping_ratio = 0.0;
  std::complex<double> eigenvalue;
};

/// Least-damped oscillatory pair with frequency in (0.05, 5) Hz.
ModeInfo identify_target_mode(const StateSpaceModel& ss);

InjectionSchedule static_attack(const AttackSpec& spec, const GridCase& grid);
InjectionSchedule switching_attack(const AttackSpec& spec, const GridCase& grid);

/// Attacker's feedback design: state-feedback gain from the modal subspace
/// of the target pair plus an observer driven by machine frequencies.
struct DynamicAttackDesign {
  StateSpaceModel model;        // attacker's copy
  std::vector<int> channel_bus;  // one ΔP channel per target
  Eigen::MatrixXd b_p;          // P columns of B_d, per target (pu)
  Eigen::MatrixXd k_att;        // targets x states, pu per state
  Eigen::MatrixXd l_obs;        // estimator gain, error dynamics A + l C
  Eigen::VectorXd max_mw;       // per-target ceiling
  Eigen::VectorXd bias_mw;      // per-target operating point
  ModeInfo target;
  double t_start = 0.0;
};

DynamicAttackDesign design_dynamic_attack(const StateSpaceModel& attacker_view, const AttackSpec& spec);

/// Feedback-law schedule realizing the design: per-target
/// ΔP = clamp(bias + K x_hat, 0, max) after t_start.
InjectionSchedule dynamic_attack(const StateSpaceModel& attacker_view, const AttackSpec& spec);

/// Copy of a model with every entry of A, B, B_d scaled by (1 + level u),
/// u uniform in [-1, 1].
StateSpaceModel perturb_model(const StateSpaceModel& ss, double level, std::uint64_t seed);

/// Dispatches on spec.kind; `model` is needed for switching with
/// freq_hz = 0 and for dynamic attacks.
InjectionSchedule make_attack(const AttackSpec& spec, const GridCase& grid, const StateSpaceModel* model);

/// ZOH discretization of x' = a x + b u over dt.
std::pair<Eigen::MatrixXd, Eigen::MatrixXd> discretize_zoh(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b,
                                                           double dt);

}  // namespace gridshield
