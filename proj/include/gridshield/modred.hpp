#pragma once

#include <optional>
#include <string>
#include <string_view>

#include <Eigen/Dense>

#include "gridshield/linearize.hpp"

namespace gridshield {

/// Solves a p + p a^T + q = 0 for Hurwitz a.
Eigen::MatrixXd lyapunov_solve(const Eigen::MatrixXd& a, const Eigen::MatrixXd& q);

struct Gramians {
  Eigen::MatrixXd controllability;
  Eigen::MatrixXd observability;
};

/// Gramians over the combined input [B, B_d].
Gramians gramians(const StateSpaceModel& ss);

/// Hankel singular values of the map [B, B_d] -> y, nonincreasing.
Eigen::VectorXd hankel_values(const StateSpaceModel& ss);

struct ReductionTarget {
  std::optional<int> order;  // takes precedence when set
  double energy = 0.99;      // smallest order reaching this fraction
};

struct ReducedModel {
  StateSpaceModel model;
  Eigen::VectorXd hankel_values;  // of the full model
  int kept_order = 0;
  double energy_fraction = 0.0;
  /// Reduced state z_r = t_left^T z; full state z ~ t_right z_r.
  Eigen::MatrixXd t_left;
  Eigen::MatrixXd t_right;
  std::vector<std::string> full_state_labels;
};

ReducedModel balanced_truncate(const StateSpaceModel& ss, const ReductionTarget& target = {});

std::string reduced_to_json(const ReducedModel& rm);
ReducedModel reduced_from_json(std::string_view text);

}  // namespace gridshield
