#pragma once

#include <Eigen/Dense>

namespace gridshield::detail {

struct RealSchur {
  Eigen::MatrixXd t;  // quasi-upper-triangular
  Eigen::MatrixXd u;  // orthogonal, a = u t u^T
  Eigen::VectorXcd eigenvalues;
  int stable_count = 0;  // leading eigenvalues with Re < 0 when ordered
};

/// Real Schur form. With `stable_first` the open left half-plane
/// eigenvalues are moved to the leading block.
RealSchur real_schur(const Eigen::MatrixXd& a, bool stable_first);

/// Solves t x + x t^T = c for quasi-triangular t.
Eigen::MatrixXd triangular_lyapunov(const Eigen::MatrixXd& t, const Eigen::MatrixXd& c);

}  // namespace gridshield::detail
