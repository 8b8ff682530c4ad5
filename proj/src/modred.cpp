#include "gridshield/modred.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "gridshield/error.hpp"
#include "json_util.hpp"
#include "schur.hpp"

namespace gridshield {

namespace {

constexpr const char* kSchema = "gridshield/reduced/1";

Eigen::MatrixXd combined_input(const StateSpaceModel& ss) {
  Eigen::MatrixXd b(ss.states(), ss.inputs() + ss.disturbances());
  b << ss.b, ss.b_d;
  return b;
}

/// Square factor l with g = l l^T for a symmetric PSD matrix.
Eigen::MatrixXd psd_factor(const Eigen::MatrixXd& g) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(0.5 * (g + g.transpose()));
  const Eigen::VectorXd root = es.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  return es.eigenvectors() * root.asDiagonal();
}

}  // namespace

Eigen::MatrixXd lyapunov_solve(const Eigen::MatrixXd& a, const Eigen::MatrixXd& q) {
  if (a.rows() != a.cols() || q.rows() != a.rows() || q.cols() != a.cols()) {
    throw Error(ErrorCode::InvariantViolation, "lyapunov_solve: dimension mismatch");
  }
  const auto schur = detail::real_schur(a, false);
  for (Eigen::Index i = 0; i < schur.eigenvalues.size(); ++i) {
    if (!(schur.eigenvalues(i).real() < 0.0)) {
      throw Error(ErrorCode::NotHurwitz,
                  "eigenvalue with real part " + std::to_string(schur.eigenvalues(i).real()));
    }
  }
  const Eigen::MatrixXd qt = schur.u.transpose() * q * schur.u;
  const Eigen::MatrixXd x = detail::triangular_lyapunov(schur.t, -qt);
  Eigen::MatrixXd p = schur.u * x * schur.u.transpose();
  return 0.5 * (p + p.transpose());
}

Gramians gramians(const StateSpaceModel& ss) {
  const Eigen::MatrixXd b = combined_input(ss);
  Gramians g;
  g.controllability = lyapunov_solve(ss.a, b * b.transpose());
  g.observability = lyapunov_solve(ss.a.transpose(), ss.c.transpose() * ss.c);
  return g;
}

Eigen::VectorXd hankel_values(const StateSpaceModel& ss) {
  const Gramians g = gramians(ss);
  const Eigen::MatrixXd lc = psd_factor(g.controllability);
  const Eigen::MatrixXd lo = psd_factor(g.observability);
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(lo.transpose() * lc);
  return svd.singularValues();
}

ReducedModel balanced_truncate(const StateSpaceModel& ss, const ReductionTarget& target) {
  ss.validate();
  const Eigen::Index n = ss.states();
  const Gramians g = gramians(ss);
  const Eigen::MatrixXd lc = psd_factor(g.controllability);
  const Eigen::MatrixXd lo = psd_factor(g.observability);
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(lo.transpose() * lc, Eigen::ComputeFullU | Eigen::ComputeFullV);
  const Eigen::VectorXd sigma = svd.singularValues();
  const double total = sigma.sum();

  Eigen::Index k = 0;
  if (target.order) {
    if (*target.order < 1 || *target.order > n) {
      throw Error(ErrorCode::OutOfRange, "reduction order " + std::to_string(*target.order) +
                                             " outside [1, " + std::to_string(n) + "]");
    }
    k = *target.order;
  } else {
    if (!(target.energy > 0.0 && target.energy <= 1.0)) {
      throw Error(ErrorCode::OutOfRange, "energy threshold must lie in (0, 1]");
    }
    double kept = 0.0;
    while (k < n) {
      kept += sigma(k);
      ++k;
      if (kept >= target.energy * total) break;
    }
  }

  ReducedModel rm;
  rm.hankel_values = sigma;
  rm.kept_order = static_cast<int>(k);
  rm.energy_fraction = total > 0.0 ? sigma.head(k).sum() / total : 1.0;
  rm.full_state_labels = ss.state_labels;

  StateSpaceModel& r = rm.model;
  r = ss;
  if (k == n) {
    // Nothing truncated; keep the original coordinates.
    rm.t_left = Eigen::MatrixXd::Identity(n, n);
    rm.t_right = Eigen::MatrixXd::Identity(n, n);
  } else {
    if (!(sigma(k - 1) > 0.0)) {
      throw Error(ErrorCode::NumericalFailure, "kept Hankel value is zero");
    }
    const Eigen::VectorXd inv_root = sigma.head(k).cwiseSqrt().cwiseInverse();
    rm.t_right = lc * svd.matrixV().leftCols(k) * inv_root.asDiagonal();
    rm.t_left = lo * svd.matrixU().leftCols(k) * inv_root.asDiagonal();
    r.a = rm.t_left.transpose() * ss.a * rm.t_right;
    r.b = rm.t_left.transpose() * ss.b;
    r.b_d = rm.t_left.transpose() * ss.b_d;
    r.c = ss.c * rm.t_right;
    r.state_labels.clear();
    for (Eigen::Index i = 0; i < k; ++i) r.state_labels.push_back("balanced_" + std::to_string(i + 1));
  }
  r.validate();
  return rm;
}

std::string reduced_to_json(const ReducedModel& rm) {
  using jsonio::json;
  json j;
  j["schema"] = kSchema;
  j["model"] = json::parse(model_to_json(rm.model));
  j["hankel_values"] = jsonio::vector(rm.hankel_values);
  j["kept_order"] = rm.kept_order;
  j["energy_fraction"] = rm.energy_fraction;
  j["t_left"] = jsonio::matrix(rm.t_left);
  j["t_right"] = jsonio::matrix(rm.t_right);
  j["full_state_labels"] = rm.full_state_labels;
  return j.dump(1);
}

ReducedModel reduced_from_json(std::string_view text) {
  const auto j = jsonio::parse(text);
  jsonio::expect_schema(j, kSchema);
  ReducedModel rm;
  rm.model = model_from_json(jsonio::field(j, "model").dump());
  rm.hankel_values = jsonio::to_vector(jsonio::field(j, "hankel_values"));
  rm.kept_order = jsonio::get<int>(j, "kept_order");
  rm.energy_fraction = jsonio::get<double>(j, "energy_fraction");
  rm.t_left = jsonio::to_matrix(jsonio::field(j, "t_left"));
  rm.t_right = jsonio::to_matrix(jsonio::field(j, "t_right"));
  rm.full_state_labels = jsonio::get<std::vector<std::string>>(j, "full_state_labels");
  if (rm.kept_order != rm.model.states()) {
    throw Error(ErrorCode::MalformedDocument, "kept_order does not match the reduced model");
  }
  return rm;
}

}  // namespace gridshield
