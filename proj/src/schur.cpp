#include "schur.hpp"

#include <lapacke.h>

#include "gridshield/error.hpp"

namespace gridshield::detail {

namespace {

lapack_logical open_left_half(const double* re, const double* /*im*/) {
  return *re < 0.0 ? 1 : 0;
}

}  // namespace

RealSchur real_schur(const Eigen::MatrixXd& a, bool stable_first) {
  const auto n = static_cast<lapack_int>(a.rows());
  RealSchur out;
  out.t = a;
  out.u.resize(n, n);
  Eigen::VectorXd wr(n), wi(n);
  lapack_int sdim = 0;
  if (n == 0) return out;
  const lapack_int info = LAPACKE_dgees(
      LAPACK_COL_MAJOR, 'V', stable_first ? 'S' : 'N',
      stable_first ? open_left_half : nullptr, n, out.t.data(), n, &sdim,
      wr.data(), wi.data(), out.u.data(), n);
  if (info != 0) {
    // info = n + 2 means reordering failed on nearly equal eigenvalues.
    throw Error(ErrorCode::NumericalFailure,
                "real Schur decomposition failed (dgees info " + std::to_string(info) + ")");
  }
  out.eigenvalues.resize(n);
  for (lapack_int i = 0; i < n; ++i) out.eigenvalues(i) = {wr(i), wi(i)};
  out.stable_count = stable_first ? static_cast<int>(sdim) : 0;
  return out;
}

Eigen::MatrixXd triangular_lyapunov(const Eigen::MatrixXd& t, const Eigen::MatrixXd& c) {
  const auto n = static_cast<lapack_int>(t.rows());
  Eigen::MatrixXd x = c;
  if (n == 0) return x;
  double scale = 1.0;
  const lapack_int info = LAPACKE_dtrsyl(LAPACK_COL_MAJOR, 'N', 'T', 1, n, n, t.data(), n,
                                         t.data(), n, x.data(), n, &scale);
  if (info < 0) {
    throw Error(ErrorCode::NumericalFailure, "dtrsyl rejected its arguments");
  }
  // info = 1: eigenvalues nearly opposite; the perturbed solution is kept
  // and judged by the caller's residual check.
  return x / scale;
}

}  // namespace gridshield::detail
