#include "gridshield/synth.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <limits>

#include <Eigen/Eigenvalues>

#include "gridshield/error.hpp"
#include "json_util.hpp"
#include "schur.hpp"

namespace gridshield {

namespace {

constexpr const char* kSchema = "gridshield/synthesis/1";

double max_real_part(const Eigen::MatrixXd& a) {
  if (a.size() == 0) return -std::numeric_limits<double>::infinity();
  Eigen::EigenSolver<Eigen::MatrixXd> es(a, false);
  return es.eigenvalues().real().maxCoeff();
}

double max_eigenvalue(const Eigen::MatrixXd& m) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(0.5 * (m + m.transpose()), Eigen::EigenvaluesOnly);
  return es.eigenvalues().maxCoeff();
}

double sigma_max(const Eigen::MatrixXcd& g) {
  if (g.size() == 0) return 0.0;
  Eigen::JacobiSVD<Eigen::MatrixXcd> svd(g);
  return svd.singularValues()(0);
}

}  // namespace

LtiSystem disturbance_channel(const StateSpaceModel& ss, const Eigen::MatrixXd& k) {
  LtiSystem sys{ss.a, ss.b_d, ss.c, ss.d_d};
  if (k.size() != 0) {
    sys.a += ss.b * k;
    sys.c += ss.d * k;
  }
  return sys;
}

double sigma_max_at(const LtiSystem& sys, double omega) {
  const Eigen::Index n = sys.a.rows();
  if (n == 0) return sigma_max(sys.d.cast<std::complex<double>>());
  Eigen::MatrixXcd m = -sys.a.cast<std::complex<double>>();
  m.diagonal().array() += std::complex<double>(0.0, omega);
  const Eigen::MatrixXcd g = sys.c.cast<std::complex<double>>() *
                                 m.partialPivLu().solve(sys.b.cast<std::complex<double>>()) +
                             sys.d.cast<std::complex<double>>();
  return sigma_max(g);
}

double hinf_norm(const LtiSystem& sys, double rel_tol) {
  const Eigen::Index n = sys.a.rows();
  Eigen::JacobiSVD<Eigen::MatrixXd> dsvd(sys.d);
  const double d_norm = sys.d.size() == 0 ? 0.0 : dsvd.singularValues()(0);
  if (n == 0) return d_norm;
  Eigen::EigenSolver<Eigen::MatrixXd> es(sys.a, false);
  const Eigen::VectorXcd poles = es.eigenvalues();
  if (!(poles.real().maxCoeff() < 0.0)) {
    throw Error(ErrorCode::Unstable, "hinf_norm needs a Hurwitz A (max Re = " +
                                         std::to_string(poles.real().maxCoeff()) + ")");
  }

  // Lower bound from D, DC gain and the resonance of each pole.
  double lo = std::max(d_norm, sigma_max_at(sys, 0.0));
  for (Eigen::Index i = 0; i < poles.size(); ++i) {
    if (poles(i).imag() > 0.0) lo = std::max(lo, sigma_max_at(sys, std::abs(poles(i))));
  }
  if (lo == 0.0) return 0.0;

  const double tol = std::min(rel_tol, 1e-6) * 0.1;
  const Eigen::Index p = sys.b.cols();
  const Eigen::MatrixXd dtd = sys.d.transpose() * sys.d;
  for (int it = 0; it < 200; ++it) {
    const double gamma = lo * (1.0 + 2.0 * tol);
    const Eigen::MatrixXd r = gamma * gamma * Eigen::MatrixXd::Identity(p, p) - dtd;
    const Eigen::LLT<Eigen::MatrixXd> r_llt(r);
    const Eigen::MatrixXd r_inv = r_llt.solve(Eigen::MatrixXd::Identity(p, p));
    const Eigen::MatrixXd a_h = sys.a + sys.b * r_inv * sys.d.transpose() * sys.c;
    const Eigen::MatrixXd m_out = Eigen::MatrixXd::Identity(sys.c.rows(), sys.c.rows()) +
                                  sys.d * r_inv * sys.d.transpose();
    Eigen::MatrixXd h(2 * n, 2 * n);
    h << a_h, sys.b * r_inv * sys.b.transpose(), -sys.c.transpose() * m_out * sys.c,
        -a_h.transpose();
    Eigen::EigenSolver<Eigen::MatrixXd> hs(h, false);
    const double scale = std::max(1.0, h.lpNorm<Eigen::Infinity>());
    std::vector<double> omegas;
    for (Eigen::Index i = 0; i < hs.eigenvalues().size(); ++i) {
      const auto lam = hs.eigenvalues()(i);
      if (std::abs(lam.real()) < 1e-8 * scale && lam.imag() >= 0.0) omegas.push_back(lam.imag());
    }
    if (omegas.empty()) return gamma;
    std::sort(omegas.begin(), omegas.end());
    double next = lo;
    for (std::size_t i = 0; i < omegas.size(); ++i) {
      next = std::max(next, sigma_max_at(sys, omegas[i]));
      if (i + 1 < omegas.size()) next = std::max(next, sigma_max_at(sys, 0.5 * (omegas[i] + omegas[i + 1])));
    }
    if (!(next > gamma)) return gamma;
    lo = next;
  }
  throw Error(ErrorCode::NumericalFailure, "hinf_norm bisection did not settle");
}

double care_residual(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b, const Eigen::MatrixXd& q,
                     const Eigen::MatrixXd& r, const Eigen::MatrixXd& s) {
  const Eigen::MatrixXd g = b * r.llt().solve(b.transpose());
  return (s * a + a.transpose() * s - s * g * s + q).norm();
}

Eigen::MatrixXd solve_care(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b,
                           const Eigen::MatrixXd& q, const Eigen::MatrixXd& r) {
  const Eigen::Index n = a.rows();
  if (a.cols() != n || b.rows() != n || q.rows() != n || q.cols() != n || r.rows() != b.cols() ||
      r.cols() != b.cols()) {
    throw Error(ErrorCode::InvariantViolation, "solve_care: dimension mismatch");
  }
  const Eigen::LLT<Eigen::MatrixXd> r_llt(r);
  if (r_llt.info() != Eigen::Success) {
    throw Error(ErrorCode::InvariantViolation, "solve_care: R is not positive definite");
  }
  const Eigen::MatrixXd g = b * r_llt.solve(b.transpose());
  Eigen::MatrixXd h(2 * n, 2 * n);
  h << a, -g, -q, -a.transpose();
  const auto schur = detail::real_schur(h, true);
  if (schur.stable_count != n) {
    throw Error(ErrorCode::NotStabilizable,
                "Hamiltonian has " + std::to_string(schur.stable_count) + " stable eigenvalues, need " +
                    std::to_string(n));
  }
  const Eigen::MatrixXd u11 = schur.u.topLeftCorner(n, n);
  const Eigen::MatrixXd u21 = schur.u.bottomLeftCorner(n, n);
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(u11);
  const Eigen::VectorXd sv = svd.singularValues();
  if (!(sv(n - 1) > 1e-12 * sv(0))) {
    throw Error(ErrorCode::NotStabilizable, "stable invariant subspace is not a graph (unstabilizable pair)");
  }
  Eigen::MatrixXd s = u11.transpose().partialPivLu().solve(u21.transpose()).transpose();
  s = 0.5 * (s + s.transpose());

  // Newton refinement on the residual.
  for (int it = 0; it < 5; ++it) {
    const Eigen::MatrixXd res = s * a + a.transpose() * s - s * g * s + q;
    if (res.norm() <= 1e-12 * std::max(1.0, s.norm())) break;
    const Eigen::MatrixXd a_k = a - g * s;
    Eigen::MatrixXd delta;
    try {
      delta = lyapunov_solve(a_k.transpose(), res);
    } catch (const Error&) {
      break;
    }
    const Eigen::MatrixXd trial = s + delta;
    if (care_residual(a, b, q, r, trial) >= res.norm()) break;
    s = 0.5 * (trial + trial.transpose());
  }
  return s;
}

ObserverDesign observer_gain(const Eigen::MatrixXd& a, const Eigen::MatrixXd& c,
                             const Eigen::MatrixXd& q, const Eigen::MatrixXd& r) {
  ObserverDesign obs;
  obs.a_o = a.transpose();
  obs.b_o = c.transpose();
  obs.q_weight = q;
  obs.r_weight = r;
  obs.s = solve_care(obs.a_o, obs.b_o, q, r);
  obs.l = (-r.llt().solve(obs.b_o.transpose() * obs.s)).transpose();
  return obs;
}

Eigen::MatrixXd bounded_real_matrix(const StateSpaceModel& ss, const Eigen::MatrixXd& x,
                                    const Eigen::MatrixXd& w, double rho) {
  const Eigen::Index n = ss.states(), q = ss.disturbances(), p = ss.outputs();
  Eigen::MatrixXd m = Eigen::MatrixXd::Zero(n + q + p, n + q + p);
  const Eigen::MatrixXd axbw = ss.a * x + ss.b * w;
  const Eigen::MatrixXd cxdw = ss.c * x + ss.d * w;
  m.topLeftCorner(n, n) = axbw + axbw.transpose();
  m.block(0, n, n, q) = ss.b_d;
  m.block(0, n + q, n, p) = cxdw.transpose();
  m.block(n, 0, q, n) = ss.b_d.transpose();
  m.block(n, n, q, q) = -rho * Eigen::MatrixXd::Identity(q, q);
  m.block(n, n + q, q, p) = ss.d_d.transpose();
  m.block(n + q, 0, p, n) = cxdw;
  m.block(n + q, n, p, q) = ss.d_d;
  m.block(n + q, n + q, p, p) = -rho * Eigen::MatrixXd::Identity(p, p);
  return m;
}

Eigen::MatrixXd pole_region_matrix(const StateSpaceModel& ss, const Eigen::MatrixXd& x,
                                   const Eigen::MatrixXd& w, double a1) {
  const Eigen::MatrixXd axbw = ss.a * x + ss.b * w;
  return axbw + axbw.transpose() + 2.0 * a1 * x;
}

StateSpaceModel with_effort_output(const StateSpaceModel& ss, const Eigen::VectorXd& weights) {
  if (weights.size() == 0) return ss;
  if (weights.size() != ss.inputs()) {
    throw Error(ErrorCode::InvariantViolation, "one effort weight per input required");
  }
  StateSpaceModel out = ss;
  std::vector<Eigen::Index> rows;
  for (Eigen::Index k = 0; k < weights.size(); ++k) {
    if (weights(k) != 0.0) rows.push_back(k);
  }
  const auto extra = static_cast<Eigen::Index>(rows.size());
  const Eigen::Index p = ss.outputs();
  out.c.conservativeResize(p + extra, Eigen::NoChange);
  out.d.conservativeResize(p + extra, Eigen::NoChange);
  out.d_d.conservativeResize(p + extra, Eigen::NoChange);
  out.c.bottomRows(extra).setZero();
  out.d.bottomRows(extra).setZero();
  out.d_d.bottomRows(extra).setZero();
  for (Eigen::Index r = 0; r < extra; ++r) {
    const Eigen::Index k = rows[static_cast<std::size_t>(r)];
    out.d(p + r, k) = weights(k);
    out.output_labels.push_back("effort_" + ss.input_labels[static_cast<std::size_t>(k)]);
  }
  return out;
}

namespace {

StateSpaceModel active_columns(const StateSpaceModel& ss, bool inputs, bool disturbances) {
  StateSpaceModel out = ss;
  auto keep_even = [](Eigen::MatrixXd& m, std::vector<std::string>& labels) {
    const Eigen::Index half = m.cols() / 2;
    Eigen::MatrixXd kept(m.rows(), half);
    std::vector<std::string> kept_labels;
    for (Eigen::Index k = 0; k < half; ++k) {
      kept.col(k) = m.col(2 * k);
      kept_labels.push_back(labels[static_cast<std::size_t>(2 * k)]);
    }
    m = std::move(kept);
    labels = std::move(kept_labels);
  };
  if (inputs) {
    std::vector<std::string> scratch = out.input_labels;
    keep_even(out.d, scratch);
    keep_even(out.b, out.input_labels);
  }
  if (disturbances) {
    std::vector<std::string> scratch = out.disturbance_labels;
    keep_even(out.d_d, scratch);
    keep_even(out.b_d, out.disturbance_labels);
  }
  return out;
}

}  // namespace

StateSpaceModel performance_model(const StateSpaceModel& ss, const HinfSolution& sol) {
  return with_effort_output(active_columns(ss, false, sol.active_power_only), sol.effort_weights);
}

HinfSolution hinf_synthesize(const StateSpaceModel& ss, const HinfOptions& options) {
  ss.validate();
  if (!(options.a1 > 0.0) || !(options.gain_bound > 0.0) || !(options.x_bound > 0.0)) {
    throw Error(ErrorCode::InvariantViolation, "a1, gain bound and X bound must be positive");
  }
  const Eigen::Index n = ss.states(), m = ss.inputs(), q = ss.disturbances(), p = ss.outputs();
  using Eigen::MatrixXd;
  const MatrixXd in = MatrixXd::Identity(n, n);

  double scale = 1.0;
  for (const MatrixXd* mat : {&ss.a, &ss.b, &ss.b_d, &ss.c}) scale = std::max(scale, mat->norm());
  const double eps = options.epsilon * scale;

  sdp::Problem prob;
  const int x = prob.add_symmetric(static_cast<int>(n));
  const int w = prob.add_full(static_cast<int>(m), static_cast<int>(n));
  const int rho = prob.add_scalar();
  const int nu = prob.add_scalar();
  prob.set_cost(rho, 1.0);

  // Bounded-real LMI, written as -M - eps I >= 0.
  {
    const Eigen::Index nb = n + q + p;
    MatrixXd e1 = MatrixXd::Zero(nb, n), e3 = MatrixXd::Zero(nb, p), e23 = MatrixXd::Zero(nb, q + p);
    e1.topRows(n) = in;
    e3.bottomRows(p) = MatrixXd::Identity(p, p);
    e23.bottomRows(q + p) = MatrixXd::Identity(q + p, q + p);
    sdp::Block blk;
    blk.name = "bounded-real";
    blk.constant = -bounded_real_matrix(ss, MatrixXd::Zero(n, n), MatrixXd::Zero(m, n), 0.0) -
                   eps * MatrixXd::Identity(nb, nb);
    sdp::Problem::add_term(blk, x, -e1 * ss.a, e1.transpose());
    sdp::Problem::add_term(blk, x, -e3 * ss.c, e1.transpose());
    sdp::Problem::add_term(blk, w, -e1 * ss.b, e1.transpose());
    if (ss.d.norm() > 0.0) sdp::Problem::add_term(blk, w, -e3 * ss.d, e1.transpose());
    sdp::Problem::add_term(blk, rho, 0.5 * e23, e23.transpose());
    prob.add_block(std::move(blk));
  }
  // Pole region.
  {
    sdp::Block blk;
    blk.name = "pole-region";
    blk.constant = -eps * in;
    sdp::Problem::add_term(blk, x, -(ss.a + options.a1 * in), in);
    sdp::Problem::add_term(blk, w, -ss.b, in);
    prob.add_block(std::move(blk));
  }
  // X >= nu I.
  {
    sdp::Block blk;
    blk.name = "x-lower";
    blk.constant = MatrixXd::Zero(n, n);
    sdp::Problem::add_term(blk, x, 0.5 * in, in);
    sdp::Problem::add_term(blk, nu, -0.5 * in, in);
    prob.add_block(std::move(blk));
  }
  // [kappa nu I, W^T; W, kappa nu I] >= 0 bounds ||W X^-1|| by kappa.
  {
    const Eigen::Index nb = n + m;
    MatrixXd e1 = MatrixXd::Zero(nb, n), e2 = MatrixXd::Zero(nb, m);
    e1.topRows(n) = in;
    e2.bottomRows(m) = MatrixXd::Identity(m, m);
    sdp::Block blk;
    blk.name = "gain-bound";
    blk.constant = MatrixXd::Zero(nb, nb);
    sdp::Problem::add_term(blk, nu, 0.5 * options.gain_bound * MatrixXd::Identity(nb, nb),
                           MatrixXd::Identity(nb, nb));
    sdp::Problem::add_term(blk, w, e2, e1.transpose());
    prob.add_block(std::move(blk));
  }
  // X <= x_bound I and rho <= rho_max keep the feasible set bounded.
  {
    sdp::Block blk;
    blk.name = "x-upper";
    blk.constant = options.x_bound * in;
    sdp::Problem::add_term(blk, x, -0.5 * in, in);
    prob.add_block(std::move(blk));
  }
  {
    sdp::Block blk;
    blk.name = "rho-upper";
    blk.constant = MatrixXd::Constant(1, 1, options.rho_max);
    sdp::Problem::add_term(blk, rho, MatrixXd::Constant(1, 1, -0.5), MatrixXd::Identity(1, 1));
    prob.add_block(std::move(blk));
  }

  const sdp::Result res = sdp::solve(prob, options.solver);
  HinfSolution sol;
  sol.a1 = options.a1;
  sol.gain_bound = options.gain_bound;
  sol.solver_status = sdp::to_string(res.status);
  sol.solver_iterations = res.iterations;
  sol.solver_gap = res.gap;
  sol.solver_infeasibility = std::max(res.primal_infeasibility, res.dual_infeasibility);
  if (res.y.size() == 0 || !res.y.allFinite()) {
    throw Error(ErrorCode::SolverFailure, "SDP returned no point (" + sol.solver_status + ")");
  }
  sol.x_cert = prob.value(x, res.y);
  sol.w_cert = prob.value(w, res.y);
  sol.rho = res.y(prob.variables()[static_cast<std::size_t>(rho)].offset);

  // Certificates are judged on their own, not on the solver status.
  const double lam_min_x = Eigen::SelfAdjointEigenSolver<MatrixXd>(sol.x_cert, Eigen::EigenvaluesOnly)
                               .eigenvalues()
                               .minCoeff();
  const double lam_br = max_eigenvalue(bounded_real_matrix(ss, sol.x_cert, sol.w_cert, sol.rho));
  const double lam_pr = max_eigenvalue(pole_region_matrix(ss, sol.x_cert, sol.w_cert, options.a1));
  if (!(lam_min_x > 0.0) || !(lam_br < 0.0) || !(lam_pr < 0.0)) {
    const std::string detail = "solver " + sol.solver_status + ", min eig X " + std::to_string(lam_min_x) +
                               ", max eig LMI " + std::to_string(lam_br) + " / " + std::to_string(lam_pr);
    if (res.status == sdp::Status::Optimal || res.status == sdp::Status::Infeasible) {
      throw Error(ErrorCode::Infeasible, "no certificate found: " + detail);
    }
    throw Error(ErrorCode::SolverFailure, detail);
  }
  sol.k_mit = sol.x_cert.llt().solve(sol.w_cert.transpose()).transpose();
  return sol;
}

Eigen::MatrixXd interconnection(const StateSpaceModel& plant, const StateSpaceModel& reduced,
                                const ObserverDesign& obs, const HinfSolution& sol) {
  const Eigen::Index n = plant.states(), r = reduced.states();
  Eigen::MatrixXd m(n + r, n + r);
  m.topLeftCorner(n, n) = plant.a;
  m.topRightCorner(n, r) = plant.b * sol.k_mit;
  m.bottomLeftCorner(r, n) = -obs.l * plant.c;
  m.bottomRightCorner(r, r) = reduced.a + reduced.b * sol.k_mit + obs.l * reduced.c;
  return m;
}

bool VerificationReport::all_passed() const {
  return std::all_of(checks.begin(), checks.end(), [](const auto& c) { return c.passed; });
}

const VerificationCheck& VerificationReport::check(std::string_view name) const {
  for (const auto& c : checks) {
    if (c.name == name) return c;
  }
  throw Error(ErrorCode::InvariantViolation, "no verification check named " + std::string(name));
}

VerificationReport verify_design(const ReducedModel& reduced, const StateSpaceModel& full,
                                 const ObserverDesign& obs, const HinfSolution& sol) {
  const StateSpaceModel& rm = reduced.model;
  if (sol.k_mit.rows() != rm.inputs() || sol.k_mit.cols() != rm.states() || obs.l.rows() != rm.states() ||
      obs.l.cols() != rm.outputs() || full.inputs() != rm.inputs() || full.outputs() != rm.outputs()) {
    throw Error(ErrorCode::InvariantViolation, "verify_design: incompatible dimensions");
  }
  VerificationReport rep;
  const Eigen::MatrixXd a_cl = rm.a + rm.b * sol.k_mit;

  VerificationCheck att{"attenuation", false, 0.0, sol.rho * (1.0 + 1e-6), {}};
  try {
    att.value = hinf_norm(disturbance_channel(performance_model(rm, sol), sol.k_mit));
    att.passed = att.value <= att.bound;
  } catch (const Error& e) {
    att.value = std::numeric_limits<double>::infinity();
    att.detail = e.what();
  }
  rep.checks.push_back(att);

  VerificationCheck pole{"pole-region", false, max_real_part(a_cl), -sol.a1, {}};
  pole.passed = pole.value < pole.bound;
  rep.checks.push_back(pole);

  // The estimator is fed the applied input, so its error obeys A + l C
  // whatever the gain.
  VerificationCheck est{"observer", false, max_real_part(rm.a + obs.l * rm.c), 0.0, {}};
  est.passed = est.value < 0.0;
  est.detail = "max Re of A_cl + l C: " + std::to_string(max_real_part(a_cl + obs.l * rm.c));
  rep.checks.push_back(est);

  VerificationCheck sep{"reduced-loop", false, max_real_part(interconnection(rm, rm, obs, sol)), 0.0, {}};
  sep.passed = sep.value < 0.0;
  rep.checks.push_back(sep);

  VerificationCheck fl{"full-loop", false, max_real_part(interconnection(full, rm, obs, sol)), 0.0, {}};
  fl.passed = fl.value < 0.0;
  rep.checks.push_back(fl);
  return rep;
}

SynthesisArtifacts design_controller(const StateSpaceModel& full, const DesignOptions& options) {
  SynthesisArtifacts art;
  art.reduced = balanced_truncate(full, options.reduction);
  art.observer_on_closed_loop = options.observer_on_closed_loop;
  const StateSpaceModel& rm = art.reduced.model;
  Eigen::VectorXd weights;
  if (options.effort_weight > 0.0) {
    if (options.channel_capacity_mw.size() != static_cast<Eigen::Index>(rm.ev_buses.size())) {
      throw Error(ErrorCode::InvariantViolation, "effort weighting needs one capacity per EV bus");
    }
    weights = Eigen::VectorXd::Zero(rm.inputs());
    for (Eigen::Index k = 0; k < options.channel_capacity_mw.size(); ++k) {
      const double cap_pu = options.channel_capacity_mw(k) / rm.base_mva;
      if (!(cap_pu > 0.0)) throw Error(ErrorCode::InvariantViolation, "channel capacities must be positive");
      weights(2 * k) = options.effort_weight / cap_pu;
      if (!options.active_power_only) weights(2 * k + 1) = options.effort_weight / cap_pu;
    }
  }
  if (options.active_power_only) {
    const StateSpaceModel pm = active_columns(rm, true, true);
    const Eigen::Index m = pm.inputs();
    Eigen::VectorXd pw;
    if (weights.size() != 0) pw = weights(Eigen::seq(0, Eigen::last, 2));
    art.hinf = hinf_synthesize(with_effort_output(pm, pw), options.hinf);
    Eigen::MatrixXd k_full = Eigen::MatrixXd::Zero(rm.inputs(), rm.states());
    Eigen::MatrixXd w_full = Eigen::MatrixXd::Zero(rm.inputs(), rm.states());
    for (Eigen::Index k = 0; k < m; ++k) {
      k_full.row(2 * k) = art.hinf.k_mit.row(k);
      w_full.row(2 * k) = art.hinf.w_cert.row(k);
    }
    art.hinf.k_mit = k_full;
    art.hinf.w_cert = w_full;
  } else {
    art.hinf = hinf_synthesize(with_effort_output(rm, weights), options.hinf);
  }
  art.hinf.active_power_only = options.active_power_only;
  art.hinf.effort_weights = weights;
  const Eigen::Index r = rm.states(), p = rm.outputs();
  const Eigen::MatrixXd a_o = options.observer_on_closed_loop ? Eigen::MatrixXd(rm.a + rm.b * art.hinf.k_mit) : rm.a;
  art.observer = observer_gain(a_o, rm.c,
                               options.q_scale * Eigen::MatrixXd::Identity(r, r),
                               options.r_scale * Eigen::MatrixXd::Identity(p, p));
  art.verification = verify_design(art.reduced, full, art.observer, art.hinf);
  return art;
}

std::string synthesis_to_json(const SynthesisArtifacts& art) {
  using jsonio::json;
  json j;
  j["schema"] = kSchema;
  j["reduced"] = json::parse(reduced_to_json(art.reduced));
  j["hinf"] = {{"k_mit", jsonio::matrix(art.hinf.k_mit)},
               {"x_cert", jsonio::matrix(art.hinf.x_cert)},
               {"w_cert", jsonio::matrix(art.hinf.w_cert)},
               {"rho", art.hinf.rho},
               {"a1", art.hinf.a1},
               {"gain_bound", art.hinf.gain_bound},
               {"effort_weights", jsonio::vector(art.hinf.effort_weights)},
               {"active_power_only", art.hinf.active_power_only},
               {"solver_status", art.hinf.solver_status},
               {"solver_iterations", art.hinf.solver_iterations},
               {"solver_gap", art.hinf.solver_gap},
               {"solver_infeasibility", art.hinf.solver_infeasibility}};
  j["observer"] = {{"l", jsonio::matrix(art.observer.l)},
                   {"q_weight", jsonio::matrix(art.observer.q_weight)},
                   {"r_weight", jsonio::matrix(art.observer.r_weight)},
                   {"s", jsonio::matrix(art.observer.s)}};
  j["observer_on_closed_loop"] = art.observer_on_closed_loop;
  j["input_labels"] = art.reduced.model.input_labels;
  j["output_labels"] = art.reduced.model.output_labels;
  json checks = json::array();
  for (const auto& c : art.verification.checks) {
    checks.push_back({{"name", c.name}, {"passed", c.passed}, {"value", c.value}, {"bound", c.bound},
                      {"detail", c.detail}});
  }
  j["verification"] = checks;
  return j.dump(1);
}

SynthesisArtifacts synthesis_from_json(std::string_view text) {
  const auto j = jsonio::parse(text);
  jsonio::expect_schema(j, kSchema);
  SynthesisArtifacts art;
  try {
    art.reduced = reduced_from_json(jsonio::field(j, "reduced").dump());
    const auto& h = jsonio::field(j, "hinf");
    art.hinf.k_mit = jsonio::to_matrix(jsonio::field(h, "k_mit"));
    art.hinf.x_cert = jsonio::to_matrix(jsonio::field(h, "x_cert"));
    art.hinf.w_cert = jsonio::to_matrix(jsonio::field(h, "w_cert"));
    art.hinf.rho = jsonio::get<double>(h, "rho");
    art.hinf.a1 = jsonio::get<double>(h, "a1");
    art.hinf.gain_bound = jsonio::get<double>(h, "gain_bound");
    art.hinf.effort_weights = jsonio::to_vector(jsonio::field(h, "effort_weights"));
    art.hinf.active_power_only = jsonio::get<bool>(h, "active_power_only");
    art.hinf.solver_status = jsonio::get<std::string>(h, "solver_status");
    art.hinf.solver_iterations = jsonio::get<int>(h, "solver_iterations");
    art.hinf.solver_gap = jsonio::get<double>(h, "solver_gap");
    art.hinf.solver_infeasibility = jsonio::get<double>(h, "solver_infeasibility");
    const auto& o = jsonio::field(j, "observer");
    art.observer.l = jsonio::to_matrix(jsonio::field(o, "l"));
    art.observer.q_weight = jsonio::to_matrix(jsonio::field(o, "q_weight"));
    art.observer.r_weight = jsonio::to_matrix(jsonio::field(o, "r_weight"));
    art.observer.s = jsonio::to_matrix(jsonio::field(o, "s"));
    for (const auto& c : jsonio::field(j, "verification")) {
      art.verification.checks.push_back({jsonio::get<std::string>(c, "name"), jsonio::get<bool>(c, "passed"),
                                         jsonio::get<double>(c, "value"), jsonio::get<double>(c, "bound"),
                                         jsonio::get<std::string>(c, "detail")});
    }
  } catch (const jsonio::json::exception& e) {
    throw Error(ErrorCode::MalformedDocument, e.what());
  }
  const StateSpaceModel& rm = art.reduced.model;
  art.observer_on_closed_loop = jsonio::get<bool>(j, "observer_on_closed_loop");
  art.observer.a_o = art.observer_on_closed_loop ? Eigen::MatrixXd((rm.a + rm.b * art.hinf.k_mit).transpose())
                                                                      : Eigen::MatrixXd(rm.a.transpose());
  art.observer.b_o = rm.c.transpose();
  if (art.hinf.k_mit.rows() != rm.inputs() || art.hinf.k_mit.cols() != rm.states() ||
      art.observer.l.rows() != rm.states() || art.observer.l.cols() != rm.outputs()) {
    throw Error(ErrorCode::MalformedDocument, "gain shapes do not match the reduced model");
  }
  return art;
}

}  // namespace gridshield
