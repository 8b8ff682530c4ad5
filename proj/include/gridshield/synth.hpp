#pragma once

#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "gridshield/linearize.hpp"
#include "gridshield/modred.hpp"
#include "gridshield/sdp.hpp"

namespace gridshield {

/// Plain (A, B, C, D) realization.
struct LtiSystem {
  Eigen::MatrixXd a, b, c, d;
};

/// Attack-to-frequency map of a model under state feedback u = k x:
/// (A + B k, B_d, C + D k, D_d). An empty k gives the open loop.
LtiSystem disturbance_channel(const StateSpaceModel& ss, const Eigen::MatrixXd& k = {});

/// Peak gain over frequency, by Hamiltonian bisection. Throws Unstable
/// unless A is Hurwitz.
double hinf_norm(const LtiSystem& sys, double rel_tol = 1e-6);

/// Largest singular value of C (jw I - A)^-1 B + D.
double sigma_max_at(const LtiSystem& sys, double omega);

/// Stabilizing solution of s a + a^T s - s b r^-1 b^T s + q = 0.
Eigen::MatrixXd solve_care(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b,
                           const Eigen::MatrixXd& q, const Eigen::MatrixXd& r);

double care_residual(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b, const Eigen::MatrixXd& q,
                     const Eigen::MatrixXd& r, const Eigen::MatrixXd& s);

/// LQR observer from the dual pair (a_o, b_o) = (a^T, c^T).
/// The gain is l = (-r^-1 b_o^T s)^T, so the estimation error obeys
/// e' = (a + l c) e and the estimator correction is -l (y - y_hat).
struct ObserverDesign {
  Eigen::MatrixXd l;
  Eigen::MatrixXd q_weight, r_weight;
  Eigen::MatrixXd s;
  Eigen::MatrixXd a_o, b_o;
};

ObserverDesign observer_gain(const Eigen::MatrixXd& a, const Eigen::MatrixXd& c,
                             const Eigen::MatrixXd& q, const Eigen::MatrixXd& r);

struct HinfOptions {
  double a1 = 0.5;            // closed-loop poles left of -a1
  double gain_bound = 300.0;  // ||K|| <= gain_bound
  double x_bound = 1e4;       // X <= x_bound I
  double rho_max = 1e6;
  double epsilon = 1e-7;      // strictness margin, relative to data scale
  sdp::Options solver;
};

struct HinfSolution {
  Eigen::MatrixXd k_mit;
  Eigen::MatrixXd x_cert;
  Eigen::MatrixXd w_cert;
  double rho = 0.0;
  double a1 = 0.0;
  double gain_bound = 0.0;
  Eigen::VectorXd effort_weights;  // per input; see with_effort_output
  bool active_power_only = false;  // ΔQ inputs and disturbances left out
  // solver diagnostics
  std::string solver_status;
  int solver_iterations = 0;
  double solver_gap = 0.0;
  double solver_infeasibility = 0.0;
};

/// Performance model with the weighted inputs appended to the outputs:
/// z = [C x + D u; diag(weights) u]. Zero weights add no row.
StateSpaceModel with_effort_output(const StateSpaceModel& ss, const Eigen::VectorXd& weights);

/// The model whose disturbance-to-performance norm `sol` bounds.
StateSpaceModel performance_model(const StateSpaceModel& ss, const HinfSolution& sol);

/// Minimizes rho over X, W subject to the bounded-real LMI, the pole-region
/// LMI, X > 0 and the gain bound; returns K = W X^-1.
HinfSolution hinf_synthesize(const StateSpaceModel& ss, const HinfOptions& options = {});

/// Re-assembled constraint matrices, for certificate checks.
Eigen::MatrixXd bounded_real_matrix(const StateSpaceModel& ss, const Eigen::MatrixXd& x,
                                    const Eigen::MatrixXd& w, double rho);
Eigen::MatrixXd pole_region_matrix(const StateSpaceModel& ss, const Eigen::MatrixXd& x,
                                   const Eigen::MatrixXd& w, double a1);

struct VerificationCheck {
  std::string name;
  bool passed = false;
  double value = 0.0;
  double bound = 0.0;
  std::string detail;
};

struct VerificationReport {
  std::vector<VerificationCheck> checks;
  [[nodiscard]] bool all_passed() const;
  [[nodiscard]] const VerificationCheck& check(std::string_view name) const;
};

/// Checks: attenuation, pole region, observer, reduced separation loop,
/// full-model loop. `full` and `reduced` must come from the same
/// linearization; t_left maps full states to reduced ones.
VerificationReport verify_design(const ReducedModel& reduced, const StateSpaceModel& full,
                                 const ObserverDesign& obs, const HinfSolution& sol);

/// Closed-loop matrix of plant `plant` driven by the reduced-model
/// estimator and gain.
Eigen::MatrixXd interconnection(const StateSpaceModel& plant, const StateSpaceModel& reduced,
                                const ObserverDesign& obs, const HinfSolution& sol);

struct DesignOptions {
  ReductionTarget reduction;
  HinfOptions hinf;
  double q_scale = 1e6;  // observer Q = q_scale I
  double r_scale = 1.0;  // observer R = r_scale I
  /// Design the observer on (A + B K)^T instead of A^T.
  bool observer_on_closed_loop = false;
  /// Synthesize on the ΔP channels only; ΔQ rows of the gain are zero and
  /// ΔQ disturbances are not part of the objective.
  bool active_power_only = true;
  /// Effort output weight: a command equal to a bus's capacity costs as
  /// much as `effort_weight` Hz of deviation. Needs channel_capacity_mw.
  double effort_weight = 7e-3;
  Eigen::VectorXd channel_capacity_mw;  // per EV bus
};

/// Everything the runtime controller needs.
struct SynthesisArtifacts {
  ReducedModel reduced;
  HinfSolution hinf;
  ObserverDesign observer;
  VerificationReport verification;
  bool observer_on_closed_loop = false;
};

SynthesisArtifacts design_controller(const StateSpaceModel& full, const DesignOptions& options = {});

std::string synthesis_to_json(const SynthesisArtifacts& art);
SynthesisArtifacts synthesis_from_json(std::string_view text);

}  // namespace gridshield
