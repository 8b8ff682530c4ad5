#pragma once

#include <functional>
#include <memory>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include <Eigen/Dense>

#include "gridshield/grid.hpp"

namespace gridshield {

/// Differential states carried by each machine, in vector order.
enum MachineStateIndex : int {
  kDelta = 0,
  kOmega,
  kEqPrime,
  kEfd,
  kPm,
  kPgv,
  kPss1,
  kPss2,
  kStatesPerMachine
};

struct MachineDynamicState {
  double delta = 0.0;      // rad
  double omega = 1.0;      // pu
  double e_q_prime = 0.0;  // pu
  double e_fd = 0.0;       // pu
  double p_m = 0.0;        // pu
  double p_gv = 0.0;       // pu
  double pss_1 = 0.0;      // washout state
  double pss_2 = 0.0;      // lead-lag state
};

struct DynamicState {
  std::vector<MachineDynamicState> machines;
  double time = 0.0;

  [[nodiscard]] Eigen::VectorXd to_vector() const;
  static DynamicState from_vector(const Eigen::VectorXd& x, double time = 0.0);
};

/// Setpoints fixed at initialization: governor load reference and exciter
/// voltage reference per machine.
struct ControlSetpoints {
  Eigen::VectorXd p_ref;
  Eigen::VectorXd v_ref;
};

struct InitOptions {
  /// Reject (rather than flag) a power flow whose network re-solve disagrees
  /// with the supplied voltages by more than `voltage_tol`.
  bool strict = true;
  double voltage_tol = 1e-6;
};

struct InitReport {
  double derivative_norm = 0.0;   // max |dx/dt| at the constructed state
  double voltage_mismatch = 0.0;  // max |V_network - V_powerflow|
  bool warning = false;
};

/// Complex power drawn at each bus in addition to the base load (pu). A
/// positive real part is extra consumption.
using BusInjection = ComplexVector;

/// The nonlinear multi-machine plant: machine dynamics coupled through the
/// network algebraic equations. Reactive loads are admittances fixed at the
/// power-flow voltage; active demand and scheduled injections are
/// constant-power terms.
class Plant {
 public:
  static Plant create(const GridCase& grid, const PowerFlowSolution& pf,
                      const InitOptions& options = {});

  [[nodiscard]] const GridCase& grid() const { return grid_; }
  [[nodiscard]] const DynamicState& initial_state() const { return initial_; }
  [[nodiscard]] const ControlSetpoints& setpoints() const { return setpoints_; }
  [[nodiscard]] const InitReport& init_report() const { return report_; }
  [[nodiscard]] Eigen::Index state_count() const {
    return static_cast<Eigen::Index>(grid_.machines.size()) * kStatesPerMachine;
  }
  [[nodiscard]] Eigen::Index bus_count() const {
    return static_cast<Eigen::Index>(grid_.buses.size());
  }
  [[nodiscard]] double omega_base() const;
  [[nodiscard]] BusInjection zero_injection() const {
    return BusInjection::Zero(bus_count());
  }

  /// Bus voltages for the given machine states and injections. `guess` seeds
  /// the fixed-point iteration on the constant-power terms.
  ComplexVector solve_network(const Eigen::VectorXd& x,
                              const BusInjection& injection,
                              const ComplexVector* guess = nullptr) const;

  /// State derivatives with the network solved at x. Optionally returns the
  /// bus voltages used.
  Eigen::VectorXd derivatives(const Eigen::VectorXd& x,
                              const BusInjection& injection,
                              ComplexVector* voltages = nullptr,
                              const ComplexVector* guess = nullptr) const;

  /// Electrical power output of every machine at x (pu).
  Eigen::VectorXd electrical_power(const Eigen::VectorXd& x,
                                   const BusInjection& injection) const;

  /// Machine frequencies in Hz, f = f_nominal * omega.
  Eigen::VectorXd frequencies(const Eigen::VectorXd& x) const;

 private:
  Plant() = default;
  Eigen::VectorXd derivatives_at(const Eigen::VectorXd& x,
                                 const ComplexVector& v) const;
  ComplexVector norton_currents(const Eigen::VectorXd& x) const;

  GridCase grid_;
  ControlSetpoints setpoints_;
  DynamicState initial_;
  InitReport report_;
  std::vector<Eigen::Index> gen_bus_;  // bus position per machine
  Eigen::VectorXd load_p_;             // constant-power active demand per bus
  ComplexMatrix z_bus_;                // inverse of the augmented admittance
};

/// Consistent equilibrium initialization at a converged power flow.
DynamicState init_dynamics(const GridCase& grid, const PowerFlowSolution& pf,
                           const InitOptions& options = {});

// ---------------------------------------------------------------------------
// Injection schedules

struct StepFunction {
  double t_start = 0.0;
  double amplitude = 0.0;
};

struct SquareWave {
  double t_start = 0.0;
  double amplitude = 0.0;
  double freq_hz = 1.0;
  double duty = 0.5;
};

/// Piecewise-linear samples on a uniform grid, held at the ends.
struct SampledFunction {
  double t0 = 0.0;
  double dt = 1.0;
  std::vector<double> values;
};

struct ZeroFunction {};

using TimeFunction =
    std::variant<ZeroFunction, StepFunction, SquareWave, SampledFunction>;

double evaluate(const TimeFunction& fn, double t);

/// Per-run state of a measurement-driven injection law. Receives frequency
/// deviations (Hz) once per integration step and writes one ΔP (MW) per
/// channel bus, held until the next call.
class FeedbackRuntime {
 public:
  virtual ~FeedbackRuntime() = default;
  virtual void step(double t, std::span<const double> freq_dev_hz,
                    std::span<double> p_mw) = 0;
};

class FeedbackLaw {
 public:
  virtual ~FeedbackLaw() = default;
  [[nodiscard]] virtual std::unique_ptr<FeedbackRuntime> instantiate(
      double dt) const = 0;
};

enum class ScheduleKind { Static, Switching, Dynamic, Defender, Composite };

struct BusChannel {
  int bus = 0;
  TimeFunction p_mw;
  TimeFunction q_mvar;
};

struct InjectionSchedule {
  ScheduleKind kind = ScheduleKind::Static;
  std::vector<BusChannel> channels;
  /// Dynamic kind: one ΔP output per entry of `channels` (their time
  /// functions are ignored).
  std::shared_ptr<const FeedbackLaw> law;
  std::vector<InjectionSchedule> parts;  // Composite kind

  [[nodiscard]] bool is_defender() const { return kind == ScheduleKind::Defender; }
};

/// Checks bus references, finiteness and waveform parameters.
void validate_schedule(const GridCase& grid, const InjectionSchedule& schedule);

// ---------------------------------------------------------------------------
// Simulation

struct BusPower {
  int bus = 0;
  double p_mw = 0.0;
  double q_mvar = 0.0;
};

/// Defender hook. Sees machine frequencies only; returns the per-bus EV
/// injections to hold until the next call.
class Controller {
 public:
  virtual ~Controller() = default;
  virtual void command(double t, std::span<const double> freq_hz,
                       std::vector<BusPower>& out) = 0;
  [[nodiscard]] virtual std::vector<std::string> telemetry_labels() const {
    return {};
  }
  virtual void telemetry(std::vector<double>& /*out*/) const {}
};

enum class DivergenceKind { None, StateBlowup, StepDivergence };

struct SimulationOptions {
  double dt = 2e-3;
  /// Record every n-th step.
  int record_stride = 1;
  double max_freq_dev_hz = 15.0;
  double newton_tol = 1e-10;
  int newton_max_iter = 12;
  bool record_states = true;
  bool record_voltages = true;
};

struct Trajectory {
  std::vector<double> time;
  std::vector<int> machine_buses;
  Eigen::MatrixXd freq_hz;   // samples x machines
  Eigen::MatrixXd states;    // samples x (8 * machines), optional
  std::vector<int> attack_buses;
  Eigen::MatrixXd attack_p_mw;
  Eigen::MatrixXd attack_q_mvar;
  std::vector<int> defender_buses;
  Eigen::MatrixXd defender_p_mw;
  Eigen::MatrixXd defender_q_mvar;
  std::vector<int> voltage_buses;
  Eigen::MatrixXd v_mag;
  std::vector<std::string> telemetry_labels;
  Eigen::MatrixXd telemetry;
  double f_nominal = 60.0;

  DivergenceKind divergence = DivergenceKind::None;
  double divergence_time = 0.0;
  /// Largest |f - f_nominal| over every integration step, not just records.
  double max_abs_dev_hz = 0.0;

  [[nodiscard]] Eigen::Index samples() const {
    return static_cast<Eigen::Index>(time.size());
  }
  [[nodiscard]] bool diverged() const { return divergence != DivergenceKind::None; }
};

Trajectory simulate(const Plant& plant, const DynamicState& state0,
                    const std::vector<InjectionSchedule>& schedules,
                    double t_end, const SimulationOptions& options = {},
                    Controller* controller = nullptr);

/// CSV with columns t, f_gen_<bus>, attack/ev injections, v_<bus>, telemetry.
std::string trajectory_to_csv(const Trajectory& traj);
Trajectory trajectory_from_csv(std::string_view csv);

}  // namespace gridshield
