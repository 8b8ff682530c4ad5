#pragma once

#include <complex>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

namespace gridshield {

enum class BusKind { Slack, PV, PQ };

struct Bus {
  int id = 0;
  BusKind kind = BusKind::PQ;
  double p_load = 0.0;  // pu, aggregated from the load table
  double q_load = 0.0;  // pu
  std::optional<double> v_setpoint;  // pu, slack/PV only
  double shunt_b = 0.0;              // pu

  bool operator==(const Bus&) const = default;
};

struct Branch {
  int from_bus = 0;
  int to_bus = 0;
  double r = 0.0;
  double x = 0.0;
  double b_charging = 0.0;
  double tap = 1.0;

  bool operator==(const Branch&) const = default;
};

struct ExciterParams {
  double k_a = 0.0;
  double t_a = 0.0;
  double v_ref = 0.0;  // recomputed at initialization

  bool operator==(const ExciterParams&) const = default;
};

struct GovernorParams {
  double r_droop = 0.0;
  double t_g = 0.0;

  bool operator==(const GovernorParams&) const = default;
};

struct TurbineParams {
  double t_ch = 0.0;

  bool operator==(const TurbineParams&) const = default;
};

struct PssParams {
  double k_pss = 0.0;
  double t_w = 0.0;
  double t_1 = 0.0;
  double t_2 = 0.0;
  bool enabled = false;

  bool operator==(const PssParams&) const = default;
};

/// One-axis (flux-decay) machine with its controls. All values on system base.
struct Machine {
  int bus = 0;
  double p_gen = 0.0;  // dispatch, pu (ignored at the slack)
  double h = 0.0;
  double d = 0.0;
  double x_d = 0.0;
  double x_d_prime = 0.0;
  double t_d0_prime = 0.0;
  ExciterParams exciter;
  GovernorParams governor;
  TurbineParams turbine;
  PssParams pss;

  bool operator==(const Machine&) const = default;
};

struct Load {
  int bus = 0;
  double p_load = 0.0;  // pu
  double q_load = 0.0;  // pu

  bool operator==(const Load&) const = default;
};

struct GridCase {
  std::string name;
  double base_mva = 100.0;
  double f_nominal = 60.0;
  std::vector<Bus> buses;
  std::vector<Branch> branches;
  std::vector<Machine> machines;
  std::vector<Load> loads;
  std::vector<int> ev_buses;
  std::vector<int> attack_buses;

  /// Position of a bus id in `buses`; throws UnknownBusRef.
  [[nodiscard]] std::size_t bus_index(int id) const;
  [[nodiscard]] std::optional<std::size_t> find_bus(int id) const;
  [[nodiscard]] std::size_t slack_index() const;
  [[nodiscard]] double total_load_mw() const;
  [[nodiscard]] std::size_t bus_count() const { return buses.size(); }

  bool operator==(const GridCase&) const = default;
};

/// Parses the text case format (see docs/case-format.md) and validates it.
GridCase parse_case(std::string_view text);
GridCase load_case_file(const std::string& path);
/// Writes a document that parse_case reads back into an identical GridCase.
std::string serialize_case(const GridCase& grid);

/// Throws Error with a distinct code for each broken invariant.
void validate_case(const GridCase& grid);

/// Copy with every machine's stabilizer switched on or off.
GridCase with_pss(GridCase grid, bool enabled);

using ComplexMatrix = Eigen::MatrixXcd;
using ComplexVector = Eigen::VectorXcd;

/// Bus admittance matrix, indexed by position in grid.buses.
ComplexMatrix build_ybus(const GridCase& grid);

struct PowerFlowSolution;

struct PowerFlowOptions {
  double tol = 1e-8;
  int max_iter = 25;
  bool flat_start = true;
  /// Starting point when flat_start is false.
  const PowerFlowSolution* warm_start = nullptr;
};

struct PowerFlowSolution {
  Eigen::VectorXd v;
  Eigen::VectorXd theta;
  Eigen::VectorXd p_gen;  // per machine, pu
  Eigen::VectorXd q_gen;  // per machine, pu
  double mismatch = 0.0;
  int iterations = 0;

  [[nodiscard]] ComplexVector voltage() const;
};

PowerFlowSolution solve_powerflow(const GridCase& grid,
                                  const PowerFlowOptions& options = {});

/// Largest |ΔP| / |ΔQ| residual of the polar mismatch equations over the
/// non-slack buses (ΔQ only at PQ buses).
double powerflow_mismatch(const GridCase& grid, const ComplexMatrix& ybus,
                          const Eigen::VectorXd& v,
                          const Eigen::VectorXd& theta);

}  // namespace gridshield
