#pragma once

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "gridshield/dynamics.hpp"
#include "gridshield/synth.hpp"

namespace gridshield {

struct FleetModel {
  double vehicles_registered = 5'155'681.0;
  double ev_penetration = 0.5;
  double public_evcs_per_ev = 0.1;
  double occupancy = 0.31;
  double avg_rate_kw = 24.0;
  /// Level 2 charging: 11 kW adds 0.9 miles per minute.
  double kwh_per_mile = 11.0 / 60.0 / 0.9;
  double tariff_per_hour = 7.53;

  void validate() const;
};

struct FleetCapacity {
  double evs = 0.0;
  double public_evcs = 0.0;
  double connected_evs = 0.0;
  double capacity_mw = 0.0;
};

/// Vehicle and charger counts are whole numbers rounded up.
FleetCapacity fleet_capacity(const FleetModel& fm);

struct EnergyImpact {
  double net_kwh_per_ev = 0.0;          // energy withheld from each EV (> 0 is a loss)
  double opportunity_kwh_per_ev = 0.0;  // charging forgone over the event
  double total_kwh_per_ev = 0.0;
  double range_miles_per_ev = 0.0;
};

/// `fleet_mw` is the total EV power change (MW, positive = more charging)
/// sampled at `time`; the event spans the samples given.
EnergyImpact energy_impact(const std::vector<double>& time, const std::vector<double>& fleet_mw,
                           double connected_evs, const FleetModel& fm);

struct EventCost {
  double per_ev_cost = 0.0;
  double total_cost = 0.0;
};

EventCost event_cost(double duration_s, const FleetModel& fm, double participating_evs);

struct DelayModel {
  bool enabled = false;
  double mean_ms = 5.0;
  double sigma_ms = 2.5;
  double min_ms = 0.0;
  double max_ms = 10.0;
  std::uint64_t seed = 1;
};

struct ControllerOptions {
  double sample_period = 0.01;  // s
  bool v2g = true;
  DelayModel delay;
};

/// Per-bus EV capacity in MW, split in proportion to the bus loads.
Eigen::VectorXd split_capacity(const GridCase& grid, const std::vector<int>& ev_buses, double capacity_mw);

/// Steady-state gain of the sampled-measurement estimator
/// x+ = phi x + gamma u, corrected by x <- x + l (y - c x), for the
/// continuous weights q, r held over `period`. Error dynamics (I - l c) phi.
Eigen::MatrixXd sampled_observer_gain(const Eigen::MatrixXd& phi, const Eigen::MatrixXd& c, const Eigen::MatrixXd& q,
                                      const Eigen::MatrixXd& r, double period);

/// Sampled estimator + state feedback driving EV charging at the input
/// buses of the synthesis model. Commands are consumption changes (MW).
class ControllerRuntime final : public Controller {
 public:
  ControllerRuntime(const SynthesisArtifacts& art, Eigen::VectorXd capacity_mw, const ControllerOptions& options);

  void command(double t, std::span<const double> freq_hz, std::vector<BusPower>& out) override;
  [[nodiscard]] std::vector<std::string> telemetry_labels() const override;
  void telemetry(std::vector<double>& out) const override;

  /// One controller sample with already-delayed deviations y (Hz). Returns
  /// the clamped command per input channel (pu).
  Eigen::VectorXd sample(const Eigen::VectorXd& y);

  [[nodiscard]] const Eigen::VectorXd& estimate() const { return x_hat_; }
  [[nodiscard]] const std::vector<double>& applied_delays_ms() const { return delays_; }
  [[nodiscard]] const std::vector<int>& buses() const { return buses_; }
  [[nodiscard]] const Eigen::VectorXd& capacity_mw() const { return cap_mw_; }
  [[nodiscard]] bool saturated() const { return saturated_; }

 private:
  double f_nominal_ = 60.0;
  double base_mva_ = 100.0;
  ControllerOptions opt_;
  Eigen::MatrixXd k_;      // inputs x states
  Eigen::MatrixXd phi_;    // reduced-model transition over one sample
  Eigen::MatrixXd gamma_;  // reduced-model input map over one sample
  Eigen::MatrixXd c_;
  Eigen::MatrixXd l_;      // sampled correction gain
  std::vector<int> buses_;
  Eigen::VectorXd cap_mw_;
  Eigen::VectorXd x_hat_;
  Eigen::VectorXd u_;      // held command (pu), 2 per bus
  double next_sample_ = 0.0;
  bool first_ = true;
  bool first_sample_ = true;
  bool saturated_ = false;
  std::mt19937_64 rng_;
  std::normal_distribution<double> normal_;
  std::vector<double> delays_;  // last sample, per output
  // measurement history for delayed reads
  std::vector<double> hist_t_;
  std::vector<Eigen::VectorXd> hist_y_;
};

}  // namespace gridshield
