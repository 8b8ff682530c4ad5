#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "gridshield/attacks.hpp"
#include "gridshield/dynamics.hpp"
#include "gridshield/error.hpp"
#include "gridshield/mitigation.hpp"
#include "gridshield/synth.hpp"

namespace gridshield {

enum class CapacityReference {
  Fleet,       // fleet_capacity() split over the EV buses by load
  AttackLoad,  // the attack's total MW split over the EV buses by load
};

struct MitigationSpec {
  bool enabled = false;
  double capacity_scale = 1.0;
  CapacityReference capacity_reference = CapacityReference::Fleet;
  bool v2g = true;
  DelayModel delay;  // seed taken from the scenario
  bool colocation = true;  // false: EVs on attacked buses are not used
  double sample_period = 0.01;
};

struct DesignSpec {
  double a1 = 0.5;
  double gain_bound = 300.0;
  double q_scale = 1e6;
  double r_scale = 1.0;
  double effort_weight = 7e-3;
  double energy = 0.99;
  std::optional<int> order;
  bool active_power_only = true;
};

struct Scenario {
  std::string name;
  std::string case_ref;  // path, resolved against base_dir, or a bundled case name
  std::filesystem::path base_dir;
  bool pss_enabled = true;
  AttackSpec attack;
  MitigationSpec mitigation;
  DesignSpec design;
  FleetModel fleet;
  /// EVs billed for an event. The default reproduces a 2,072 CAD total for
  /// a 30 s event at the default tariff.
  double participating_evs = 33'020.0;
  double t_end = 40.0;
  double dt = 2e-3;
  int record_stride = 5;
  std::uint64_t seed = 1;
  double settling_band = 0.05;
  std::string baseline;  // scenario document for the reduction metric
  std::string output;    // output directory, resolved against base_dir

  /// Throws MalformedDocument / InvariantViolation.
  void validate() const;
};

Scenario scenario_from_json(std::string_view text, const std::filesystem::path& base_dir = {});
Scenario load_scenario(const std::filesystem::path& path);
std::string scenario_to_json(const Scenario& sc);

/// Resolves a case reference: existing path (relative to base_dir), or a
/// bundled case name such as "ne39".
std::filesystem::path resolve_case(const std::string& ref, const std::filesystem::path& base_dir);

/// Scenario with `pss` / `colocation` applied to the case.
GridCase scenario_grid(const Scenario& sc);

enum class StabilityFlag { Stable, SustainedOscillation, Divergent };
std::string to_string(StabilityFlag flag);

struct Economics {
  FleetCapacity fleet;
  EnergyImpact energy;
  EventCost cost;
  double participating_evs = 0.0;
  double event_duration_s = 0.0;
  double peak_ev_mw = 0.0;
};

struct RunReport {
  std::string name;
  double max_freq_deviation_hz = 0.0;
  std::optional<double> settling_time_s;  // empty: never settles
  /// Mean deviation over the last 5% of the run, and the time after which
  /// the deviation stays within the band around that offset.
  double final_offset_hz = 0.0;
  std::optional<double> envelope_settling_time_s;
  std::optional<double> impact_reduction_pct;
  double baseline_max_deviation_hz = 0.0;
  StabilityFlag stability = StabilityFlag::Stable;
  bool breach_2_5pct = false;  // |Δf| reached 2.5% of nominal
  bool sustained_1hz = false;  // |Δf| >= 1 Hz in the final third
  double final_third_max_hz = 0.0;
  double first_third_max_hz = 0.0;
  double final_third_peak_to_peak_hz = 0.0;
  std::optional<ModeInfo> target_mode;
  std::optional<double> attack_freq_hz;
  std::optional<VerificationReport> verification;
  std::optional<double> rho;
  int reduced_order = 0;
  bool saturated_ever = false;
  double max_delay_ms = 0.0;
  double mean_delay_ms = 0.0;
  Economics economics;
  std::uint64_t seed = 0;
  std::string config_hash;
};

std::string report_to_json(const RunReport& report);

/// Metrics over a trajectory. `t_event` marks attack onset for the window
/// metrics; the baseline, when given, must cover the same time grid.
RunReport compute_metrics(const Trajectory& traj, const Trajectory* baseline, double band = 0.05,
                          double t_event = 0.0);

struct RunResult {
  RunReport report;
  Trajectory trajectory;
  std::optional<SynthesisArtifacts> synthesis;
  std::vector<std::string> log;  // one line per pipeline stage
};

struct RunOptions {
  bool plots = true;
  bool write_artifacts = true;
  std::optional<std::filesystem::path> output_override;
  /// Precomputed baseline trajectory; otherwise the scenario's baseline
  /// document is run.
  const Trajectory* baseline = nullptr;
};

/// power flow -> dynamics -> linearize -> reduce -> synthesize -> simulate
/// -> metrics -> artifacts. Stage errors carry the stage name.
RunResult run_scenario(const Scenario& sc, const RunOptions& options = {});

/// Files written by run_scenario: trajectory.csv, report.json, run.log,
/// synthesis.json (mitigated runs) and the SVG plots.
std::vector<std::filesystem::path> export_artifacts(const RunResult& result, const std::filesystem::path& dir,
                                                    bool plots);

/// Frequency traces, attack load and EV load as SVG documents.
std::string plot_frequencies_svg(const Trajectory& traj, const std::string& title);
std::string plot_attack_svg(const Trajectory& traj, const std::string& title);
std::string plot_ev_svg(const Trajectory& traj, const std::string& title);

/// Seed for the i-th scenario of a batch.
std::uint64_t derive_seed(std::uint64_t batch_seed, std::size_t index);

std::string config_hash(const Scenario& sc);

struct BatchEntry {
  std::string name;
  std::uint64_t seed = 0;
  std::filesystem::path output;
  std::optional<RunReport> report;
  std::string error;
  int exit_code = 0;
};

/// Runs every scenario into out_dir/<name> with seeds derived from
/// batch_seed. Failures are recorded per entry and do not stop the batch.
std::vector<BatchEntry> run_batch(const std::vector<Scenario>& scenarios, std::uint64_t batch_seed,
                                  const std::filesystem::path& out_dir, unsigned threads, bool plots);

/// Process exit code for an error: 1 validation, 2 numerical, 3 I/O.
int exit_code_for(ErrorCode code);

}  // namespace gridshield
