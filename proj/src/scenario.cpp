#include "gridshield/scenario.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <map>
#include <mutex>
#include <set>
#include <sstream>
#include <thread>

#include "gridshield/grid.hpp"
#include "gridshield/linearize.hpp"
#include "gridshield/textio.hpp"
#include "json_util.hpp"

#ifndef GRIDSHIELD_DEFAULT_DATA_DIR
#define GRIDSHIELD_DEFAULT_DATA_DIR "data"
#endif

namespace gridshield {

namespace fs = std::filesystem;

namespace {

constexpr const char* kScenarioSchema = "gridshield/scenario/1";
constexpr const char* kReportSchema = "gridshield/report/1";

using jsonio::json;

[[noreturn]] void malformed(const std::string& what) { throw Error(ErrorCode::MalformedDocument, what); }

void reject_unknown(const json& j, std::initializer_list<const char*> keys, const std::string& where) {
  if (!j.is_object()) malformed(where + ": expected an object");
  for (auto it = j.begin(); it != j.end(); ++it) {
    const bool known = std::any_of(keys.begin(), keys.end(), [&](const char* k) { return it.key() == k; });
    if (!known) malformed(where + ": unknown field '" + it.key() + "'");
  }
}

template <typename T>
void read(const json& j, const char* key, T& out, const std::string& where) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const json::exception& e) {
    malformed(where + "." + key + ": " + e.what());
  }
}

AttackSpec parse_attack(const json& j) {
  AttackSpec a;
  a.kind = AttackKind::None;
  if (j.is_string()) {
    if (j.get<std::string>() != "none") malformed("attack: expected \"none\" or an object");
    return a;
  }
  reject_unknown(j, {"kind", "total_mw", "buses", "fractions", "t_start", "freq_hz", "duty", "sigma_target",
                     "observer_q", "observer_r", "parameter_noise"},
                 "attack");
  std::string kind = "static";
  read(j, "kind", kind, "attack");
  try {
    a.kind = attack_kind_from_string(kind);
  } catch (const Error& e) {
    malformed(std::string("attack.kind: ") + e.what());
  }
  std::vector<int> buses;
  read(j, "buses", buses, "attack");
  if (j.contains("fractions")) {
    std::vector<double> fr;
    read(j, "fractions", fr, "attack");
    if (fr.size() != buses.size()) malformed("attack.fractions: one fraction per bus required");
    for (std::size_t i = 0; i < buses.size(); ++i) a.targets.push_back({buses[i], fr[i]});
  } else {
    a.targets = AttackSpec::equal_split(buses);
  }
  read(j, "total_mw", a.total_mw, "attack");
  read(j, "t_start", a.t_start, "attack");
  read(j, "freq_hz", a.freq_hz, "attack");
  read(j, "duty", a.duty, "attack");
  read(j, "sigma_target", a.sigma_target, "attack");
  read(j, "observer_q", a.observer_q, "attack");
  read(j, "observer_r", a.observer_r, "attack");
  read(j, "parameter_noise", a.parameter_noise, "attack");
  return a;
}

MitigationSpec parse_mitigation(const json& j) {
  MitigationSpec m;
  if (j.is_string()) {
    const auto s = j.get<std::string>();
    if (s == "off") return m;
    if (s != "on") malformed("mitigation: expected \"off\", \"on\" or an object");
    m.enabled = true;
    return m;
  }
  reject_unknown(j, {"enabled", "capacity_scale", "capacity_reference", "v2g", "delay", "colocation", "sample_period"},
                 "mitigation");
  m.enabled = true;
  read(j, "enabled", m.enabled, "mitigation");
  read(j, "capacity_scale", m.capacity_scale, "mitigation");
  read(j, "v2g", m.v2g, "mitigation");
  read(j, "sample_period", m.sample_period, "mitigation");
  std::string ref = "fleet";
  read(j, "capacity_reference", ref, "mitigation");
  if (ref == "fleet") {
    m.capacity_reference = CapacityReference::Fleet;
  } else if (ref == "attack-load") {
    m.capacity_reference = CapacityReference::AttackLoad;
  } else {
    malformed("mitigation.capacity_reference: expected \"fleet\" or \"attack-load\"");
  }
  std::string coloc = "full";
  read(j, "colocation", coloc, "mitigation");
  if (coloc == "full") {
    m.colocation = true;
  } else if (coloc == "excluded") {
    m.colocation = false;
  } else {
    malformed("mitigation.colocation: expected \"full\" or \"excluded\"");
  }
  if (j.contains("delay")) {
    const auto& d = j.at("delay");
    if (d.is_boolean()) {
      m.delay.enabled = d.get<bool>();
    } else if (d.is_string()) {
      const auto s = d.get<std::string>();
      if (s != "on" && s != "off") malformed("mitigation.delay: expected \"on\" or \"off\"");
      m.delay.enabled = s == "on";
    } else {
      reject_unknown(d, {"enabled", "mean_ms", "sigma_ms", "min_ms", "max_ms"}, "mitigation.delay");
      m.delay.enabled = true;
      read(d, "enabled", m.delay.enabled, "mitigation.delay");
      read(d, "mean_ms", m.delay.mean_ms, "mitigation.delay");
      read(d, "sigma_ms", m.delay.sigma_ms, "mitigation.delay");
      read(d, "min_ms", m.delay.min_ms, "mitigation.delay");
      read(d, "max_ms", m.delay.max_ms, "mitigation.delay");
    }
  }
  return m;
}

DesignSpec parse_design(const json& j) {
  DesignSpec d;
  reject_unknown(j, {"a1", "gain_bound", "q_scale", "r_scale", "effort_weight", "energy", "order", "active_power_only"},
                 "design");
  read(j, "a1", d.a1, "design");
  read(j, "gain_bound", d.gain_bound, "design");
  read(j, "q_scale", d.q_scale, "design");
  read(j, "r_scale", d.r_scale, "design");
  read(j, "effort_weight", d.effort_weight, "design");
  read(j, "energy", d.energy, "design");
  read(j, "active_power_only", d.active_power_only, "design");
  if (j.contains("order") && !j.at("order").is_null()) {
    int order = 0;
    read(j, "order", order, "design");
    d.order = order;
  }
  return d;
}

FleetModel parse_fleet(const json& j) {
  FleetModel f;
  reject_unknown(j, {"vehicles_registered", "ev_penetration", "public_evcs_per_ev", "occupancy", "avg_rate_kw",
                     "kwh_per_mile", "tariff_per_hour"},
                 "fleet");
  read(j, "vehicles_registered", f.vehicles_registered, "fleet");
  read(j, "ev_penetration", f.ev_penetration, "fleet");
  read(j, "public_evcs_per_ev", f.public_evcs_per_ev, "fleet");
  read(j, "occupancy", f.occupancy, "fleet");
  read(j, "avg_rate_kw", f.avg_rate_kw, "fleet");
  read(j, "kwh_per_mile", f.kwh_per_mile, "fleet");
  read(j, "tariff_per_hour", f.tariff_per_hour, "fleet");
  return f;
}

const char* capacity_reference_name(CapacityReference ref) {
  switch (ref) {
    case CapacityReference::Fleet: return "fleet";
    case CapacityReference::AttackLoad: return "attack-load";
  }
  return "fleet";
}

json scenario_json(const Scenario& sc) {
  json j;
  j["schema"] = kScenarioSchema;
  j["name"] = sc.name;
  j["case"] = sc.case_ref;
  j["pss"] = sc.pss_enabled;
  if (sc.attack.kind == AttackKind::None) {
    j["attack"] = "none";
  } else {
    std::vector<int> buses;
    std::vector<double> fractions;
    for (const auto& t : sc.attack.targets) {
      buses.push_back(t.bus);
      fractions.push_back(t.fraction);
    }
    j["attack"] = {{"kind", to_string(sc.attack.kind)}, {"total_mw", sc.attack.total_mw},
                   {"buses", buses},                    {"fractions", fractions},
                   {"t_start", sc.attack.t_start},      {"freq_hz", sc.attack.freq_hz},
                   {"duty", sc.attack.duty},            {"sigma_target", sc.attack.sigma_target},
                   {"observer_q", sc.attack.observer_q}, {"observer_r", sc.attack.observer_r},
                   {"parameter_noise", sc.attack.parameter_noise}};
  }
  const auto& m = sc.mitigation;
  j["mitigation"] = {
      {"enabled", m.enabled},
      {"capacity_scale", m.capacity_scale},
      {"capacity_reference", capacity_reference_name(m.capacity_reference)},
      {"v2g", m.v2g},
      {"delay",
       {{"enabled", m.delay.enabled},
        {"mean_ms", m.delay.mean_ms},
        {"sigma_ms", m.delay.sigma_ms},
        {"min_ms", m.delay.min_ms},
        {"max_ms", m.delay.max_ms}}},
      {"colocation", m.colocation ? "full" : "excluded"},
      {"sample_period", m.sample_period}};
  const auto& d = sc.design;
  j["design"] = {{"a1", d.a1},
                 {"gain_bound", d.gain_bound},
                 {"q_scale", d.q_scale},
                 {"r_scale", d.r_scale},
                 {"effort_weight", d.effort_weight},
                 {"energy", d.energy},
                 {"order", d.order ? json(*d.order) : json(nullptr)},
                 {"active_power_only", d.active_power_only}};
  const auto& f = sc.fleet;
  j["fleet"] = {{"vehicles_registered", f.vehicles_registered}, {"ev_penetration", f.ev_penetration},
                {"public_evcs_per_ev", f.public_evcs_per_ev},   {"occupancy", f.occupancy},
                {"avg_rate_kw", f.avg_rate_kw},                 {"kwh_per_mile", f.kwh_per_mile},
                {"tariff_per_hour", f.tariff_per_hour}};
  j["participating_evs"] = sc.participating_evs;
  j["t_end"] = sc.t_end;
  j["dt"] = sc.dt;
  j["record_stride"] = sc.record_stride;
  j["seed"] = sc.seed;
  j["settling_band"] = sc.settling_band;
  j["baseline"] = sc.baseline;
  j["output"] = sc.output;
  return j;
}

std::string strip_code(const Error& e) {
  const std::string what = e.what();
  const std::string prefix = std::string(to_string(e.code())) + ": ";
  return what.rfind(prefix, 0) == 0 ? what.substr(prefix.size()) : what;
}

class StageLog {
 public:
  explicit StageLog(std::vector<std::string>& lines) : lines_(lines) {}

  template <typename F>
  auto run(const char* stage, F&& fn) -> decltype(fn()) {
    const auto t0 = std::chrono::steady_clock::now();
    try {
      if constexpr (std::is_void_v<decltype(fn())>) {
        fn();
        done(stage, t0);
      } else {
        auto r = fn();
        done(stage, t0);
        return r;
      }
    } catch (const Error& e) {
      lines_.push_back(std::string(stage) + ": failed: " + e.what());
      throw Error(e.code(), std::string(stage) + " stage: " + strip_code(e));
    } catch (const std::exception& e) {
      lines_.push_back(std::string(stage) + ": failed: " + e.what());
      throw Error(ErrorCode::NumericalFailure, std::string(stage) + " stage: " + e.what());
    }
  }

  void note(const std::string& line) { lines_.push_back("  " + line); }

 private:
  void done(const char* stage, std::chrono::steady_clock::time_point t0) {
    const double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::ostringstream os;
    os << stage << ": ok (" << std::fixed << std::setprecision(3) << s << " s)";
    lines_.push_back(os.str());
  }

  std::vector<std::string>& lines_;
};

// Largest |f - f_nominal| over machines, per sample.
Eigen::VectorXd worst_deviation(const Trajectory& traj) {
  return (traj.freq_hz.array() - traj.f_nominal).abs().rowwise().maxCoeff();
}

// First time after which v stays below band; empty when the last sample is
// outside. Linear interpolation on the final crossing.
std::optional<double> settle_time(const std::vector<double>& t, const Eigen::VectorXd& v, double band) {
  const auto n = static_cast<Eigen::Index>(t.size());
  Eigen::Index last = -1;
  for (Eigen::Index r = 0; r < n; ++r) {
    if (!(v(r) < band)) last = r;
  }
  if (last < 0) return t.front();
  if (last == n - 1) return std::nullopt;
  const auto i = static_cast<std::size_t>(last);
  const double v0 = v(last), v1 = v(last + 1);
  const double w = std::isfinite(v0) && v0 > v1 ? (v0 - band) / (v0 - v1) : 1.0;
  return t[i] + std::clamp(w, 0.0, 1.0) * (t[i + 1] - t[i]);
}

bool compatible(const Trajectory& a, const Trajectory& b, std::string& why) {
  if (a.samples() < 2 || b.samples() < 2) {
    why = "trajectories need at least two samples";
    return false;
  }
  if (a.machine_buses != b.machine_buses) {
    why = "machine sets differ";
    return false;
  }
  if (a.f_nominal != b.f_nominal) {
    why = "nominal frequencies differ";
    return false;
  }
  const double ha = a.time[1] - a.time[0], hb = b.time[1] - b.time[0];
  if (std::abs(a.time.front() - b.time.front()) > 1e-9 || std::abs(ha - hb) > 1e-9 * std::max(1.0, ha)) {
    why = "time grids differ";
    return false;
  }
  if (!b.diverged() && b.time.back() + 0.5 * hb < a.time.back()) {
    why = "baseline is shorter than the run";
    return false;
  }
  return true;
}

std::vector<double> column(const Eigen::MatrixXd& m, Eigen::Index c) {
  std::vector<double> out(static_cast<std::size_t>(m.rows()));
  for (Eigen::Index r = 0; r < m.rows(); ++r) out[static_cast<std::size_t>(r)] = m(r, c);
  return out;
}

}  // namespace

// ---------------------------------------------------------------------------
// Scenario documents

void Scenario::validate() const {
  auto bad = [](const std::string& what) { throw Error(ErrorCode::InvariantViolation, "scenario: " + what); };
  if (name.empty()) bad("name is empty");
  for (char ch : name) {
    if (!(std::isalnum(static_cast<unsigned char>(ch)) || ch == '-' || ch == '_' || ch == '.')) {
      bad("name may hold letters, digits, '-', '_' and '.' only");
    }
  }
  if (case_ref.empty()) bad("case reference is empty");
  if (!(t_end > 0.0) || !std::isfinite(t_end)) bad("t_end must be > 0");
  if (!(dt > 0.0) || !(dt < t_end)) bad("dt must lie in (0, t_end)");
  if (record_stride < 1) bad("record_stride must be >= 1");
  if (!(settling_band > 0.0)) bad("settling_band must be > 0");
  if (!(participating_evs >= 0.0)) bad("participating_evs must be >= 0");
  fleet.validate();

  const auto& a = attack;
  if (a.kind != AttackKind::None) {
    if (!(t_end > a.t_start)) bad("t_end must exceed the attack start");
    if (!(a.t_start >= 0.0)) bad("attack.t_start must be >= 0");
    if (!(a.total_mw >= 0.0) || !std::isfinite(a.total_mw)) bad("attack.total_mw must be >= 0");
    if (a.targets.empty()) bad("attack.buses is empty");
    double sum = 0.0;
    std::set<int> seen;
    for (const auto& t : a.targets) {
      if (!seen.insert(t.bus).second) bad("attack bus " + std::to_string(t.bus) + " listed twice");
      if (!(t.fraction >= 0.0)) bad("attack fractions must be >= 0");
      sum += t.fraction;
    }
    if (std::abs(sum - 1.0) > 1e-9) bad("attack fractions must sum to 1");
    if (a.kind == AttackKind::Switching) {
      if (!(a.freq_hz >= 0.0) || !std::isfinite(a.freq_hz)) bad("attack.freq_hz must be >= 0");
      if (!(a.duty > 0.0 && a.duty < 1.0)) bad("attack.duty must lie in (0, 1)");
    }
    if (a.kind == AttackKind::Dynamic) {
      if (!(a.sigma_target > 0.0)) bad("attack.sigma_target must be > 0");
      if (!(a.observer_q > 0.0 && a.observer_r > 0.0)) bad("attack observer weights must be > 0");
      if (!(a.parameter_noise >= 0.0 && a.parameter_noise < 1.0)) bad("attack.parameter_noise must lie in [0, 1)");
    }
  }

  const auto& m = mitigation;
  if (m.enabled) {
    if (!(m.capacity_scale > 0.0) || !std::isfinite(m.capacity_scale)) bad("capacity_scale must be > 0");
    if (!(m.sample_period >= dt)) bad("mitigation.sample_period must be >= dt");
    const auto& d = m.delay;
    if (d.enabled && !(d.min_ms >= 0.0 && d.max_ms >= d.min_ms && d.sigma_ms >= 0.0)) {
      bad("delay bounds are inconsistent");
    }
    if (!m.colocation && a.kind == AttackKind::None) bad("colocation \"excluded\" needs an attack");
    if (m.capacity_reference == CapacityReference::AttackLoad && !(a.kind != AttackKind::None && a.total_mw > 0.0)) {
      bad("capacity_reference \"attack-load\" needs an attack with total_mw > 0");
    }
    const auto& g = design;
    if (!(g.a1 >= 0.0)) bad("design.a1 must be >= 0");
    if (!(g.gain_bound > 0.0)) bad("design.gain_bound must be > 0");
    if (!(g.q_scale > 0.0 && g.r_scale > 0.0)) bad("design observer weights must be > 0");
    if (!(g.effort_weight >= 0.0)) bad("design.effort_weight must be >= 0");
    if (!(g.energy > 0.0 && g.energy <= 1.0)) bad("design.energy must lie in (0, 1]");
    if (g.order && *g.order < 1) bad("design.order must be >= 1");
  }
}

Scenario scenario_from_json(std::string_view text, const fs::path& base_dir) {
  const auto j = jsonio::parse(text);
  jsonio::expect_schema(j, kScenarioSchema);
  reject_unknown(j, {"schema", "name", "case", "pss", "attack", "mitigation", "design", "fleet", "participating_evs",
                     "t_end", "dt", "record_stride", "seed", "settling_band", "baseline", "output"},
                 "scenario");
  Scenario sc;
  sc.base_dir = base_dir;
  sc.name = jsonio::get<std::string>(j, "name");
  sc.case_ref = jsonio::get<std::string>(j, "case");
  read(j, "pss", sc.pss_enabled, "scenario");
  sc.attack = j.contains("attack") ? parse_attack(j.at("attack")) : parse_attack(json("none"));
  if (j.contains("mitigation")) sc.mitigation = parse_mitigation(j.at("mitigation"));
  if (j.contains("design")) sc.design = parse_design(j.at("design"));
  if (j.contains("fleet")) sc.fleet = parse_fleet(j.at("fleet"));
  read(j, "participating_evs", sc.participating_evs, "scenario");
  read(j, "t_end", sc.t_end, "scenario");
  read(j, "dt", sc.dt, "scenario");
  read(j, "record_stride", sc.record_stride, "scenario");
  read(j, "seed", sc.seed, "scenario");
  read(j, "settling_band", sc.settling_band, "scenario");
  read(j, "baseline", sc.baseline, "scenario");
  read(j, "output", sc.output, "scenario");
  sc.attack.seed = sc.seed;
  sc.mitigation.delay.seed = derive_seed(sc.seed, 1);
  sc.validate();
  return sc;
}

Scenario load_scenario(const fs::path& path) {
  const auto text = textio::read_file(path.string());
  try {
    return scenario_from_json(text, path.parent_path());
  } catch (const Error& e) {
    throw Error(e.code(), path.string() + ": " + strip_code(e));
  }
}

std::string scenario_to_json(const Scenario& sc) { return scenario_json(sc).dump(2) + "\n"; }

fs::path resolve_case(const std::string& ref, const fs::path& base_dir) {
  const fs::path p(ref);
  if (p.is_relative() && !base_dir.empty() && fs::is_regular_file(base_dir / p)) return base_dir / p;
  if (fs::is_regular_file(p)) return p;
  if (!p.has_parent_path()) {
    fs::path dir = GRIDSHIELD_DEFAULT_DATA_DIR;
    if (const char* env = std::getenv("GRIDSHIELD_DATA_DIR"); env && *env) dir = env;
    fs::path bundled = dir / p;
    if (!bundled.has_extension()) bundled += ".case";
    if (fs::is_regular_file(bundled)) return bundled;
  }
  throw Error(ErrorCode::IoFailure, "case '" + ref + "' not found");
}

GridCase scenario_grid(const Scenario& sc) {
  GridCase grid = with_pss(load_case_file(resolve_case(sc.case_ref, sc.base_dir).string()), sc.pss_enabled);
  if (sc.mitigation.enabled && !sc.mitigation.colocation) {
    std::erase_if(grid.ev_buses, [&](int bus) {
      return std::any_of(sc.attack.targets.begin(), sc.attack.targets.end(),
                         [&](const AttackTarget& t) { return t.bus == bus; });
    });
    if (grid.ev_buses.empty()) {
      throw Error(ErrorCode::InvariantViolation, "no EV buses remain once the attacked buses are excluded");
    }
  }
  return grid;
}

std::string config_hash(const Scenario& sc) {
  auto j = scenario_json(sc);
  j.erase("output");
  std::string text = j.dump();
  text += '\n';
  text += textio::read_file(resolve_case(sc.case_ref, sc.base_dir).string());
  return textio::fnv1a_hex(text);
}

std::uint64_t derive_seed(std::uint64_t batch_seed, std::size_t index) {
  // splitmix64 finalizer
  std::uint64_t z = batch_seed + 0x9E3779B97F4A7C15ULL * (static_cast<std::uint64_t>(index) + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

// ---------------------------------------------------------------------------
// Metrics

std::string to_string(StabilityFlag flag) {
  switch (flag) {
    case StabilityFlag::Stable: return "stable";
    case StabilityFlag::SustainedOscillation: return "sustained-oscillation";
    case StabilityFlag::Divergent: return "divergent";
  }
  return "unknown";
}

RunReport compute_metrics(const Trajectory& traj, const Trajectory* baseline, double band, double t_event) {
  if (traj.samples() == 0 || traj.freq_hz.cols() == 0) {
    throw Error(ErrorCode::InvariantViolation, "compute_metrics: empty trajectory");
  }
  if (static_cast<Eigen::Index>(traj.time.size()) != traj.freq_hz.rows()) {
    throw Error(ErrorCode::InvariantViolation, "compute_metrics: time and frequency lengths differ");
  }
  if (!(band > 0.0)) throw Error(ErrorCode::InvariantViolation, "compute_metrics: band must be > 0");

  RunReport rep;
  const Eigen::VectorXd dev = worst_deviation(traj);
  const bool finite = dev.allFinite();
  rep.max_freq_deviation_hz = finite ? std::max(dev.maxCoeff(), traj.max_abs_dev_hz)
                                     : std::numeric_limits<double>::infinity();
  const bool divergent = traj.diverged() || !finite;
  if (!divergent) rep.settling_time_s = settle_time(traj.time, dev, band);

  const Eigen::Index n = traj.samples();
  const Eigen::Index tail = std::max<Eigen::Index>(1, n / 20);
  rep.final_offset_hz = (traj.freq_hz.bottomRows(tail).array() - traj.f_nominal).mean();
  if (!divergent) {
    const Eigen::VectorXd env =
        (traj.freq_hz.array() - traj.f_nominal - rep.final_offset_hz).abs().rowwise().maxCoeff();
    rep.envelope_settling_time_s = settle_time(traj.time, env, band);
  }

  const double t0 = std::max(t_event, traj.time.front());
  const double t1 = traj.time.back();
  const double third = (t1 - t0) / 3.0;
  double p2p = 0.0;
  Eigen::VectorXd lo = Eigen::VectorXd::Constant(traj.freq_hz.cols(), std::numeric_limits<double>::infinity());
  Eigen::VectorXd hi = -lo;
  for (Eigen::Index r = 0; r < n; ++r) {
    const double t = traj.time[static_cast<std::size_t>(r)];
    if (t >= t0 && t < t0 + third) rep.first_third_max_hz = std::max(rep.first_third_max_hz, dev(r));
    if (t >= t1 - third) {
      rep.final_third_max_hz = std::max(rep.final_third_max_hz, dev(r));
      lo = lo.cwiseMin(traj.freq_hz.row(r).transpose());
      hi = hi.cwiseMax(traj.freq_hz.row(r).transpose());
    }
  }
  if (hi.allFinite() && lo.allFinite()) p2p = (hi - lo).maxCoeff();
  rep.final_third_peak_to_peak_hz = p2p;

  if (divergent) {
    rep.stability = StabilityFlag::Divergent;
  } else if (0.5 * p2p > band) {
    rep.stability = StabilityFlag::SustainedOscillation;
  } else {
    rep.stability = StabilityFlag::Stable;
  }
  rep.breach_2_5pct = rep.max_freq_deviation_hz >= 0.025 * traj.f_nominal;
  rep.sustained_1hz = !divergent && rep.final_third_max_hz >= 1.0;

  if (baseline) {
    std::string why;
    if (!compatible(traj, *baseline, why)) throw Error(ErrorCode::IncompatibleBaseline, why);
    const Eigen::VectorXd bdev = worst_deviation(*baseline);
    const double bmax = bdev.allFinite() ? std::max(bdev.maxCoeff(), baseline->max_abs_dev_hz)
                                         : std::numeric_limits<double>::infinity();
    if (!(bmax > 0.0)) throw Error(ErrorCode::IncompatibleBaseline, "baseline has no frequency deviation");
    rep.baseline_max_deviation_hz = bmax;
    rep.impact_reduction_pct =
        std::isfinite(bmax) ? (1.0 - rep.max_freq_deviation_hz / bmax) * 100.0 : 100.0;
  }
  return rep;
}

std::string report_to_json(const RunReport& r) {
  auto opt = [](const std::optional<double>& v) { return v ? json(*v) : json(nullptr); };
  json j;
  j["schema"] = kReportSchema;
  j["name"] = r.name;
  j["max_freq_deviation_hz"] = r.max_freq_deviation_hz;
  j["settling_time_s"] = opt(r.settling_time_s);
  j["final_offset_hz"] = r.final_offset_hz;
  j["envelope_settling_time_s"] = opt(r.envelope_settling_time_s);
  j["impact_reduction_pct"] = opt(r.impact_reduction_pct);
  j["baseline_max_deviation_hz"] = r.impact_reduction_pct ? json(r.baseline_max_deviation_hz) : json(nullptr);
  j["stability_flag"] = to_string(r.stability);
  j["thresholds"] = {{"breach_2_5pct", r.breach_2_5pct}, {"sustained_1hz", r.sustained_1hz}};
  j["windows"] = {{"first_third_max_hz", r.first_third_max_hz},
                  {"final_third_max_hz", r.final_third_max_hz},
                  {"final_third_peak_to_peak_hz", r.final_third_peak_to_peak_hz}};
  if (r.target_mode) {
    j["target_mode"] = {{"freq_hz", r.target_mode->freq_hz},
                        {"damping_ratio", r.target_mode->damping_ratio},
                        {"eigenvalue", {r.target_mode->eigenvalue.real(), r.target_mode->eigenvalue.imag()}}};
  }
  j["attack_freq_hz"] = opt(r.attack_freq_hz);
  if (r.verification) {
    json checks = json::array();
    for (const auto& c : r.verification->checks) {
      checks.push_back({{"name", c.name}, {"passed", c.passed}, {"value", c.value}, {"bound", c.bound}});
    }
    j["controller"] = {{"rho", opt(r.rho)},
                       {"reduced_order", r.reduced_order},
                       {"verified", r.verification->all_passed()},
                       {"checks", checks},
                       {"saturated", r.saturated_ever},
                       {"max_delay_ms", r.max_delay_ms},
                       {"mean_delay_ms", r.mean_delay_ms}};
  }
  const auto& e = r.economics;
  j["economics"] = {{"fleet",
                     {{"evs", e.fleet.evs},
                      {"public_evcs", e.fleet.public_evcs},
                      {"connected_evs", e.fleet.connected_evs},
                      {"capacity_mw", e.fleet.capacity_mw}}},
                    {"event_duration_s", e.event_duration_s},
                    {"peak_ev_mw", e.peak_ev_mw},
                    {"net_kwh_per_ev", e.energy.net_kwh_per_ev},
                    {"opportunity_kwh_per_ev", e.energy.opportunity_kwh_per_ev},
                    {"total_kwh_per_ev", e.energy.total_kwh_per_ev},
                    {"range_miles_per_ev", e.energy.range_miles_per_ev},
                    {"participating_evs", e.participating_evs},
                    {"per_ev_cost", e.cost.per_ev_cost},
                    {"total_cost", e.cost.total_cost}};
  j["provenance"] = {{"seed", r.seed}, {"config_hash", r.config_hash}};
  return j.dump(2) + "\n";
}

// ---------------------------------------------------------------------------
// Pipeline

namespace {

struct Prepared {
  GridCase grid;
  std::vector<int> all_ev_buses;
  std::optional<Scenario> baseline;
};

Eigen::VectorXd subset_capacity(const Eigen::VectorXd& full, const std::vector<int>& all, const std::vector<int>& kept) {
  Eigen::VectorXd out(static_cast<Eigen::Index>(kept.size()));
  for (std::size_t k = 0; k < kept.size(); ++k) {
    const auto it = std::find(all.begin(), all.end(), kept[k]);
    out(static_cast<Eigen::Index>(k)) = full(static_cast<Eigen::Index>(it - all.begin()));
  }
  return out;
}

Trajectory simulate_with(const Scenario& sc, const Plant& plant, const InjectionSchedule* attack,
                         Controller* ctl) {
  SimulationOptions so;
  so.dt = sc.dt;
  so.record_stride = sc.record_stride;
  so.record_states = false;
  std::vector<InjectionSchedule> schedules;
  if (attack) schedules.push_back(*attack);
  return simulate(plant, plant.initial_state(), schedules, sc.t_end, so, ctl);
}

RunResult run_pipeline(const Scenario& sc, const RunOptions& options, bool with_baseline) {
  RunResult res;
  StageLog log(res.log);
  res.log.push_back("scenario " + sc.name);

  const Prepared prep = log.run("validate", [&] {
    sc.validate();
    Prepared p;
    const GridCase full = with_pss(load_case_file(resolve_case(sc.case_ref, sc.base_dir).string()), sc.pss_enabled);
    validate_attack(sc.attack, full);
    p.all_ev_buses = full.ev_buses;
    p.grid = scenario_grid(sc);
    if (sc.mitigation.enabled && p.grid.ev_buses.empty()) {
      throw Error(ErrorCode::InvariantViolation, "mitigation needs at least one EV bus");
    }
    if (with_baseline && !sc.baseline.empty() && !options.baseline) {
      fs::path bp(sc.baseline);
      if (bp.is_relative() && !sc.base_dir.empty()) bp = sc.base_dir / bp;
      p.baseline = load_scenario(bp);
    }
    log.note("case " + p.grid.name + ": " + std::to_string(p.grid.buses.size()) + " buses, " +
             std::to_string(p.grid.machines.size()) + " machines, " + std::to_string(p.grid.ev_buses.size()) +
             " EV buses; attack " + to_string(sc.attack.kind) + (sc.mitigation.enabled ? "; mitigation on" : ""));
    return p;
  });
  const GridCase& grid = prep.grid;

  const auto pf = log.run("powerflow", [&] {
    auto s = solve_powerflow(grid);
    log.note("converged in " + std::to_string(s.iterations) + " iterations, mismatch " +
             textio::format_double(s.mismatch));
    return s;
  });
  const Plant plant = log.run("dynamics", [&] { return Plant::create(grid, pf); });
  const StateSpaceModel ss = log.run("linearize", [&] {
    auto m = linearize_model(plant, plant.initial_state());
    log.note(std::to_string(m.states()) + " states, " + std::to_string(m.inputs()) + " inputs, " +
             std::to_string(m.disturbances()) + " disturbances");
    return m;
  });
  res.report.target_mode = log.run("modes", [&] { return identify_target_mode(ss); });

  const FleetCapacity fleet = fleet_capacity(sc.fleet);
  Eigen::VectorXd design_caps;
  if (sc.mitigation.enabled) {
    res.synthesis = log.run("synthesis", [&] {
      const Eigen::VectorXd full_caps = split_capacity(grid, prep.all_ev_buses, fleet.capacity_mw);
      design_caps = subset_capacity(full_caps, prep.all_ev_buses, grid.ev_buses);
      DesignOptions d;
      d.reduction.energy = sc.design.energy;
      d.reduction.order = sc.design.order;
      d.hinf.a1 = sc.design.a1;
      d.hinf.gain_bound = sc.design.gain_bound;
      d.q_scale = sc.design.q_scale;
      d.r_scale = sc.design.r_scale;
      d.active_power_only = sc.design.active_power_only;
      d.effort_weight = sc.design.effort_weight;
      d.channel_capacity_mw = design_caps;
      auto art = design_controller(ss, d);
      std::ostringstream os;
      os << "order " << art.reduced.kept_order << ", rho " << art.hinf.rho << ", verification "
         << (art.verification.all_passed() ? "passed" : "FAILED");
      log.note(os.str());
      return art;
    });
  }

  std::optional<InjectionSchedule> attack;
  if (sc.attack.kind != AttackKind::None) {
    attack = log.run("attack", [&] {
      AttackSpec spec = sc.attack;
      spec.seed = sc.seed;
      if (spec.kind == AttackKind::Switching) {
        res.report.attack_freq_hz = spec.freq_hz > 0.0 ? spec.freq_hz : res.report.target_mode->freq_hz;
      }
      return make_attack(spec, grid, &ss);
    });
  }
  const InjectionSchedule* attack_ptr = attack ? &*attack : nullptr;

  ControllerOptions co;
  co.sample_period = sc.mitigation.sample_period;
  co.v2g = sc.mitigation.v2g;
  co.delay = sc.mitigation.delay;
  co.delay.seed = derive_seed(sc.seed, 1);

  Eigen::VectorXd caps;
  if (sc.mitigation.enabled) {
    caps = sc.mitigation.capacity_scale * design_caps;
    if (sc.mitigation.capacity_reference == CapacityReference::AttackLoad) {
      const Eigen::VectorXd full = split_capacity(grid, prep.all_ev_buses, sc.attack.total_mw);
      caps = sc.mitigation.capacity_scale * subset_capacity(full, prep.all_ev_buses, grid.ev_buses);
    }
  }

  res.trajectory = log.run("simulate", [&] {
    std::unique_ptr<ControllerRuntime> ctl;
    if (sc.mitigation.enabled) ctl = std::make_unique<ControllerRuntime>(*res.synthesis, caps, co);
    auto t = simulate_with(sc, plant, attack_ptr, ctl.get());
    std::ostringstream os;
    os << t.samples() << " samples, max |df| " << t.max_abs_dev_hz << " Hz"
       << (t.diverged() ? ", diverged at t = " + textio::format_double(t.divergence_time) : "");
    log.note(os.str());
    return t;
  });

  std::optional<Trajectory> baseline_traj;
  if (prep.baseline) {
    baseline_traj = log.run("baseline", [&] {
      RunOptions bo;
      bo.write_artifacts = false;
      bo.plots = false;
      return run_pipeline(*prep.baseline, bo, false).trajectory;
    });
  }
  const Trajectory* base = options.baseline ? options.baseline : (baseline_traj ? &*baseline_traj : nullptr);

  log.run("metrics", [&] {
    const double t_event = sc.attack.kind == AttackKind::None ? 0.0 : sc.attack.t_start;
    RunReport rep = compute_metrics(res.trajectory, base, sc.settling_band, t_event);
    rep.name = sc.name;
    rep.target_mode = res.report.target_mode;
    rep.attack_freq_hz = res.report.attack_freq_hz;
    rep.seed = sc.seed;
    rep.config_hash = config_hash(sc);
    const Trajectory& tr = res.trajectory;
    if (res.synthesis) {
      rep.verification = res.synthesis->verification;
      rep.rho = res.synthesis->hinf.rho;
      rep.reduced_order = res.synthesis->reduced.kept_order;
      const auto& labels = tr.telemetry_labels;
      auto col = [&](const char* name) -> Eigen::Index {
        const auto it = std::find(labels.begin(), labels.end(), name);
        return it == labels.end() ? -1 : static_cast<Eigen::Index>(it - labels.begin());
      };
      if (const auto c = col("saturated"); c >= 0 && tr.telemetry.rows() > 0) {
        rep.saturated_ever = tr.telemetry.col(c).maxCoeff() > 0.5;
      }
      if (sc.mitigation.delay.enabled && tr.telemetry.rows() > 0) {
        if (const auto c = col("delay_max_ms"); c >= 0) rep.max_delay_ms = tr.telemetry.col(c).maxCoeff();
        if (const auto c = col("delay_mean_ms"); c >= 0) rep.mean_delay_ms = tr.telemetry.col(c).mean();
      }
    }
    Economics& e = rep.economics;
    e.fleet = fleet;
    e.participating_evs = sc.participating_evs;
    if (sc.attack.kind != AttackKind::None) {
      e.event_duration_s = std::max(0.0, tr.time.back() - sc.attack.t_start);
      e.cost = event_cost(e.event_duration_s, sc.fleet, sc.participating_evs);
    }
    if (tr.defender_p_mw.cols() > 0 && sc.attack.kind != AttackKind::None) {
      std::vector<double> t, p;
      for (Eigen::Index r = 0; r < tr.samples(); ++r) {
        if (tr.time[static_cast<std::size_t>(r)] < sc.attack.t_start) continue;
        t.push_back(tr.time[static_cast<std::size_t>(r)]);
        p.push_back(tr.defender_p_mw.row(r).sum());
      }
      e.energy = energy_impact(t, p, fleet.connected_evs, sc.fleet);
      e.peak_ev_mw = tr.defender_p_mw.rowwise().sum().cwiseAbs().maxCoeff();
    }
    res.report = rep;
  });

  if (options.write_artifacts) {
    fs::path out;
    if (options.output_override) {
      out = *options.output_override;
    } else if (sc.output.empty()) {
      out = fs::path("runs") / sc.name;
    } else {
      out = fs::path(sc.output);
      if (out.is_relative() && !sc.base_dir.empty()) out = sc.base_dir / out;
    }
    res.log.push_back("export: " + out.string());
    log.run("export", [&] { export_artifacts(res, out, options.plots); });
  }
  return res;
}

}  // namespace

RunResult run_scenario(const Scenario& sc, const RunOptions& options) { return run_pipeline(sc, options, true); }

// ---------------------------------------------------------------------------
// Artifacts

std::vector<fs::path> export_artifacts(const RunResult& result, const fs::path& dir, bool plots) {
  std::vector<std::pair<std::string, std::string>> files;
  files.emplace_back("trajectory.csv", trajectory_to_csv(result.trajectory));
  files.emplace_back("report.json", report_to_json(result.report));
  if (result.synthesis) files.emplace_back("synthesis.json", synthesis_to_json(*result.synthesis));
  std::string log;
  for (const auto& line : result.log) log += line + "\n";
  files.emplace_back("run.log", log);
  if (plots) {
    const auto& name = result.report.name;
    files.emplace_back("frequency.svg", plot_frequencies_svg(result.trajectory, name + ": generator frequencies"));
    if (result.trajectory.attack_p_mw.cols() > 0) {
      files.emplace_back("attack_load.svg", plot_attack_svg(result.trajectory, name + ": attack load"));
    }
    if (result.trajectory.defender_p_mw.cols() > 0) {
      files.emplace_back("ev_load.svg", plot_ev_svg(result.trajectory, name + ": EV load"));
    }
  }

  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw Error(ErrorCode::IoFailure, "cannot create '" + dir.string() + "': " + ec.message());

  std::vector<fs::path> staged, written;
  try {
    for (const auto& [name, body] : files) {
      const fs::path tmp = dir / (name + ".part");
      staged.push_back(tmp);
      textio::write_file(tmp.string(), body);
    }
    for (std::size_t i = 0; i < files.size(); ++i) {
      const fs::path final_path = dir / files[i].first;
      fs::rename(staged[i], final_path);
      written.push_back(final_path);
    }
  } catch (const std::exception& e) {
    for (const auto& p : staged) fs::remove(p, ec);
    for (const auto& p : written) fs::remove(p, ec);
    if (const auto* err = dynamic_cast<const Error*>(&e)) throw *err;
    throw Error(ErrorCode::IoFailure, e.what());
  }
  return written;
}

namespace {

struct Series {
  std::string label;
  std::vector<double> values;
};

std::string xml_escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

double nice_step(double span, int target) {
  const double raw = span / std::max(1, target);
  const double mag = std::pow(10.0, std::floor(std::log10(raw)));
  for (double m : {1.0, 2.0, 2.5, 5.0, 10.0}) {
    if (m * mag >= raw) return m * mag;
  }
  return 10.0 * mag;
}

std::string svg_plot(const std::string& title, const std::string& ylabel, const std::vector<double>& time,
                     const std::vector<Series>& series) {
  constexpr double W = 900, H = 480, L = 80, R = 170, T = 40, B = 50;
  const double pw = W - L - R, ph = H - T - B;
  static const char* palette[] = {"#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd",
                                  "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf"};

  double x0 = time.empty() ? 0.0 : time.front(), x1 = time.empty() ? 1.0 : time.back();
  if (!(x1 > x0)) x1 = x0 + 1.0;
  double y0 = std::numeric_limits<double>::infinity(), y1 = -y0;
  for (const auto& s : series) {
    for (double v : s.values) {
      if (!std::isfinite(v)) continue;
      y0 = std::min(y0, v);
      y1 = std::max(y1, v);
    }
  }
  if (!std::isfinite(y0)) y0 = 0.0, y1 = 1.0;
  if (y1 - y0 < 1e-9 * std::max(1.0, std::abs(y0))) {
    const double pad = std::max(1e-3, 1e-3 * std::abs(y0));
    y0 -= pad;
    y1 += pad;
  }
  const double ypad = 0.05 * (y1 - y0);
  y0 -= ypad;
  y1 += ypad;
  auto px = [&](double x) { return L + (x - x0) / (x1 - x0) * pw; };
  auto py = [&](double y) { return T + (y1 - y) / (y1 - y0) * ph; };

  std::ostringstream os;
  os << std::setprecision(6);
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H << "\" viewBox=\"0 0 " << W
     << ' ' << H << "\">\n";
  os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  os << "<text x=\"" << W / 2 << "\" y=\"24\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"16\">"
     << xml_escape(title) << "</text>\n";
  os << "<g font-family=\"sans-serif\" font-size=\"11\" stroke=\"#ccc\" stroke-width=\"0.5\">\n";
  const double xs = nice_step(x1 - x0, 8);
  for (double x = std::ceil(x0 / xs) * xs; x <= x1 + 1e-9; x += xs) {
    os << "<line x1=\"" << px(x) << "\" y1=\"" << T << "\" x2=\"" << px(x) << "\" y2=\"" << T + ph << "\"/>";
    os << "<text x=\"" << px(x) << "\" y=\"" << T + ph + 16 << "\" text-anchor=\"middle\" stroke=\"none\">" << x
       << "</text>\n";
  }
  const double ys = nice_step(y1 - y0, 6);
  for (double y = std::ceil(y0 / ys) * ys; y <= y1 + 1e-12; y += ys) {
    os << "<line x1=\"" << L << "\" y1=\"" << py(y) << "\" x2=\"" << L + pw << "\" y2=\"" << py(y) << "\"/>";
    os << "<text x=\"" << L - 6 << "\" y=\"" << py(y) + 4 << "\" text-anchor=\"end\" stroke=\"none\">" << y
       << "</text>\n";
  }
  os << "</g>\n";
  os << "<rect x=\"" << L << "\" y=\"" << T << "\" width=\"" << pw << "\" height=\"" << ph
     << "\" fill=\"none\" stroke=\"black\"/>\n";
  os << "<text x=\"" << L + pw / 2 << "\" y=\"" << H - 10
     << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\">time (s)</text>\n";
  os << "<text transform=\"translate(18," << T + ph / 2
     << ") rotate(-90)\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\">" << xml_escape(ylabel)
     << "</text>\n";

  const std::size_t n = time.size();
  const std::size_t stride = std::max<std::size_t>(1, n / 2000);
  for (std::size_t k = 0; k < series.size(); ++k) {
    const auto& s = series[k];
    const char* color = palette[k % 10];
    os << "<polyline class=\"trace\" data-label=\"" << xml_escape(s.label) << "\" fill=\"none\" stroke=\"" << color
       << "\" stroke-width=\"1.2\" points=\"";
    for (std::size_t i = 0; i < n && i < s.values.size(); i += stride) {
      if (!std::isfinite(s.values[i])) break;
      os << px(time[i]) << ',' << py(s.values[i]) << ' ';
    }
    os << "\"/>\n";
    const double ly = T + 14 + 16 * static_cast<double>(k);
    os << "<line x1=\"" << L + pw + 12 << "\" y1=\"" << ly - 4 << "\" x2=\"" << L + pw + 32 << "\" y2=\"" << ly - 4
       << "\" stroke=\"" << color << "\" stroke-width=\"2\"/>";
    os << "<text x=\"" << L + pw + 38 << "\" y=\"" << ly
       << "\" font-family=\"sans-serif\" font-size=\"11\">" << xml_escape(s.label) << "</text>\n";
  }
  os << "</svg>\n";
  return os.str();
}

}  // namespace

std::string plot_frequencies_svg(const Trajectory& traj, const std::string& title) {
  std::vector<Series> s;
  for (Eigen::Index c = 0; c < traj.freq_hz.cols(); ++c) {
    s.push_back({"f_gen_" + std::to_string(traj.machine_buses[static_cast<std::size_t>(c)]), column(traj.freq_hz, c)});
  }
  return svg_plot(title, "frequency (Hz)", traj.time, s);
}

std::string plot_attack_svg(const Trajectory& traj, const std::string& title) {
  std::vector<Series> s;
  for (Eigen::Index c = 0; c < traj.attack_p_mw.cols(); ++c) {
    s.push_back({"bus " + std::to_string(traj.attack_buses[static_cast<std::size_t>(c)]), column(traj.attack_p_mw, c)});
  }
  if (traj.attack_p_mw.cols() > 1) {
    const Eigen::VectorXd total = traj.attack_p_mw.rowwise().sum();
    s.push_back({"total", std::vector<double>(total.data(), total.data() + total.size())});
  }
  return svg_plot(title, "attack load (MW)", traj.time, s);
}

std::string plot_ev_svg(const Trajectory& traj, const std::string& title) {
  std::vector<Series> s;
  const Eigen::VectorXd total = traj.defender_p_mw.rowwise().sum();
  s.push_back({"EV total", std::vector<double>(total.data(), total.data() + total.size())});
  // Largest few buses individually; the rest stay in the total.
  std::vector<Eigen::Index> order(static_cast<std::size_t>(traj.defender_p_mw.cols()));
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<Eigen::Index>(i);
  std::sort(order.begin(), order.end(), [&](Eigen::Index a, Eigen::Index b) {
    return traj.defender_p_mw.col(a).cwiseAbs().maxCoeff() > traj.defender_p_mw.col(b).cwiseAbs().maxCoeff();
  });
  for (std::size_t i = 0; i < std::min<std::size_t>(order.size(), 6); ++i) {
    const auto c = order[i];
    s.push_back({"bus " + std::to_string(traj.defender_buses[static_cast<std::size_t>(c)]), column(traj.defender_p_mw, c)});
  }
  return svg_plot(title, "EV load change (MW)", traj.time, s);
}

// ---------------------------------------------------------------------------
// Batch

int exit_code_for(ErrorCode code) {
  switch (code) {
    case ErrorCode::MalformedDocument:
    case ErrorCode::UnknownBusRef:
    case ErrorCode::DuplicateBusId:
    case ErrorCode::NoSlackBus:
    case ErrorCode::InvariantViolation:
    case ErrorCode::IncompatibleBaseline:
      return 1;
    case ErrorCode::IoFailure:
      return 3;
    default:
      return 2;
  }
}

std::vector<BatchEntry> run_batch(const std::vector<Scenario>& scenarios, std::uint64_t batch_seed,
                                  const fs::path& out_dir, unsigned threads, bool plots) {
  std::vector<BatchEntry> entries(scenarios.size());
  std::map<std::string, int> seen;
  for (std::size_t i = 0; i < scenarios.size(); ++i) {
    auto& e = entries[i];
    e.name = scenarios[i].name;
    if (const int k = seen[e.name]++; k > 0) e.name += "-" + std::to_string(k);
    e.seed = derive_seed(batch_seed, i);
    e.output = out_dir / e.name;
  }

  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < scenarios.size(); i = next++) {
      auto& e = entries[i];
      Scenario sc = scenarios[i];
      sc.seed = e.seed;
      RunOptions ro;
      ro.plots = plots;
      ro.output_override = e.output;
      try {
        e.report = run_scenario(sc, ro).report;
      } catch (const Error& err) {
        e.error = err.what();
        e.exit_code = exit_code_for(err.code());
      } catch (const std::exception& err) {
        e.error = err.what();
        e.exit_code = 2;
      }
    }
  };
  const unsigned n = std::max(1u, std::min<unsigned>(threads, static_cast<unsigned>(scenarios.size())));
  std::vector<std::jthread> pool;
  for (unsigned t = 1; t < n; ++t) pool.emplace_back(worker);
  worker();
  return entries;
}

}  // namespace gridshield
