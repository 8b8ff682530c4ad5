#include <map>
#include <sstream>

#include "gridshield/dynamics.hpp"
#include "gridshield/error.hpp"
#include "gridshield/textio.hpp"

namespace gridshield {

namespace {

struct ColumnGroup {
  std::string prefix;
  const std::vector<int>* ids;
  const Eigen::MatrixXd* data;
};

}  // namespace

std::string trajectory_to_csv(const Trajectory& traj) {
  std::ostringstream out;
  const std::vector<ColumnGroup> groups = {
      {"f_gen_", &traj.machine_buses, &traj.freq_hz},
      {"attack_p_", &traj.attack_buses, &traj.attack_p_mw},
      {"attack_q_", &traj.attack_buses, &traj.attack_q_mvar},
      {"ev_p_", &traj.defender_buses, &traj.defender_p_mw},
      {"ev_q_", &traj.defender_buses, &traj.defender_q_mvar},
      {"v_", &traj.voltage_buses, &traj.v_mag},
  };
  out << 't';
  for (const auto& g : groups) {
    for (int id : *g.ids) out << ',' << g.prefix << id;
  }
  for (const auto& label : traj.telemetry_labels) out << ",tel_" << label;
  out << '\n';
  for (Eigen::Index r = 0; r < traj.samples(); ++r) {
    out << textio::format_double(traj.time[static_cast<std::size_t>(r)]);
    for (const auto& g : groups) {
      for (Eigen::Index c = 0; c < static_cast<Eigen::Index>(g.ids->size()); ++c) {
        out << ',' << textio::format_double((*g.data)(r, c));
      }
    }
    for (Eigen::Index c = 0; c < static_cast<Eigen::Index>(traj.telemetry_labels.size()); ++c) {
      out << ',' << textio::format_double(traj.telemetry(r, c));
    }
    out << '\n';
  }
  return out.str();
}

Trajectory trajectory_from_csv(std::string_view csv) {
  std::vector<std::string_view> lines;
  std::size_t pos = 0;
  while (pos < csv.size()) {
    auto end = csv.find('\n', pos);
    if (end == std::string_view::npos) end = csv.size();
    auto line = textio::trim(csv.substr(pos, end - pos));
    if (!line.empty()) lines.push_back(line);
    pos = end + 1;
  }
  if (lines.empty()) throw Error(ErrorCode::MalformedDocument, "empty trajectory CSV");

  auto split = [](std::string_view line) {
    std::vector<std::string_view> cells;
    std::size_t p = 0;
    while (true) {
      auto c = line.find(',', p);
      cells.push_back(line.substr(p, c == std::string_view::npos ? line.size() - p : c - p));
      if (c == std::string_view::npos) break;
      p = c + 1;
    }
    return cells;
  };

  const auto header = split(lines[0]);
  if (header.empty() || header[0] != "t") {
    throw Error(ErrorCode::MalformedDocument, "trajectory CSV must start with column t");
  }
  Trajectory traj;
  enum class Slot { F, AP, AQ, EP, EQ, V, Tel };
  std::vector<std::pair<Slot, std::size_t>> map;
  std::map<int, std::size_t> ap_idx, ev_idx;
  for (std::size_t c = 1; c < header.size(); ++c) {
    const auto h = header[c];
    auto id_of = [&](std::size_t prefix) {
      return textio::parse_int(h.substr(prefix), "CSV header");
    };
    if (h.starts_with("f_gen_")) {
      traj.machine_buses.push_back(id_of(6));
      map.emplace_back(Slot::F, traj.machine_buses.size() - 1);
    } else if (h.starts_with("attack_p_")) {
      traj.attack_buses.push_back(id_of(9));
      map.emplace_back(Slot::AP, traj.attack_buses.size() - 1);
    } else if (h.starts_with("attack_q_")) {
      const int id = id_of(9);
      const auto it = std::find(traj.attack_buses.begin(), traj.attack_buses.end(), id);
      map.emplace_back(Slot::AQ, static_cast<std::size_t>(it - traj.attack_buses.begin()));
    } else if (h.starts_with("ev_p_")) {
      traj.defender_buses.push_back(id_of(5));
      map.emplace_back(Slot::EP, traj.defender_buses.size() - 1);
    } else if (h.starts_with("ev_q_")) {
      const int id = id_of(5);
      const auto it = std::find(traj.defender_buses.begin(), traj.defender_buses.end(), id);
      map.emplace_back(Slot::EQ, static_cast<std::size_t>(it - traj.defender_buses.begin()));
    } else if (h.starts_with("v_")) {
      traj.voltage_buses.push_back(id_of(2));
      map.emplace_back(Slot::V, traj.voltage_buses.size() - 1);
    } else if (h.starts_with("tel_")) {
      traj.telemetry_labels.emplace_back(h.substr(4));
      map.emplace_back(Slot::Tel, traj.telemetry_labels.size() - 1);
    } else {
      throw Error(ErrorCode::MalformedDocument,
                  "unknown trajectory column '" + std::string(h) + "'");
    }
  }
  const auto rows = static_cast<Eigen::Index>(lines.size() - 1);
  auto sized = [rows](std::size_t cols) {
    return Eigen::MatrixXd(rows, static_cast<Eigen::Index>(cols));
  };
  traj.freq_hz = sized(traj.machine_buses.size());
  traj.attack_p_mw = sized(traj.attack_buses.size());
  traj.attack_q_mvar = sized(traj.attack_buses.size());
  traj.defender_p_mw = sized(traj.defender_buses.size());
  traj.defender_q_mvar = sized(traj.defender_buses.size());
  traj.v_mag = sized(traj.voltage_buses.size());
  traj.telemetry = sized(traj.telemetry_labels.size());

  for (Eigen::Index r = 0; r < rows; ++r) {
    const auto cells = split(lines[static_cast<std::size_t>(r + 1)]);
    if (cells.size() != header.size()) {
      throw Error(ErrorCode::MalformedDocument,
                  "CSV row " + std::to_string(r + 1) + " has wrong cell count");
    }
    traj.time.push_back(textio::parse_double(cells[0], "CSV t"));
    for (std::size_t c = 1; c < cells.size(); ++c) {
      const double v = textio::parse_double(cells[c], "CSV value");
      const auto [slot, k] = map[c - 1];
      const auto kc = static_cast<Eigen::Index>(k);
      switch (slot) {
        case Slot::F: traj.freq_hz(r, kc) = v; break;
        case Slot::AP: traj.attack_p_mw(r, kc) = v; break;
        case Slot::AQ: traj.attack_q_mvar(r, kc) = v; break;
        case Slot::EP: traj.defender_p_mw(r, kc) = v; break;
        case Slot::EQ: traj.defender_q_mvar(r, kc) = v; break;
        case Slot::V: traj.v_mag(r, kc) = v; break;
        case Slot::Tel: traj.telemetry(r, kc) = v; break;
      }
    }
  }
  return traj;
}

}  // namespace gridshield
