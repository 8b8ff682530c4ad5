#include <algorithm>
#include <cmath>
#include <map>
#include <set>
#include <sstream>

#include "gridshield/error.hpp"
#include "gridshield/grid.hpp"
#include "gridshield/textio.hpp"

namespace gridshield {

namespace {

using textio::format_double;
using textio::parse_double;
using textio::parse_int;

constexpr std::string_view kSchemaTag = "gridcase/1";

std::string line_ctx(std::size_t line_no) {
  return "line " + std::to_string(line_no);
}

[[noreturn]] void malformed(std::size_t line_no, const std::string& what) {
  throw Error(ErrorCode::MalformedDocument, line_ctx(line_no) + ": " + what);
}

BusKind parse_kind(std::string_view tok, std::size_t line_no) {
  if (tok == "slack" || tok == "Slack" || tok == "SLACK") return BusKind::Slack;
  if (tok == "PV" || tok == "pv") return BusKind::PV;
  if (tok == "PQ" || tok == "pq") return BusKind::PQ;
  malformed(line_no, "unknown bus kind '" + std::string(tok) + "'");
}

std::string_view kind_name(BusKind kind) {
  switch (kind) {
    case BusKind::Slack: return "slack";
    case BusKind::PV: return "PV";
    case BusKind::PQ: return "PQ";
  }
  return "PQ";
}

bool parse_flag(std::string_view tok, std::size_t line_no) {
  if (tok == "1" || tok == "true" || tok == "yes") return true;
  if (tok == "0" || tok == "false" || tok == "no") return false;
  malformed(line_no, "expected a flag, got '" + std::string(tok) + "'");
}

/// A table section: a header row naming the columns, then data rows.
struct Table {
  std::vector<std::string> columns;
  struct Row {
    std::size_t line_no;
    std::vector<std::string_view> cells;
  };
  std::vector<Row> rows;

  [[nodiscard]] std::size_t column(std::string_view name,
                                   std::string_view section) const {
    auto it = std::find(columns.begin(), columns.end(), name);
    if (it == columns.end()) {
      throw Error(ErrorCode::MalformedDocument,
                  "section [" + std::string(section) + "] lacks column '" +
                      std::string(name) + "'");
    }
    return static_cast<std::size_t>(it - columns.begin());
  }
};

struct RawDocument {
  std::map<std::string, std::pair<std::string, std::size_t>> top;
  std::map<std::string, std::map<std::string, std::pair<std::string, std::size_t>>>
      kv_sections;
  std::map<std::string, Table> tables;
  std::map<std::string, std::vector<std::pair<std::string_view, std::size_t>>>
      lists;
};

const std::set<std::string> kKvSections = {"base"};
const std::set<std::string> kTableSections = {"buses", "branches", "machines",
                                              "loads"};
const std::set<std::string> kListSections = {"ev_buses", "attack_buses"};

RawDocument tokenize(std::string_view text) {
  RawDocument doc;
  std::string section;
  std::size_t line_no = 0;
  std::set<std::string> seen;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    const auto end = text.find('\n', pos);
    std::string_view line =
        text.substr(pos, end == std::string_view::npos ? text.size() - pos
                                                       : end - pos);
    pos = end == std::string_view::npos ? text.size() + 1 : end + 1;
    ++line_no;

    if (const auto hash = line.find('#'); hash != std::string_view::npos) {
      line = line.substr(0, hash);
    }
    line = textio::trim(line);
    if (line.empty()) continue;

    if (line.front() == '[') {
      if (line.back() != ']') malformed(line_no, "unterminated section header");
      section = std::string(textio::trim(line.substr(1, line.size() - 2)));
      if (!kKvSections.contains(section) && !kTableSections.contains(section) &&
          !kListSections.contains(section)) {
        malformed(line_no, "unknown section [" + section + "]");
      }
      if (!seen.insert(section).second) {
        malformed(line_no, "section [" + section + "] repeated");
      }
      if (kTableSections.contains(section)) doc.tables[section];
      if (kListSections.contains(section)) doc.lists[section];
      continue;
    }

    if (section.empty() || kKvSections.contains(section)) {
      const auto eq = line.find('=');
      if (eq == std::string_view::npos) malformed(line_no, "expected key = value");
      std::string key(textio::trim(line.substr(0, eq)));
      std::string value(textio::trim(line.substr(eq + 1)));
      if (key.empty()) malformed(line_no, "empty key");
      auto& target = section.empty() ? doc.top : doc.kv_sections[section];
      if (!target.emplace(key, std::make_pair(value, line_no)).second) {
        malformed(line_no, "duplicate key '" + key + "'");
      }
    } else if (kTableSections.contains(section)) {
      Table& table = doc.tables[section];
      auto cells = textio::split_ws(line);
      if (table.columns.empty()) {
        for (auto c : cells) table.columns.emplace_back(c);
      } else {
        if (cells.size() != table.columns.size()) {
          malformed(line_no, "expected " + std::to_string(table.columns.size()) +
                                 " cells in [" + section + "], got " +
                                 std::to_string(cells.size()));
        }
        table.rows.push_back({line_no, std::move(cells)});
      }
    } else {
      for (auto tok : textio::split_ws(line)) {
        doc.lists[section].emplace_back(tok, line_no);
      }
    }
  }
  return doc;
}

double kv_number(const RawDocument& doc, const std::string& section,
                 const std::string& key) {
  auto sit = doc.kv_sections.find(section);
  if (sit == doc.kv_sections.end()) {
    throw Error(ErrorCode::MalformedDocument, "missing section [" + section + "]");
  }
  auto it = sit->second.find(key);
  if (it == sit->second.end()) {
    throw Error(ErrorCode::MalformedDocument,
                "missing key '" + key + "' in [" + section + "]");
  }
  return parse_double(it->second.first, line_ctx(it->second.second) + " " + key);
}

const Table& require_table(const RawDocument& doc, const std::string& name) {
  auto it = doc.tables.find(name);
  if (it == doc.tables.end()) {
    throw Error(ErrorCode::MalformedDocument, "missing section [" + name + "]");
  }
  return it->second;
}

}  // namespace

std::optional<std::size_t> GridCase::find_bus(int id) const {
  for (std::size_t i = 0; i < buses.size(); ++i) {
    if (buses[i].id == id) return i;
  }
  return std::nullopt;
}

std::size_t GridCase::bus_index(int id) const {
  if (auto idx = find_bus(id)) return *idx;
  throw Error(ErrorCode::UnknownBusRef, "bus " + std::to_string(id));
}

std::size_t GridCase::slack_index() const {
  for (std::size_t i = 0; i < buses.size(); ++i) {
    if (buses[i].kind == BusKind::Slack) return i;
  }
  throw Error(ErrorCode::NoSlackBus, "case has no slack bus");
}

double GridCase::total_load_mw() const {
  double total = 0.0;
  for (const auto& load : loads) total += load.p_load;
  return total * base_mva;
}

GridCase parse_case(std::string_view text) {
  const RawDocument doc = tokenize(text);
  GridCase grid;

  if (auto it = doc.top.find("schema"); it != doc.top.end()) {
    if (it->second.first != kSchemaTag) {
      malformed(it->second.second, "unsupported schema '" + it->second.first + "'");
    }
  }
  if (auto it = doc.top.find("name"); it != doc.top.end()) {
    grid.name = it->second.first;
  }
  for (const auto& [key, value] : doc.top) {
    if (key != "schema" && key != "name") malformed(value.second, "unknown key '" + key + "'");
  }

  grid.base_mva = kv_number(doc, "base", "base_mva");
  grid.f_nominal = kv_number(doc, "base", "f_nominal");

  {
    const Table& t = require_table(doc, "buses");
    const auto c_id = t.column("id", "buses");
    const auto c_kind = t.column("kind", "buses");
    const auto c_v = t.column("v_setpoint", "buses");
    const auto c_b = t.column("shunt_b", "buses");
    for (const auto& row : t.rows) {
      const auto ctx = line_ctx(row.line_no);
      Bus bus;
      bus.id = parse_int(row.cells[c_id], ctx + " id");
      bus.kind = parse_kind(row.cells[c_kind], row.line_no);
      if (row.cells[c_v] != "-") {
        bus.v_setpoint = parse_double(row.cells[c_v], ctx + " v_setpoint");
      }
      bus.shunt_b = parse_double(row.cells[c_b], ctx + " shunt_b");
      grid.buses.push_back(bus);
    }
  }

  {
    const Table& t = require_table(doc, "branches");
    const auto c_from = t.column("from_bus", "branches");
    const auto c_to = t.column("to_bus", "branches");
    const auto c_r = t.column("r", "branches");
    const auto c_x = t.column("x", "branches");
    const auto c_b = t.column("b_charging", "branches");
    const auto c_tap = t.column("tap", "branches");
    for (const auto& row : t.rows) {
      const auto ctx = line_ctx(row.line_no);
      Branch br;
      br.from_bus = parse_int(row.cells[c_from], ctx + " from_bus");
      br.to_bus = parse_int(row.cells[c_to], ctx + " to_bus");
      br.r = parse_double(row.cells[c_r], ctx + " r");
      br.x = parse_double(row.cells[c_x], ctx + " x");
      br.b_charging = parse_double(row.cells[c_b], ctx + " b_charging");
      br.tap = parse_double(row.cells[c_tap], ctx + " tap");
      grid.branches.push_back(br);
    }
  }

  if (auto it = doc.tables.find("machines"); it != doc.tables.end()) {
    const Table& t = it->second;
    auto col = [&](std::string_view n) { return t.column(n, "machines"); };
    const auto c_bus = col("bus"), c_pg = col("p_gen"), c_h = col("h"),
               c_d = col("d"), c_xd = col("x_d"), c_xdp = col("x_d_prime"),
               c_td0 = col("t_d0_prime"), c_ka = col("k_a"), c_ta = col("t_a"),
               c_vref = col("v_ref"), c_r = col("r_droop"), c_tg = col("t_g"),
               c_tch = col("t_ch"), c_kp = col("k_pss"), c_tw = col("t_w"),
               c_t1 = col("t_1"), c_t2 = col("t_2"), c_en = col("pss_enabled");
    for (const auto& row : t.rows) {
      const auto ctx = line_ctx(row.line_no);
      auto num = [&](std::size_t c, const char* what) {
        return parse_double(row.cells[c], ctx + " " + what);
      };
      Machine m;
      m.bus = parse_int(row.cells[c_bus], ctx + " bus");
      m.p_gen = num(c_pg, "p_gen");
      m.h = num(c_h, "h");
      m.d = num(c_d, "d");
      m.x_d = num(c_xd, "x_d");
      m.x_d_prime = num(c_xdp, "x_d_prime");
      m.t_d0_prime = num(c_td0, "t_d0_prime");
      m.exciter = {num(c_ka, "k_a"), num(c_ta, "t_a"), num(c_vref, "v_ref")};
      m.governor = {num(c_r, "r_droop"), num(c_tg, "t_g")};
      m.turbine = {num(c_tch, "t_ch")};
      m.pss = {num(c_kp, "k_pss"), num(c_tw, "t_w"), num(c_t1, "t_1"),
               num(c_t2, "t_2"), parse_flag(row.cells[c_en], row.line_no)};
      grid.machines.push_back(m);
    }
  }

  if (auto it = doc.tables.find("loads"); it != doc.tables.end()) {
    const Table& t = it->second;
    const auto c_bus = t.column("bus", "loads");
    const auto c_p = t.column("p_load", "loads");
    const auto c_q = t.column("q_load", "loads");
    for (const auto& row : t.rows) {
      const auto ctx = line_ctx(row.line_no);
      grid.loads.push_back({parse_int(row.cells[c_bus], ctx + " bus"),
                            parse_double(row.cells[c_p], ctx + " p_load"),
                            parse_double(row.cells[c_q], ctx + " q_load")});
    }
  }

  for (const auto& [name, target] :
       {std::pair<std::string, std::vector<int>*>{"ev_buses", &grid.ev_buses},
        {"attack_buses", &grid.attack_buses}}) {
    if (auto it = doc.lists.find(name); it != doc.lists.end()) {
      for (const auto& [tok, line_no] : it->second) {
        target->push_back(parse_int(tok, line_ctx(line_no) + " " + name));
      }
    }
  }

  // Bus demand is the sum of the load table entries; ids are checked below.
  for (const auto& load : grid.loads) {
    if (auto idx = grid.find_bus(load.bus)) {
      grid.buses[*idx].p_load += load.p_load;
      grid.buses[*idx].q_load += load.q_load;
    }
  }

  validate_case(grid);
  return grid;
}

GridCase load_case_file(const std::string& path) {
  return parse_case(textio::read_file(path));
}

void validate_case(const GridCase& grid) {
  auto invariant = [](const std::string& what) {
    throw Error(ErrorCode::InvariantViolation, what);
  };
  if (!(grid.base_mva > 0.0)) invariant("base_mva must be > 0");
  if (!(grid.f_nominal > 0.0)) invariant("f_nominal must be > 0");
  if (grid.buses.empty()) invariant("case has no buses");

  std::set<int> ids;
  std::size_t slack_count = 0;
  for (const auto& bus : grid.buses) {
    if (!ids.insert(bus.id).second) {
      throw Error(ErrorCode::DuplicateBusId, "bus " + std::to_string(bus.id));
    }
    if (bus.kind == BusKind::Slack) ++slack_count;
    if (bus.kind == BusKind::PQ && bus.v_setpoint) {
      invariant("PQ bus " + std::to_string(bus.id) + " carries a v_setpoint");
    }
    if (bus.kind != BusKind::PQ && !bus.v_setpoint) {
      invariant("bus " + std::to_string(bus.id) + " needs a v_setpoint");
    }
    if (bus.v_setpoint && !(*bus.v_setpoint > 0.0)) {
      invariant("bus " + std::to_string(bus.id) + " v_setpoint must be > 0");
    }
    if (!std::isfinite(bus.p_load) || !std::isfinite(bus.q_load) ||
        !std::isfinite(bus.shunt_b)) {
      invariant("bus " + std::to_string(bus.id) + " has non-finite data");
    }
  }
  if (slack_count == 0) throw Error(ErrorCode::NoSlackBus, "case has no slack bus");
  if (slack_count > 1) invariant("case has more than one slack bus");

  auto require_bus = [&](int id, const std::string& who) {
    if (!ids.contains(id)) {
      throw Error(ErrorCode::UnknownBusRef,
                  who + " references bus " + std::to_string(id));
    }
  };

  for (std::size_t k = 0; k < grid.branches.size(); ++k) {
    const auto& br = grid.branches[k];
    const std::string who = "branch " + std::to_string(k + 1);
    require_bus(br.from_bus, who);
    require_bus(br.to_bus, who);
    if (br.from_bus == br.to_bus) invariant(who + " is a self loop");
    if (br.r < 0.0 || br.x < 0.0) invariant(who + " has negative impedance");
    if (!(br.x > 0.0 || br.r > 0.0)) invariant(who + " has zero impedance");
    if (!(br.tap > 0.0)) invariant(who + " tap must be > 0");
  }

  std::map<int, int> machines_at;
  for (std::size_t k = 0; k < grid.machines.size(); ++k) {
    const auto& m = grid.machines[k];
    const std::string who = "machine " + std::to_string(k + 1);
    require_bus(m.bus, who);
    ++machines_at[m.bus];
    const auto& bus = grid.buses[grid.bus_index(m.bus)];
    if (bus.kind == BusKind::PQ) invariant(who + " sits on PQ bus " + std::to_string(m.bus));
    if (!(m.h > 0.0)) invariant(who + " h must be > 0");
    if (m.d < 0.0) invariant(who + " d must be >= 0");
    if (!(m.x_d_prime > 0.0) || m.x_d < m.x_d_prime) {
      invariant(who + " needs x_d >= x_d_prime > 0");
    }
    if (!(m.t_d0_prime > 0.0) || !(m.exciter.t_a > 0.0) ||
        !(m.governor.t_g > 0.0) || !(m.turbine.t_ch > 0.0) ||
        !(m.pss.t_w > 0.0) || !(m.pss.t_1 > 0.0) || !(m.pss.t_2 > 0.0)) {
      invariant(who + " time constants must be > 0");
    }
    if (!(m.governor.r_droop > 0.0)) invariant(who + " r_droop must be > 0");
  }
  for (const auto& bus : grid.buses) {
    if (bus.kind != BusKind::PQ && machines_at[bus.id] != 1) {
      invariant("bus " + std::to_string(bus.id) +
                " must host exactly one machine");
    }
  }

  std::set<int> load_buses;
  for (const auto& load : grid.loads) {
    require_bus(load.bus, "load");
    if (!std::isfinite(load.p_load) || !std::isfinite(load.q_load)) {
      invariant("load at bus " + std::to_string(load.bus) + " is not finite");
    }
    load_buses.insert(load.bus);
  }
  for (const auto& [name, list] :
       {std::pair<std::string, const std::vector<int>*>{"ev_buses", &grid.ev_buses},
        {"attack_buses", &grid.attack_buses}}) {
    std::set<int> seen;
    for (int id : *list) {
      require_bus(id, name);
      if (!load_buses.contains(id)) {
        invariant(name + " entry " + std::to_string(id) + " is not a load bus");
      }
      if (!seen.insert(id).second) {
        invariant(name + " lists bus " + std::to_string(id) + " twice");
      }
    }
  }
}

std::string serialize_case(const GridCase& grid) {
  std::ostringstream out;
  auto f = [](double v) { return format_double(v); };
  out << "schema = " << kSchemaTag << '\n';
  if (!grid.name.empty()) out << "name = " << grid.name << '\n';
  out << "\n[base]\nbase_mva = " << f(grid.base_mva)
      << "\nf_nominal = " << f(grid.f_nominal) << "\n\n[buses]\n"
      << "id kind v_setpoint shunt_b\n";
  for (const auto& bus : grid.buses) {
    out << bus.id << ' ' << kind_name(bus.kind) << ' '
        << (bus.v_setpoint ? f(*bus.v_setpoint) : std::string("-")) << ' '
        << f(bus.shunt_b) << '\n';
  }
  out << "\n[branches]\nfrom_bus to_bus r x b_charging tap\n";
  for (const auto& br : grid.branches) {
    out << br.from_bus << ' ' << br.to_bus << ' ' << f(br.r) << ' ' << f(br.x)
        << ' ' << f(br.b_charging) << ' ' << f(br.tap) << '\n';
  }
  out << "\n[machines]\nbus p_gen h d x_d x_d_prime t_d0_prime k_a t_a v_ref "
         "r_droop t_g t_ch k_pss t_w t_1 t_2 pss_enabled\n";
  for (const auto& m : grid.machines) {
    out << m.bus << ' ' << f(m.p_gen) << ' ' << f(m.h) << ' ' << f(m.d) << ' '
        << f(m.x_d) << ' ' << f(m.x_d_prime) << ' ' << f(m.t_d0_prime) << ' '
        << f(m.exciter.k_a) << ' ' << f(m.exciter.t_a) << ' '
        << f(m.exciter.v_ref) << ' ' << f(m.governor.r_droop) << ' '
        << f(m.governor.t_g) << ' ' << f(m.turbine.t_ch) << ' '
        << f(m.pss.k_pss) << ' ' << f(m.pss.t_w) << ' ' << f(m.pss.t_1) << ' '
        << f(m.pss.t_2) << ' ' << (m.pss.enabled ? 1 : 0) << '\n';
  }
  out << "\n[loads]\nbus p_load q_load\n";
  for (const auto& load : grid.loads) {
    out << load.bus << ' ' << f(load.p_load) << ' ' << f(load.q_load) << '\n';
  }
  out << "\n[ev_buses]\n";
  for (int id : grid.ev_buses) out << id << ' ';
  out << "\n\n[attack_buses]\n";
  for (int id : grid.attack_buses) out << id << ' ';
  out << '\n';
  return out.str();
}

GridCase with_pss(GridCase grid, bool enabled) {
  for (auto& m : grid.machines) m.pss.enabled = enabled;
  return grid;
}

}  // namespace gridshield
