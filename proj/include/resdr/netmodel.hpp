#pragma once

// Feeder topology, electrical data, device placement and scenario file I/O.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <limits>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "resdr/appliance.hpp"
#include "resdr/core.hpp"

namespace resdr {

enum class UnitSystem { SI, PerUnit };

/// Per-phase constant-power demand that is never scheduled.
struct CriticalLoad {
  std::array<Series, 3> p;  // kW (pu after conversion)
  std::array<Series, 3> q;
};

struct Bus {
  int id = 0;
  PhaseMask phases{true, true, true};
  std::vector<std::pair<int, Phase>> households;  // (household id, phase)
  std::optional<int> dg;
  CriticalLoad critical;
  double v_min = 0.0;  // kV (pu after conversion)
  double v_max = std::numeric_limits<double>::infinity();
};

struct FlowLimits {
  Vec3 p_min = Vec3::Constant(-std::numeric_limits<double>::infinity());
  Vec3 p_max = Vec3::Constant(std::numeric_limits<double>::infinity());
  Vec3 q_min = Vec3::Constant(-std::numeric_limits<double>::infinity());
  Vec3 q_max = Vec3::Constant(std::numeric_limits<double>::infinity());
};

struct Line {
  int from = 0;
  int to = 0;
  Mat3 r = Mat3::Zero();  // ohm (pu after conversion)
  Mat3 x = Mat3::Zero();
  std::optional<FlowLimits> limits;
};

/// Quadratic generation cost per slot: a p^2 + b p + c with p in kW.
struct CostProfile {
  Series a, b, c;
  double eval(int t, double p_kw) const { return a[t] * p_kw * p_kw + b[t] * p_kw + c[t]; }
};

struct DgUnit {
  int id = 0;
  int bus = 0;
  Phase phase = Phase::A;
  Series p_max;  // kW (pu after conversion)
  double q_min = 0.0;
  double q_max = 0.0;
  std::optional<std::string> cost;
};

struct Network {
  std::vector<Bus> buses;
  std::vector<Line> lines;
  std::vector<DgUnit> dg;
  std::map<std::string, CostProfile> costs;  // "pcc" plus named DG cost curves
  UnitSystem units = UnitSystem::SI;
  double base_kv = 4.16;
  double base_kva = 1000.0;
  double v_ref = 4.16;  // kV (pu after conversion)
  int horizon = 24;
  double dt = 1.0;  // hours

  int bus_index(int id) const {
    for (std::size_t i = 0; i < buses.size(); ++i)
      if (buses[i].id == id) return static_cast<int>(i);
    return -1;
  }
  /// Power scale from this network's units to kW.
  double kw_per_unit() const { return units == UnitSystem::PerUnit ? base_kva : 1.0; }
  double kv_per_unit() const { return units == UnitSystem::PerUnit ? base_kv : 1.0; }
};

struct DlcEvent {
  std::vector<int> window;  // 0-based slots
  double s_cap = std::numeric_limits<double>::infinity();  // MVA

  bool active(int t) const { return std::find(window.begin(), window.end(), t) != window.end(); }
};

struct Scenario {
  Network network;
  std::vector<Household> households;
  DlcEvent event;
  Series t_out;  // degF
  std::uint64_t rng_seed = 0;
};

// ---------------------------------------------------------------------------
// Topology

/// Parent-before-child traversal of the feeder rooted at bus id 0.
struct Topology {
  std::vector<int> order;             // bus indices
  std::vector<int> parent_line;       // per bus index, -1 for the root
  std::vector<std::vector<int>> children_lines;  // per bus index
};

inline Topology build_topology(const Network& net) {
  const int n = static_cast<int>(net.buses.size());
  Topology topo;
  topo.parent_line.assign(n, -1);
  topo.children_lines.assign(n, {});
  const int root = net.bus_index(0);
  if (root < 0) throw TopologyError(TopologyError::Kind::Disconnected, "no bus with id 0 (PCC)");

  std::vector<std::vector<std::pair<int, int>>> adj(n);  // (neighbor, line)
  for (std::size_t l = 0; l < net.lines.size(); ++l) {
    const int a = net.bus_index(net.lines[l].from);
    const int b = net.bus_index(net.lines[l].to);
    if (a < 0 || b < 0)
      throw TopologyError(TopologyError::Kind::Disconnected,
                          "line " + std::to_string(l) + " references an unknown bus");
    adj[a].push_back({b, static_cast<int>(l)});
    adj[b].push_back({a, static_cast<int>(l)});
  }

  // Union-find pass first so cycles are reported even when they are unreachable from the root.
  std::vector<int> uf(n);
  for (int i = 0; i < n; ++i) uf[i] = i;
  auto find = [&](int a) {
    while (uf[a] != a) a = uf[a] = uf[uf[a]];
    return a;
  };
  for (std::size_t l = 0; l < net.lines.size(); ++l) {
    const int a = find(net.bus_index(net.lines[l].from));
    const int b = find(net.bus_index(net.lines[l].to));
    if (a == b) throw TopologyError(TopologyError::Kind::CycleDetected, "cycle closed by line " + std::to_string(l));
    uf[a] = b;
  }

  std::vector<int> seen(n, 0);
  std::vector<int> via(n, -1);
  topo.order.reserve(n);
  topo.order.push_back(root);
  seen[root] = 1;
  for (std::size_t head = 0; head < topo.order.size(); ++head) {
    const int u = topo.order[head];
    for (auto [v, l] : adj[u]) {
      if (seen[v]) continue;
      seen[v] = 1;
      via[v] = l;
      topo.order.push_back(v);
    }
  }
  if (static_cast<int>(topo.order.size()) != n)
    throw TopologyError(TopologyError::Kind::Disconnected,
                        std::to_string(n - topo.order.size()) + " bus(es) unreachable from the PCC");
  for (int v = 0; v < n; ++v) {
    if (via[v] < 0) continue;
    topo.parent_line[v] = via[v];
    const Line& ln = net.lines[via[v]];
    const int parent = net.bus_index(ln.from) == v ? net.bus_index(ln.to) : net.bus_index(ln.from);
    topo.children_lines[parent].push_back(via[v]);
  }
  return topo;
}

/// Ordered bus ids (parent before child), rooted at bus 0.
inline std::vector<int> validate_topology(const Network& net) {
  const Topology topo = build_topology(net);
  std::vector<int> ids;
  ids.reserve(topo.order.size());
  for (int i : topo.order) ids.push_back(net.buses[i].id);
  return ids;
}

/// Lines are stored from-parent to-child after validation; this reorients them.
inline void orient_lines(Network& net) {
  const Topology topo = build_topology(net);
  for (int b : topo.order) {
    for (int l : topo.children_lines[b]) {
      Line& ln = net.lines[l];
      if (net.bus_index(ln.from) != b) std::swap(ln.from, ln.to);
    }
  }
}

// ---------------------------------------------------------------------------
// Per-unit conversion

inline Network to_per_unit(const Network& net) {
  if (net.units == UnitSystem::PerUnit) return net;
  if (!(net.base_kva > 0.0) || !(net.base_kv > 0.0)) throw std::invalid_argument("per-unit bases must be positive");
  Network pu = net;
  const double z_base = net.base_kv * net.base_kv * 1000.0 / net.base_kva;
  const double s = 1.0 / net.base_kva;
  const double v = 1.0 / net.base_kv;
  pu.v_ref *= v;
  for (Bus& b : pu.buses) {
    b.v_min *= v;
    b.v_max *= v;
    for (int p = 0; p < 3; ++p) {
      for (double& x : b.critical.p[p]) x *= s;
      for (double& x : b.critical.q[p]) x *= s;
    }
  }
  for (Line& l : pu.lines) {
    l.r /= z_base;
    l.x /= z_base;
    if (l.limits) {
      l.limits->p_min *= s;
      l.limits->p_max *= s;
      l.limits->q_min *= s;
      l.limits->q_max *= s;
    }
  }
  for (DgUnit& g : pu.dg) {
    for (double& x : g.p_max) x *= s;
    g.q_min *= s;
    g.q_max *= s;
  }
  pu.units = UnitSystem::PerUnit;
  return pu;
}

inline Network from_per_unit(const Network& pu) {
  if (pu.units == UnitSystem::SI) return pu;
  if (!(pu.base_kva > 0.0) || !(pu.base_kv > 0.0)) throw std::invalid_argument("per-unit bases must be positive");
  Network net = pu;
  const double z_base = pu.base_kv * pu.base_kv * 1000.0 / pu.base_kva;
  const double s = pu.base_kva;
  const double v = pu.base_kv;
  net.v_ref *= v;
  for (Bus& b : net.buses) {
    b.v_min *= v;
    b.v_max *= v;
    for (int p = 0; p < 3; ++p) {
      for (double& x : b.critical.p[p]) x *= s;
      for (double& x : b.critical.q[p]) x *= s;
    }
  }
  for (Line& l : net.lines) {
    l.r *= z_base;
    l.x *= z_base;
    if (l.limits) {
      l.limits->p_min *= s;
      l.limits->p_max *= s;
      l.limits->q_min *= s;
      l.limits->q_max *= s;
    }
  }
  for (DgUnit& g : net.dg) {
    for (double& x : g.p_max) x *= s;
    g.q_min *= s;
    g.q_max *= s;
  }
  net.units = UnitSystem::SI;
  return net;
}

// ---------------------------------------------------------------------------
// Invariant checks

inline void check_invariants(const Scenario& sc) {
  const Network& net = sc.network;
  const int horizon = net.horizon;
  auto fail = [](const std::string& what) { throw InvariantError(what); };

  if (horizon <= 0) fail("horizon must be positive");
  if (!(net.dt > 0.0)) fail("dt must be positive");
  std::set<int> ids;
  for (const Bus& b : net.buses)
    if (!ids.insert(b.id).second) fail("duplicate bus id " + std::to_string(b.id));
  if (net.lines.size() + 1 != net.buses.size())
    fail("radial feeder needs |lines| = |buses| - 1 (got " + std::to_string(net.lines.size()) + " lines, " +
         std::to_string(net.buses.size()) + " buses)");
  build_topology(net);

  for (const Bus& b : net.buses) {
    const std::string who = "bus " + std::to_string(b.id);
    if (!(b.v_min < net.v_ref && net.v_ref < b.v_max)) fail(who + ": need v_min < v_ref < v_max");
    for (int p = 0; p < 3; ++p) {
      if (b.critical.p[p].size() != static_cast<std::size_t>(horizon) ||
          b.critical.q[p].size() != static_cast<std::size_t>(horizon))
        fail(who + ": critical load series must have length T");
      if (!b.phases[p]) {
        for (int t = 0; t < horizon; ++t)
          if (b.critical.p[p][t] != 0.0 || b.critical.q[p][t] != 0.0)
            fail(who + ": critical load on absent phase " + phase_letter(p));
      }
    }
    if (b.id == 0) {
      if (!b.households.empty() || b.dg) fail("bus 0 is the PCC and cannot carry loads or DG");
      for (int p = 0; p < 3; ++p)
        for (int t = 0; t < horizon; ++t)
          if (b.critical.p[p][t] != 0.0 || b.critical.q[p][t] != 0.0) fail("bus 0 carries critical load");
    }
    for (auto [h, ph] : b.households)
      if (!b.phases[index(ph)]) fail(who + ": household " + std::to_string(h) + " on absent phase");
  }
  for (std::size_t l = 0; l < net.lines.size(); ++l) {
    const Line& ln = net.lines[l];
    const std::string who = "line " + std::to_string(ln.from) + "-" + std::to_string(ln.to);
    if (!ln.r.isApprox(ln.r.transpose(), 0.0) || !ln.x.isApprox(ln.x.transpose(), 0.0))
      fail(who + ": impedance matrices must be symmetric");
    const Bus& to = net.buses[net.bus_index(ln.to)];
    const Bus& from = net.buses[net.bus_index(ln.from)];
    for (int p = 0; p < 3; ++p) {
      if (to.phases[p] && !from.phases[p]) fail(who + ": phase " + phase_letter(p) + " missing upstream");
      if (to.phases[p] && !(ln.r(p, p) > 0.0)) fail(who + ": diagonal resistance must be positive");
    }
  }
  std::set<int> dg_ids;
  for (const DgUnit& g : net.dg) {
    const std::string who = "dg " + std::to_string(g.id);
    if (!dg_ids.insert(g.id).second) fail("duplicate dg id " + std::to_string(g.id));
    const int bi = net.bus_index(g.bus);
    if (bi < 0) fail(who + ": unknown bus");
    if (g.bus == 0) fail(who + ": DG cannot sit on the PCC");
    if (!net.buses[bi].phases[index(g.phase)]) fail(who + ": phase absent at its bus");
    if (g.q_min > g.q_max) fail(who + ": q_min > q_max");
    if (g.p_max.size() != static_cast<std::size_t>(horizon)) fail(who + ": p_max profile must have length T");
    for (double v : g.p_max)
      if (v < 0.0) fail(who + ": negative p_max");
    if (g.cost && !net.costs.count(*g.cost)) fail(who + ": unknown cost profile '" + *g.cost + "'");
  }
  if (!net.costs.count("pcc")) fail("missing 'pcc' cost profile");
  for (const auto& [name, c] : net.costs) {
    if (c.a.size() != static_cast<std::size_t>(horizon) || c.b.size() != c.a.size() || c.c.size() != c.a.size())
      fail("cost profile '" + name + "' must have length T");
    for (double a : c.a)
      if (a < 0.0) fail("cost profile '" + name + "' has negative quadratic coefficient");
  }

  std::set<int> hh_ids;
  std::size_t attached = 0;
  for (const Bus& b : net.buses) attached += b.households.size();
  if (attached != sc.households.size()) fail("household placement does not match household list");
  for (const Household& h : sc.households) {
    const std::string who = "household " + std::to_string(h.id);
    if (!hh_ids.insert(h.id).second) fail("duplicate household id " + std::to_string(h.id));
    const int bi = net.bus_index(h.bus);
    if (bi < 0) fail(who + ": unknown bus");
    if (!net.buses[bi].phases[index(h.phase)]) fail(who + ": phase absent at its bus");
    std::set<int> app_ids;
    for (const Appliance& a : h.appliances) {
      const std::string aw = who + " appliance " + std::to_string(a.id);
      if (!app_ids.insert(a.id).second) fail(who + ": duplicate appliance id " + std::to_string(a.id));
      if (!(a.eta > 0.0 && a.eta <= 1.0)) fail(aw + ": power factor outside (0,1]");
      if (!(a.utility_weight > 0.0) && !a.is_critical()) fail(aw + ": utility weight must be positive");
      if (a.p_min.size() != static_cast<std::size_t>(horizon) || a.p_max.size() != a.p_min.size())
        fail(aw + ": bounds must have length T");
      for (int t = 0; t < horizon; ++t) {
        if (!(0.0 <= a.p_min[t] && a.p_min[t] <= a.p_max[t])) fail(aw + ": need 0 <= p_min <= p_max");
        if (!a.works_at(t) && (a.p_min[t] != 0.0 || a.p_max[t] != 0.0))
          fail(aw + ": nonzero bounds outside work window at t=" + std::to_string(t + 1));
      }
      if (const auto* d = std::get_if<DeferrableSpec>(&a.kind)) {
        if (d->e_min > d->e_max) fail(aw + ": e_min > e_max");
        if (d->p_pref.size() != static_cast<std::size_t>(horizon)) fail(aw + ": p_pref must have length T");
      } else if (const auto* i = std::get_if<InterruptibleSpec>(&a.kind)) {
        if (i->p_pref.size() != static_cast<std::size_t>(horizon)) fail(aw + ": p_pref must have length T");
      } else if (const auto* th = std::get_if<ThermostaticSpec>(&a.kind)) {
        if (!(th->alpha > 0.0 && th->alpha < 1.0)) fail(aw + ": alpha must lie in (0,1)");
        if (th->t_conf.size() != static_cast<std::size_t>(horizon) || th->t_in_min.size() != th->t_conf.size() ||
            th->t_in_max.size() != th->t_conf.size() || th->t_out.size() != th->t_conf.size())
          fail(aw + ": temperature series must have length T");
        for (int t = 0; t < horizon; ++t)
          if (!(th->t_in_min[t] <= th->t_conf[t] && th->t_conf[t] <= th->t_in_max[t]))
            fail(aw + ": need T_in_min <= T_conf <= T_in_max");
      }
    }
  }
  for (int t : sc.event.window)
    if (t < 0 || t >= horizon) fail("DLC window slot outside horizon");
  if (!(sc.event.s_cap > 0.0)) fail("DLC cap must be positive");
}

// ---------------------------------------------------------------------------
// Scenario file (JSON syntax). Slots in files are 1-based.

namespace detail {

using nlohmann::json;

inline const json& field(const json& j, const std::string& key, const std::string& path) {
  if (!j.is_object()) throw ParseError(path, "expected an object");
  auto it = j.find(key);
  if (it == j.end()) throw ParseError(path + "." + key, "missing field");
  return *it;
}

inline double number(const json& j, const std::string& path) {
  if (!j.is_number()) throw ParseError(path, "expected a number");
  return j.get<double>();
}

inline double number(const json& j, const std::string& key, const std::string& path) {
  return number(field(j, key, path), path + "." + key);
}

inline double number_or(const json& j, const std::string& key, double fallback, const std::string& path) {
  auto it = j.find(key);
  return it == j.end() ? fallback : number(*it, path + "." + key);
}

inline int integer(const json& j, const std::string& path) {
  if (!j.is_number_integer()) throw ParseError(path, "expected an integer");
  return j.get<int>();
}

inline int integer(const json& j, const std::string& key, const std::string& path) {
  return integer(field(j, key, path), path + "." + key);
}

inline std::string text(const json& j, const std::string& key, const std::string& path) {
  const json& v = field(j, key, path);
  if (!v.is_string()) throw ParseError(path + "." + key, "expected a string");
  return v.get<std::string>();
}

inline Series series(const json& j, const std::string& path, int length) {
  if (!j.is_array()) throw ParseError(path, "expected an array");
  if (length >= 0 && static_cast<int>(j.size()) != length)
    throw ParseError(path, "expected " + std::to_string(length) + " entries, got " + std::to_string(j.size()));
  Series out;
  out.reserve(j.size());
  for (std::size_t i = 0; i < j.size(); ++i) out.push_back(number(j[i], path + "[" + std::to_string(i) + "]"));
  return out;
}

inline Series series(const json& j, const std::string& key, const std::string& path, int length) {
  return series(field(j, key, path), path + "." + key, length);
}

inline Mat3 matrix3(const json& j, const std::string& path) {
  if (!j.is_array() || j.size() != 3) throw ParseError(path, "expected a 3x3 array");
  Mat3 m;
  for (int r = 0; r < 3; ++r) {
    const Series row = series(j[r], path + "[" + std::to_string(r) + "]", 3);
    for (int c = 0; c < 3; ++c) m(r, c) = row[c];
  }
  return m;
}

inline Vec3 vec3(const json& j, const std::string& path) {
  const Series s = series(j, path, 3);
  return Vec3(s[0], s[1], s[2]);
}

inline PhaseMask phase_mask(const std::string& s, const std::string& path) {
  PhaseMask m{false, false, false};
  for (char c : s) {
    try {
      m[index(parse_phase(c))] = true;
    } catch (const std::invalid_argument& e) {
      throw ParseError(path, e.what());
    }
  }
  return m;
}

inline Phase single_phase(const std::string& s, const std::string& path) {
  if (s.size() != 1) throw ParseError(path, "expected one of A, B, C");
  try {
    return parse_phase(s[0]);
  } catch (const std::invalid_argument& e) {
    throw ParseError(path, e.what());
  }
}

inline std::vector<int> slots(const json& j, const std::string& path, int horizon) {
  if (!j.is_array()) throw ParseError(path, "expected an array of slots");
  std::vector<int> out;
  for (std::size_t i = 0; i < j.size(); ++i) {
    const int s = integer(j[i], path + "[" + std::to_string(i) + "]");
    if (s < 1 || s > horizon) throw ParseError(path + "[" + std::to_string(i) + "]", "slot outside 1..T");
    out.push_back(s - 1);
  }
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

inline json slots_json(const std::vector<int>& s) {
  json a = json::array();
  for (int t : s) a.push_back(t + 1);
  return a;
}

inline json phase_string(const PhaseMask& m) {
  std::string s;
  for (int p = 0; p < 3; ++p)
    if (m[p]) s.push_back(phase_letter(p));
  return s;
}

inline json matrix_json(const Mat3& m) {
  json a = json::array();
  for (int r = 0; r < 3; ++r) a.push_back({m(r, 0), m(r, 1), m(r, 2)});
  return a;
}

inline double finite_or_null(const json& j, const std::string& path, double fallback) {
  if (j.is_null()) return fallback;
  return number(j, path);
}

/// Map a byte offset reported by the JSON parser to a 1-based line number.
inline std::size_t line_of(const std::string& text, std::size_t byte) {
  return 1 + static_cast<std::size_t>(std::count(text.begin(), text.begin() + std::min(byte, text.size()), '\n'));
}

inline Appliance parse_appliance(const json& j, const std::string& path, int horizon, int household,
                                 const Series& t_out) {
  Appliance a;
  a.id = integer(j, "id", path);
  a.household = household;
  a.name = j.contains("name") ? text(j, "name", path) : std::string("appliance");
  const std::string kind = text(j, "kind", path);
  a.eta = number_or(j, "eta", 1.0, path);
  a.utility_weight = number_or(j, "utility_weight", 1.0, path);

  if (kind == "critical") {
    CriticalSpec c;
    c.p = series(j, "p_kw", path, horizon);
    c.q = j.contains("q_kvar") ? series(j, "q_kvar", path, horizon) : Series(horizon, 0.0);
    a.kind = c;
    a.p_min = a.p_max = Series(horizon, 0.0);
    return a;
  }
  a.work_window = slots(field(j, "work_window", path), path + ".work_window", horizon);
  a.p_min = series(j, "p_min_kw", path, horizon);
  a.p_max = series(j, "p_max_kw", path, horizon);
  if (kind == "interruptible") {
    a.kind = InterruptibleSpec{series(j, "p_pref_kw", path, horizon)};
  } else if (kind == "deferrable") {
    a.kind = DeferrableSpec{number(j, "e_min_kwh", path), number(j, "e_max_kwh", path),
                            series(j, "p_pref_kw", path, horizon)};
  } else if (kind == "thermostatic") {
    ThermostaticSpec th;
    th.alpha = number(j, "alpha", path);
    th.beta = number(j, "beta_f_per_kw", path);
    th.t_conf = series(j, "t_conf_f", path, horizon);
    th.t_in_min = series(j, "t_in_min_f", path, horizon);
    th.t_in_max = series(j, "t_in_max_f", path, horizon);
    th.t_init = number(j, "t_init_f", path);
    th.t_out = t_out;
    a.kind = th;
  } else {
    throw ParseError(path + ".kind", "unknown appliance kind '" + kind + "'");
  }
  return a;
}

inline json appliance_json(const Appliance& a) {
  json j;
  j["id"] = a.id;
  j["name"] = a.name;
  j["kind"] = kind_name(a.kind);
  j["eta"] = a.eta;
  j["utility_weight"] = a.utility_weight;
  j["work_window"] = slots_json(a.work_window);
  j["p_min_kw"] = a.p_min;
  j["p_max_kw"] = a.p_max;
  std::visit(
      [&](const auto& k) {
        using K = std::decay_t<decltype(k)>;
        if constexpr (std::is_same_v<K, CriticalSpec>) {
          j["p_kw"] = k.p;
          j["q_kvar"] = k.q;
        } else if constexpr (std::is_same_v<K, InterruptibleSpec>) {
          j["p_pref_kw"] = k.p_pref;
        } else if constexpr (std::is_same_v<K, DeferrableSpec>) {
          j["e_min_kwh"] = k.e_min;
          j["e_max_kwh"] = k.e_max;
          j["p_pref_kw"] = k.p_pref;
        } else {
          j["alpha"] = k.alpha;
          j["beta_f_per_kw"] = k.beta;
          j["t_conf_f"] = k.t_conf;
          j["t_in_min_f"] = k.t_in_min;
          j["t_in_max_f"] = k.t_in_max;
          j["t_init_f"] = k.t_init;
        }
      },
      a.kind);
  return j;
}

inline CostProfile parse_cost(const json& j, const std::string& path, int horizon) {
  return CostProfile{series(j, "a", path, horizon), series(j, "b", path, horizon), series(j, "c", path, horizon)};
}

}  // namespace detail

/// Builds an SI scenario from its JSON document and checks every invariant.
/// Critical appliance records are folded into their bus's critical load.
inline Scenario parse_scenario(const nlohmann::json& doc) {
  using namespace detail;
  Scenario sc;
  const json& jn = field(doc, "network", "$");
  Network& net = sc.network;
  net.units = UnitSystem::SI;
  net.v_ref = number(jn, "v_ref_kv", "$.network");
  net.base_kv = number_or(jn, "base_kv", net.v_ref, "$.network");
  net.base_kva = number_or(jn, "s_base_kva", 1000.0, "$.network");
  net.horizon = integer(jn, "horizon", "$.network");
  net.dt = number_or(jn, "dt_h", 1.0, "$.network");
  const int horizon = net.horizon;
  if (horizon <= 0) throw ParseError("$.network.horizon", "must be positive");
  const double v_min = number(jn, "v_min_kv", "$.network");
  const double v_max = jn.contains("v_max_kv") ? finite_or_null(jn["v_max_kv"], "$.network.v_max_kv",
                                                                std::numeric_limits<double>::infinity())
                                               : std::numeric_limits<double>::infinity();

  const json& jb = field(jn, "buses", "$.network");
  if (!jb.is_array()) throw ParseError("$.network.buses", "expected an array");
  for (std::size_t i = 0; i < jb.size(); ++i) {
    const std::string path = "$.network.buses[" + std::to_string(i) + "]";
    Bus b;
    b.id = integer(jb[i], "id", path);
    if (b.id < 0) throw ParseError(path + ".id", "bus ids must be nonnegative");
    b.phases = jb[i].contains("phases") ? phase_mask(text(jb[i], "phases", path), path + ".phases")
                                        : PhaseMask{true, true, true};
    b.v_min = number_or(jb[i], "v_min_kv", v_min, path);
    b.v_max = jb[i].contains("v_max_kv") ? finite_or_null(jb[i]["v_max_kv"], path + ".v_max_kv", v_max) : v_max;
    for (int p = 0; p < 3; ++p) {
      b.critical.p[p].assign(horizon, 0.0);
      b.critical.q[p].assign(horizon, 0.0);
    }
    if (jb[i].contains("critical_load")) {
      const json& cl = jb[i]["critical_load"];
      const std::string cp = path + ".critical_load";
      for (const char* key : {"p_kw", "q_kvar"}) {
        if (!cl.contains(key)) continue;
        const json& per = cl[key];
        if (!per.is_object()) throw ParseError(cp + "." + key, "expected an object keyed by phase");
        for (auto it = per.begin(); it != per.end(); ++it) {
          const Phase ph = single_phase(it.key(), cp + "." + key);
          Series s = series(it.value(), cp + "." + key + "." + it.key(), horizon);
          (std::string(key) == "p_kw" ? b.critical.p : b.critical.q)[index(ph)] = std::move(s);
        }
      }
    }
    net.buses.push_back(std::move(b));
  }

  const json& jl = field(jn, "lines", "$.network");
  if (!jl.is_array()) throw ParseError("$.network.lines", "expected an array");
  for (std::size_t i = 0; i < jl.size(); ++i) {
    const std::string path = "$.network.lines[" + std::to_string(i) + "]";
    Line l;
    l.from = integer(jl[i], "from", path);
    l.to = integer(jl[i], "to", path);
    l.r = matrix3(field(jl[i], "r_ohm", path), path + ".r_ohm");
    l.x = matrix3(field(jl[i], "x_ohm", path), path + ".x_ohm");
    if (jl[i].contains("limits")) {
      const json& lim = jl[i]["limits"];
      FlowLimits f;
      const std::string lp = path + ".limits";
      if (lim.contains("p_min_kw")) f.p_min = vec3(lim["p_min_kw"], lp + ".p_min_kw");
      if (lim.contains("p_max_kw")) f.p_max = vec3(lim["p_max_kw"], lp + ".p_max_kw");
      if (lim.contains("q_min_kvar")) f.q_min = vec3(lim["q_min_kvar"], lp + ".q_min_kvar");
      if (lim.contains("q_max_kvar")) f.q_max = vec3(lim["q_max_kvar"], lp + ".q_max_kvar");
      l.limits = f;
    }
    net.lines.push_back(l);
  }

  const json& jp = field(doc, "profiles", "$");
  sc.t_out = jp.contains("t_out_f") ? series(jp, "t_out_f", "$.profiles", horizon) : Series(horizon, 75.0);
  const json& jc = field(jp, "costs", "$.profiles");
  if (!jc.is_object()) throw ParseError("$.profiles.costs", "expected an object");
  for (auto it = jc.begin(); it != jc.end(); ++it)
    net.costs[it.key()] = parse_cost(it.value(), "$.profiles.costs." + it.key(), horizon);

  if (doc.contains("dg")) {
    const json& jd = doc["dg"];
    if (!jd.is_array()) throw ParseError("$.dg", "expected an array");
    for (std::size_t i = 0; i < jd.size(); ++i) {
      const std::string path = "$.dg[" + std::to_string(i) + "]";
      DgUnit g;
      g.id = integer(jd[i], "id", path);
      g.bus = integer(jd[i], "bus", path);
      g.phase = single_phase(text(jd[i], "phase", path), path + ".phase");
      g.p_max = series(jd[i], "p_max_kw", path, horizon);
      g.q_min = number(jd[i], "q_min_kvar", path);
      g.q_max = number(jd[i], "q_max_kvar", path);
      if (jd[i].contains("cost")) g.cost = text(jd[i], "cost", path);
      net.dg.push_back(std::move(g));
    }
  }

  const json& jh = field(doc, "households", "$");
  if (!jh.is_array()) throw ParseError("$.households", "expected an array");
  for (std::size_t i = 0; i < jh.size(); ++i) {
    const std::string path = "$.households[" + std::to_string(i) + "]";
    Household h;
    h.id = integer(jh[i], "id", path);
    h.bus = integer(jh[i], "bus", path);
    h.phase = single_phase(text(jh[i], "phase", path), path + ".phase");
    const json& ja = field(jh[i], "appliances", path);
    if (!ja.is_array()) throw ParseError(path + ".appliances", "expected an array");
    for (std::size_t k = 0; k < ja.size(); ++k) {
      Appliance a = parse_appliance(ja[k], path + ".appliances[" + std::to_string(k) + "]", horizon, h.id, sc.t_out);
      h.appliances.push_back(std::move(a));
    }
    sc.households.push_back(std::move(h));
  }

  if (doc.contains("dlc_event") && !doc["dlc_event"].is_null()) {
    const json& je = doc["dlc_event"];
    sc.event.window = slots(field(je, "window", "$.dlc_event"), "$.dlc_event.window", horizon);
    sc.event.s_cap = number(je, "s_cap_mva", "$.dlc_event");
  }
  if (doc.contains("rng_seed")) {
    if (!doc["rng_seed"].is_number_unsigned() && !doc["rng_seed"].is_number_integer())
      throw ParseError("$.rng_seed", "expected an integer");
    sc.rng_seed = doc["rng_seed"].get<std::uint64_t>();
  }

  // Placement and critical folding.
  for (Household& h : sc.households) {
    const int bi = net.bus_index(h.bus);
    if (bi < 0) throw InvariantError("household " + std::to_string(h.id) + " references unknown bus " +
                                     std::to_string(h.bus));
    net.buses[bi].households.push_back({h.id, h.phase});
    std::vector<Appliance> kept;
    for (Appliance& a : h.appliances) {
      if (const auto* c = std::get_if<CriticalSpec>(&a.kind)) {
        for (int t = 0; t < horizon; ++t) {
          net.buses[bi].critical.p[index(h.phase)][t] += c->p[t];
          net.buses[bi].critical.q[index(h.phase)][t] += c->q[t];
        }
      } else {
        kept.push_back(std::move(a));
      }
    }
    h.appliances = std::move(kept);
  }
  for (const DgUnit& g : net.dg) {
    const int bi = net.bus_index(g.bus);
    if (bi < 0) throw InvariantError("dg " + std::to_string(g.id) + " references unknown bus");
    if (net.buses[bi].dg) throw InvariantError("bus " + std::to_string(g.bus) + " carries more than one DG");
    net.buses[bi].dg = g.id;
  }

  {
    std::set<int> ids;
    for (const Bus& b : net.buses)
      if (!ids.insert(b.id).second) throw InvariantError("duplicate bus id " + std::to_string(b.id));
  }
  orient_lines(net);
  check_invariants(sc);
  return sc;
}

inline Scenario parse_scenario_text(const std::string& text) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError("line " + std::to_string(detail::line_of(text, e.byte)), e.what());
  }
  return parse_scenario(doc);
}

inline std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError(path, "cannot open file");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline Scenario load_scenario(const std::string& path) {
  const std::string text = read_file(path);
  try {
    return parse_scenario_text(text);
  } catch (const ParseError& e) {
    throw ParseError(path + ": " + e.where(), e.what());
  }
}

/// Canonical JSON form of a scenario (SI units).
inline nlohmann::json scenario_to_json(const Scenario& in) {
  using namespace detail;
  const Network net = from_per_unit(in.network);
  json doc;
  doc["format"] = "resdr-scenario/1";
  doc["rng_seed"] = in.rng_seed;

  json jn;
  jn["v_ref_kv"] = net.v_ref;
  jn["base_kv"] = net.base_kv;
  jn["s_base_kva"] = net.base_kva;
  jn["horizon"] = net.horizon;
  jn["dt_h"] = net.dt;
  const double v_min = net.buses.empty() ? 0.0 : net.buses.back().v_min;
  const double v_max = net.buses.empty() ? 0.0 : net.buses.back().v_max;
  jn["v_min_kv"] = v_min;
  jn["v_max_kv"] = std::isfinite(v_max) ? json(v_max) : json(nullptr);
  json buses = json::array();
  for (const Bus& b : net.buses) {
    json jb;
    jb["id"] = b.id;
    jb["phases"] = phase_string(b.phases);
    if (b.v_min != v_min) jb["v_min_kv"] = b.v_min;
    if (b.v_max != v_max) jb["v_max_kv"] = std::isfinite(b.v_max) ? json(b.v_max) : json(nullptr);
    json cp = json::object(), cq = json::object();
    for (int p = 0; p < 3; ++p) {
      const bool any = std::any_of(b.critical.p[p].begin(), b.critical.p[p].end(), [](double v) { return v != 0.0; }) ||
                       std::any_of(b.critical.q[p].begin(), b.critical.q[p].end(), [](double v) { return v != 0.0; });
      if (!any) continue;
      cp[std::string(1, phase_letter(p))] = b.critical.p[p];
      cq[std::string(1, phase_letter(p))] = b.critical.q[p];
    }
    if (!cp.empty()) jb["critical_load"] = {{"p_kw", cp}, {"q_kvar", cq}};
    buses.push_back(jb);
  }
  jn["buses"] = buses;
  json lines = json::array();
  for (const Line& l : net.lines) {
    json jl;
    jl["from"] = l.from;
    jl["to"] = l.to;
    jl["r_ohm"] = matrix_json(l.r);
    jl["x_ohm"] = matrix_json(l.x);
    if (l.limits) {
      auto v = [](const Vec3& x) {
        json a = json::array();
        for (int i = 0; i < 3; ++i) a.push_back(std::isfinite(x[i]) ? json(x[i]) : json(nullptr));
        return a;
      };
      jl["limits"] = {{"p_min_kw", v(l.limits->p_min)},
                      {"p_max_kw", v(l.limits->p_max)},
                      {"q_min_kvar", v(l.limits->q_min)},
                      {"q_max_kvar", v(l.limits->q_max)}};
    }
    lines.push_back(jl);
  }
  jn["lines"] = lines;
  doc["network"] = jn;

  json hh = json::array();
  for (const Household& h : in.households) {
    json jh;
    jh["id"] = h.id;
    jh["bus"] = h.bus;
    jh["phase"] = std::string(1, phase_letter(h.phase));
    json apps = json::array();
    for (const Appliance& a : h.appliances) apps.push_back(appliance_json(a));
    jh["appliances"] = apps;
    hh.push_back(jh);
  }
  doc["households"] = hh;

  json dg = json::array();
  for (const DgUnit& g : net.dg) {
    json jg;
    jg["id"] = g.id;
    jg["bus"] = g.bus;
    jg["phase"] = std::string(1, phase_letter(g.phase));
    jg["p_max_kw"] = g.p_max;
    jg["q_min_kvar"] = g.q_min;
    jg["q_max_kvar"] = g.q_max;
    if (g.cost) jg["cost"] = *g.cost;
    dg.push_back(jg);
  }
  doc["dg"] = dg;

  json costs = json::object();
  for (const auto& [name, c] : net.costs) costs[name] = {{"a", c.a}, {"b", c.b}, {"c", c.c}};
  doc["profiles"] = {{"t_out_f", in.t_out}, {"costs", costs}};
  if (!in.event.window.empty() && std::isfinite(in.event.s_cap))
    doc["dlc_event"] = {{"window", slots_json(in.event.window)}, {"s_cap_mva", in.event.s_cap}};
  return doc;
}

inline std::string scenario_to_string(const Scenario& sc) { return scenario_to_json(sc).dump(1) + "\n"; }

inline void write_scenario(const Scenario& sc, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path);
  out << scenario_to_string(sc);
}

}  // namespace resdr
