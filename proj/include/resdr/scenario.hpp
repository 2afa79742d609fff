#pragma once

// Seeded scenario generation for the 10-bus residential feeder study, and the
// daily profile shapes it uses.
//
// Random numbers: resdr-rng/1. Each substream is std::mt19937_64 seeded with
// splitmix64(seed + 0x9E3779B97F4A7C15 * (stream + 1)); stream 0 draws network
// data (PV phases and sizes), stream k + 1 draws household k's appliances and
// stream k + 1 + 2^32 its critical-load peak. Uniform reals
// are (x >> 11) * 2^-53, so draws do not depend on the standard library's
// distribution implementations.

#include <array>
#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include <json.hpp>

#include "resdr/appliance.hpp"
#include "resdr/core.hpp"
#include "resdr/netmodel.hpp"

namespace resdr {

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

class Rng {
 public:
  Rng(std::uint64_t seed, std::uint64_t stream) : eng_(splitmix64(seed + 0x9E3779B97F4A7C15ULL * (stream + 1))) {}

  double uniform() { return static_cast<double>(eng_() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  /// Integer uniform on [lo, hi].
  int integer(int lo, int hi) {
    const auto span = static_cast<std::uint64_t>(hi - lo + 1);
    return lo + static_cast<int>(static_cast<std::uint64_t>(uniform() * static_cast<double>(span)) % span);
  }
  Phase phase() { return kPhases[integer(0, 2)]; }

 private:
  std::mt19937_64 eng_;
};

struct Range {
  double lo = 0.0;
  double hi = 0.0;
  double draw(Rng& rng) const { return rng.uniform(lo, hi); }
};

struct FeederLine {
  int from = 0;
  int to = 0;
  double r_ohm = 0.0;
  double x_ohm = 0.0;
};

/// Hourly stand-in curves for the daily temperature, load and price shapes.
struct ProfileShapes {
  Series t_out_f{74.0, 73.0, 72.5, 72.0, 71.5, 71.5, 72.5, 74.5, 77.0, 80.0, 83.0, 85.5,
                 87.5, 89.0, 90.0, 89.5, 88.0, 86.0, 83.5, 81.0, 79.0, 77.5, 76.0, 75.0};
  Series critical{0.55, 0.50, 0.47, 0.45, 0.45, 0.48, 0.55, 0.62, 0.66, 0.68, 0.70, 0.72,
                  0.73, 0.74, 0.75, 0.77, 0.81, 0.87, 0.93, 0.98, 1.00, 0.98, 0.88, 0.70};
  Series price{0.55, 0.50, 0.48, 0.47, 0.48, 0.52, 0.60, 0.68, 0.72, 0.74, 0.76, 0.78,
               0.80, 0.82, 0.84, 0.86, 0.90, 0.95, 0.98, 1.00, 1.00, 0.97, 0.85, 0.70};
  int pv_first = 6;  // 1-based slots with nonzero PV output lie strictly inside [pv_first, pv_last]
  int pv_last = 19;
};

struct ScenarioSpec {
  std::uint64_t rng_seed = 42;

  // Feeder.
  double v_ref_kv = 4.16;
  double s_base_kva = 1000.0;
  int horizon = 24;
  double dt_h = 1.0;
  double v_min_kv = 4.05;
  double v_max_kv = 4.37;
  double impedance_scale = 0.45;
  double mutual_ratio = 0.3;
  std::vector<FeederLine> lines{{0, 1, 0.0922, 0.0470}, {1, 2, 0.4930, 0.2511}, {2, 3, 0.3660, 0.1864},
                                {3, 4, 0.3811, 0.1941}, {4, 5, 0.8190, 0.7070}, {5, 6, 0.1872, 0.6188},
                                {6, 7, 0.7114, 0.2351}, {7, 8, 1.0300, 0.7400}, {8, 9, 1.0440, 0.7400}};
  std::vector<int> load_buses{1, 2, 3, 4, 5, 6, 7, 8, 9};
  int households_per_bus = 15;

  // Critical load per household, scaled by the critical shape.
  Range critical_peak_kw{5.5, 7.5};
  double critical_pf = 0.9;

  // PV units.
  std::vector<int> pv_buses{3, 6, 8, 9};
  Range pv_capacity_kw{60.0, 80.0};
  double pv_q_kvar = 40.0;
  std::array<double, 3> pv_cost{0.0, 0.002, 0.0};  // a, b, c

  // PCC purchase cost, scaled by the price shape.
  double price_a = 1e-6;  // $/kW^2
  double price_b = 0.01;  // $/kWh
  double price_c = 0.0;

  // Appliances.
  Range eta{0.8, 0.9};
  double ac_alpha = 0.9;
  Range ac_beta{-8.0, -5.0};  // degF per kW
  Range ac_t_conf{73.0, 76.0};
  double ac_t_min = 70.0;
  double ac_t_max = 79.0;
  double ac_p_max = 3.5;
  std::array<int, 2> arrival{17, 19};  // 1-based
  double washer_p_max = 0.7;
  double washer_energy = 0.9;
  double dryer_p_max = 5.0;
  double dryer_e_min = 4.5;
  double dryer_e_max = 9.0;
  int dryer_last = 24;  // 1-based
  Range lighting_p{0.5, 1.0};
  int lighting_on = 19;   // 1-based, wraps to lighting_off
  int lighting_off = 6;
  Range plug_p{0.0, 0.5};
  Range plug_pref{0.25, 0.5};

  // Utility weights.
  Range w_thermostatic{0.005, 0.02};
  Range w_deferrable{0.01, 0.05};
  Range w_interruptible{0.01, 0.05};

  // DLC event.
  int event_first = 19;  // 1-based inclusive
  int event_last = 24;
  double s_cap_mva = 0.95;

  ProfileShapes shapes;
};

struct Profiles {
  Series t_out;     // degF
  Series critical;  // normalized
  Series pv;        // normalized
  Series a, b, c;   // PCC cost coefficients
};

/// Hourly profiles from ScenarioSpec shapes; PV is a half-sine between its
/// first and last daylight slots.
inline Profiles synth_profiles(const ScenarioSpec& spec) {
  const int T = spec.horizon;
  const ProfileShapes& s = spec.shapes;
  auto check = [&](const Series& v, const char* what) {
    if (static_cast<int>(v.size()) != T) throw ParseError(std::string("profiles.") + what, "needs one value per slot");
  };
  check(s.t_out_f, "t_out_f");
  check(s.critical, "critical_shape");
  check(s.price, "price_shape");
  Profiles p;
  p.t_out = s.t_out_f;
  p.critical = s.critical;
  p.pv.assign(T, 0.0);
  const double span = s.pv_last - s.pv_first;
  for (int t = 1; t <= T; ++t)
    if (t > s.pv_first && t < s.pv_last) p.pv[t - 1] = std::sin(3.14159265358979323846 * (t - s.pv_first) / span);
  for (int t = 0; t < T; ++t) {
    p.a.push_back(spec.price_a * s.price[t]);
    p.b.push_back(spec.price_b * s.price[t]);
    p.c.push_back(spec.price_c * s.price[t]);
  }
  return p;
}

namespace detail {

inline Range range_of(const nlohmann::json& j, const std::string& key, Range fallback, const std::string& path) {
  if (!j.contains(key)) return fallback;
  const auto& v = j[key];
  if (!v.is_array() || v.size() != 2 || !v[0].is_number() || !v[1].is_number())
    throw ParseError(path + "." + key, "expected [lo, hi]");
  Range r{v[0].get<double>(), v[1].get<double>()};
  if (r.lo > r.hi) throw ParseError(path + "." + key, "empty range");
  return r;
}

template <class T>
T value_or(const nlohmann::json& j, const std::string& key, T fallback, const std::string& path) {
  if (!j.contains(key)) return fallback;
  try {
    return j[key].get<T>();
  } catch (const nlohmann::json::exception&) {
    throw ParseError(path + "." + key, "wrong type");
  }
}

inline const nlohmann::json& section(const nlohmann::json& j, const std::string& key) {
  static const nlohmann::json empty = nlohmann::json::object();
  if (!j.contains(key)) return empty;
  if (!j[key].is_object()) throw ParseError("$." + key, "expected an object");
  return j[key];
}

}  // namespace detail

/// Reads a compact spec document. Every field is optional and defaults to the
/// built-in study values.
inline ScenarioSpec parse_spec(const nlohmann::json& doc) {
  using detail::range_of;
  using detail::section;
  using detail::value_or;
  if (!doc.is_object()) throw ParseError("$", "expected an object");
  ScenarioSpec s;
  s.rng_seed = value_or<std::uint64_t>(doc, "rng_seed", s.rng_seed, "$");

  const auto& n = section(doc, "network");
  s.v_ref_kv = value_or(n, "v_ref_kv", s.v_ref_kv, "$.network");
  s.s_base_kva = value_or(n, "s_base_kva", s.s_base_kva, "$.network");
  s.horizon = value_or(n, "horizon", s.horizon, "$.network");
  s.dt_h = value_or(n, "dt_h", s.dt_h, "$.network");
  s.v_min_kv = value_or(n, "v_min_kv", s.v_min_kv, "$.network");
  s.v_max_kv = value_or(n, "v_max_kv", s.v_max_kv, "$.network");
  s.impedance_scale = value_or(n, "impedance_scale", s.impedance_scale, "$.network");
  s.mutual_ratio = value_or(n, "mutual_ratio", s.mutual_ratio, "$.network");
  if (n.contains("lines")) {
    s.lines.clear();
    const auto& jl = n["lines"];
    if (!jl.is_array()) throw ParseError("$.network.lines", "expected an array");
    for (std::size_t i = 0; i < jl.size(); ++i) {
      const std::string path = "$.network.lines[" + std::to_string(i) + "]";
      s.lines.push_back({detail::integer(jl[i], "from", path), detail::integer(jl[i], "to", path),
                         detail::number(jl[i], "r_ohm", path), detail::number(jl[i], "x_ohm", path)});
    }
  }
  s.load_buses = value_or(n, "load_buses", s.load_buses, "$.network");
  s.households_per_bus = value_or(doc, "households_per_bus", s.households_per_bus, "$");

  const auto& c = section(doc, "critical_load");
  s.critical_peak_kw = range_of(c, "peak_kw", s.critical_peak_kw, "$.critical_load");
  s.critical_pf = value_or(c, "power_factor", s.critical_pf, "$.critical_load");

  const auto& pv = section(doc, "pv");
  s.pv_buses = value_or(pv, "buses", s.pv_buses, "$.pv");
  s.pv_capacity_kw = range_of(pv, "capacity_kw", s.pv_capacity_kw, "$.pv");
  s.pv_q_kvar = value_or(pv, "q_limit_kvar", s.pv_q_kvar, "$.pv");
  s.pv_cost = value_or(pv, "cost_abc", s.pv_cost, "$.pv");

  const auto& pr = section(doc, "price");
  s.price_a = value_or(pr, "a", s.price_a, "$.price");
  s.price_b = value_or(pr, "b", s.price_b, "$.price");
  s.price_c = value_or(pr, "c", s.price_c, "$.price");

  const auto& ap = section(doc, "appliances");
  const std::string a = "$.appliances";
  s.eta = range_of(ap, "eta", s.eta, a);
  s.ac_alpha = value_or(ap, "ac_alpha", s.ac_alpha, a);
  s.ac_beta = range_of(ap, "ac_beta_f_per_kw", s.ac_beta, a);
  s.ac_t_conf = range_of(ap, "ac_t_conf_f", s.ac_t_conf, a);
  if (ap.contains("ac_band_f")) {
    const Range band = range_of(ap, "ac_band_f", {}, a);
    s.ac_t_min = band.lo;
    s.ac_t_max = band.hi;
  }
  s.ac_p_max = value_or(ap, "ac_p_max_kw", s.ac_p_max, a);
  s.arrival = value_or(ap, "arrival", s.arrival, a);
  s.washer_p_max = value_or(ap, "washer_p_max_kw", s.washer_p_max, a);
  s.washer_energy = value_or(ap, "washer_energy_kwh", s.washer_energy, a);
  s.dryer_p_max = value_or(ap, "dryer_p_max_kw", s.dryer_p_max, a);
  s.dryer_e_min = value_or(ap, "dryer_e_min_kwh", s.dryer_e_min, a);
  s.dryer_e_max = value_or(ap, "dryer_e_max_kwh", s.dryer_e_max, a);
  s.dryer_last = value_or(ap, "dryer_last_slot", s.dryer_last, a);
  s.lighting_p = range_of(ap, "lighting_p_kw", s.lighting_p, a);
  s.lighting_on = value_or(ap, "lighting_on_slot", s.lighting_on, a);
  s.lighting_off = value_or(ap, "lighting_off_slot", s.lighting_off, a);
  s.plug_p = range_of(ap, "plug_p_kw", s.plug_p, a);
  s.plug_pref = range_of(ap, "plug_pref_kw", s.plug_pref, a);

  const auto& w = section(doc, "utility_weight");
  s.w_thermostatic = range_of(w, "thermostatic", s.w_thermostatic, "$.utility_weight");
  s.w_deferrable = range_of(w, "deferrable", s.w_deferrable, "$.utility_weight");
  s.w_interruptible = range_of(w, "interruptible", s.w_interruptible, "$.utility_weight");

  const auto& e = section(doc, "dlc_event");
  if (e.contains("window")) {
    const auto win = value_or(e, "window", std::array<int, 2>{s.event_first, s.event_last}, "$.dlc_event");
    s.event_first = win[0];
    s.event_last = win[1];
  }
  s.s_cap_mva = value_or(e, "s_cap_mva", s.s_cap_mva, "$.dlc_event");

  const auto& p = section(doc, "profiles");
  s.shapes.t_out_f = value_or(p, "t_out_f", s.shapes.t_out_f, "$.profiles");
  s.shapes.critical = value_or(p, "critical_shape", s.shapes.critical, "$.profiles");
  s.shapes.price = value_or(p, "price_shape", s.shapes.price, "$.profiles");
  if (p.contains("pv_daylight")) {
    const auto d = value_or(p, "pv_daylight", std::array<int, 2>{}, "$.profiles");
    s.shapes.pv_first = d[0];
    s.shapes.pv_last = d[1];
  }

  auto bad = [](const std::string& where, const std::string& what) { throw ParseError(where, what); };
  if (s.horizon <= 0) bad("$.network.horizon", "must be positive");
  if (!(s.s_base_kva > 0.0) || !(s.v_ref_kv > 0.0)) bad("$.network", "bases must be positive");
  if (!(s.impedance_scale > 0.0)) bad("$.network.impedance_scale", "must be positive");
  if (s.households_per_bus < 0) bad("$.households_per_bus", "must be nonnegative");
  if (s.arrival[0] > s.arrival[1]) bad("$.appliances.arrival", "empty range");
  if (!(s.eta.lo > 0.0 && s.eta.hi <= 1.0)) bad("$.appliances.eta", "must lie in (0, 1]");
  if (s.shapes.pv_first >= s.shapes.pv_last) bad("$.profiles.pv_daylight", "empty daylight window");
  if (s.event_first < 1 || s.event_last > s.horizon || s.event_first > s.event_last)
    bad("$.dlc_event.window", "outside the horizon");
  return s;
}

inline ScenarioSpec load_spec(const std::string& path) {
  const std::string text = read_file(path);
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(path + ": line " + std::to_string(detail::line_of(text, e.byte)), e.what());
  }
  try {
    return parse_spec(doc);
  } catch (const ParseError& e) {
    throw ParseError(path + ": " + e.where(), e.what());
  }
}

namespace detail {

/// 0-based slots for 1-based [first, last] on the daily ring (wraps when first > last).
inline std::vector<int> ring_slots(int first, int last, int horizon) {
  std::vector<int> out;
  auto wrap = [&](int t) { return ((t - 1) % horizon + horizon) % horizon; };
  int t = first;
  for (int guard = 0; guard < horizon; ++guard) {
    out.push_back(wrap(t));
    if (wrap(t) == wrap(last)) break;
    ++t;
  }
  std::sort(out.begin(), out.end());
  return out;
}

inline Series on_window(const std::vector<int>& window, int horizon, double value) {
  Series s(horizon, 0.0);
  for (int t : window) s[t] = value;
  return s;
}

/// Max power from the window start until the energy target is met.
inline Series greedy_profile(const std::vector<int>& window, int horizon, double p_max, double energy, double dt) {
  Series s(horizon, 0.0);
  double left = energy;
  for (int t : window) {
    s[t] = std::clamp(left / dt, 0.0, p_max);
    left -= s[t] * dt;
  }
  return s;
}

}  // namespace detail

/// Builds the household appliances for one household from its own substream.
inline Household generate_household(const ScenarioSpec& spec, const Profiles& prof, int index, int bus) {
  const int T = spec.horizon;
  Rng rng(spec.rng_seed, static_cast<std::uint64_t>(index) + 1);
  Household h;
  h.id = index + 1;
  h.bus = bus;
  h.phase = rng.phase();
  auto base = [&](int id, const char* name, const std::vector<int>& window, const Range& weight) {
    Appliance a;
    a.id = id;
    a.household = h.id;
    a.name = name;
    a.eta = spec.eta.draw(rng);
    a.utility_weight = weight.draw(rng);
    a.work_window = window;
    return a;
  };

  std::vector<int> all(T);
  for (int t = 0; t < T; ++t) all[t] = t;

  {
    Appliance ac = base(1, "ac", all, spec.w_thermostatic);
    ThermostaticSpec th;
    th.alpha = spec.ac_alpha;
    th.beta = spec.ac_beta.draw(rng);
    const double conf = spec.ac_t_conf.draw(rng);
    th.t_conf.assign(T, conf);
    th.t_in_min.assign(T, spec.ac_t_min);
    th.t_in_max.assign(T, spec.ac_t_max);
    th.t_out = prof.t_out;
    th.t_init = conf;
    ac.kind = th;
    ac.p_min.assign(T, 0.0);
    ac.p_max = detail::on_window(all, T, spec.ac_p_max);
    h.appliances.push_back(std::move(ac));
  }
  const int arrival = rng.integer(spec.arrival[0], spec.arrival[1]);
  {
    const std::vector<int> win = detail::ring_slots(arrival + 1, arrival + 2, T);
    Appliance w = base(2, "washer", win, spec.w_deferrable);
    w.kind = DeferrableSpec{spec.washer_energy, spec.washer_energy,
                            detail::greedy_profile(win, T, spec.washer_p_max, spec.washer_energy, spec.dt_h)};
    w.p_min.assign(T, 0.0);
    w.p_max = detail::on_window(win, T, spec.washer_p_max);
    h.appliances.push_back(std::move(w));
  }
  {
    const std::vector<int> win = detail::ring_slots(arrival + 3, spec.dryer_last, T);
    Appliance d = base(3, "dryer", win, spec.w_deferrable);
    d.kind = DeferrableSpec{spec.dryer_e_min, spec.dryer_e_max,
                            detail::greedy_profile(win, T, spec.dryer_p_max, spec.dryer_e_max, spec.dt_h)};
    d.p_min.assign(T, 0.0);
    d.p_max = detail::on_window(win, T, spec.dryer_p_max);
    h.appliances.push_back(std::move(d));
  }
  {
    const std::vector<int> win = detail::ring_slots(spec.lighting_on, spec.lighting_off, T);
    Appliance l = base(4, "lighting", win, spec.w_interruptible);
    l.kind = InterruptibleSpec{detail::on_window(win, T, spec.lighting_p.hi)};
    l.p_min = detail::on_window(win, T, spec.lighting_p.lo);
    l.p_max = detail::on_window(win, T, spec.lighting_p.hi);
    h.appliances.push_back(std::move(l));
  }
  {
    Appliance p = base(5, "plug", all, spec.w_interruptible);
    p.kind = InterruptibleSpec{detail::on_window(all, T, spec.plug_pref.draw(rng))};
    p.p_min = detail::on_window(all, T, spec.plug_p.lo);
    p.p_max = detail::on_window(all, T, spec.plug_p.hi);
    h.appliances.push_back(std::move(p));
  }
  return h;
}

/// Full SI scenario for a spec; validated against every scenario invariant.
inline Scenario generate(const ScenarioSpec& spec) {
  const int T = spec.horizon;
  const Profiles prof = synth_profiles(spec);
  Scenario sc;
  sc.rng_seed = spec.rng_seed;
  sc.t_out = prof.t_out;
  Network& net = sc.network;
  net.units = UnitSystem::SI;
  net.v_ref = spec.v_ref_kv;
  net.base_kv = spec.v_ref_kv;
  net.base_kva = spec.s_base_kva;
  net.horizon = T;
  net.dt = spec.dt_h;

  std::vector<int> ids{0};
  for (const FeederLine& l : spec.lines) {
    if (std::find(ids.begin(), ids.end(), l.from) == ids.end()) ids.push_back(l.from);
    if (std::find(ids.begin(), ids.end(), l.to) == ids.end()) ids.push_back(l.to);
  }
  std::sort(ids.begin(), ids.end());
  for (int id : ids) {
    Bus b;
    b.id = id;
    b.v_min = spec.v_min_kv;
    b.v_max = spec.v_max_kv;
    for (int p = 0; p < 3; ++p) {
      b.critical.p[p].assign(T, 0.0);
      b.critical.q[p].assign(T, 0.0);
    }
    net.buses.push_back(std::move(b));
  }
  for (const FeederLine& fl : spec.lines) {
    Line l;
    l.from = fl.from;
    l.to = fl.to;
    const double r = fl.r_ohm * spec.impedance_scale;
    const double x = fl.x_ohm * spec.impedance_scale;
    l.r = Mat3::Constant(spec.mutual_ratio * r);
    l.x = Mat3::Constant(spec.mutual_ratio * x);
    l.r.diagonal().setConstant(r);
    l.x.diagonal().setConstant(x);
    net.lines.push_back(l);
  }

  // Network substream: PV placement and sizing.
  Rng net_rng(spec.rng_seed, 0);
  net.costs["pcc"] = CostProfile{prof.a, prof.b, prof.c};
  net.costs["pv"] = CostProfile{Series(T, spec.pv_cost[0]), Series(T, spec.pv_cost[1]), Series(T, spec.pv_cost[2])};
  for (std::size_t k = 0; k < spec.pv_buses.size(); ++k) {
    DgUnit g;
    g.id = static_cast<int>(k) + 1;
    g.bus = spec.pv_buses[k];
    g.phase = net_rng.phase();
    const double cap = spec.pv_capacity_kw.draw(net_rng);
    for (int t = 0; t < T; ++t) g.p_max.push_back(cap * prof.pv[t]);
    g.q_min = -spec.pv_q_kvar;
    g.q_max = spec.pv_q_kvar;
    g.cost = "pv";
    net.dg.push_back(std::move(g));
  }

  // Households: one substream each, in placement order.
  const double crit_tan = reactive_ratio(spec.critical_pf);
  int serial = 0;
  for (int bus : spec.load_buses) {
    for (int k = 0; k < spec.households_per_bus; ++k, ++serial) {
      Household h = generate_household(spec, prof, serial, bus);
      Rng crit_rng(spec.rng_seed, static_cast<std::uint64_t>(serial) + 1 + (1ULL << 32));
      const double peak = spec.critical_peak_kw.draw(crit_rng);
      Bus& b = net.buses[net.bus_index(bus)];
      const int ph = index(h.phase);
      for (int t = 0; t < T; ++t) {
        b.critical.p[ph][t] += peak * prof.critical[t];
        b.critical.q[ph][t] += peak * prof.critical[t] * crit_tan;
      }
      sc.households.push_back(std::move(h));
    }
  }
  for (const Household& h : sc.households) net.buses[net.bus_index(h.bus)].households.push_back({h.id, h.phase});
  for (const DgUnit& g : net.dg) net.buses[net.bus_index(g.bus)].dg = g.id;

  sc.event.window = detail::ring_slots(spec.event_first, spec.event_last, T);
  sc.event.s_cap = spec.s_cap_mva;
  orient_lines(net);
  check_invariants(sc);
  return sc;
}

}  // namespace resdr
