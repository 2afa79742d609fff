#pragma once

// Appliance models: classification, utilities, thermal dynamics and the
// per-appliance feasible set expressed as linear rows over local variables.

#include <algorithm>
#include <cmath>
#include <string>
#include <variant>
#include <vector>

#include "resdr/core.hpp"

namespace resdr {

/// Fixed demand, folded into bus-level critical load.
struct CriticalSpec {
  Series p;  // kW
  Series q;  // kvar
};

struct InterruptibleSpec {
  Series p_pref;  // kW
};

struct DeferrableSpec {
  double e_min = 0.0;  // kWh
  double e_max = 0.0;  // kWh
  Series p_pref;       // kW
};

struct ThermostaticSpec {
  double alpha = 0.9;
  double beta = -6.5;  // degF per kW, negative for cooling
  Series t_conf;       // degF
  Series t_in_min;
  Series t_in_max;
  Series t_out;
  double t_init = 75.0;
};

using ApplianceKind = std::variant<CriticalSpec, InterruptibleSpec, DeferrableSpec, ThermostaticSpec>;

inline const char* kind_name(const ApplianceKind& k) {
  switch (k.index()) {
    case 0: return "critical";
    case 1: return "interruptible";
    case 2: return "deferrable";
    default: return "thermostatic";
  }
}

struct Appliance {
  int id = 0;
  int household = 0;
  std::string name;
  ApplianceKind kind;
  double eta = 1.0;            // power factor
  Series p_min;                // kW, zero outside the work window
  Series p_max;                // kW, zero outside the work window
  std::vector<int> work_window;  // sorted 0-based slots
  double utility_weight = 1.0;

  int horizon() const { return static_cast<int>(p_max.size()); }
  bool is_critical() const { return std::holds_alternative<CriticalSpec>(kind); }
  bool is_thermostatic() const { return std::holds_alternative<ThermostaticSpec>(kind); }
  bool works_at(int t) const {
    return std::binary_search(work_window.begin(), work_window.end(), t);
  }
};

struct Household {
  int id = 0;
  int bus = 0;
  Phase phase = Phase::A;
  std::vector<Appliance> appliances;
};

/// One appliance's trajectory. t_in is only populated for thermostatic kinds.
struct ApplianceSchedule {
  Series p;  // kW
  Series q;  // kvar
  Series t_in;
};

/// Full decision: per household, per appliance; plus DG reactive dispatch (kvar).
struct Schedule {
  std::vector<std::vector<ApplianceSchedule>> households;
  std::vector<Series> dg_q;
};

/// tan(arccos(eta)): the reactive-to-active ratio fixed by a power factor.
inline double reactive_ratio(double eta) {
  if (!(eta > 0.0 && eta <= 1.0)) throw std::invalid_argument("power factor must lie in (0, 1]");
  return std::sqrt(1.0 / (eta * eta) - 1.0);
}

inline double reactive_from_active(double p, double eta) { return p * reactive_ratio(eta); }

inline double temperature_step(double t_in_prev, double t_out, double p, double alpha, double beta) {
  return t_in_prev + alpha * (t_out - t_in_prev) + beta * p;
}

/// Indoor temperature trajectory induced by an AC power series.
inline Series thermal_trajectory(const ThermostaticSpec& th, const Series& p) {
  Series out(p.size());
  double prev = th.t_init;
  for (std::size_t t = 0; t < p.size(); ++t) {
    prev = temperature_step(prev, th.t_out[t], p[t], th.alpha, th.beta);
    out[t] = prev;
  }
  return out;
}

/// Customer utility of a schedule. Deferrable deviations are weighted by the
/// 1-based slot position inside the work window.
inline double utility(const Appliance& app, const ApplianceSchedule& s, double dt = 1.0) {
  const double b = app.utility_weight;
  return std::visit(
      [&](const auto& k) -> double {
        using K = std::decay_t<decltype(k)>;
        if constexpr (std::is_same_v<K, CriticalSpec>) {
          return 0.0;
        } else if constexpr (std::is_same_v<K, InterruptibleSpec>) {
          double u = 0.0;
          for (std::size_t t = 0; t < s.p.size(); ++t) {
            const double d = s.p[t] - k.p_pref[t];
            u -= b * d * d;
          }
          return u;
        } else if constexpr (std::is_same_v<K, DeferrableSpec>) {
          double energy = 0.0, dev = 0.0;
          for (std::size_t w = 0; w < app.work_window.size(); ++w) {
            const int t = app.work_window[w];
            energy += s.p[t] * dt;
            const double d = s.p[t] - k.p_pref[t];
            dev += static_cast<double>(w + 1) * d * d;
          }
          return b * (energy - dev);
        } else {
          if (s.t_in.size() != s.p.size())
            throw std::invalid_argument("thermostatic schedule needs an indoor temperature series");
          double u = 0.0;
          for (std::size_t t = 0; t < s.t_in.size(); ++t) {
            const double d = s.t_in[t] - k.t_conf[t];
            u -= b * d * d;
          }
          return u;
        }
      },
      app.kind);
}

// ---------------------------------------------------------------------------
// Feasible set as linear rows over appliance-local variables.

enum class LocalVarKind { P, Q, TIn };

struct LocalVar {
  LocalVarKind kind;
  int t;
  bool operator==(const LocalVar&) const = default;
};

enum class RowRole { PowerBox, PowerFactorTie, EnergyWindow, TemperatureEvolution, ComfortBand };

/// lo <= sum(coef * var) + 0 <= hi. Equality when lo == hi.
struct LocalRow {
  RowRole role;
  std::vector<std::pair<LocalVar, double>> terms;
  double lo;
  double hi;
  int t = -1;
};

struct ApplianceConstraints {
  std::vector<LocalVar> variables;
  std::vector<LocalRow> rows;

  std::size_t count(RowRole role) const {
    return static_cast<std::size_t>(
        std::count_if(rows.begin(), rows.end(), [&](const LocalRow& r) { return r.role == role; }));
  }
};

/// Variables exist only inside the work window (outside it p = q = 0 by
/// construction). Thermostatic appliances additionally carry T_in for every slot.
inline ApplianceConstraints feasible_set_constraints(const Appliance& app, double dt = 1.0) {
  ApplianceConstraints out;
  if (app.is_critical()) return out;

  const double kq = reactive_ratio(app.eta);
  for (int t : app.work_window) {
    out.variables.push_back({LocalVarKind::P, t});
    out.variables.push_back({LocalVarKind::Q, t});
    out.rows.push_back({RowRole::PowerBox, {{{LocalVarKind::P, t}, 1.0}}, app.p_min[t], app.p_max[t], t});
    out.rows.push_back(
        {RowRole::PowerFactorTie, {{{LocalVarKind::Q, t}, 1.0}, {{LocalVarKind::P, t}, -kq}}, 0.0, 0.0, t});
  }

  if (const auto* d = std::get_if<DeferrableSpec>(&app.kind)) {
    LocalRow row{RowRole::EnergyWindow, {}, d->e_min, d->e_max};
    for (int t : app.work_window) row.terms.push_back({{LocalVarKind::P, t}, dt});
    out.rows.push_back(std::move(row));
  } else if (const auto* th = std::get_if<ThermostaticSpec>(&app.kind)) {
    const int horizon = app.horizon();
    // T(t) - (1 - alpha) T(t-1) - beta p(t) = alpha T_out(t), with T(-1) = T_init.
    for (int t = 0; t < horizon; ++t) {
      out.variables.push_back({LocalVarKind::TIn, t});
      LocalRow row{RowRole::TemperatureEvolution, {{{LocalVarKind::TIn, t}, 1.0}}, 0.0, 0.0, t};
      double rhs = th->alpha * th->t_out[t];
      if (t == 0)
        rhs += (1.0 - th->alpha) * th->t_init;
      else
        row.terms.push_back({{LocalVarKind::TIn, t - 1}, -(1.0 - th->alpha)});
      if (app.works_at(t)) row.terms.push_back({{LocalVarKind::P, t}, -th->beta});
      row.lo = row.hi = rhs;
      out.rows.push_back(std::move(row));
      out.rows.push_back(
          {RowRole::ComfortBand, {{{LocalVarKind::TIn, t}, 1.0}}, th->t_in_min[t], th->t_in_max[t], t});
    }
  }
  return out;
}

/// Separable quadratic form of the utility over local variables:
/// U = constant + sum_k (0.5 * hess_k * x_k^2 + grad_k * x_k).
struct UtilityQuadratic {
  std::vector<LocalVar> vars;
  std::vector<double> hess;
  std::vector<double> grad;
  double constant = 0.0;
};

inline UtilityQuadratic utility_terms(const Appliance& app, double dt = 1.0) {
  UtilityQuadratic u;
  const double b = app.utility_weight;
  auto add = [&](LocalVar v, double w, double target, double lin) {
    // -w (x - target)^2 + lin x
    u.vars.push_back(v);
    u.hess.push_back(-2.0 * w);
    u.grad.push_back(2.0 * w * target + lin);
    u.constant -= w * target * target;
  };
  if (const auto* i = std::get_if<InterruptibleSpec>(&app.kind)) {
    for (int t = 0; t < app.horizon(); ++t) {
      if (app.works_at(t))
        add({LocalVarKind::P, t}, b, i->p_pref[t], 0.0);
      else
        u.constant -= b * i->p_pref[t] * i->p_pref[t];
    }
  } else if (const auto* d = std::get_if<DeferrableSpec>(&app.kind)) {
    for (std::size_t w = 0; w < app.work_window.size(); ++w) {
      const int t = app.work_window[w];
      add({LocalVarKind::P, t}, b * static_cast<double>(w + 1), d->p_pref[t], b * dt);
    }
  } else if (const auto* th = std::get_if<ThermostaticSpec>(&app.kind)) {
    for (int t = 0; t < app.horizon(); ++t) add({LocalVarKind::TIn, t}, b, th->t_conf[t], 0.0);
  }
  return u;
}

/// Independent re-check of a schedule against the appliance's constraints.
/// Returns human-readable violations; empty means feasible.
inline std::vector<std::string> check_schedule(const Appliance& app, const ApplianceSchedule& s, double dt,
                                               double tol_eq, double tol_ineq) {
  std::vector<std::string> bad;
  const int horizon = app.horizon();
  auto tag = [&](const std::string& what, int t) {
    return app.name + "#" + std::to_string(app.id) + " " + what + (t >= 0 ? " t=" + std::to_string(t + 1) : "");
  };
  if (static_cast<int>(s.p.size()) != horizon || static_cast<int>(s.q.size()) != horizon) {
    bad.push_back(tag("schedule length mismatch", -1));
    return bad;
  }
  if (app.is_critical()) return bad;
  const double kq = reactive_ratio(app.eta);
  for (int t = 0; t < horizon; ++t) {
    if (!app.works_at(t)) {
      if (std::abs(s.p[t]) > tol_eq || std::abs(s.q[t]) > tol_eq) bad.push_back(tag("runs outside work window", t));
      continue;
    }
    if (s.p[t] < app.p_min[t] - tol_ineq || s.p[t] > app.p_max[t] + tol_ineq) bad.push_back(tag("power bound", t));
    if (std::abs(s.q[t] - kq * s.p[t]) > tol_eq * std::max(1.0, std::abs(s.p[t])))
      bad.push_back(tag("power factor tie", t));
  }
  if (const auto* d = std::get_if<DeferrableSpec>(&app.kind)) {
    double e = 0.0;
    for (int t : app.work_window) e += s.p[t] * dt;
    if (e < d->e_min - tol_ineq || e > d->e_max + tol_ineq) bad.push_back(tag("energy window", -1));
  } else if (const auto* th = std::get_if<ThermostaticSpec>(&app.kind)) {
    if (static_cast<int>(s.t_in.size()) != horizon) {
      bad.push_back(tag("missing indoor temperature", -1));
      return bad;
    }
    const Series rebuilt = thermal_trajectory(*th, s.p);
    for (int t = 0; t < horizon; ++t) {
      if (std::abs(rebuilt[t] - s.t_in[t]) > tol_eq * std::max(1.0, std::abs(rebuilt[t])))
        bad.push_back(tag("temperature evolution", t));
      if (s.t_in[t] < th->t_in_min[t] - tol_ineq || s.t_in[t] > th->t_in_max[t] + tol_ineq)
        bad.push_back(tag("comfort band", t));
    }
  }
  return bad;
}

}  // namespace resdr
