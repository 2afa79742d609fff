#pragma once

// Policy runs and their plot-ready CSV reports. Every violation flag is
// recomputed from the exact power flow of the schedule.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "resdr/core.hpp"
#include "resdr/netmodel.hpp"
#include "resdr/optimizer.hpp"
#include "resdr/pfexact.hpp"

namespace resdr {

enum class Policy { WoDlc, Conventional, Proposed };

inline constexpr std::array<Policy, 3> kPolicies{Policy::WoDlc, Policy::Conventional, Policy::Proposed};

inline const char* policy_name(Policy p) {
  switch (p) {
    case Policy::WoDlc: return "wo-dlc";
    case Policy::Conventional: return "conventional";
    case Policy::Proposed: return "proposed";
  }
  return "?";
}

inline Policy parse_policy(const std::string& s) {
  for (Policy p : kPolicies)
    if (s == policy_name(p)) return p;
  throw ParseError("--policy", "unknown policy '" + s + "'");
}

/// Relative band inside which a cap or voltage limit counts as met.
inline constexpr double kViolationTol = 1e-3;

struct RunSummary {
  double objective = 0.0;  // kappa * utility - LSE cost, simulated
  double lse_cost = 0.0;
  double utility = 0.0;
  double peak_event_mva = 0.0;  // worst |s_0| inside the event window
  double vmin_kv = 0.0;         // worst phase voltage over the horizon
  int vmin_slot = 0;            // 1-based
  bool cap_violation = false;
  bool voltage_violation = false;
  int cuts = 0;
  int outer_iterations = 0;
  bool outer_converged = true;
  KktResiduals kkt;
  double max_energy_residual = 0.0;  // pu
  double solve_seconds = 0.0;
};

struct PolicyRun {
  Policy policy = Policy::Proposed;
  Solution solution;
  RunSummary summary;
};

inline RunSummary summarize(const Network& pu, const std::vector<Household>& households, const DlcEvent& event,
                            const Solution& sol, const ObjectiveSpec& obj) {
  const SimulationResult& sim = sol.simulated;
  RunSummary s;
  s.utility = total_utility(households, sol.schedule, pu.dt);
  s.lse_cost = lse_cost(pu, sim);
  s.objective = obj.kappa * s.utility - s.lse_cost;
  for (int t : event.window) s.peak_event_mva = std::max(s.peak_event_mva, sim.pcc_norm[t]);
  s.cap_violation = s.peak_event_mva > event.s_cap * (1.0 + kViolationTol);
  s.vmin_kv = kInf;
  for (int t = 0; t < static_cast<int>(sim.vmin.size()); ++t) {
    const double v = sim.vmin[t].minCoeff() * pu.base_kv;
    if (v < s.vmin_kv) {
      s.vmin_kv = v;
      s.vmin_slot = t + 1;
    }
  }
  for (std::size_t t = 0; t < sim.states.size(); ++t)
    for (std::size_t b = 0; b < pu.buses.size(); ++b)
      for (int p = 0; p < 3; ++p) {
        if (!pu.buses[b].phases[p]) continue;
        const double v = std::abs(sim.states[t].V[b][p]);
        if (v < pu.buses[b].v_min * (1.0 - kViolationTol) || v > pu.buses[b].v_max * (1.0 + kViolationTol))
          s.voltage_violation = true;
      }
  s.cuts = sol.cuts;
  s.outer_iterations = sol.outer_iterations;
  s.outer_converged = sol.outer_converged;
  s.kkt = sol.kkt;
  for (double r : sim.energy_residual) s.max_energy_residual = std::max(s.max_energy_residual, r);
  s.solve_seconds = sol.solve_seconds;
  return s;
}

/// Runs one policy on an SI scenario.
inline PolicyRun run_policy(const Scenario& sc, Policy policy, const DlcOptions& opt = {},
                            const ObjectiveSpec& obj = {}) {
  const Network pu = to_per_unit(sc.network);
  PolicyRun run;
  run.policy = policy;
  switch (policy) {
    case Policy::WoDlc: run.solution = baseline_wo_dlc(pu, sc.households, opt); break;
    case Policy::Conventional:
      run.solution = baseline_conventional_dlc(pu, sc.households, sc.event, obj, opt);
      break;
    case Policy::Proposed: run.solution = solve_dlc(pu, sc.households, sc.event, obj, opt); break;
  }
  run.summary = summarize(pu, sc.households, sc.event, run.solution, obj);
  return run;
}

// ---------------------------------------------------------------------------
// CSV text

namespace detail {

inline std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

inline const char* flag(bool b) { return b ? "true" : "false"; }

}  // namespace detail

inline std::string pcc_csv(const PolicyRun& run, double base_kva) {
  const SimulationResult& sim = run.solution.simulated;
  std::ostringstream o;
  o << "t,s_mva,p_mw,q_mvar\n";
  for (std::size_t t = 0; t < sim.pcc_norm.size(); ++t) {
    const double scale = base_kva / 1000.0;
    o << t + 1 << ',' << detail::num(sim.pcc_norm[t]) << ',' << detail::num(sim.pcc[t].head<3>().sum() * scale)
      << ',' << detail::num(sim.pcc[t].tail<3>().sum() * scale) << '\n';
  }
  return o.str();
}

inline std::string vmin_csv(const PolicyRun& run, double base_kv) {
  const SimulationResult& sim = run.solution.simulated;
  std::ostringstream o;
  o << "t,v_a_kv,v_b_kv,v_c_kv\n";
  for (std::size_t t = 0; t < sim.vmin.size(); ++t) {
    o << t + 1;
    for (int p = 0; p < 3; ++p) o << ',' << detail::num(sim.vmin[t][p] * base_kv);
    o << '\n';
  }
  return o.str();
}

/// Per-appliance active power of one household, one column per appliance.
inline std::string household_csv(const Household& h, const std::vector<ApplianceSchedule>& sched, int horizon) {
  std::ostringstream o;
  o << 't';
  for (const Appliance& a : h.appliances) o << ',' << a.name << "_kw";
  o << '\n';
  for (int t = 0; t < horizon; ++t) {
    o << t + 1;
    for (const ApplianceSchedule& s : sched) o << ',' << detail::num(s.p[t]);
    o << '\n';
  }
  return o.str();
}

inline std::string summary_header() {
  return "policy,objective,lse_cost,utility,peak_event_mva,vmin_kv,vmin_slot,cap_violation,voltage_violation,"
         "cuts,outer_iterations,outer_converged,kkt_primal,kkt_stationarity,kkt_complementarity,"
         "max_energy_residual_pu\n";
}

/// One summary row. Solve time is left out so reports stay reproducible.
inline std::string summary_row(const PolicyRun& run) {
  const RunSummary& s = run.summary;
  using detail::num;
  std::ostringstream o;
  o << policy_name(run.policy) << ',' << num(s.objective) << ',' << num(s.lse_cost) << ',' << num(s.utility) << ','
    << num(s.peak_event_mva) << ',' << num(s.vmin_kv) << ',' << s.vmin_slot << ',' << detail::flag(s.cap_violation)
    << ',' << detail::flag(s.voltage_violation) << ',' << s.cuts << ',' << s.outer_iterations << ','
    << detail::flag(s.outer_converged) << ',' << num(s.kkt.primal) << ',' << num(s.kkt.stationarity) << ','
    << num(s.kkt.complementarity) << ',' << num(s.max_energy_residual) << '\n';
  return o.str();
}

inline void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  out << text;
  if (!out) throw Error("write failed: " + path.string());
}

/// pcc.csv, vmin.csv, household_<id>.csv and summary.csv for one run.
inline void write_bundle(const std::filesystem::path& dir, const Scenario& sc, const PolicyRun& run) {
  std::filesystem::create_directories(dir);
  write_text(dir / "pcc.csv", pcc_csv(run, sc.network.base_kva));
  write_text(dir / "vmin.csv", vmin_csv(run, sc.network.base_kv));
  for (std::size_t h = 0; h < sc.households.size(); ++h)
    write_text(dir / ("household_" + std::to_string(sc.households[h].id) + ".csv"),
               household_csv(sc.households[h], run.solution.schedule.households[h], sc.network.horizon));
  write_text(dir / "summary.csv", summary_header() + summary_row(run));
}

// ---------------------------------------------------------------------------
// Comparison of the three policies

inline std::string compare_pcc_csv(const std::vector<PolicyRun>& runs) {
  std::ostringstream o;
  o << 't';
  for (const PolicyRun& r : runs) o << ',' << policy_name(r.policy) << "_s_mva";
  o << '\n';
  const std::size_t T = runs.empty() ? 0 : runs.front().solution.simulated.pcc_norm.size();
  for (std::size_t t = 0; t < T; ++t) {
    o << t + 1;
    for (const PolicyRun& r : runs) o << ',' << detail::num(r.solution.simulated.pcc_norm[t]);
    o << '\n';
  }
  return o.str();
}

inline std::string compare_vmin_csv(const std::vector<PolicyRun>& runs, double base_kv) {
  std::ostringstream o;
  o << 't';
  for (const PolicyRun& r : runs)
    for (char ph : {'a', 'b', 'c'}) o << ',' << policy_name(r.policy) << "_v_" << ph << "_kv";
  o << '\n';
  const std::size_t T = runs.empty() ? 0 : runs.front().solution.simulated.vmin.size();
  for (std::size_t t = 0; t < T; ++t) {
    o << t + 1;
    for (const PolicyRun& r : runs)
      for (int p = 0; p < 3; ++p) o << ',' << detail::num(r.solution.simulated.vmin[t][p] * base_kv);
    o << '\n';
  }
  return o.str();
}

inline std::string compare_markdown(const Scenario& sc, const std::vector<PolicyRun>& runs) {
  std::ostringstream o;
  char buf[256];
  o << "# Policy comparison (seed " << sc.rng_seed << ")\n\n";
  o << "| policy | LSE cost | objective | peak in event (MVA) | min voltage (kV) | cap violation | voltage violation "
       "|\n";
  o << "|---|---:|---:|---:|---:|---|---|\n";
  for (const PolicyRun& r : runs) {
    const RunSummary& s = r.summary;
    std::snprintf(buf, sizeof buf, "| %s | %.3f | %.3f | %.4f | %.4f (t=%d) | %s | %s |\n", policy_name(r.policy),
                  s.lse_cost, s.objective, s.peak_event_mva, s.vmin_kv, s.vmin_slot, detail::flag(s.cap_violation),
                  detail::flag(s.voltage_violation));
    o << buf;
  }
  const PolicyRun* wo = nullptr;
  const PolicyRun* prop = nullptr;
  for (const PolicyRun& r : runs) {
    if (r.policy == Policy::WoDlc) wo = &r;
    if (r.policy == Policy::Proposed) prop = &r;
  }
  if (wo && prop) {
    const double d = prop->summary.lse_cost - wo->summary.lse_cost;
    std::snprintf(buf, sizeof buf, "\nLSE cost change, proposed vs wo-dlc: %.3f -> %.3f (%+.3f, %+.2f%%)\n",
                  wo->summary.lse_cost, prop->summary.lse_cost, d, 100.0 * d / wo->summary.lse_cost);
    o << buf;
  }
  return o.str();
}

inline void write_comparison(const std::filesystem::path& dir, const Scenario& sc, const std::vector<PolicyRun>& runs) {
  std::filesystem::create_directories(dir);
  for (const PolicyRun& r : runs) write_bundle(dir / policy_name(r.policy), sc, r);
  write_text(dir / "pcc.csv", compare_pcc_csv(runs));
  write_text(dir / "vmin.csv", compare_vmin_csv(runs, sc.network.base_kv));
  std::string summary = summary_header();
  for (const PolicyRun& r : runs) summary += summary_row(r);
  write_text(dir / "summary.csv", summary);
  write_text(dir / "summary.md", compare_markdown(sc, runs));
}

}  // namespace resdr
