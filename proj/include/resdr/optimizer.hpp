#pragma once

// Welfare-maximizing DLC dispatch: QP assembly over the whole horizon, PCC
// apparent-power cap by cutting planes, sequential re-linearization against
// the exact power flow, and the two reference policies.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Eigenvalues>

#include "resdr/appliance.hpp"
#include "resdr/core.hpp"
#include "resdr/distflow.hpp"
#include "resdr/linear_system.hpp"
#include "resdr/netmodel.hpp"
#include "resdr/pfexact.hpp"
#include "resdr/qp.hpp"

namespace resdr {

struct ObjectiveSpec {
  double kappa = 1.0;
};

struct DlcOptions {
  QpSettings qp;
  int max_outer = 10;
  double outer_tol = 1e-4;  // pu^2, change of simulated squared voltages
  int max_cuts = 50;        // per slot
  double cut_tol = 1e-6;    // MVA
  PfOptions pf;
};

/// normal . z(t) <= s_cap with z the stacked PCC injection in MVA.
struct PccCut {
  int t = 0;
  Vec6 normal = Vec6::Zero();
  double s_cap = 0.0;
};

/// Supporting hyperplanes for every slot of the event whose PCC injection
/// leaves the cap ball. Empty result means the cap is satisfied.
inline std::vector<PccCut> pcc_cap_cuts(const std::vector<Vec6>& z_mva, const DlcEvent& event, double tol = 1e-6) {
  std::vector<PccCut> cuts;
  if (!std::isfinite(event.s_cap)) return cuts;
  for (int t : event.window) {
    if (t < 0 || t >= static_cast<int>(z_mva.size())) throw std::out_of_range("DLC slot outside PCC series");
    const double norm = z_mva[t].norm();
    if (norm <= event.s_cap + tol) continue;
    cuts.push_back({t, z_mva[t] / norm, event.s_cap});
  }
  return cuts;
}

// ---------------------------------------------------------------------------
// Problem assembly

struct ProblemLayout {
  DeviceColumns dev;
  std::vector<std::vector<std::vector<int>>> t_in;  // [household][appliance][t], -1 if absent
  NetworkColumns net;                                // empty for the aggregate model
  std::vector<int> pcc_p;                            // [t] auxiliary PCC power column (aggregate model)
  std::vector<std::array<InjectionExpr, 6>> pcc;     // [t] stacked PCC injection, pu
  bool aggregate = false;
};

struct BuiltProblem {
  QpProblem qp;
  ProblemLayout layout;
  int cut_rows = 0;
};

namespace detail {

/// Accumulates 0.5 x'Hx + c'x + offset while columns are still being added.
struct QuadAccumulator {
  std::vector<Eigen::Triplet<double>> h;
  std::vector<double> c;
  double offset = 0.0;

  void grow(int n) {
    if (static_cast<int>(c.size()) < n) c.resize(n, 0.0);
  }
  void linear(int col, double v) {
    grow(col + 1);
    c[col] += v;
  }
  /// Adds the pairwise entries for (g'x)^2 scaled by w, i.e. H += 2 w g g'.
  void square(const Terms& g, double w) {
    for (std::size_t i = 0; i < g.size(); ++i)
      for (std::size_t j = i; j < g.size(); ++j) {
        const double v = 2.0 * w * g[i].second * g[j].second;
        if (v == 0.0) continue;
        if (g[i].first == g[j].first && i != j) {
          h.emplace_back(g[i].first, g[i].first, 2.0 * v);
        } else {
          h.emplace_back(g[i].first, g[j].first, v);
        }
      }
  }
};

inline std::string device_tag(const Household& h, const Appliance& a, int t) {
  return "[household=" + std::to_string(h.id) + ",appliance=" + std::to_string(a.id) + ",t=" + std::to_string(t + 1) +
         "]";
}

inline void add_devices(const Network& net, const std::vector<Household>& households, const ObjectiveSpec& obj,
                        LinearSystem& sys, QuadAccumulator& f, ProblemLayout& lay) {
  const int T = net.horizon;
  lay.dev.p.resize(households.size());
  lay.dev.q.resize(households.size());
  lay.t_in.resize(households.size());
  for (std::size_t h = 0; h < households.size(); ++h) {
    const Household& hh = households[h];
    lay.dev.p[h].assign(hh.appliances.size(), std::vector<int>(T, -1));
    lay.dev.q[h].assign(hh.appliances.size(), std::vector<int>(T, -1));
    lay.t_in[h].assign(hh.appliances.size(), std::vector<int>(T, -1));
    for (std::size_t a = 0; a < hh.appliances.size(); ++a) {
      const Appliance& app = hh.appliances[a];
      if (app.horizon() != T) throw std::invalid_argument("appliance horizon does not match network");
      const ApplianceConstraints ac = feasible_set_constraints(app, net.dt);
      auto col_of = [&](const LocalVar& v) -> int& {
        switch (v.kind) {
          case LocalVarKind::P: return lay.dev.p[h][a][v.t];
          case LocalVarKind::Q: return lay.dev.q[h][a][v.t];
          default: return lay.t_in[h][a][v.t];
        }
      };
      for (const LocalVar& v : ac.variables) {
        const char* stem = v.kind == LocalVarKind::P ? "p" : v.kind == LocalVarKind::Q ? "q" : "t_in";
        col_of(v) = sys.add_variable(stem + device_tag(hh, app, v.t));
      }
      for (const LocalRow& row : ac.rows) {
        if (row.terms.size() == 1 && row.terms[0].second == 1.0 &&
            (row.role == RowRole::PowerBox || row.role == RowRole::ComfortBand)) {
          sys.tighten(col_of(row.terms[0].first), row.lo, row.hi);
          continue;
        }
        Terms terms;
        for (const auto& [v, coef] : row.terms) terms.push_back({col_of(v), coef});
        std::string label;
        switch (row.role) {
          case RowRole::PowerFactorTie: label = "power_factor" + device_tag(hh, app, row.t); break;
          case RowRole::EnergyWindow:
            label = "energy[household=" + std::to_string(hh.id) + ",appliance=" + std::to_string(app.id) + "]";
            break;
          case RowRole::TemperatureEvolution: label = "thermal" + device_tag(hh, app, row.t); break;
          default: label = "appliance" + device_tag(hh, app, row.t); break;
        }
        sys.add_range(terms, row.lo, row.hi, label);
      }
      const UtilityQuadratic u = utility_terms(app, net.dt);
      f.grow(sys.num_vars());
      for (std::size_t k = 0; k < u.vars.size(); ++k) {
        const int col = col_of(u.vars[k]);
        if (col < 0) continue;
        if (u.hess[k] != 0.0) f.h.emplace_back(col, col, -obj.kappa * u.hess[k]);
        f.linear(col, -obj.kappa * u.grad[k]);
      }
      f.offset -= obj.kappa * u.constant;
    }
  }
  const double base = net.base_kva;
  lay.dev.dg_q.assign(net.dg.size(), std::vector<int>(T, -1));
  for (std::size_t g = 0; g < net.dg.size(); ++g)
    for (int t = 0; t < T; ++t)
      lay.dev.dg_q[g][t] =
          sys.add_variable("dg_q[dg=" + std::to_string(net.dg[g].id) + ",t=" + std::to_string(t + 1) + "]",
                           net.dg[g].q_min * base, net.dg[g].q_max * base);
  f.grow(sys.num_vars());
}

/// DG production cost; DG active output is fixed so this is a constant.
inline double dg_cost(const Network& net) {
  double total = 0.0;
  for (const DgUnit& g : net.dg) {
    if (!g.cost) continue;
    const CostProfile& c = net.costs.at(*g.cost);
    for (int t = 0; t < net.horizon; ++t) total += c.eval(t, g.p_max[t] * net.base_kva);
  }
  return total;
}

inline QpProblem finish(LinearSystem sys, QuadAccumulator& f) {
  QpProblem qp;
  const int n = sys.num_vars();
  f.grow(n);
  qp.H = symmetric_from_triplets(n, f.h);
  qp.c = Eigen::Map<const VectorXd>(f.c.data(), n);
  qp.offset = f.offset;
  qp.sys = std::move(sys);
  return qp;
}

}  // namespace detail

/// Proximal pull 0.5 (q - center)' W (q - center) on DG reactive dispatch (kvar).
struct DgProximal {
  std::vector<Series> center;           // [dg][t]
  std::vector<Eigen::MatrixXd> weight;  // [t], |dg| x |dg|, $/kvar^2
};

/// Full-horizon QP with the linearized three-phase network around `op`.
/// The objective is stored for minimization: -kappa * utility + LSE cost.
/// `net` must be in per-unit.
inline BuiltProblem build_problem(const Network& net, const std::vector<Household>& households,
                                  const ObjectiveSpec& obj, const OperatingPoint& op,
                                  const DgProximal* prox = nullptr) {
  if (net.units != UnitSystem::PerUnit) throw std::invalid_argument("build_problem expects a per-unit network");
  if (op.horizon != net.horizon || static_cast<int>(op.P.size()) != net.horizon)
    throw std::invalid_argument("operating point horizon does not match network");
  BuiltProblem bp;
  LinearSystem sys;
  detail::QuadAccumulator f;
  ProblemLayout& lay = bp.layout;
  detail::add_devices(net, households, obj, sys, f, lay);
  lay.net = add_network_variables(sys, net);
  f.grow(sys.num_vars());

  const Topology topo = build_topology(net);
  const int root = net.bus_index(0);
  const CostProfile& pcc_cost = net.costs.at("pcc");
  lay.pcc.resize(net.horizon);
  for (int t = 0; t < net.horizon; ++t) {
    const BusInjections inj = nodal_injections(net, households, lay.dev, t);
    linearize(op, net, t, lay.net, inj, sys);
    for (const BoundRow& b : security_rows(net, t, lay.net)) sys.tighten(b.col, b.lo, b.hi);
    Terms p0;
    for (int l : topo.children_lines[root])
      for (int p = 0; p < 3; ++p) {
        if (lay.net.P[t][l][p] < 0) continue;
        lay.pcc[t][p].terms.push_back({lay.net.P[t][l][p], 1.0});
        lay.pcc[t][3 + p].terms.push_back({lay.net.Q[t][l][p], 1.0});
        p0.push_back({lay.net.P[t][l][p], net.base_kva});
      }
    f.square(p0, pcc_cost.a[t]);
    for (auto [c, v] : p0) f.linear(c, pcc_cost.b[t] * v);
    f.offset += pcc_cost.c[t];
    if (prox) {
      const Eigen::MatrixXd& W = prox->weight[t];
      for (std::size_t g = 0; g < net.dg.size(); ++g) {
        const int cg = lay.dev.dg_q[g][t];
        double lin = 0.0;
        for (std::size_t k = 0; k < net.dg.size(); ++k) {
          lin -= W(g, k) * prox->center[k][t];
          if (k >= g && W(g, k) != 0.0) f.h.emplace_back(cg, lay.dev.dg_q[k][t], W(g, k));
        }
        f.linear(cg, lin);
        f.offset += 0.5 * prox->center[g][t] * W.row(g).dot(Eigen::VectorXd::NullaryExpr(
                                                   W.cols(), [&](Eigen::Index k) { return prox->center[k][t]; }));
      }
    }
  }
  f.offset += detail::dg_cost(net);
  bp.qp = detail::finish(std::move(sys), f);
  return bp;
}

/// Curvature of the purchase cost in the DG reactive outputs through the
/// I^2 R loss of every line they share on the way to the PCC ($/kvar^2 per
/// slot), times a safety factor. It serves as the proximal weight of the outer
/// loop: DG reactive power enters the linearized model only through loss
/// slopes, so without curvature the dispatch jumps between its limits from one
/// linearization to the next.
inline DgProximal loss_curvature_proximal(const Network& net, const SimulationResult& sim, const Schedule& center,
                                          double safety = 1.5) {
  const Topology topo = build_topology(net);
  const CostProfile& cost = net.costs.at("pcc");
  const int G = static_cast<int>(net.dg.size());
  DgProximal prox;
  prox.center = center.dg_q;
  prox.weight.assign(net.horizon, Eigen::MatrixXd::Zero(G, G));
  // Lines on each DG's path to the PCC.
  std::vector<std::vector<int>> path(G);
  for (int g = 0; g < G; ++g)
    for (int b = net.bus_index(net.dg[g].bus); topo.parent_line[b] >= 0;) {
      path[g].push_back(topo.parent_line[b]);
      b = net.bus_index(net.lines[topo.parent_line[b]].from);
    }
  for (int t = 0; t < net.horizon; ++t) {
    const double p0_kw = sim.pcc[t].head<3>().sum() * net.base_kva;
    const double price = std::max(cost.b[t] + 2.0 * cost.a[t] * p0_kw, 0.0);
    for (int g = 0; g < G; ++g)
      for (int k = 0; k < G; ++k) {
        const int pg = index(net.dg[g].phase), pk = index(net.dg[k].phase);
        double acc = 0.0;
        for (int l : path[g]) {
          if (std::find(path[k].begin(), path[k].end(), l) == path[k].end()) continue;
          const Line& ln = net.lines[l];
          const int from = net.bus_index(ln.from);
          const double v = std::sqrt(std::max(sim.slices[t].v[from][pg] * sim.slices[t].v[from][pk], 1e-12));
          acc += std::abs(ln.r(pg, pk)) / v;
        }
        prox.weight[t](g, k) = safety * price * 2.0 * acc / net.base_kva;
      }
    // Keep the weight positive semidefinite.
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(prox.weight[t]);
    if (G > 0 && es.eigenvalues().minCoeff() < 0.0)
      prox.weight[t] += (-es.eigenvalues().minCoeff()) * Eigen::MatrixXd::Identity(G, G);
  }
  return prox;
}

/// Same devices and objective, but the network is replaced by the lossless
/// aggregate balance: PCC injection = total demand minus DG.
inline BuiltProblem build_aggregate_problem(const Network& net, const std::vector<Household>& households,
                                            const ObjectiveSpec& obj) {
  if (net.units != UnitSystem::PerUnit) throw std::invalid_argument("build_aggregate_problem expects a per-unit network");
  BuiltProblem bp;
  LinearSystem sys;
  detail::QuadAccumulator f;
  ProblemLayout& lay = bp.layout;
  lay.aggregate = true;
  detail::add_devices(net, households, obj, sys, f, lay);
  const CostProfile& pcc_cost = net.costs.at("pcc");
  lay.pcc.resize(net.horizon);
  lay.pcc_p.resize(net.horizon);
  for (int t = 0; t < net.horizon; ++t) {
    const BusInjections inj = nodal_injections(net, households, lay.dev, t);
    for (std::size_t b = 0; b < net.buses.size(); ++b)
      for (int p = 0; p < 3; ++p) {
        for (int k = 0; k < 2; ++k) {
          const InjectionExpr& e = k == 0 ? inj.p[b][p] : inj.q[b][p];
          InjectionExpr& z = lay.pcc[t][3 * k + p];
          z.constant += e.constant;
          z.terms.insert(z.terms.end(), e.terms.begin(), e.terms.end());
        }
      }
    const int col = sys.add_variable("pcc_p[t=" + std::to_string(t + 1) + "]");
    lay.pcc_p[t] = col;
    Terms row{{col, 1.0}};
    double rhs = 0.0;
    for (int p = 0; p < 3; ++p) {
      for (auto [c, v] : lay.pcc[t][p].terms) row.push_back({c, -net.base_kva * v});
      rhs += net.base_kva * lay.pcc[t][p].constant;
    }
    sys.add_equality(std::move(row), rhs, "pcc_balance[t=" + std::to_string(t + 1) + "]");
    f.grow(sys.num_vars());
    f.h.emplace_back(col, col, 2.0 * pcc_cost.a[t]);
    f.linear(col, pcc_cost.b[t]);
    f.offset += pcc_cost.c[t];
  }
  f.offset += detail::dg_cost(net);
  bp.qp = detail::finish(std::move(sys), f);
  return bp;
}

/// PCC injection per slot (MVA) implied by a primal point.
inline std::vector<Vec6> pcc_values(const ProblemLayout& lay, const Network& net, const VectorXd& x) {
  std::vector<double> xs(x.data(), x.data() + x.size());
  std::vector<Vec6> out(lay.pcc.size());
  for (std::size_t t = 0; t < lay.pcc.size(); ++t)
    for (int k = 0; k < 6; ++k) out[t][k] = lay.pcc[t][k].eval(xs) * net.base_kva / 1000.0;
  return out;
}

inline void add_cut(BuiltProblem& bp, const Network& net, const PccCut& cut) {
  const double scale = net.base_kva / 1000.0;
  std::map<int, double> merged;
  double rhs = cut.s_cap;
  for (int k = 0; k < 6; ++k) {
    const InjectionExpr& e = bp.layout.pcc[cut.t][k];
    rhs -= cut.normal[k] * scale * e.constant;
    for (auto [c, v] : e.terms) merged[c] += cut.normal[k] * scale * v;
  }
  Terms terms(merged.begin(), merged.end());
  bp.qp.sys.add_less_equal(std::move(terms), rhs,
                           "pcc_cap[t=" + std::to_string(cut.t + 1) + ",cut=" + std::to_string(++bp.cut_rows) + "]");
}

// ---------------------------------------------------------------------------
// Solutions

struct Solution {
  Schedule schedule;
  NetworkState network;          // linear-model values (empty for the aggregate model)
  SimulationResult simulated;    // exact power flow of the schedule
  std::vector<Vec6> pcc_model;   // [t] PCC injection predicted by the QP, MVA
  double qp_objective = 0.0;     // minimized form
  KktResiduals kkt;
  KktResiduals worst_kkt;        // componentwise worst over every QP solved
  int cuts = 0;
  int outer_iterations = 0;
  bool outer_converged = true;
  bool cut_limit_reached = false;
  double solve_seconds = 0.0;
  std::vector<double> objective_trace;   // QP optimum after every solve
  std::vector<double> outer_changes;     // max |dv| between outer iterations
};

/// Reads the schedule out of a primal point. Reactive power and indoor
/// temperature are re-derived from p so the power-factor and thermal
/// identities hold exactly; p is clipped into its box.
inline Schedule extract_schedule(const ProblemLayout& lay, const Network& net, const std::vector<Household>& households,
                                 const VectorXd& x) {
  const int T = net.horizon;
  Schedule s;
  s.households.resize(households.size());
  for (std::size_t h = 0; h < households.size(); ++h) {
    s.households[h].resize(households[h].appliances.size());
    for (std::size_t a = 0; a < households[h].appliances.size(); ++a) {
      const Appliance& app = households[h].appliances[a];
      ApplianceSchedule& out = s.households[h][a];
      out.p.assign(T, 0.0);
      out.q.assign(T, 0.0);
      for (int t = 0; t < T; ++t) {
        const int c = lay.dev.p[h][a][t];
        if (c < 0) continue;
        out.p[t] = std::clamp(x[c], app.p_min[t], app.p_max[t]);
        out.q[t] = reactive_from_active(out.p[t], app.eta);
      }
      if (const auto* th = std::get_if<ThermostaticSpec>(&app.kind)) out.t_in = thermal_trajectory(*th, out.p);
    }
  }
  s.dg_q.assign(net.dg.size(), Series(T, 0.0));
  for (std::size_t g = 0; g < net.dg.size(); ++g)
    for (int t = 0; t < T; ++t) {
      const int c = lay.dev.dg_q[g][t];
      if (c >= 0) s.dg_q[g][t] = std::clamp(x[c], net.dg[g].q_min * net.base_kva, net.dg[g].q_max * net.base_kva);
    }
  return s;
}

inline NetworkState extract_network(const ProblemLayout& lay, const Network& net,
                                    const std::vector<Household>& households, const VectorXd& x) {
  NetworkState st;
  if (lay.aggregate) return st;
  const std::vector<double> xs(x.data(), x.data() + x.size());
  auto val = [&](int c) { return c >= 0 ? x[c] : 0.0; };
  for (int t = 0; t < net.horizon; ++t) {
    std::vector<Vec3> v(net.buses.size(), Vec3::Zero()), p = v, q = v;
    std::vector<Vec3> P(net.lines.size(), Vec3::Zero()), Q = P;
    const BusInjections inj = nodal_injections(net, households, lay.dev, t);
    for (std::size_t b = 0; b < net.buses.size(); ++b)
      for (int k = 0; k < 3; ++k) {
        v[b][k] = val(lay.net.v[t][b][k]);
        p[b][k] = inj.p[b][k].eval(xs);
        q[b][k] = inj.q[b][k].eval(xs);
      }
    for (std::size_t l = 0; l < net.lines.size(); ++l)
      for (int k = 0; k < 3; ++k) {
        P[l][k] = val(lay.net.P[t][l][k]);
        Q[l][k] = val(lay.net.Q[t][l][k]);
      }
    st.v.push_back(std::move(v));
    st.P.push_back(std::move(P));
    st.Q.push_back(std::move(Q));
    st.p.push_back(std::move(p));
    st.q.push_back(std::move(q));
  }
  return st;
}

/// Solves, adds cuts for every violated slot, and repeats until the cap holds
/// in the model. Cuts are appended to `cuts` and kept in `bp`.
inline QpResult solve_with_cuts(BuiltProblem& bp, const Network& net, const DlcEvent& event,
                                std::vector<PccCut>& cuts, const DlcOptions& opt, Solution& sol) {
  std::map<int, int> per_slot;
  for (const PccCut& c : cuts) ++per_slot[c.t];
  for (;;) {
    QpResult res = solve_qp(bp.qp, opt.qp);
    log_at(2, "qp: %d iterations, objective %.9g, %zu cuts", res.iterations, res.objective, cuts.size());
    sol.objective_trace.push_back(res.objective);
    sol.worst_kkt.primal = std::max(sol.worst_kkt.primal, res.kkt.primal);
    sol.worst_kkt.stationarity = std::max(sol.worst_kkt.stationarity, res.kkt.stationarity);
    sol.worst_kkt.complementarity = std::max(sol.worst_kkt.complementarity, res.kkt.complementarity);
    const std::vector<PccCut> fresh = pcc_cap_cuts(pcc_values(bp.layout, net, res.x), event, opt.cut_tol);
    bool added = false;
    for (const PccCut& c : fresh) {
      if (per_slot[c.t] >= opt.max_cuts) {
        sol.cut_limit_reached = true;
        continue;
      }
      ++per_slot[c.t];
      add_cut(bp, net, c);
      cuts.push_back(c);
      ++sol.cuts;
      added = true;
    }
    if (!added) return res;
  }
}

/// Customer utility summed over all appliances (kappa not applied).
inline double total_utility(const std::vector<Household>& households, const Schedule& s, double dt) {
  double u = 0.0;
  for (std::size_t h = 0; h < households.size(); ++h)
    for (std::size_t a = 0; a < households[h].appliances.size(); ++a)
      u += utility(households[h].appliances[a], s.households[h][a], dt);
  return u;
}

/// LSE cost of a simulated dispatch: PCC purchase at the exact PCC power plus DG production.
inline double lse_cost(const Network& net, const SimulationResult& sim) {
  const CostProfile& c = net.costs.at("pcc");
  double total = detail::dg_cost(net);
  for (int t = 0; t < static_cast<int>(sim.pcc.size()); ++t) {
    const double p_kw = sim.pcc[t].head<3>().sum() * net.base_kva;
    total += c.eval(t, p_kw);
  }
  return total;
}

/// kappa * utility - LSE cost, evaluated on the simulated state.
inline double welfare(const Network& net, const std::vector<Household>& households, const Schedule& s,
                      const SimulationResult& sim, const ObjectiveSpec& obj) {
  return obj.kappa * total_utility(households, s, net.dt) - lse_cost(net, sim);
}

/// Proposed DLC. `net` must be in per-unit.
inline Solution solve_dlc(const Network& net, const std::vector<Household>& households, const DlcEvent& event,
                          const ObjectiveSpec& obj = {}, const DlcOptions& opt = {}) {
  const auto start = std::chrono::steady_clock::now();
  Solution sol;
  std::vector<PccCut> cuts;
  OperatingPoint op = flat_operating_point(net);
  std::vector<std::vector<Vec3>> prev_v;
  std::optional<DgProximal> prox;
  double safety = 1.5;
  sol.outer_converged = false;
  for (int k = 1; k <= std::max(1, opt.max_outer); ++k) {
    BuiltProblem bp = build_problem(net, households, obj, op, prox ? &*prox : nullptr);
    for (const PccCut& c : cuts) add_cut(bp, net, c);
    const QpResult res = solve_with_cuts(bp, net, event, cuts, opt, sol);
    sol.schedule = extract_schedule(bp.layout, net, households, res.x);
    sol.network = extract_network(bp.layout, net, households, res.x);
    sol.pcc_model = pcc_values(bp.layout, net, res.x);
    sol.qp_objective = res.objective;
    sol.kkt = res.kkt;
    sol.simulated = simulate_schedule(net, households, sol.schedule, opt.pf);
    sol.outer_iterations = k;
    std::vector<std::vector<Vec3>> v;
    for (const StateSlice& s : sol.simulated.slices) v.push_back(s.v);
    if (!prev_v.empty()) {
      double change = 0.0;
      for (std::size_t t = 0; t < v.size(); ++t)
        for (std::size_t b = 0; b < v[t].size(); ++b)
          change = std::max(change, (v[t][b] - prev_v[t][b]).cwiseAbs().maxCoeff());
      sol.outer_changes.push_back(change);
      log_at(1, "outer %d: max dv %.3g", k, change);
      if (change <= opt.outer_tol) {
        sol.outer_converged = true;
        break;
      }
      // Not contracting: the cap price is missing from the curvature, so stiffen.
      if (sol.outer_changes.size() >= 2 && change > 0.5 * sol.outer_changes[sol.outer_changes.size() - 2])
        safety *= 4.0;
    }
    prev_v = std::move(v);
    op = sol.simulated.operating_point(net.horizon);
    prox = loss_curvature_proximal(net, sol.simulated, sol.schedule, safety);
  }
  sol.solve_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return sol;
}

/// Without DLC: every household follows its own preference.
inline Schedule baseline_wo_dlc_schedule(const Network& net, const std::vector<Household>& households) {
  const int T = net.horizon;
  Schedule s;
  s.households.resize(households.size());
  for (std::size_t h = 0; h < households.size(); ++h) {
    for (const Appliance& app : households[h].appliances) {
      ApplianceSchedule out;
      out.p.assign(T, 0.0);
      out.q.assign(T, 0.0);
      if (const auto* th = std::get_if<ThermostaticSpec>(&app.kind)) {
        double prev = th->t_init;
        for (int t = 0; t < T; ++t) {
          if (app.works_at(t)) {
            const double need = (th->t_conf[t] - prev - th->alpha * (th->t_out[t] - prev)) / th->beta;
            out.p[t] = std::clamp(need, app.p_min[t], app.p_max[t]);
          }
          prev = temperature_step(prev, th->t_out[t], out.p[t], th->alpha, th->beta);
        }
        out.t_in = thermal_trajectory(*th, out.p);
      } else if (const auto* d = std::get_if<DeferrableSpec>(&app.kind)) {
        double energy = 0.0;
        for (int t : app.work_window) {
          out.p[t] = std::clamp((d->e_max - energy) / net.dt, app.p_min[t], app.p_max[t]);
          energy += out.p[t] * net.dt;
        }
      } else if (const auto* i = std::get_if<InterruptibleSpec>(&app.kind)) {
        for (int t : app.work_window) out.p[t] = std::clamp(i->p_pref[t], app.p_min[t], app.p_max[t]);
      }
      for (int t = 0; t < T; ++t) out.q[t] = reactive_from_active(out.p[t], app.eta);
      s.households[h].push_back(std::move(out));
    }
  }
  s.dg_q.assign(net.dg.size(), Series(T, 0.0));
  return s;
}

inline Solution baseline_wo_dlc(const Network& net, const std::vector<Household>& households,
                                const DlcOptions& opt = {}) {
  const auto start = std::chrono::steady_clock::now();
  Solution sol;
  sol.schedule = baseline_wo_dlc_schedule(net, households);
  sol.simulated = simulate_schedule(net, households, sol.schedule, opt.pf);
  sol.solve_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return sol;
}

/// Conventional DLC: aggregate supply-demand cap, no losses and no voltages.
inline Solution baseline_conventional_dlc(const Network& net, const std::vector<Household>& households,
                                          const DlcEvent& event, const ObjectiveSpec& obj = {},
                                          const DlcOptions& opt = {}) {
  const auto start = std::chrono::steady_clock::now();
  Solution sol;
  std::vector<PccCut> cuts;
  BuiltProblem bp = build_aggregate_problem(net, households, obj);
  const QpResult res = solve_with_cuts(bp, net, event, cuts, opt, sol);
  sol.schedule = extract_schedule(bp.layout, net, households, res.x);
  sol.pcc_model = pcc_values(bp.layout, net, res.x);
  sol.qp_objective = res.objective;
  sol.kkt = res.kkt;
  sol.outer_iterations = 1;
  sol.simulated = simulate_schedule(net, households, sol.schedule, opt.pf);
  sol.solve_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return sol;
}

}  // namespace resdr
