#pragma once

// Exact three-phase unbalanced power flow on a radial feeder by
// backward/forward sweep with constant-power loads.

#include <algorithm>
#include <cmath>
#include <vector>

#include "resdr/appliance.hpp"
#include "resdr/core.hpp"
#include "resdr/distflow.hpp"
#include "resdr/netmodel.hpp"

namespace resdr {

struct PfOptions {
  int max_iter = 100;
  double tol = 1e-10;  // pu, max complex power mismatch
};

struct ComplexVoltageState {
  std::vector<CVec3> V;  // per bus, pu
  std::vector<CVec3> I;  // per line (sending to receiving), pu
  int iterations = 0;
  double residual = 0.0;
};

/// Complex constant-power demand per slot and bus (consumption positive, pu).
struct InjectionSpec {
  std::vector<std::vector<CVec3>> S;  // [t][bus]
};

inline CMat3 line_impedance(const Line& line, const PhaseMask& present) {
  CMat3 z = CMat3::Zero();
  for (int p = 0; p < 3; ++p)
    for (int k = 0; k < 3; ++k)
      if (present[p] && present[k]) z(p, k) = Complex(line.r(p, k), line.x(p, k));
  return z;
}

/// Sweep power flow for one slot. `S` is the per-bus demand in pu.
inline ComplexVoltageState solve_pf(const Network& net, const std::vector<CVec3>& S, const PfOptions& opt = {},
                                    const Topology* topology = nullptr) {
  const Topology local = topology ? Topology{} : build_topology(net);
  const Topology& topo = topology ? *topology : local;
  const int nb = static_cast<int>(net.buses.size());
  std::vector<CMat3> Z(net.lines.size());
  for (std::size_t l = 0; l < net.lines.size(); ++l) Z[l] = line_impedance(net.lines[l], line_phases(net, net.lines[l]));

  ComplexVoltageState st;
  const CVec3 flat = net.v_ref * nominal_phasors();
  st.V.assign(nb, CVec3::Zero());
  for (int b = 0; b < nb; ++b)
    for (int p = 0; p < 3; ++p)
      if (net.buses[b].phases[p]) st.V[b][p] = flat[p];
  st.I.assign(net.lines.size(), CVec3::Zero());

  std::vector<CVec3> load(nb, CVec3::Zero());
  for (int it = 1; it <= opt.max_iter; ++it) {
    for (int b = 0; b < nb; ++b)
      for (int p = 0; p < 3; ++p)
        load[b][p] = net.buses[b].phases[p] ? std::conj(S[b][p] / st.V[b][p]) : Complex(0.0);
    // Backward: accumulate currents leaves to root.
    for (auto it_b = topo.order.rbegin(); it_b != topo.order.rend(); ++it_b) {
      const int j = *it_b;
      const int l = topo.parent_line[j];
      if (l < 0) continue;
      CVec3 cur = load[j];
      for (int k : topo.children_lines[j]) cur += st.I[k];
      st.I[l] = cur;
    }
    // Forward: voltage drops root to leaves.
    double residual = 0.0;
    for (int j : topo.order) {
      const int l = topo.parent_line[j];
      if (l < 0) continue;
      const int i = net.bus_index(net.lines[l].from);
      const CVec3 Vn = st.V[i] - Z[l] * st.I[l];
      for (int p = 0; p < 3; ++p) {
        if (!net.buses[j].phases[p]) continue;
        if (std::abs(Vn[p]) < 1e-6) {
          st.iterations = it;
          st.residual = std::numeric_limits<double>::infinity();
          throw NotConverged(it, st.residual);
        }
        // Demand actually served at the new voltage with the current from the old one.
        residual = std::max(residual, std::abs(Vn[p] * std::conj(load[j][p]) - S[j][p]));
      }
      st.V[j] = Vn;
    }
    st.iterations = it;
    st.residual = residual;
    if (!std::isfinite(residual)) break;
    if (residual <= opt.tol) return st;
  }
  throw NotConverged(st.iterations, st.residual);
}

/// Squared magnitudes and sending-end flows of one solved slot.
struct StateSlice {
  std::vector<Vec3> v;  // [bus]
  std::vector<Vec3> P;  // [line]
  std::vector<Vec3> Q;
};

inline StateSlice state_to_distflow(const Network& net, const ComplexVoltageState& st) {
  StateSlice out;
  out.v.resize(st.V.size());
  for (std::size_t b = 0; b < st.V.size(); ++b) out.v[b] = st.V[b].cwiseAbs2();
  out.P.resize(net.lines.size());
  out.Q.resize(net.lines.size());
  for (std::size_t l = 0; l < net.lines.size(); ++l) {
    const int i = net.bus_index(net.lines[l].from);
    for (int p = 0; p < 3; ++p) {
      const Complex s = st.V[i][p] * std::conj(st.I[l][p]);
      out.P[l][p] = s.real();
      out.Q[l][p] = s.imag();
    }
  }
  return out;
}

/// Per-bus demand implied by a schedule (pu), net of DG output.
inline InjectionSpec injection_spec(const Network& net, const std::vector<Household>& households,
                                    const Schedule& sched) {
  const int T = net.horizon;
  const double per_kw = 1.0 / net.base_kva;
  InjectionSpec inj;
  inj.S.assign(T, std::vector<CVec3>(net.buses.size(), CVec3::Zero()));
  for (int t = 0; t < T; ++t) {
    for (std::size_t b = 0; b < net.buses.size(); ++b)
      for (int p = 0; p < 3; ++p) inj.S[t][b][p] = Complex(net.buses[b].critical.p[p][t], net.buses[b].critical.q[p][t]);
    for (std::size_t h = 0; h < households.size(); ++h) {
      const int b = net.bus_index(households[h].bus);
      const int ph = index(households[h].phase);
      for (std::size_t a = 0; a < households[h].appliances.size(); ++a) {
        const ApplianceSchedule& s = sched.households[h][a];
        inj.S[t][b][ph] += Complex(s.p[t], s.q[t]) * per_kw;
      }
    }
    for (std::size_t g = 0; g < net.dg.size(); ++g) {
      const DgUnit& dg = net.dg[g];
      const double q = sched.dg_q.empty() ? 0.0 : sched.dg_q[g][t] * per_kw;
      inj.S[t][net.bus_index(dg.bus)][index(dg.phase)] -= Complex(dg.p_max[t], q);
    }
  }
  return inj;
}

struct SimulationResult {
  std::vector<ComplexVoltageState> states;  // [t]
  std::vector<StateSlice> slices;           // [t]
  std::vector<Vec6> pcc;  // [t] stacked (p_G0; q_G0), pu
  std::vector<double> pcc_norm;             // [t] MVA
  std::vector<Vec3> vmin;                   // [t] min |V| per phase, pu
  std::vector<double> losses;               // [t] total active loss, pu
  std::vector<double> energy_residual;      // [t] |S_pcc - sum demand - sum losses|, pu

  OperatingPoint operating_point(int horizon) const {
    OperatingPoint op;
    op.horizon = horizon;
    for (int t = 0; t < horizon; ++t) {
      op.P.push_back(slices[t].P);
      op.Q.push_back(slices[t].Q);
      op.v.push_back(slices[t].v);
      std::vector<CVec3> ph(states[t].V.size());
      for (std::size_t b = 0; b < ph.size(); ++b)
        for (int p = 0; p < 3; ++p) {
          const double m = std::abs(states[t].V[b][p]);
          ph[b][p] = m > 0.0 ? states[t].V[b][p] / m : nominal_phasors()[p];
        }
      op.phasor.push_back(std::move(ph));
    }
    return op;
  }
};

/// Exact power flow of every slot of a demand spec. Slots are independent.
inline SimulationResult simulate_injections(const Network& net, const InjectionSpec& inj, const PfOptions& opt = {}) {
  const Topology topo = build_topology(net);
  const int T = static_cast<int>(inj.S.size());
  const int root = net.bus_index(0);
  SimulationResult out;
  out.states.resize(T);
  out.slices.resize(T);
  out.pcc.resize(T);
  out.pcc_norm.resize(T);
  out.vmin.resize(T);
  out.losses.resize(T);
  out.energy_residual.resize(T);
  for (int t = 0; t < T; ++t) {
    try {
      out.states[t] = solve_pf(net, inj.S[t], opt, &topo);
    } catch (const NotConverged& e) {
      throw NotConverged(e.iterations(), e.residual(), t);
    }
    const ComplexVoltageState& st = out.states[t];
    out.slices[t] = state_to_distflow(net, st);
    Vec6 z = Vec6::Zero();
    Complex pcc_total(0.0), loss_total(0.0), demand_total(0.0);
    for (int l : topo.children_lines[root]) {
      z.head<3>() += out.slices[t].P[l];
      z.tail<3>() += out.slices[t].Q[l];
    }
    for (int p = 0; p < 3; ++p) pcc_total += Complex(z[p], z[3 + p]);
    for (std::size_t l = 0; l < net.lines.size(); ++l) {
      const CVec3 drop = line_impedance(net.lines[l], line_phases(net, net.lines[l])) * st.I[l];
      for (int p = 0; p < 3; ++p) loss_total += drop[p] * std::conj(st.I[l][p]);
    }
    for (std::size_t b = 0; b < net.buses.size(); ++b)
      for (int p = 0; p < 3; ++p) demand_total += inj.S[t][b][p];
    out.pcc[t] = z;
    out.pcc_norm[t] = z.norm() * net.base_kva / 1000.0;
    out.losses[t] = loss_total.real();
    out.energy_residual[t] = std::abs(pcc_total - demand_total - loss_total);
    Vec3 vmin = Vec3::Constant(std::numeric_limits<double>::infinity());
    for (std::size_t b = 0; b < net.buses.size(); ++b)
      for (int p = 0; p < 3; ++p)
        if (net.buses[b].phases[p]) vmin[p] = std::min(vmin[p], std::abs(st.V[b][p]));
    out.vmin[t] = vmin;
  }
  return out;
}

inline SimulationResult simulate_schedule(const Network& net, const std::vector<Household>& households,
                                          const Schedule& sched, const PfOptions& opt = {}) {
  return simulate_injections(net, injection_spec(net, households, sched), opt);
}

}  // namespace resdr
