#pragma once

// Linearized three-phase DistFlow: nodal injections, loss and voltage-drop
// correction terms with their first-order expansion, branch equations and
// security boxes. Everything here works on a per-unit network.

#include <cmath>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "resdr/appliance.hpp"
#include "resdr/core.hpp"
#include "resdr/linear_system.hpp"
#include "resdr/netmodel.hpp"

namespace resdr {

/// Expansion point: sending-end line flows, squared bus voltages and the
/// bus voltage unit phasors that fix the inter-phase rotation.
struct OperatingPoint {
  int horizon = 0;
  std::vector<std::vector<Vec3>> P;       // [t][line]
  std::vector<std::vector<Vec3>> Q;       // [t][line]
  std::vector<std::vector<Vec3>> v;       // [t][bus]
  std::vector<std::vector<CVec3>> phasor;  // [t][bus], |entry| = 1
};

/// No flow, V_ref on every phase, balanced angles.
inline OperatingPoint flat_operating_point(const Network& net) {
  OperatingPoint op;
  op.horizon = net.horizon;
  const double v2 = net.v_ref * net.v_ref;
  op.P.assign(net.horizon, std::vector<Vec3>(net.lines.size(), Vec3::Zero()));
  op.Q = op.P;
  op.v.assign(net.horizon, std::vector<Vec3>(net.buses.size(), Vec3::Constant(v2)));
  op.phasor.assign(net.horizon, std::vector<CVec3>(net.buses.size(), nominal_phasors()));
  return op;
}

/// v: squared magnitudes (pu^2); P, Q sending-end flows; p, q bus consumption.
struct NetworkState {
  std::vector<std::vector<Vec3>> v;  // [t][bus]
  std::vector<std::vector<Vec3>> P;  // [t][line]
  std::vector<std::vector<Vec3>> Q;
  std::vector<std::vector<Vec3>> p;  // [t][bus]
  std::vector<std::vector<Vec3>> q;
};

// ---------------------------------------------------------------------------
// Loss and voltage-drop correction terms

using Jac36 = Eigen::Matrix<double, 3, 6>;

/// Values at the operating point and Jacobians with respect to [P; Q].
struct LossTerms {
  Vec3 p_loss = Vec3::Zero();
  Vec3 q_loss = Vec3::Zero();
  Vec3 dv = Vec3::Zero();
  Jac36 d_p_loss = Jac36::Zero();
  Jac36 d_q_loss = Jac36::Zero();
  Jac36 d_dv = Jac36::Zero();
};

/// Sending-end complex voltages of a line at the operating point.
inline CVec3 sending_voltage(const OperatingPoint& op, int from_bus, int t) {
  CVec3 V;
  for (int p = 0; p < 3; ++p) V[p] = std::sqrt(std::max(op.v[t][from_bus][p], 0.0)) * op.phasor[t][from_bus][p];
  return V;
}

/// Impedance normalized by the sending-end voltages, zhat(p,k) = Z(p,k) / (V_p conj(V_k)).
/// On the diagonal this is z / v.
inline CMat3 normalized_impedance(const Line& line, const CVec3& V, const PhaseMask& present) {
  CMat3 out = CMat3::Zero();
  for (int p = 0; p < 3; ++p)
    for (int k = 0; k < 3; ++k)
      if (present[p] && present[k]) out(p, k) = Complex(line.r(p, k), line.x(p, k)) / (V[p] * std::conj(V[k]));
  return out;
}

/// Phase-rotated impedance of the voltage equation, M(p,k) = Z(p,k) conj(V_p) / conj(V_k).
/// Returns (Re M, Im M); diagonal equals (R, X).
inline std::pair<Mat3, Mat3> rotated_impedance(const Line& line, const CVec3& V, const PhaseMask& present) {
  Mat3 r = Mat3::Zero(), x = Mat3::Zero();
  for (int p = 0; p < 3; ++p)
    for (int k = 0; k < 3; ++k) {
      if (!present[p] || !present[k]) continue;
      const Complex m = Complex(line.r(p, k), line.x(p, k)) * std::conj(V[p]) / std::conj(V[k]);
      r(p, k) = m.real();
      x(p, k) = m.imag();
    }
  return {r, x};
}

/// Loss terms for explicit flows and sending voltages.
inline LossTerms loss_terms(const Line& line, const PhaseMask& present, const Vec3& P, const Vec3& Q,
                            const CVec3& V) {
  for (int p = 0; p < 3; ++p)
    if (present[p] && std::abs(V[p]) == 0.0) throw std::domain_error("zero operating voltage");
  LossTerms out;
  const CMat3 zh = normalized_impedance(line, V, present);
  const Mat3 rh = zh.real();
  const Mat3 xh = zh.imag();
  const Vec3 a = rh * P + xh * Q;  // r^P + x^Q
  const Vec3 b = rh * Q - xh * P;  // r^Q - x^P
  const Vec3 c = xh * P - rh * Q;  // x^P - r^Q
  out.p_loss = P.cwiseProduct(a) + Q.cwiseProduct(b);
  out.q_loss = P.cwiseProduct(c) + Q.cwiseProduct(a);
  for (int p = 0; p < 3; ++p) {
    for (int m = 0; m < 3; ++m) {
      const double dpm = p == m ? 1.0 : 0.0;
      out.d_p_loss(p, m) = dpm * a[p] + P[p] * rh(p, m) - Q[p] * xh(p, m);
      out.d_p_loss(p, 3 + m) = P[p] * xh(p, m) + dpm * b[p] + Q[p] * rh(p, m);
      out.d_q_loss(p, m) = dpm * c[p] + P[p] * xh(p, m) + Q[p] * rh(p, m);
      out.d_q_loss(p, 3 + m) = -P[p] * rh(p, m) + dpm * a[p] + Q[p] * xh(p, m);
    }
  }
  // dv = |Z (S*/V*)|^2 elementwise.
  CVec3 cur = CVec3::Zero();
  for (int k = 0; k < 3; ++k)
    if (present[k]) cur[k] = Complex(P[k], -Q[k]) / std::conj(V[k]);
  CMat3 Z = CMat3::Zero();
  for (int p = 0; p < 3; ++p)
    for (int k = 0; k < 3; ++k)
      if (present[p] && present[k]) Z(p, k) = Complex(line.r(p, k), line.x(p, k));
  const CVec3 w = Z * cur;
  for (int p = 0; p < 3; ++p) {
    out.dv[p] = std::norm(w[p]);
    for (int m = 0; m < 3; ++m) {
      if (!present[m]) continue;
      const Complex dw_dp = Z(p, m) / std::conj(V[m]);
      const Complex dw_dq = Complex(0.0, -1.0) * dw_dp;
      out.d_dv(p, m) = 2.0 * (std::conj(w[p]) * dw_dp).real();
      out.d_dv(p, 3 + m) = 2.0 * (std::conj(w[p]) * dw_dq).real();
    }
  }
  return out;
}

inline const PhaseMask& line_phases(const Network& net, const Line& line) {
  return net.buses[net.bus_index(line.to)].phases;
}

/// Loss terms of line `l` at slot `t` evaluated at the operating point.
inline LossTerms loss_terms(const OperatingPoint& op, const Network& net, int l, int t) {
  const Line& line = net.lines[l];
  const int from = net.bus_index(line.from);
  for (int p = 0; p < 3; ++p)
    if (line_phases(net, line)[p] && !(op.v[t][from][p] > 0.0)) throw std::domain_error("zero operating voltage");
  return loss_terms(line, line_phases(net, line), op.P[t][l], op.Q[t][l], sending_voltage(op, from, t));
}

// ---------------------------------------------------------------------------
// Column bookkeeping

/// Network variable columns per slot; -1 for absent phases.
struct NetworkColumns {
  std::vector<std::vector<std::array<int, 3>>> v;  // [t][bus]
  std::vector<std::vector<std::array<int, 3>>> P;  // [t][line]
  std::vector<std::vector<std::array<int, 3>>> Q;
};

inline std::string bus_tag(int bus, int phase, int t) {
  return "[bus=" + std::to_string(bus) + ",phase=" + phase_letter(phase) + ",t=" + std::to_string(t + 1) + "]";
}

inline std::string line_tag(const Line& l, int phase, int t) {
  return "[line=" + std::to_string(l.from) + "-" + std::to_string(l.to) + ",phase=" + phase_letter(phase) +
         ",t=" + std::to_string(t + 1) + "]";
}

inline NetworkColumns add_network_variables(LinearSystem& sys, const Network& net) {
  NetworkColumns cols;
  const int T = net.horizon;
  cols.v.assign(T, std::vector<std::array<int, 3>>(net.buses.size(), {-1, -1, -1}));
  cols.P.assign(T, std::vector<std::array<int, 3>>(net.lines.size(), {-1, -1, -1}));
  cols.Q = cols.P;
  for (int t = 0; t < T; ++t) {
    for (std::size_t b = 0; b < net.buses.size(); ++b)
      for (int p = 0; p < 3; ++p)
        if (net.buses[b].phases[p]) cols.v[t][b][p] = sys.add_variable("voltage" + bus_tag(net.buses[b].id, p, t));
    for (std::size_t l = 0; l < net.lines.size(); ++l) {
      const PhaseMask& ph = line_phases(net, net.lines[l]);
      for (int p = 0; p < 3; ++p)
        if (ph[p]) cols.P[t][l][p] = sys.add_variable("flow_p" + line_tag(net.lines[l], p, t));
      for (int p = 0; p < 3; ++p)
        if (ph[p]) cols.Q[t][l][p] = sys.add_variable("flow_q" + line_tag(net.lines[l], p, t));
    }
  }
  return cols;
}

/// Columns of device decision variables (in kW / kvar); -1 where absent.
struct DeviceColumns {
  std::vector<std::vector<std::vector<int>>> p;  // [household][appliance][t]
  std::vector<std::vector<std::vector<int>>> q;
  std::vector<std::vector<int>> dg_q;  // [dg][t]
};

/// constant + sum(coef * x) in per-unit.
struct InjectionExpr {
  double constant = 0.0;
  Terms terms;

  double eval(const std::vector<double>& x) const { return constant + dot(terms, x); }
};

struct BusInjections {
  std::vector<std::array<InjectionExpr, 3>> p;  // [bus][phase], consumption positive
  std::vector<std::array<InjectionExpr, 3>> q;
};

/// Net consumption per bus and phase: critical load plus scheduled appliances
/// minus DG output (DG active power fixed at its available maximum).
inline BusInjections nodal_injections(const Network& net, const std::vector<Household>& households,
                                      const DeviceColumns& dev, int t) {
  BusInjections inj;
  inj.p.resize(net.buses.size());
  inj.q.resize(net.buses.size());
  const double per_kw = 1.0 / net.base_kva;
  for (std::size_t b = 0; b < net.buses.size(); ++b)
    for (int p = 0; p < 3; ++p) {
      inj.p[b][p].constant = net.buses[b].critical.p[p][t];
      inj.q[b][p].constant = net.buses[b].critical.q[p][t];
    }
  for (std::size_t h = 0; h < households.size(); ++h) {
    const Household& hh = households[h];
    const int b = net.bus_index(hh.bus);
    const int ph = index(hh.phase);
    for (std::size_t a = 0; a < hh.appliances.size(); ++a) {
      if (h < dev.p.size() && a < dev.p[h].size()) {
        const int cp = dev.p[h][a][t];
        const int cq = dev.q[h][a][t];
        if (cp >= 0) inj.p[b][ph].terms.push_back({cp, per_kw});
        if (cq >= 0) inj.q[b][ph].terms.push_back({cq, per_kw});
      }
    }
  }
  for (std::size_t g = 0; g < net.dg.size(); ++g) {
    const DgUnit& dg = net.dg[g];
    const int b = net.bus_index(dg.bus);
    const int ph = index(dg.phase);
    inj.p[b][ph].constant -= dg.p_max[t];
    if (g < dev.dg_q.size() && dev.dg_q[g][t] >= 0) inj.q[b][ph].terms.push_back({dev.dg_q[g][t], -per_kw});
  }
  return inj;
}

// ---------------------------------------------------------------------------
// Branch equations

/// Adds flow-balance, voltage and slack rows for slot t, with loss and
/// voltage-drop terms expanded to first order around `op`.
inline void linearize(const OperatingPoint& op, const Network& net, int t, const NetworkColumns& cols,
                      const BusInjections& inj, LinearSystem& sys) {
  const Topology topo = build_topology(net);
  const int root = net.bus_index(0);
  const double v2 = net.v_ref * net.v_ref;
  for (int p = 0; p < 3; ++p)
    if (net.buses[root].phases[p]) sys.add_equality({{cols.v[t][root][p], 1.0}}, v2, "slack" + bus_tag(0, p, t));

  for (int j : topo.order) {
    const int l = topo.parent_line[j];
    if (l < 0) continue;
    const Line& line = net.lines[l];
    const int i = net.bus_index(line.from);
    const PhaseMask& ph = net.buses[j].phases;
    const LossTerms lt = loss_terms(op, net, l, t);
    const auto [rr, xr] = rotated_impedance(line, sending_voltage(op, i, t), ph);
    Eigen::Matrix<double, 6, 1> x0;
    x0 << op.P[t][l], op.Q[t][l];

    auto flow_col = [&](int m) { return m < 3 ? cols.P[t][l][m] : cols.Q[t][l][m - 3]; };

    for (int p = 0; p < 3; ++p) {
      if (!ph[p]) continue;
      const int bus_id = net.buses[j].id;
      // Active balance: P_in - Ploss(P,Q) = p_j + sum_out P.
      for (int which = 0; which < 2; ++which) {
        const Jac36& jac = which == 0 ? lt.d_p_loss : lt.d_q_loss;
        const double loss0 = which == 0 ? lt.p_loss[p] : lt.q_loss[p];
        const auto& own = which == 0 ? cols.P : cols.Q;
        const InjectionExpr& load = which == 0 ? inj.p[j][p] : inj.q[j][p];
        Terms row;
        row.push_back({own[t][l][p], 1.0});
        double rhs = load.constant + loss0 - jac.row(p).dot(x0);
        for (int m = 0; m < 6; ++m) {
          const int c = flow_col(m);
          if (c >= 0 && jac(p, m) != 0.0) row.push_back({c, -jac(p, m)});
        }
        for (int k : topo.children_lines[j]) {
          const int c = own[t][k][p];
          if (c >= 0) row.push_back({c, -1.0});
        }
        for (auto [c, v] : load.terms) row.push_back({c, -v});
        sys.add_equality(std::move(row), rhs, (which == 0 ? "balance_p" : "balance_q") + bus_tag(bus_id, p, t));
      }
      // Voltage: v_j - v_i + 2 (R~ P + X~ Q) - dv(P,Q) = 0.
      Terms row{{cols.v[t][j][p], 1.0}, {cols.v[t][i][p], -1.0}};
      double rhs = lt.dv[p] - lt.d_dv.row(p).dot(x0);
      for (int m = 0; m < 6; ++m) {
        const int c = flow_col(m);
        if (c < 0) continue;
        const double lin = 2.0 * (m < 3 ? rr(p, m) : xr(p, m - 3)) - lt.d_dv(p, m);
        if (lin != 0.0) row.push_back({c, lin});
      }
      sys.add_equality(std::move(row), rhs, "voltage_drop" + line_tag(line, p, t));
    }
  }
}

struct BoundRow {
  int col;
  double lo;
  double hi;
  std::string label;
};

/// Squared-voltage boxes on every non-PCC bus and flow boxes where limits exist.
inline std::vector<BoundRow> security_rows(const Network& net, int t, const NetworkColumns& cols) {
  std::vector<BoundRow> rows;
  for (std::size_t b = 0; b < net.buses.size(); ++b) {
    const Bus& bus = net.buses[b];
    if (bus.id == 0) continue;
    const double lo = bus.v_min > 0.0 ? bus.v_min * bus.v_min : -kInf;
    const double hi = std::isfinite(bus.v_max) ? bus.v_max * bus.v_max : kInf;
    for (int p = 0; p < 3; ++p)
      if (bus.phases[p] && (lo > -kInf || hi < kInf))
        rows.push_back({cols.v[t][b][p], lo, hi, "voltage" + bus_tag(bus.id, p, t)});
  }
  for (std::size_t l = 0; l < net.lines.size(); ++l) {
    const Line& line = net.lines[l];
    if (!line.limits) continue;
    for (int p = 0; p < 3; ++p) {
      if (cols.P[t][l][p] < 0) continue;
      const FlowLimits& f = *line.limits;
      if (std::isfinite(f.p_min[p]) || std::isfinite(f.p_max[p]))
        rows.push_back({cols.P[t][l][p], f.p_min[p], f.p_max[p], "flow_p" + line_tag(line, p, t)});
      if (std::isfinite(f.q_min[p]) || std::isfinite(f.q_max[p]))
        rows.push_back({cols.Q[t][l][p], f.q_min[p], f.q_max[p], "flow_q" + line_tag(line, p, t)});
    }
  }
  return rows;
}

}  // namespace resdr
