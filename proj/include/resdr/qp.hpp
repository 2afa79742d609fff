#pragma once

// Convex QP by a primal-dual interior point method (Mehrotra predictor-corrector)
// on the regularized quasi-definite KKT system:
//
//   minimize   0.5 x'Hx + c'x + offset
//   subject to A x = b,  G x <= h,  lb <= x <= ub
//
// H must be positive semidefinite. Bounds may be infinite.

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include <Eigen/Sparse>
#include <Eigen/SparseCholesky>

#include "resdr/core.hpp"
#include "resdr/linear_system.hpp"

namespace resdr {

using SpMat = Eigen::SparseMatrix<double>;
using Eigen::VectorXd;

struct QpProblem {
  LinearSystem sys;
  SpMat H;  // full symmetric, n x n
  VectorXd c;
  double offset = 0.0;

  int n() const { return sys.num_vars(); }
};

struct QpSettings {
  double tol = 1e-9;
  int max_iter = 200;
  double primal_reg = 1e-8;
  double dual_reg = 1e-8;
  int refine_steps = 5;
};

struct KktResiduals {
  double primal = 0.0;          // worst equality/inequality/bound violation, relative
  double stationarity = 0.0;    // gradient of the Lagrangian, relative
  double complementarity = 0.0; // largest slack*dual product
};

struct QpResult {
  VectorXd x;
  VectorXd y;   // equality multipliers
  VectorXd z;   // inequality multipliers (>= 0)
  VectorXd zl;  // lower-bound multipliers
  VectorXd zu;  // upper-bound multipliers
  double objective = 0.0;
  int iterations = 0;
  KktResiduals kkt;
};

namespace detail {

inline SpMat rows_matrix(const std::vector<SparseRow>& rows, int n) {
  std::vector<Eigen::Triplet<double>> trip;
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (auto [c, v] : rows[i].terms) trip.emplace_back(static_cast<int>(i), c, v);
  SpMat M(static_cast<int>(rows.size()), n);
  M.setFromTriplets(trip.begin(), trip.end());
  return M;
}

inline VectorXd rows_rhs(const std::vector<SparseRow>& rows) {
  VectorXd r(rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) r[i] = rows[i].rhs;
  return r;
}

inline double inf_norm(const VectorXd& v) { return v.size() ? v.cwiseAbs().maxCoeff() : 0.0; }

inline std::string bound_label(const std::string& var, const char* side) {
  const auto pos = var.find('[');
  if (pos == std::string::npos) return var + "_" + side;
  return var.substr(0, pos) + "_" + side + var.substr(pos);
}

}  // namespace detail

/// Objective of x for a problem.
inline double qp_objective(const QpProblem& qp, const VectorXd& x) {
  return 0.5 * x.dot(qp.H * x) + qp.c.dot(x) + qp.offset;
}

/// KKT residuals of a primal-dual pair, each relative to the data scale.
inline KktResiduals kkt_residuals(const QpProblem& qp, const QpResult& r) {
  using detail::inf_norm;
  const int n = qp.n();
  const SpMat A = detail::rows_matrix(qp.sys.eq, n);
  const SpMat G = detail::rows_matrix(qp.sys.ineq, n);
  const VectorXd b = detail::rows_rhs(qp.sys.eq);
  const VectorXd h = detail::rows_rhs(qp.sys.ineq);
  KktResiduals k;
  double scale_p = 1.0 + std::max(inf_norm(b), inf_norm(h));
  double viol = A.rows() ? inf_norm(A * r.x - b) : 0.0;
  if (G.rows()) viol = std::max(viol, (G * r.x - h).cwiseMax(0.0).maxCoeff());
  for (int i = 0; i < n; ++i) {
    if (std::isfinite(qp.sys.lb[i])) viol = std::max(viol, qp.sys.lb[i] - r.x[i]);
    if (std::isfinite(qp.sys.ub[i])) viol = std::max(viol, r.x[i] - qp.sys.ub[i]);
  }
  k.primal = viol / scale_p;
  VectorXd grad = qp.H * r.x + qp.c - r.zl + r.zu;
  if (A.rows()) grad += A.transpose() * r.y;
  if (G.rows()) grad += G.transpose() * r.z;
  k.stationarity = inf_norm(grad) / (1.0 + inf_norm(qp.c));
  double comp = 0.0;
  if (G.rows()) {
    const VectorXd s = h - G * r.x;
    for (int i = 0; i < s.size(); ++i) comp = std::max(comp, std::abs(s[i] * r.z[i]));
  }
  for (int i = 0; i < n; ++i) {
    if (std::isfinite(qp.sys.lb[i])) comp = std::max(comp, std::abs((r.x[i] - qp.sys.lb[i]) * r.zl[i]));
    if (std::isfinite(qp.sys.ub[i])) comp = std::max(comp, std::abs((qp.sys.ub[i] - r.x[i]) * r.zu[i]));
  }
  k.complementarity = comp;
  return k;
}

inline QpResult solve_qp(const QpProblem& qp, const QpSettings& set = {}) {
  using detail::inf_norm;
  const int n = qp.n();
  const SpMat A = detail::rows_matrix(qp.sys.eq, n);
  const SpMat G = detail::rows_matrix(qp.sys.ineq, n);
  const SpMat At = A.transpose();
  const SpMat Gt = G.transpose();
  const VectorXd b = detail::rows_rhs(qp.sys.eq);
  const VectorXd h = detail::rows_rhs(qp.sys.ineq);
  const int me = static_cast<int>(A.rows());
  const int mi = static_cast<int>(G.rows());
  const int N = n + me + mi;

  std::vector<char> hasL(n), hasU(n);
  int nl = 0, nu = 0;
  VectorXd lb(n), ub(n);
  for (int i = 0; i < n; ++i) {
    lb[i] = qp.sys.lb[i];
    ub[i] = qp.sys.ub[i];
    hasL[i] = std::isfinite(lb[i]);
    hasU[i] = std::isfinite(ub[i]);
    nl += hasL[i];
    nu += hasU[i];
    if (hasL[i] && hasU[i] && lb[i] > ub[i])
      throw Infeasible("empty bounds on " + qp.sys.var_names[i], {qp.sys.var_names[i]});
  }

  // KKT pattern (lower triangle) with explicit diagonal entries.
  std::vector<Eigen::Triplet<double>> trip;
  trip.reserve(qp.H.nonZeros() + A.nonZeros() + G.nonZeros() + N);
  for (int k = 0; k < qp.H.outerSize(); ++k)
    for (SpMat::InnerIterator it(qp.H, k); it; ++it)
      if (it.row() > it.col()) trip.emplace_back(it.row(), it.col(), it.value());
  for (int k = 0; k < A.outerSize(); ++k)
    for (SpMat::InnerIterator it(A, k); it; ++it) trip.emplace_back(n + it.row(), it.col(), it.value());
  for (int k = 0; k < G.outerSize(); ++k)
    for (SpMat::InnerIterator it(G, k); it; ++it) trip.emplace_back(n + me + it.row(), it.col(), it.value());
  for (int i = 0; i < N; ++i) trip.emplace_back(i, i, 0.0);
  SpMat K(N, N);
  K.setFromTriplets(trip.begin(), trip.end());
  K.makeCompressed();
  std::vector<double*> diag(N);
  for (int k = 0; k < N; ++k) {
    const int start = K.outerIndexPtr()[k];
    if (K.innerIndexPtr()[start] != k) throw Error("KKT diagonal missing");
    diag[k] = K.valuePtr() + start;
  }
  VectorXd hdiag = VectorXd::Zero(n);
  for (int k = 0; k < qp.H.outerSize(); ++k)
    for (SpMat::InnerIterator it(qp.H, k); it; ++it)
      if (it.row() == it.col()) hdiag[it.row()] += it.value();

  Eigen::SimplicialLDLT<SpMat, Eigen::Lower, Eigen::AMDOrdering<int>> ldlt;
  ldlt.analyzePattern(K);

  // Starting point: box midpoints, one unit inside single bounds, zero otherwise.
  VectorXd x(n), y = VectorXd::Zero(me), z = VectorXd::Ones(mi), s(mi);
  VectorXd wl = VectorXd::Zero(n), wu = VectorXd::Zero(n), zl = VectorXd::Zero(n), zu = VectorXd::Zero(n);
  for (int i = 0; i < n; ++i) {
    if (hasL[i] && hasU[i])
      x[i] = 0.5 * (lb[i] + ub[i]);
    else if (hasL[i])
      x[i] = std::max(0.0, lb[i] + 1.0);
    else if (hasU[i])
      x[i] = std::min(0.0, ub[i] - 1.0);
    else
      x[i] = 0.0;
    if (hasL[i]) {
      wl[i] = std::max(x[i] - lb[i], 1e-4);
      zl[i] = 1.0;
    }
    if (hasU[i]) {
      wu[i] = std::max(ub[i] - x[i], 1e-4);
      zu[i] = 1.0;
    }
  }
  if (mi) s = (h - G * x).cwiseMax(1.0);

  const double scale_p = 1.0 + std::max({inf_norm(b), inf_norm(h), 0.0});
  const double scale_d = 1.0 + inf_norm(qp.c);
  const int ncomp = mi + nl + nu;

  auto mu_of = [&]() {
    if (ncomp == 0) return 0.0;
    double m = mi ? s.dot(z) : 0.0;
    for (int i = 0; i < n; ++i) {
      if (hasL[i]) m += wl[i] * zl[i];
      if (hasU[i]) m += wu[i] * zu[i];
    }
    return m / ncomp;
  };

  VectorXd rd(n), rp(me), rg(mi), rl = VectorXd::Zero(n), ru = VectorXd::Zero(n);
  VectorXd sigmaB(n), sz(mi);
  double preg = set.primal_reg, dreg = set.dual_reg;
  VectorXd rhs(N), sol(N), dx(n), dy(me), dz(mi), ds(mi), dwl(n), dwu(n), dzl(n), dzu(n);

  auto residuals = [&]() {
    rd = qp.H * x + qp.c - zl + zu;
    if (me) rd += At * y;
    if (mi) rd += Gt * z;
    if (me) rp = A * x - b;
    if (mi) rg = G * x + s - h;
    for (int i = 0; i < n; ++i) {
      rl[i] = hasL[i] ? x[i] - wl[i] - lb[i] : 0.0;
      ru[i] = hasU[i] ? x[i] + wu[i] - ub[i] : 0.0;
    }
  };

  // Solve the reduced system for given complementarity targets. Returns false
  // when refinement cannot bring the residual down (near-singular factor).
  auto solve_direction = [&](const VectorXd& rcl, const VectorXd& rcu, const VectorXd& rcs) {
    rhs.head(n) = -rd;
    for (int i = 0; i < n; ++i) {
      if (hasL[i]) rhs[i] += (rcl[i] - zl[i] * rl[i]) / wl[i];
      if (hasU[i]) rhs[i] -= (rcu[i] + zu[i] * ru[i]) / wu[i];
    }
    if (me) rhs.segment(n, me) = -rp;
    if (mi) rhs.tail(mi) = -rg - rcs.cwiseQuotient(z);
    sol = ldlt.solve(rhs);
    // Refine against the unregularized operator.
    const double target = 1e-14 * (1.0 + inf_norm(rhs));
    double err = kInf;
    for (int k = 0; k <= set.refine_steps; ++k) {
      VectorXd Ks = K.selfadjointView<Eigen::Lower>() * sol;
      Ks.head(n) -= preg * sol.head(n);
      Ks.tail(me + mi) += dreg * sol.tail(me + mi);
      const VectorXd res = rhs - Ks;
      err = inf_norm(res);
      if (!std::isfinite(err) || err <= target || k == set.refine_steps) break;
      sol += ldlt.solve(res);
    }
    if (!std::isfinite(err) || err > 1e-6 * (1.0 + inf_norm(rhs))) return false;
    dx = sol.head(n);
    if (me) dy = sol.segment(n, me);
    if (mi) {
      dz = sol.tail(mi);
      ds = -rg - G * dx;
      // Near-active rows: the primal form loses s to the solve error, so take
      // ds from the linearized complementarity instead.
      for (int i = 0; i < mi; ++i)
        if (s[i] < z[i]) ds[i] = (rcs[i] - s[i] * dz[i]) / z[i];
    }
    for (int i = 0; i < n; ++i) {
      if (hasL[i]) {
        dwl[i] = dx[i] + rl[i];
        dzl[i] = (rcl[i] - zl[i] * dwl[i]) / wl[i];
      } else {
        dwl[i] = dzl[i] = 0.0;
      }
      if (hasU[i]) {
        dwu[i] = -ru[i] - dx[i];
        dzu[i] = (rcu[i] - zu[i] * dwu[i]) / wu[i];
      } else {
        dwu[i] = dzu[i] = 0.0;
      }
    }
    return true;
  };

  auto max_step = [&](double tau) {
    double a = 1.0;
    auto lim = [&](double v, double dv) {
      if (dv < 0.0) a = std::min(a, -tau * v / dv);
    };
    for (int i = 0; i < mi; ++i) {
      lim(s[i], ds[i]);
      lim(z[i], dz[i]);
    }
    for (int i = 0; i < n; ++i) {
      if (hasL[i]) {
        lim(wl[i], dwl[i]);
        lim(zl[i], dzl[i]);
      }
      if (hasU[i]) {
        lim(wu[i], dwu[i]);
        lim(zu[i], dzu[i]);
      }
    }
    return a;
  };

  QpResult res;
  VectorXd rcl(n), rcu(n), rcs(mi);
  int it = 0;
  double best_primal = kInf;
  int stall = 0;
  for (;; ++it) {
    residuals();
    const double mu = mu_of();
    double prim = std::max({me ? inf_norm(rp) : 0.0, mi ? inf_norm(rg) : 0.0, inf_norm(rl), inf_norm(ru)});
    const double pres = prim / scale_p;
    const double dres = inf_norm(rd) / scale_d;
    log_at(3, "ipm %3d: primal %.3e dual %.3e mu %.3e", it, pres, dres, mu);
    if (pres <= set.tol && dres <= set.tol && mu <= set.tol) break;
    if (it >= set.max_iter) {
      std::vector<std::pair<double, std::string>> act;
      for (int i = 0; i < mi; ++i) act.push_back({z[i], qp.sys.ineq[i].label});
      for (int i = 0; i < me; ++i) act.push_back({std::abs(y[i]), qp.sys.eq[i].label});
      for (int i = 0; i < n; ++i) {
        if (hasL[i]) act.push_back({zl[i], detail::bound_label(qp.sys.var_names[i], "lower")});
        if (hasU[i]) act.push_back({zu[i], detail::bound_label(qp.sys.var_names[i], "upper")});
      }
      std::sort(act.begin(), act.end(), [](const auto& a, const auto& b) { return a.first > b.first; });
      std::vector<std::string> names;
      const double top = act.empty() ? 0.0 : act.front().first;
      for (const auto& [v, name] : act) {
        if (names.size() >= 25 || v < 1e-3 * top) break;
        names.push_back(name);
      }
      if (pres > 1e-6)
        throw Infeasible("QP infeasible: primal residual " + std::to_string(pres) + " after " +
                             std::to_string(it) + " iterations",
                         names);
      throw MaxIterations("QP did not converge in " + std::to_string(it) + " iterations (primal " +
                          std::to_string(pres) + ", dual " + std::to_string(dres) + ", mu " + std::to_string(mu) +
                          ")");
    }
    if (pres < 0.5 * best_primal) {
      best_primal = pres;
      stall = 0;
    } else if (pres > 1e-6 && mu < 1e-12) {
      if (++stall > 10) it = set.max_iter - 1;  // primal stuck while gap closed: certify infeasible
    }

    // Diagonal update and factorization. A zero pivot from cancellation or an
    // inaccurate solve is retried with stronger regularization; refinement
    // removes its bias.
    double sigma = 0.0;
    for (preg = set.primal_reg, dreg = set.dual_reg;; preg *= 100.0, dreg *= 100.0) {
      if (preg > 1e-2) throw Error("KKT factorization failed");
      for (int i = 0; i < n; ++i) {
        double d = hdiag[i] + preg;
        if (hasL[i]) d += zl[i] / wl[i];
        if (hasU[i]) d += zu[i] / wu[i];
        *diag[i] = d;
      }
      for (int i = 0; i < me; ++i) *diag[n + i] = -dreg;
      for (int i = 0; i < mi; ++i) *diag[n + me + i] = -(s[i] / z[i]) - dreg;
      ldlt.factorize(K);
      if (ldlt.info() != Eigen::Success) continue;

      // Predictor.
      for (int i = 0; i < n; ++i) {
        rcl[i] = hasL[i] ? -wl[i] * zl[i] : 0.0;
        rcu[i] = hasU[i] ? -wu[i] * zu[i] : 0.0;
      }
      for (int i = 0; i < mi; ++i) rcs[i] = -s[i] * z[i];
      if (!solve_direction(rcl, rcu, rcs)) continue;
      const double a_aff = max_step(1.0);
      double mu_aff = 0.0;
      if (ncomp) {
        for (int i = 0; i < mi; ++i) mu_aff += (s[i] + a_aff * ds[i]) * (z[i] + a_aff * dz[i]);
        for (int i = 0; i < n; ++i) {
          if (hasL[i]) mu_aff += (wl[i] + a_aff * dwl[i]) * (zl[i] + a_aff * dzl[i]);
          if (hasU[i]) mu_aff += (wu[i] + a_aff * dwu[i]) * (zu[i] + a_aff * dzu[i]);
        }
        mu_aff /= ncomp;
      }
      sigma = mu > 0.0 ? std::pow(std::clamp(mu_aff / mu, 0.0, 1.0), 3) : 0.0;

      // Corrector.
      for (int i = 0; i < n; ++i) {
        rcl[i] = hasL[i] ? sigma * mu - wl[i] * zl[i] - dwl[i] * dzl[i] : 0.0;
        rcu[i] = hasU[i] ? sigma * mu - wu[i] * zu[i] - dwu[i] * dzu[i] : 0.0;
      }
      for (int i = 0; i < mi; ++i) rcs[i] = sigma * mu - s[i] * z[i] - ds[i] * dz[i];
      if (solve_direction(rcl, rcu, rcs)) break;
    }
    const double alpha = max_step(0.995);
    log_at(3, "ipm %3d: step %.3e sigma %.3e", it, alpha, sigma);

    x += alpha * dx;
    if (me) y += alpha * dy;
    if (mi) {
      z += alpha * dz;
      s += alpha * ds;
    }
    wl += alpha * dwl;
    zl += alpha * dzl;
    wu += alpha * dwu;
    zu += alpha * dzu;
  }

  res.x = x;
  res.y = y;
  res.z = z;
  res.zl = zl;
  res.zu = zu;
  res.iterations = it;
  res.objective = qp_objective(qp, x);
  res.kkt = kkt_residuals(qp, res);
  return res;
}

/// Builds the symmetric Hessian from (row, col, value) entries; both triangles are filled.
inline SpMat symmetric_from_triplets(int n, const std::vector<Eigen::Triplet<double>>& upper_or_diag) {
  std::vector<Eigen::Triplet<double>> trip;
  trip.reserve(2 * upper_or_diag.size());
  for (const auto& t : upper_or_diag) {
    trip.push_back(t);
    if (t.row() != t.col()) trip.emplace_back(t.col(), t.row(), t.value());
  }
  SpMat H(n, n);
  H.setFromTriplets(trip.begin(), trip.end());
  return H;
}

}  // namespace resdr
