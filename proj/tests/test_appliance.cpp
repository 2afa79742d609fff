#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "resdr/appliance.hpp"

using namespace resdr;

namespace {

constexpr int T = 24;

Appliance make_ac(double alpha = 0.9, double beta = -6.0) {
  Appliance a;
  a.id = 1;
  a.name = "ac";
  a.eta = 0.85;
  a.utility_weight = 0.01;
  ThermostaticSpec th;
  th.alpha = alpha;
  th.beta = beta;
  th.t_init = 75.0;
  for (int t = 0; t < T; ++t) {
    th.t_out.push_back(80.0 + 8.0 * std::sin(t * 0.26));
    th.t_conf.push_back(74.0);
    th.t_in_min.push_back(70.0);
    th.t_in_max.push_back(79.0);
  }
  a.kind = th;
  for (int t = 0; t < T; ++t) a.work_window.push_back(t);
  a.p_min.assign(T, 0.0);
  a.p_max.assign(T, 3.5);
  return a;
}

Appliance make_dryer() {
  Appliance a;
  a.id = 2;
  a.name = "dryer";
  a.eta = 0.9;
  a.utility_weight = 0.03;
  a.work_window = {19, 20, 21, 22, 23};
  a.p_min.assign(T, 0.0);
  a.p_max.assign(T, 0.0);
  DeferrableSpec d;
  d.e_min = 4.5;
  d.e_max = 9.0;
  d.p_pref.assign(T, 0.0);
  for (int t : a.work_window) {
    a.p_max[t] = 5.0;
    d.p_pref[t] = t < 21 ? 4.5 : 0.0;
  }
  a.kind = d;
  return a;
}

Appliance make_lighting() {
  Appliance a;
  a.id = 3;
  a.name = "lighting";
  a.eta = 0.95;
  a.utility_weight = 0.02;
  a.p_min.assign(T, 0.0);
  a.p_max.assign(T, 0.0);
  InterruptibleSpec i;
  i.p_pref.assign(T, 0.0);
  for (int t : {0, 1, 2, 3, 4, 5, 18, 19, 20, 21, 22, 23}) {
    a.work_window.push_back(t);
    a.p_max[t] = 0.8;
    i.p_pref[t] = 0.8;
  }
  std::sort(a.work_window.begin(), a.work_window.end());
  a.kind = i;
  return a;
}

ApplianceSchedule random_schedule(const Appliance& a, std::mt19937_64& rng) {
  ApplianceSchedule s;
  s.p.assign(T, 0.0);
  s.q.assign(T, 0.0);
  for (int t : a.work_window) {
    std::uniform_real_distribution<double> u(a.p_min[t], a.p_max[t]);
    s.p[t] = u(rng);
    s.q[t] = reactive_from_active(s.p[t], a.eta);
  }
  if (const auto* th = std::get_if<ThermostaticSpec>(&a.kind)) s.t_in = thermal_trajectory(*th, s.p);
  return s;
}

ApplianceSchedule midpoint(const Appliance& a, const ApplianceSchedule& x, const ApplianceSchedule& y) {
  ApplianceSchedule m;
  for (int t = 0; t < T; ++t) {
    m.p.push_back(0.5 * (x.p[t] + y.p[t]));
    m.q.push_back(0.5 * (x.q[t] + y.q[t]));
  }
  if (const auto* th = std::get_if<ThermostaticSpec>(&a.kind)) m.t_in = thermal_trajectory(*th, m.p);
  return m;
}

double eval_quadratic(const UtilityQuadratic& u, const ApplianceSchedule& s) {
  double v = u.constant;
  for (std::size_t k = 0; k < u.vars.size(); ++k) {
    const LocalVar& lv = u.vars[k];
    const double x = lv.kind == LocalVarKind::P ? s.p[lv.t] : lv.kind == LocalVarKind::Q ? s.q[lv.t] : s.t_in[lv.t];
    v += 0.5 * u.hess[k] * x * x + u.grad[k] * x;
  }
  return v;
}

}  // namespace

TEST(ReactiveRatio, MatchesTanArccos) {
  for (double eta : {0.8, 0.85, 0.9, 0.95, 1.0}) EXPECT_NEAR(reactive_ratio(eta), std::tan(std::acos(eta)), 1e-12);
  EXPECT_THROW(reactive_ratio(0.0), std::invalid_argument);
  EXPECT_THROW(reactive_ratio(1.2), std::invalid_argument);
}

TEST(Thermal, StepAndTrajectoryAgree) {
  const Appliance ac = make_ac();
  const auto& th = std::get<ThermostaticSpec>(ac.kind);
  std::mt19937_64 rng(1);
  const ApplianceSchedule s = random_schedule(ac, rng);
  double prev = th.t_init;
  for (int t = 0; t < T; ++t) {
    // Closed form of one step written out independently.
    const double expect = (1.0 - th.alpha) * prev + th.alpha * th.t_out[t] + th.beta * s.p[t];
    EXPECT_NEAR(s.t_in[t], expect, 1e-9);
    prev = expect;
  }
}

TEST(Thermal, EvolutionRowsHoldOnReconstructedTrajectories) {
  std::mt19937_64 rng(2);
  for (int trial = 0; trial < 200; ++trial) {
    std::uniform_real_distribution<double> ua(0.05, 0.95), ub(-9.0, -3.0);
    const Appliance ac = make_ac(ua(rng), ub(rng));
    const ApplianceSchedule s = random_schedule(ac, rng);
    for (const LocalRow& row : feasible_set_constraints(ac).rows) {
      if (row.role != RowRole::TemperatureEvolution) continue;
      double lhs = 0.0;
      for (const auto& [v, c] : row.terms) lhs += c * (v.kind == LocalVarKind::P ? s.p[v.t] : s.t_in[v.t]);
      ASSERT_NEAR(lhs, row.lo, 1e-9 * std::max(1.0, std::abs(row.lo)));
    }
  }
}

TEST(Utility, ConcaveAlongRandomPairs) {
  std::mt19937_64 rng(3);
  for (const Appliance& a : {make_ac(), make_dryer(), make_lighting()}) {
    for (int k = 0; k < 1000; ++k) {
      const ApplianceSchedule x = random_schedule(a, rng);
      const ApplianceSchedule y = random_schedule(a, rng);
      const double mid = utility(a, midpoint(a, x, y));
      ASSERT_GE(mid + 1e-9, 0.5 * (utility(a, x) + utility(a, y))) << a.name << " pair " << k;
    }
  }
}

TEST(Utility, QuadraticFormReproducesUtility) {
  std::mt19937_64 rng(4);
  for (const Appliance& a : {make_ac(), make_dryer(), make_lighting()}) {
    const UtilityQuadratic u = utility_terms(a);
    for (double h : u.hess) EXPECT_LE(h, 0.0);
    for (int k = 0; k < 50; ++k) {
      const ApplianceSchedule s = random_schedule(a, rng);
      EXPECT_NEAR(eval_quadratic(u, s), utility(a, s), 1e-9 * std::max(1.0, std::abs(utility(a, s)))) << a.name;
    }
  }
}

TEST(Utility, DeferrableWeightsGrowAlongTheWindow) {
  const Appliance d = make_dryer();
  const auto& spec = std::get<DeferrableSpec>(d.kind);
  ApplianceSchedule base;
  base.p = spec.p_pref;
  base.q.assign(T, 0.0);
  // Equal deviation at the first and at the last window slot: the later one costs 5x.
  ApplianceSchedule early = base, late = base;
  early.p[19] += 0.1;
  late.p[23] += 0.1;
  const double u0 = utility(d, base);
  const double de = utility(d, early) - u0 - d.utility_weight * 0.1;
  const double dl = utility(d, late) - u0 - d.utility_weight * 0.1;
  EXPECT_NEAR(de, -d.utility_weight * 1.0 * 0.01, 1e-12);
  EXPECT_NEAR(dl, -d.utility_weight * 5.0 * 0.01, 1e-12);
}

TEST(Utility, PeaksAtPreference) {
  const Appliance l = make_lighting();
  ApplianceSchedule s;
  s.p = std::get<InterruptibleSpec>(l.kind).p_pref;
  s.q.assign(T, 0.0);
  EXPECT_DOUBLE_EQ(utility(l, s), 0.0);
  s.p[20] -= 0.3;
  EXPECT_LT(utility(l, s), 0.0);
}

TEST(FeasibleSet, VariableAndRowCounts) {
  const Appliance ac = make_ac();
  const ApplianceConstraints c = feasible_set_constraints(ac);
  EXPECT_EQ(c.variables.size(), 3u * T);  // p, q in the window plus T_in every slot
  EXPECT_EQ(c.count(RowRole::PowerBox), static_cast<std::size_t>(T));
  EXPECT_EQ(c.count(RowRole::PowerFactorTie), static_cast<std::size_t>(T));
  EXPECT_EQ(c.count(RowRole::TemperatureEvolution), static_cast<std::size_t>(T));
  EXPECT_EQ(c.count(RowRole::ComfortBand), static_cast<std::size_t>(T));

  const ApplianceConstraints d = feasible_set_constraints(make_dryer());
  EXPECT_EQ(d.variables.size(), 10u);
  EXPECT_EQ(d.count(RowRole::EnergyWindow), 1u);

  const ApplianceConstraints l = feasible_set_constraints(make_lighting());
  EXPECT_EQ(l.variables.size(), 24u);
  EXPECT_EQ(l.count(RowRole::EnergyWindow), 0u);

  Appliance crit;
  crit.kind = CriticalSpec{Series(T, 1.0), Series(T, 0.2)};
  crit.p_min = crit.p_max = Series(T, 0.0);
  EXPECT_TRUE(feasible_set_constraints(crit).variables.empty());
}

TEST(FeasibleSet, TieCoefficientIsTheReactiveRatio) {
  const Appliance d = make_dryer();
  for (const LocalRow& r : feasible_set_constraints(d).rows) {
    if (r.role != RowRole::PowerFactorTie) continue;
    ASSERT_EQ(r.terms.size(), 2u);
    EXPECT_NEAR(-r.terms[1].second, std::tan(std::acos(d.eta)), 1e-12);
    EXPECT_EQ(r.lo, 0.0);
    EXPECT_EQ(r.hi, 0.0);
  }
}

TEST(CheckSchedule, AcceptsFeasibleAndFlagsEachViolation) {
  const Appliance ac = make_ac();
  ApplianceSchedule s;
  s.p.assign(T, 0.0);
  s.q.assign(T, 0.0);
  const auto& th = std::get<ThermostaticSpec>(ac.kind);
  // Track comfort exactly so the band holds.
  double prev = th.t_init;
  for (int t = 0; t < T; ++t) {
    const double need = (th.t_conf[t] - prev - th.alpha * (th.t_out[t] - prev)) / th.beta;
    s.p[t] = std::clamp(need, 0.0, 3.5);
    s.q[t] = reactive_from_active(s.p[t], ac.eta);
    prev = temperature_step(prev, th.t_out[t], s.p[t], th.alpha, th.beta);
  }
  s.t_in = thermal_trajectory(th, s.p);
  EXPECT_TRUE(check_schedule(ac, s, 1.0, 1e-9, 1e-9).empty());

  ApplianceSchedule bad_tie = s;
  bad_tie.q[3] += 0.1;
  EXPECT_FALSE(check_schedule(ac, bad_tie, 1.0, 1e-9, 1e-9).empty());
  ApplianceSchedule bad_temp = s;
  bad_temp.t_in[5] += 0.5;
  EXPECT_FALSE(check_schedule(ac, bad_temp, 1.0, 1e-9, 1e-9).empty());

  const Appliance d = make_dryer();
  ApplianceSchedule low;
  low.p.assign(T, 0.0);
  low.q.assign(T, 0.0);
  low.p[20] = 1.0;
  low.q[20] = reactive_from_active(1.0, d.eta);
  EXPECT_FALSE(check_schedule(d, low, 1.0, 1e-9, 1e-9).empty());  // below e_min
  ApplianceSchedule outside = low;
  outside.p[5] = 1.0;
  EXPECT_FALSE(check_schedule(d, outside, 1.0, 1e-9, 1e-9).empty());
}
