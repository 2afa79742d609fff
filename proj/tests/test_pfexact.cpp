#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "oracles.hpp"
#include "resdr/pfexact.hpp"
#include "test_util.hpp"

using namespace resdr;

namespace {

std::vector<CVec3> demand_of(const Network& pu, int t = 0, double scale = 1.0) {
  std::vector<CVec3> S(pu.buses.size(), CVec3::Zero());
  for (std::size_t b = 0; b < pu.buses.size(); ++b)
    for (int p = 0; p < 3; ++p)
      S[b][p] = scale * Complex(pu.buses[b].critical.p[p][t], pu.buses[b].critical.q[p][t]);
  return S;
}

Network two_bus(double r, double x) {
  std::mt19937_64 rng(0);
  Network net = testutil::random_feeder(2, rng);
  net.lines[0].r = Mat3::Identity() * r;
  net.lines[0].x = Mat3::Identity() * x;
  return to_per_unit(net);
}

}  // namespace

TEST(SweepPf, TwoBusMatchesClosedForm) {
  std::mt19937_64 rng(10);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int trial = 0; trial < 50; ++trial) {
    const double r = 0.1 + 1.5 * u(rng), x = 0.1 + 1.5 * u(rng);
    const Network pu = two_bus(r, x);
    std::vector<CVec3> S(2, CVec3::Zero());
    for (int p = 0; p < 3; ++p) S[1][p] = Complex(0.3 * u(rng), 0.15 * u(rng) - 0.03);
    const ComplexVoltageState st = solve_pf(pu, S);
    const double rp = pu.lines[0].r(0, 0), xp = pu.lines[0].x(0, 0);
    for (int p = 0; p < 3; ++p) {
      const double v2 = oracle::two_bus_receiving_v2(1.0, rp, xp, S[1][p].real(), S[1][p].imag());
      EXPECT_NEAR(std::norm(st.V[1][p]), v2, 1e-9) << "trial " << trial << " phase " << p;
    }
  }
}

TEST(SweepPf, AgreesWithNodalFixedPoint) {
  std::mt19937_64 rng(11);
  for (int k = 0; k < 10; ++k) {
    const Network pu = to_per_unit(testutil::random_feeder(3 + k % 8, rng));
    const std::vector<CVec3> S = demand_of(pu);
    const ComplexVoltageState st = solve_pf(pu, S);
    const oracle::NodalResult ref = oracle::nodal_fixed_point(pu, S);
    for (std::size_t b = 0; b < pu.buses.size(); ++b)
      for (int p = 0; p < 3; ++p) {
        if (pu.buses[b].phases[p]) {
          EXPECT_LT(std::abs(st.V[b][p] - ref.V[b][p]), 1e-6) << "net " << k << " bus " << b;
        }
      }
  }
}

TEST(SweepPf, EnergyBalanceCloses) {
  std::mt19937_64 rng(12);
  for (int k = 0; k < 10; ++k) {
    const Network pu = to_per_unit(testutil::random_feeder(10, rng, 120.0, 3));
    InjectionSpec inj;
    for (int t = 0; t < 3; ++t) inj.S.push_back(demand_of(pu, t));
    const SimulationResult sim = simulate_injections(pu, inj);
    for (double e : sim.energy_residual) EXPECT_LE(e, 1e-8);
    for (double loss : sim.losses) EXPECT_GT(loss, 0.0);
  }
}

TEST(SweepPf, MoreLoadLowersVoltageAndRaisesLoss) {
  std::mt19937_64 rng(13);
  for (int k = 0; k < 10; ++k) {
    const Network pu = to_per_unit(testutil::random_feeder(8, rng));
    InjectionSpec inj;
    for (double s : {0.5, 1.0, 1.5}) inj.S.push_back(demand_of(pu, 0, s));
    const SimulationResult sim = simulate_injections(pu, inj);
    for (int t = 1; t < 3; ++t) {
      EXPECT_GT(sim.losses[t], sim.losses[t - 1]);
      EXPECT_LT(sim.vmin[t].minCoeff(), sim.vmin[t - 1].minCoeff());
    }
  }
}

TEST(SweepPf, StorageOrderDoesNotMatter) {
  std::mt19937_64 rng(14);
  for (int k = 0; k < 5; ++k) {
    const Network pu = to_per_unit(testutil::random_feeder(9, rng));
    Network shuffled = pu;
    std::shuffle(shuffled.buses.begin(), shuffled.buses.end(), rng);
    std::shuffle(shuffled.lines.begin(), shuffled.lines.end(), rng);
    const ComplexVoltageState a = solve_pf(pu, demand_of(pu));
    const ComplexVoltageState b = solve_pf(shuffled, demand_of(shuffled));
    for (const Bus& bus : pu.buses) {
      const CVec3 va = a.V[pu.bus_index(bus.id)], vb = b.V[shuffled.bus_index(bus.id)];
      EXPECT_LT((va - vb).cwiseAbs().maxCoeff(), 1e-12) << "bus " << bus.id;
    }
  }
}

TEST(SweepPf, CollapseThrowsNotConverged) {
  std::mt19937_64 rng(15);
  const Network pu = to_per_unit(testutil::random_feeder(6, rng));
  EXPECT_THROW(solve_pf(pu, demand_of(pu, 0, 500.0)), NotConverged);
  InjectionSpec inj;
  inj.S = {demand_of(pu), demand_of(pu, 0, 500.0)};
  try {
    simulate_injections(pu, inj);
    FAIL() << "expected NotConverged";
  } catch (const NotConverged& e) {
    EXPECT_EQ(e.t(), 1);
  }
}

TEST(SweepPf, DistflowSliceIsConsistent) {
  std::mt19937_64 rng(16);
  const Network pu = to_per_unit(testutil::random_feeder(7, rng));
  const ComplexVoltageState st = solve_pf(pu, demand_of(pu));
  const StateSlice sl = state_to_distflow(pu, st);
  for (std::size_t b = 0; b < pu.buses.size(); ++b)
    for (int p = 0; p < 3; ++p) EXPECT_NEAR(sl.v[b][p], std::norm(st.V[b][p]), 1e-15);
  EXPECT_NEAR(sl.v[pu.bus_index(0)].sum(), 3.0, 1e-12);
}
