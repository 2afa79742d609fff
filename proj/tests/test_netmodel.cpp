#include <gtest/gtest.h>

#include <cmath>
#include <string>

#include "resdr/netmodel.hpp"
#include "resdr/scenario.hpp"

using namespace resdr;

namespace {

ScenarioSpec small_spec(std::uint64_t seed = 7) {
  ScenarioSpec s;
  s.rng_seed = seed;
  s.households_per_bus = 2;
  return s;
}

Network three_bus() {
  Network net;
  net.horizon = 2;
  for (int id : {0, 1, 2}) {
    Bus b;
    b.id = id;
    b.v_min = 3.9;
    b.v_max = 4.4;
    for (int p = 0; p < 3; ++p) {
      b.critical.p[p].assign(2, 0.0);
      b.critical.q[p].assign(2, 0.0);
    }
    net.buses.push_back(b);
  }
  Line a;
  a.from = 0;
  a.to = 1;
  a.r = Mat3::Identity() * 0.5;
  a.x = Mat3::Identity() * 0.3;
  Line b = a;
  b.from = 2;  // stored child-to-parent on purpose
  b.to = 1;
  net.lines = {a, b};
  net.costs["pcc"] = CostProfile{{0, 0}, {0.01, 0.01}, {0, 0}};
  return net;
}

}  // namespace

TEST(PerUnit, ImpedanceBaseOfTheStudyFeeder) {
  Network net = three_bus();
  net.base_kv = 4.16;
  net.base_kva = 1000.0;
  const Network pu = to_per_unit(net);
  // Z_base = 4.16^2 * 1000 / 1000 = 17.3056 ohm.
  EXPECT_NEAR(pu.lines[0].r(0, 0), 0.5 / 17.3056, 1e-15);
  EXPECT_NEAR(pu.v_ref, 1.0, 1e-15);
  EXPECT_NEAR(pu.buses[1].v_min, 3.9 / 4.16, 1e-15);
  EXPECT_EQ(pu.units, UnitSystem::PerUnit);
}

TEST(PerUnit, RoundTripIsIdentity) {
  const Scenario sc = generate(small_spec());
  const Network back = from_per_unit(to_per_unit(sc.network));
  for (std::size_t l = 0; l < back.lines.size(); ++l) {
    EXPECT_LT((back.lines[l].r - sc.network.lines[l].r).cwiseAbs().maxCoeff(), 1e-12);
    EXPECT_LT((back.lines[l].x - sc.network.lines[l].x).cwiseAbs().maxCoeff(), 1e-12);
  }
  for (std::size_t b = 0; b < back.buses.size(); ++b)
    for (int p = 0; p < 3; ++p)
      for (int t = 0; t < back.horizon; ++t)
        EXPECT_NEAR(back.buses[b].critical.p[p][t], sc.network.buses[b].critical.p[p][t], 1e-12);
  for (std::size_t g = 0; g < back.dg.size(); ++g) {
    EXPECT_NEAR(back.dg[g].q_max, sc.network.dg[g].q_max, 1e-12);
    EXPECT_NEAR(back.dg[g].p_max[12], sc.network.dg[g].p_max[12], 1e-12);
  }
  EXPECT_NEAR(back.v_ref, sc.network.v_ref, 1e-15);
}

TEST(PerUnit, IdempotentOnConvertedNetwork) {
  const Network pu = to_per_unit(three_bus());
  const Network again = to_per_unit(pu);
  EXPECT_EQ(again.lines[0].r, pu.lines[0].r);
}

TEST(Topology, ParentBeforeChildAndReorientation) {
  Network net = three_bus();
  const std::vector<int> order = validate_topology(net);
  ASSERT_EQ(order.size(), 3u);
  EXPECT_EQ(order[0], 0);
  EXPECT_EQ(order[1], 1);
  EXPECT_EQ(order[2], 2);
  orient_lines(net);
  EXPECT_EQ(net.lines[1].from, 1);
  EXPECT_EQ(net.lines[1].to, 2);
}

TEST(Topology, CycleIsReported) {
  Network net = three_bus();
  Line extra = net.lines[0];
  extra.from = 0;
  extra.to = 2;
  net.lines.push_back(extra);
  try {
    build_topology(net);
    FAIL() << "expected TopologyError";
  } catch (const TopologyError& e) {
    EXPECT_EQ(e.kind(), TopologyError::Kind::CycleDetected);
  }
}

TEST(Topology, IslandIsReported) {
  Network net = three_bus();
  net.lines.pop_back();
  try {
    build_topology(net);
    FAIL() << "expected TopologyError";
  } catch (const TopologyError& e) {
    EXPECT_EQ(e.kind(), TopologyError::Kind::Disconnected);
  }
}

TEST(Topology, MissingPccIsReported) {
  Network net = three_bus();
  net.buses[0].id = 5;
  net.lines[0].from = 5;
  EXPECT_THROW(build_topology(net), TopologyError);
}

TEST(Invariants, GeneratedScenarioPasses) {
  const Scenario sc = generate(small_spec());
  EXPECT_NO_THROW(check_invariants(sc));
}

TEST(Invariants, Violations) {
  const Scenario good = generate(small_spec());
  {
    Scenario sc = good;
    sc.network.buses[2].v_min = 5.0;  // above v_ref
    EXPECT_THROW(check_invariants(sc), InvariantError);
  }
  {
    Scenario sc = good;
    sc.network.lines[1].r(0, 1) += 1.0;  // asymmetric
    EXPECT_THROW(check_invariants(sc), InvariantError);
  }
  {
    Scenario sc = good;
    sc.network.dg[0].q_min = 10.0;
    sc.network.dg[0].q_max = -10.0;
    EXPECT_THROW(check_invariants(sc), InvariantError);
  }
  {
    Scenario sc = good;
    sc.households[0].appliances[0].p_max[0] = -1.0;
    EXPECT_THROW(check_invariants(sc), InvariantError);
  }
  {
    Scenario sc = good;
    sc.households[1].id = sc.households[0].id;
    EXPECT_THROW(check_invariants(sc), InvariantError);
  }
  {
    Scenario sc = good;
    sc.network.buses[0].critical.p[0][3] = 1.0;  // load on the PCC
    EXPECT_THROW(check_invariants(sc), InvariantError);
  }
  {
    Scenario sc = good;
    sc.event.window.push_back(99);
    EXPECT_THROW(check_invariants(sc), InvariantError);
  }
}

TEST(ScenarioFile, RoundTripIsByteIdentical) {
  const Scenario sc = generate(small_spec(11));
  const std::string text = scenario_to_string(sc);
  const Scenario back = parse_scenario_text(text);
  EXPECT_EQ(scenario_to_string(back), text);
  EXPECT_EQ(back.households.size(), sc.households.size());
  EXPECT_EQ(back.rng_seed, sc.rng_seed);
  EXPECT_EQ(back.event.window, sc.event.window);
}

TEST(ScenarioFile, PerUnitInputIsWrittenInSi) {
  const Scenario sc = generate(small_spec(3));
  Scenario pu = sc;
  pu.network = to_per_unit(sc.network);
  const nlohmann::json a = scenario_to_json(sc);
  const nlohmann::json b = scenario_to_json(pu);
  EXPECT_NEAR(b["network"]["v_ref_kv"].get<double>(), a["network"]["v_ref_kv"].get<double>(), 1e-12);
  EXPECT_NEAR(b["network"]["lines"][3]["r_ohm"][0][0].get<double>(),
              a["network"]["lines"][3]["r_ohm"][0][0].get<double>(), 1e-12);
}

TEST(ScenarioFile, CriticalAppliancesFoldIntoBusLoad) {
  Scenario sc = generate(small_spec(5));
  nlohmann::json doc = scenario_to_json(sc);
  const int bus = doc["households"][0]["bus"].get<int>();
  const Phase ph = parse_phase(doc["households"][0]["phase"].get<std::string>()[0]);
  nlohmann::json crit;
  crit["id"] = 99;
  crit["name"] = "fridge";
  crit["kind"] = "critical";
  crit["p_kw"] = Series(24, 0.25);
  crit["q_kvar"] = Series(24, 0.1);
  doc["households"][0]["appliances"].push_back(crit);
  const Scenario back = parse_scenario(doc);
  const int bi = back.network.bus_index(bus);
  EXPECT_NEAR(back.network.buses[bi].critical.p[index(ph)][4], sc.network.buses[bi].critical.p[index(ph)][4] + 0.25,
              1e-12);
  EXPECT_NEAR(back.network.buses[bi].critical.q[index(ph)][4], sc.network.buses[bi].critical.q[index(ph)][4] + 0.1,
              1e-12);
  EXPECT_EQ(back.households[0].appliances.size(), sc.households[0].appliances.size());
}

TEST(ScenarioFile, ErrorsNameTheField) {
  const nlohmann::json good = scenario_to_json(generate(small_spec()));
  auto where = [](const nlohmann::json& doc) -> std::string {
    try {
      parse_scenario(doc);
    } catch (const ParseError& e) {
      return e.where();
    }
    return "";
  };
  {
    nlohmann::json d = good;
    d["network"].erase("horizon");
    EXPECT_EQ(where(d), "$.network.horizon");
  }
  {
    nlohmann::json d = good;
    d["network"]["lines"][2]["r_ohm"][1] = {1.0, 2.0};
    EXPECT_EQ(where(d), "$.network.lines[2].r_ohm[1]");
  }
  {
    nlohmann::json d = good;
    d["households"][1]["appliances"][0]["kind"] = "nuclear";
    EXPECT_EQ(where(d), "$.households[1].appliances[0].kind");
  }
  {
    nlohmann::json d = good;
    d["households"][0]["phase"] = "D";
    EXPECT_EQ(where(d), "$.households[0].phase");
  }
  {
    nlohmann::json d = good;
    d["dlc_event"]["window"][0] = 25;
    EXPECT_EQ(where(d), "$.dlc_event.window[0]");
  }
}

TEST(ScenarioFile, MalformedTextReportsLine) {
  try {
    parse_scenario_text("{\n  \"network\": {\n    \"v_ref_kv\": ,\n  }\n}");
    FAIL() << "expected ParseError";
  } catch (const ParseError& e) {
    EXPECT_EQ(e.where(), "line 3");
  }
}

TEST(ScenarioFile, MissingFileNamesPath) {
  try {
    load_scenario("/nonexistent/feeder.scenario");
    FAIL() << "expected ParseError";
  } catch (const ParseError& e) {
    EXPECT_NE(std::string(e.what()).find("/nonexistent/feeder.scenario"), std::string::npos);
  }
}

TEST(ScenarioFile, CycleInFileIsTopologyError) {
  nlohmann::json d = scenario_to_json(generate(small_spec()));
  nlohmann::json extra = d["network"]["lines"][0];
  extra["from"] = 0;
  extra["to"] = 5;
  d["network"]["lines"].push_back(extra);
  EXPECT_THROW(parse_scenario(d), TopologyError);
}

TEST(CostProfile, Evaluates) {
  const CostProfile c{{1e-3}, {0.02}, {1.0}};
  EXPECT_NEAR(c.eval(0, 100.0), 1e-3 * 1e4 + 2.0 + 1.0, 1e-12);
}
