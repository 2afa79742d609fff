// resdr: generate feeder scenarios, run the DLC policies and write reports.
//
// Exit codes: 0 ok, 2 bad input, 3 infeasible, 4 numerical failure.

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "resdr/resdr.hpp"

namespace {

enum Exit { kOk = 0, kInput = 2, kInfeasible = 3, kNumerical = 4 };

struct SolverFlags {
  double tol = resdr::QpSettings{}.tol;
  double outer_tol = resdr::DlcOptions{}.outer_tol;
  int max_outer = resdr::DlcOptions{}.max_outer;
  int max_cuts = resdr::DlcOptions{}.max_cuts;

  void add_to(CLI::App* cmd) {
    cmd->add_option("--tol", tol, "QP KKT tolerance")->capture_default_str()->check(CLI::PositiveNumber);
    cmd->add_option("--outer-tol", outer_tol, "re-linearization stop on max |dv| (pu^2)")
        ->capture_default_str()
        ->check(CLI::PositiveNumber);
    cmd->add_option("--max-outer", max_outer, "re-linearization limit")->capture_default_str()->check(CLI::PositiveNumber);
    cmd->add_option("--max-cuts", max_cuts, "cap cuts per slot")->capture_default_str()->check(CLI::NonNegativeNumber);
  }

  resdr::DlcOptions options() const {
    resdr::DlcOptions o;
    o.qp.tol = tol;
    o.outer_tol = outer_tol;
    o.max_outer = max_outer;
    o.max_cuts = max_cuts;
    return o;
  }
};

void print_run(const resdr::PolicyRun& r) {
  const resdr::RunSummary& s = r.summary;
  std::printf("%-12s cost %.3f  objective %.3f  peak %.4f MVA  vmin %.4f kV (t=%d)  cap %s  voltage %s  "
              "outer %d  cuts %d  %.2f s\n",
              resdr::policy_name(r.policy), s.lse_cost, s.objective, s.peak_event_mva, s.vmin_kv, s.vmin_slot,
              s.cap_violation ? "VIOLATED" : "ok", s.voltage_violation ? "VIOLATED" : "ok", s.outer_iterations, s.cuts,
              s.solve_seconds);
  if (!s.outer_converged) std::printf("%-12s warning: re-linearization stopped before convergence\n", "");
}

int cmd_generate(const std::string& spec_path, std::uint64_t seed, bool seed_set, const std::string& out) {
  resdr::ScenarioSpec spec = spec_path.empty() ? resdr::ScenarioSpec{} : resdr::load_spec(spec_path);
  if (seed_set) spec.rng_seed = seed;
  const resdr::Scenario sc = resdr::generate(spec);
  resdr::write_scenario(sc, out);
  std::printf("wrote %s (%zu households, seed %llu)\n", out.c_str(), sc.households.size(),
              static_cast<unsigned long long>(sc.rng_seed));
  return kOk;
}

int cmd_run(const std::string& path, const std::string& policy, const std::string& out, const SolverFlags& flags) {
  const resdr::Policy p = resdr::parse_policy(policy);
  const resdr::Scenario sc = resdr::load_scenario(path);
  const resdr::PolicyRun run = resdr::run_policy(sc, p, flags.options());
  resdr::write_bundle(out, sc, run);
  print_run(run);
  return kOk;
}

int cmd_compare(const std::string& path, const std::string& out, const SolverFlags& flags) {
  const resdr::Scenario sc = resdr::load_scenario(path);
  std::vector<resdr::PolicyRun> runs;
  for (resdr::Policy p : resdr::kPolicies) runs.push_back(resdr::run_policy(sc, p, flags.options()));
  resdr::write_comparison(out, sc, runs);
  for (const auto& r : runs) print_run(r);
  const std::string md = resdr::compare_markdown(sc, runs);
  const auto delta = md.find("\nLSE cost");
  if (delta != std::string::npos) std::printf("%s", md.c_str() + delta);
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Residential DLC on unbalanced radial feeders"};
  app.require_subcommand(1);

  std::string spec_path, out_path;
  std::uint64_t seed = 0;
  auto* gen = app.add_subcommand("generate", "draw a scenario file");
  gen->add_option("--spec", spec_path, "compact spec (JSON); built-in defaults when omitted");
  auto* seed_opt = gen->add_option("--seed", seed, "RNG seed, overrides --spec");
  gen->add_option("-o,--out", out_path, "scenario file to write")->required();

  std::string scenario, policy, out_dir = "report";
  SolverFlags flags;
  auto* run = app.add_subcommand("run", "schedule one policy and validate it by exact power flow");
  run->add_option("scenario", scenario, "scenario file")->required();
  run->add_option("--policy", policy, "wo-dlc, conventional or proposed")
      ->required()
      ->check(CLI::IsMember({"wo-dlc", "conventional", "proposed"}));
  run->add_option("--out", out_dir, "report directory")->capture_default_str();
  flags.add_to(run);

  auto* cmp = app.add_subcommand("compare", "run all policies and merge their reports");
  cmp->add_option("scenario", scenario, "scenario file")->required();
  cmp->add_option("--out", out_dir, "report directory")->capture_default_str();
  flags.add_to(cmp);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kInput;
  }

  try {
    if (*gen) return cmd_generate(spec_path, seed, seed_opt->count() > 0, out_path);
    if (*run) return cmd_run(scenario, policy, out_dir, flags);
    if (*cmp) return cmd_compare(scenario, out_dir, flags);
  } catch (const resdr::ParseError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kInput;
  } catch (const resdr::InvariantError& e) {
    std::cerr << "error: invalid scenario: " << e.what() << "\n";
    return kInput;
  } catch (const resdr::Infeasible& e) {
    std::cerr << "error: " << e.what() << "\n";
    if (!e.active_rows().empty()) {
      std::cerr << "active rows (largest multipliers first):\n";
      for (const auto& r : e.active_rows()) std::cerr << "  " << r << "\n";
    }
    return kInfeasible;
  } catch (const resdr::NotConverged& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kNumerical;
  } catch (const resdr::MaxIterations& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kNumerical;
  } catch (const resdr::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kNumerical;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return kOk;
}
