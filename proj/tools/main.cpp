#include <fstream>
#include <iostream>

#include <CLI11.hpp>

#include "fleetsim/report.hpp"
#include "fleetsim/runner.hpp"
#include "fleetsim/scenario.hpp"

using namespace fleetsim;

namespace {

int cmd_run(const std::string& file, i64 seed, const std::string& trace_out) {
  cli::Scenario s = cli::Scenario::load_file(file);
  cli::apply_env_cost_overrides(s.cost);
  if (seed >= 0) s.seed = static_cast<u64>(seed);
  cli::RunResult res = cli::run_scenario(s);
  if (!trace_out.empty()) {
    std::ofstream out(trace_out, std::ios::binary);
    if (!out) throw ConfigError("cannot write trace file: " + trace_out);
    out << res.trace_text;
  }
  std::cout << res.summary.dump(2) << "\n";
  for (const auto& d : res.diagnostics) std::cerr << "note: " << d << "\n";
  if (res.deadlock) {
    std::cerr << "error: simulation deadlocked\n";
    return 1;
  }
  return 0;
}

int cmd_verify(const std::string& file, i64 seed) {
  cli::Scenario s = cli::Scenario::load_file(file);
  cli::apply_env_cost_overrides(s.cost);
  if (seed >= 0) s.seed = static_cast<u64>(seed);
  cli::VerifyOutcome v = cli::verify_scenario(s);
  for (const auto& n : v.notes) std::cout << "note: " << n << "\n";
  if (v.pass) {
    std::cout << "verify: PASS\n";
    return 0;
  }
  for (const auto& f : v.failures) std::cout << "FAIL: " << f << "\n";
  std::cout << "verify: FAIL (" << v.failures.size() << " findings)\n";
  return 1;
}

int cmd_report(const std::string& trace_file) {
  std::ifstream in(trace_file, std::ios::binary);
  if (!in) throw ConfigError("cannot open trace file: " + trace_file);
  std::string text((std::istreambuf_iterator<char>(in)),
                   std::istreambuf_iterator<char>());
  std::string warning;
  std::cout << cli::render_report(text, &warning);
  if (!warning.empty()) std::cerr << "warning: " << warning << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"fleetsim: deterministic simulator for transparent checkpoint, "
               "preemption, migration and elastic resizing of distributed "
               "training jobs"};
  app.require_subcommand(1);

  std::string scenario_file, trace_out, trace_file;
  i64 seed = -1;

  auto* run = app.add_subcommand("run", "execute a scenario, emit trace and summary");
  run->add_option("file", scenario_file, "scenario config (JSON)")->required();
  run->add_option("--seed", seed, "override the scenario seed");
  run->add_option("--trace", trace_out, "write the line-delimited trace here");

  auto* verify = app.add_subcommand(
      "verify", "run a scenario and check it against the dedicated oracle");
  verify->add_option("file", scenario_file, "scenario config (JSON)")->required();
  verify->add_option("--seed", seed, "override the scenario seed");

  auto* report = app.add_subcommand("report", "render tables from a trace file");
  report->add_option("trace", trace_file, "trace file from `run --trace`")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (run->parsed()) return cmd_run(scenario_file, seed, trace_out);
    if (verify->parsed()) return cmd_verify(scenario_file, seed);
    if (report->parsed()) return cmd_report(trace_file);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
