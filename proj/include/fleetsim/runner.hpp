#pragma once

#include <map>
#include <string>
#include <vector>

#include "fleetsim/oracle.hpp"
#include "fleetsim/scenario.hpp"

namespace fleetsim::cli {

struct JobOutcome {
  wl::JobSpec spec;
  sched::JobState state = sched::JobState::Queued;
  std::vector<job::JobRuntime::Final> finals;
  oracle::Result oracle;
  bool oracle_ok = false;
  std::string oracle_skip_reason;
  int failures = 0;
};

struct RunResult {
  std::string trace_text;
  Json summary;
  std::map<std::string, JobOutcome> jobs;
  bool deadlock = false;
  std::vector<std::string> diagnostics;
};

// Executes a scenario to quiescence (or horizon) and gathers outcomes.
RunResult run_scenario(Scenario s);

struct VerifyOutcome {
  bool pass = true;
  std::vector<std::string> failures;
  std::vector<std::string> notes;
};

// Runs the scenario, then the per-job dedicated oracle, and checks bit
// equality of final P/O state, step-ledger uniqueness, barrier safety,
// placement legality and the per-communicator program-order rule.
VerifyOutcome verify_scenario(Scenario s);

// The oracle is skipped (with a reason) above this many simulated kernels.
bool oracle_feasible(const wl::JobSpec& spec, std::string* why);

}  // namespace fleetsim::cli
