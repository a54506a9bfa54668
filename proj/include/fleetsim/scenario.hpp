#pragma once

#include <string>
#include <vector>

#include "fleetsim/job.hpp"
#include "fleetsim/sched.hpp"

namespace fleetsim::cli {

struct EventEntry {
  double at_sec = 0;
  std::string kind;  // checkpoint|preempt|resize|migrate|node_fail|node_add|barrier
  std::string job;
  int slicing = 0;
  int gpu = -1;
  std::vector<int> targets;
  int region = 0, cluster = 0, gpus = 0;
  u64 mem_mib = 4;
};

struct JobEntry {
  wl::JobSpec spec;
  double arrival_sec = 0;
  job::JobConfig cfg;
};

// A scenario plus the seed fully determines a run.
struct Scenario {
  u64 seed = 1;
  double horizon_sec = -1;
  sim::CostModel cost;
  sched::FleetConfig fleet;
  sched::SlaTargets sla;
  std::vector<JobEntry> jobs;
  std::vector<EventEntry> events;
  bool dispatch_records = true;

  static Scenario parse(const Json& j);
  static Scenario load_file(const std::string& path);
};

// FLEETSIM_COST_* environment overrides (documented in the README).
void apply_env_cost_overrides(sim::CostModel& cost);

}  // namespace fleetsim::cli
