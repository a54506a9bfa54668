#pragma once

#include <map>
#include <vector>

#include "fleetsim/sim.hpp"
#include "fleetsim/workload.hpp"

namespace fleetsim::oracle {

// Final state of one rank as the dedicated-GPU reference run sees it.
struct RankState {
  // Stable (P/O) device buffers by slot: the equivalence surface.
  std::map<int, std::vector<u64>> stable;
  std::map<int, std::vector<u64>> host;          // host buffers by slot
  std::map<std::string, std::vector<u64>> files; // rank-local filesystem
  u64 rng_state = 0;
};

struct Result {
  std::vector<RankState> ranks;
  std::vector<Dur> minibatch_ns;  // dedicated wall time per mini-batch
  Dur total_ns = 0;
};

// Straight-line reference execution of a built job on dedicated devices with
// every elasticity/checkpoint feature off. Independent of the event-driven
// simulator: plain arrays, direct collective matching, per-rank clocks.
Result run(const wl::BuiltJob& job, const sim::CostModel& cost);

}  // namespace fleetsim::oracle
