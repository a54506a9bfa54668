#pragma once

#include <functional>
#include <map>
#include <memory>
#include <set>
#include <string>
#include <vector>

#include "fleetsim/barrier.hpp"
#include "fleetsim/collectives.hpp"
#include "fleetsim/oracle.hpp"
#include "fleetsim/proxy.hpp"
#include "fleetsim/splice.hpp"
#include "fleetsim/workload.hpp"

namespace fleetsim::job {

struct JobConfig {
  bool eager_dispatch = true;
  splice::SquashConfig squash;
  bar::Mode barrier_mode = bar::Mode::Boundary;
  std::vector<RankId> barrier_targets{0};
  int misclassify_stable_every = 0;  // 0 = off; simulates stale stack-trace lists
  Dur checkpoint_interval = 0;       // 0 = no periodic checkpoints
  double slack_fraction = 0.02;
  bool monitor_autoscale = false;
  bool corrupt_splice_dedup = false;  // negative-control hook for verify
};

enum class WState {
  Idle,
  RunScheduled,
  Running,
  BlockedInit,
  BlockedColl,
  BlockedHandles,
  AwaitSlice,
  Parked,
  Finished,
  Failed,
};

struct DevSlot {
  u64 addr = 0;
  u64 words = 0;
  vdev::BufCat cat{};
  bool live = false;
};

struct Handle {
  int comm_id = -1;
  u64 seq = 0;
  bool completed = false;
  Time complete_at = 0;
};

// Full per-rank execution state. Everything a checkpoint must reproduce lives
// here (plus the proxy-side allocator and ledger maps).
struct WorkerState {
  RankId rank = 0;
  size_t pc = 0;
  int step = 0;
  prog::Phase phase = prog::Phase::Init;
  int substate = 0;  // progress inside a blocking instruction
  sim::Rng rng{0};
  u64 input_seed = 0;
  std::map<int, std::vector<u64>> host;
  std::map<std::string, std::vector<u64>> files;
  std::vector<std::string> mutated_files;  // insertion order, set semantics
  std::set<std::string> deleted_files;
  std::map<int, DevSlot> dev;
  std::map<int, u64> stream_vh;   // stream slot -> virtual handle
  std::map<int, u64> comm_vh;     // comm slot -> virtual handle
  std::map<int, int> comm_of_slot;
  u64 next_vh = 1;
  std::map<int, Handle> handles;
  u64 last_error_cache = 0;
  int stable_allocs = 0;

  // runtime-only execution state
  WState state = WState::Idle;
  Time t = 0;            // client-local logical clock
  Time resume_floor = 0;
  bool run_scheduled = false;
  coll::CollKey wait_key{};
  std::vector<int> wait_handle_slots;
  bool squashing_now = false;
  bool in_window = false;
  int cur_mb = 0;
};

// One running (or restorable) job: workers, proxies, collectives, barrier.
class JobRuntime {
 public:
  JobRuntime(sim::Engine& engine, const sim::CostModel& cost, TraceSink& trace,
             int job_id, wl::BuiltJob built, JobConfig config,
             std::vector<Dur> oracle_mb_ns);
  ~JobRuntime();

  int world() const { return built.spec.world; }
  bool finished() const { return finished_count == world(); }
  bool failed() const { return failed_flag; }

  // Spawns proxies, registers residents in dp order, starts execution.
  void start(const std::map<RankId, GpuKey>& placement_in, u64 gpu_mem_bytes);
  void teardown();

  proxy::ProxyServer& proxy_of(RankId r) { return *proxies.at(placement.at(r)); }

  // --- engine-event entry points --------------------------------------------
  void schedule_run(RankId r, Time at_least);
  void run_worker(RankId r);
  void rank_ready(RankId r, Time at_least);
  void yield_slice(RankId r);
  void switch_to(proxy::ProxyServer& px, RankId next, Time floor);
  void on_coll_complete(const coll::CollectiveEngine::CompletionInfo& info);
  void resume_from_release();
  void fail_job(RankId r, const std::string& what);

  // Schedules fn through the liveness guard (dropped after teardown).
  void guarded(Dur delay, std::function<void()> fn);

  // --- final state -----------------------------------------------------------
  struct Final {
    std::map<int, std::vector<u64>> stable;
    std::map<int, u64> stable_addr;
    std::map<int, std::vector<u64>> host;
    std::map<std::string, std::vector<u64>> files;
    u64 rng_state = 0;
  };
  void capture_final();

  sim::Engine& eng;
  const sim::CostModel& cost;
  TraceSink& trace;
  int job_id;
  wl::BuiltJob built;
  JobConfig cfg;
  std::vector<Dur> oracle_mb;  // dedicated per-mini-batch time, may be empty

  std::vector<WorkerState> workers;
  std::map<GpuKey, std::unique_ptr<proxy::ProxyServer>> proxies;
  std::map<RankId, GpuKey> placement;
  coll::CollectiveEngine comms;
  bar::BarrierController barrier;

  bool squash_runtime = true;  // sticky; cleared on validation failure
  bool slicing_disabled = false;
  int finished_count = 0;
  bool failed_flag = false;
  std::string fail_reason;
  u64 meta_issues = 0;
  std::map<int, int> mb_rank_done;
  std::vector<Final> finals;  // captured at completion

  std::function<void(int)> on_minibatch;  // fires when every rank passed mb
  std::function<void()> on_complete;
  std::function<void(const std::string&)> on_fail;
  std::function<void(double)> on_monitor_disable;
  std::function<void()> on_validation_rollback;

  std::shared_ptr<bool> alive;

 private:
  void interpret(RankId r);
  friend struct WorkerExec;
};

}  // namespace fleetsim::job
