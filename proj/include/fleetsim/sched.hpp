#pragma once

#include <deque>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "fleetsim/ckpt.hpp"
#include "fleetsim/job.hpp"

namespace fleetsim::sched {

struct FleetConfig {
  struct Node {
    int gpus = 8;
    u64 mem_mib = 4;
  };
  struct Cluster {
    std::string name;
    std::vector<Node> nodes;
  };
  struct Region {
    std::string name;
    std::vector<Cluster> clusters;
  };
  std::vector<Region> regions;

  int total_gpus() const;
};

struct GpuSlot {
  GpuKey key = 0;
  int region = 0, cluster = 0, node = 0;
  u64 mem_bytes = 0;
  bool healthy = true;
  int job = -1;
};

struct SlaTargets {
  double premium = 0.95;
  double standard = 0.70;
};

constexpr Dur kHourNs = 3600 * kSecond;

struct SlaWindow {
  i64 index = 0;
  i64 ideal_ns = 0;
  i64 real_ns = 0;
  bool violated = false;
};

struct SlaRecord {
  wl::Tier tier = wl::Tier::Basic;
  Time submitted = 0;
  Time completed = -1;
  i64 ideal_total_ns = 0;
  std::map<i64, i64> window_ideal_ns;
  std::vector<SlaWindow> closed;
};

enum class JobState { Queued, Running, Draining, Preempted, Finished, Failed };

const char* to_string(JobState s);

struct JobRecord {
  int id = 0;
  wl::JobSpec spec;
  wl::BuiltJob built;
  job::JobConfig cfg;
  std::vector<Dur> oracle_mb;
  JobState state = JobState::Queued;
  std::map<RankId, GpuKey> placement;
  int slicing = 1;
  std::optional<ckpt::Manifest> last_manifest;
  int ckpt_count = 0;
  int failures = 0;
  std::unique_ptr<job::JobRuntime> runtime;
  std::unique_ptr<ckpt::CheckpointFlow> flow;
  SlaRecord sla;
  Dur ckpt_interval = 0;
  bool single_node = false;  // locality requirement
  std::vector<job::JobRuntime::Final> finals;
  int min_gpus = 1;
  int max_slicing = 1;
};

// Deterministic greedy tier-ordered planner over a static fleet topology.
// The mechanisms (checkpoint/restore/splice) are the substance; this policy
// is intentionally simple.
class Scheduler {
 public:
  Scheduler(sim::Engine& eng, const sim::CostModel& cost, TraceSink& trace,
            ckpt::BlobStore& store, FleetConfig fleet, SlaTargets targets);

  int submit(const wl::JobSpec& spec, const job::JobConfig& cfg,
             std::vector<Dur> oracle_mb);
  void plan(const std::string& reason);

  // Event-script entry points.
  void request_checkpoint(int job_id);          // on-demand checkpoint (kept running)
  void request_barrier_probe(int job_id, const std::vector<RankId>& targets);
  void preempt(int job_id);
  void resize(int job_id, int new_slicing);
  void migrate(int job_id);
  void node_fail(GpuKey any_gpu_on_node);
  void node_add(int region, int cluster, int gpus, u64 mem_mib);
  void hourly_tick();
  int defragment();  // returns migrations performed

  JobRecord& rec(int job_id) { return *jobs_.at(job_id); }
  const std::map<int, std::unique_ptr<JobRecord>>& jobs() const { return jobs_; }
  const std::vector<GpuSlot>& fleet() const { return gpus_; }
  bool all_jobs_settled() const;

  SlaTargets targets;

 private:
  std::optional<std::map<RankId, GpuKey>> find_placement(JobRecord& j, int slicing,
                                                         const std::set<GpuKey>& exclude);
  bool try_place(JobRecord& j, const std::set<GpuKey>& exclude = {});
  void launch(JobRecord& j, const std::map<RankId, GpuKey>& placement, int slicing,
              bool restored, Dur start_delay);
  void wire_runtime(JobRecord& j);
  void free_gpus(JobRecord& j);
  void start_periodic(JobRecord& j);
  void do_preempt(JobRecord& j, bool then_requeue);
  void handle_failure(JobRecord& j, const std::string& reason);
  void account_minibatch(JobRecord& j, int mb);
  void close_window(JobRecord& j, i64 index, Time wstart, Time wend);
  void action_trace(const std::string& action, const JobRecord& j, Json extra);
  u64 gpu_mem(GpuKey g) const { return gpus_.at(g).mem_bytes; }
  std::vector<GpuKey> free_keys(const std::set<GpuKey>& exclude) const;

  sim::Engine& eng_;
  const sim::CostModel& cost_;
  TraceSink& trace_;
  ckpt::BlobStore& store_;
  FleetConfig fleet_cfg_;
  std::vector<GpuSlot> gpus_;
  std::map<int, std::unique_ptr<JobRecord>> jobs_;
  int next_id_ = 1;
  bool tick_scheduled_ = false;
  bool planning_ = false;
};

}  // namespace fleetsim::sched
