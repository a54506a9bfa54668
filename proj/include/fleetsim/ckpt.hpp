#pragma once

#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "fleetsim/job.hpp"
#include "fleetsim/trace.hpp"

namespace fleetsim::ckpt {

constexpr u64 kPageWords = 512;  // 4 KiB snapshot pages

// Content-addressed store. Putting an existing digest stores nothing new and
// is charged no transfer bytes.
class BlobStore {
 public:
  struct PutResult {
    sim::Digest digest;
    bool fresh = false;
  };
  PutResult put(std::span<const u64> words);
  bool has(sim::Digest d) const { return blobs_.count(d.value) != 0; }
  // Digest-verified read; throws on mismatch or absence.
  const std::vector<u64>& get(sim::Digest d) const;
  void add_ref(sim::Digest d) { ++refs_[d.value]; }
  void release(sim::Digest d);
  u64 total_bytes() const { return total_bytes_; }
  size_t count() const { return blobs_.size(); }

  // Content-addressed directory layout: <dir>/blobs/<first-2-hex>/<digest>.
  void persist(const std::string& dir) const;
  static std::string blob_rel_path(sim::Digest d);

 private:
  std::map<u64, std::vector<u64>> blobs_;
  std::map<u64, int> refs_;
  u64 total_bytes_ = 0;
};

struct WorkerSnapshot {
  RankId rank = 0;
  u64 pc = 0;
  int step = 0;
  int phase = 0;
  int substate = 0;
  u64 rng_state = 0;
  u64 input_seed = 0;
  u64 next_vh = 1;
  u64 last_error_cache = 0;
  int stable_allocs = 0;
  std::vector<std::pair<int, u64>> host_bufs;  // slot, words
  std::vector<u64> pages;                      // page digests, in order
  struct FileRec {
    std::string path;
    bool deleted = false;
    u64 digest = 0;
    u64 words = 0;
  };
  std::vector<FileRec> files;
  struct DevRec {
    int slot = 0;
    u64 addr = 0;
    u64 words = 0;
    int cat = 0;
    u64 digest = 0;
  };
  std::vector<DevRec> dev;
  struct HandleRec {
    int slot = 0;
    int comm_id = 0;
    u64 seq = 0;
    bool completed = false;
  };
  std::vector<HandleRec> handles;
  std::map<int, u64> stream_vh;
  std::map<int, u64> comm_vh;
  std::map<int, int> comm_of_slot;
  int barrier_phase = 0;
  bool got_command = false;
  std::map<int, u64> comm_seq;
  mem::BidiAllocator::Snapshot alloc;
  std::vector<proxy::ReplayEntry> replay;
};

// Consistent-cut artifact: everything needed to reproduce the job bit-exactly.
struct Manifest {
  int version = 1;
  int job_id = 0;
  std::string job_name;
  std::string kind;  // on_demand | periodic
  int index = 0;
  Time taken_at = 0;
  int step = 0;
  wl::JobSpec spec;
  u64 program_hash = 0;
  std::vector<WorkerSnapshot> workers;
  std::vector<std::pair<u64, u64>> device_blobs;  // digest, bytes

  u64 s_g = 0;            // unique device state, one replica per dedup group
  u64 s_cr = 0;           // sum of per-worker snapshot bytes (page granular)
  u64 s_cr_inc = 0;       // pages not present in the previous checkpoint
  u64 upload_bytes = 0;   // new-to-store bytes actually transferred
  u64 dump_d2h_max = 0;   // largest per-GPU device read
  u64 total_blob_bytes = 0;  // everything a restore must download

  Json to_json() const;
  static Manifest from_json(const Json& j);
};

struct LatencyBreakdown {
  Dur barrier = 0, dump = 0, upload = 0, download = 0, restore = 0, rendezvous = 0;
  Dur total() const { return barrier + dump + upload + download + restore + rendezvous; }
  Json to_json() const;
};

// Builds the manifest content from a barrier-parked job and uploads blobs.
Manifest build_manifest(job::JobRuntime& J, BlobStore& store, const Manifest* prev,
                        const std::string& kind, int index);

// Cost-model evaluation of a full migration through this manifest onto the
// given placement (checkpoint side + restore side).
LatencyBreakdown migration_latency(const Manifest& m, const sim::CostModel& cost,
                                   const std::map<RankId, GpuKey>& placement,
                                   Dur measured_barrier_wait);

// Reconstructs a runnable job from a manifest: fresh proxies, replayed handle
// calls, blobs re-materialized at the same device addresses, rendezvous, and
// every worker parked at its saved program counter. Caller releases the
// barrier at the modeled restore-complete time.
std::unique_ptr<job::JobRuntime> restore_job(
    sim::Engine& eng, const sim::CostModel& cost, TraceSink& trace, BlobStore& store,
    const Manifest& m, const std::map<RankId, GpuKey>& placement, u64 gpu_mem_bytes,
    job::JobConfig cfg, std::vector<Dur> oracle_mb);

// Per-rank file tracking helper (spec surface; the worker loop uses the same
// rules inline).
void track_file_write(job::WorkerState& w, const std::string& path);

// Serialized checkpoint driver for one job: barrier request -> manifest ->
// charge dump/upload -> callback. Unless `hold_barrier`, the barrier is
// released and the job resumes once the manifest is persisted.
class CheckpointFlow {
 public:
  using DoneFn = std::function<void(std::optional<Manifest>, LatencyBreakdown)>;
  CheckpointFlow(job::JobRuntime& J, BlobStore& store, TraceSink& trace);

  void start(const std::string& kind, bool hold_barrier, std::optional<Manifest> prev,
             int index, DoneFn done);
  bool busy() const { return busy_; }

 private:
  job::JobRuntime& J_;
  BlobStore& store_;
  TraceSink& trace_;
  bool busy_ = false;
  struct Req {
    std::string kind;
    bool hold = false;
    std::optional<Manifest> prev;
    int index = 0;
    DoneFn done;
  };
  std::vector<Req> queue_;
  void run_one(Req req);
};

}  // namespace fleetsim::ckpt
