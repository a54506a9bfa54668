#pragma once

#include <deque>
#include <map>
#include <memory>
#include <optional>
#include <vector>

#include "fleetsim/alloc.hpp"
#include "fleetsim/splice.hpp"
#include "fleetsim/trace.hpp"
#include "fleetsim/vdev.hpp"

namespace fleetsim::proxy {

enum class VKind { Stream, Communicator };

// State-changing calls logged for replay on restore. Create/destroy pairs
// cancel; alloc/free traffic is not logged (allocator state snapshots
// separately, so the log stays compact).
struct ReplayEntry {
  enum class Call { CreateStream, CommInit };
  Call call{};
  RankId rank = kNoRank;
  u64 vhandle = 0;
  i64 arg = 0;  // comm id for CommInit
};

// Per-(job, device) proxy server: owns the simulated device, the
// bi-directional allocators, handle virtualization, the replay log, the
// splice ledger, and the time-slice rotation.
class ProxyServer {
 public:
  ProxyServer(sim::Engine& eng, const sim::CostModel& cost, TraceSink& trace,
              int job_id, GpuKey key, u64 mem_bytes, splice::DeviceLayout layout);

  GpuKey key() const { return key_; }
  vdev::Gpu& gpu() { return *gpu_; }
  splice::GpuLedger& ledger() { return *ledger_; }

  void register_rank(RankId r);
  const std::vector<RankId>& residents() const { return residents_; }
  int sharing() const { return static_cast<int>(residents_.size()); }
  RankId next_resident_after(RankId r) const;

  RankId active() const { return active_; }
  void set_active(RankId r) { active_ = r; }
  bool active_yielded() const { return active_yielded_; }
  void set_active_yielded(bool v) { active_yielded_ = v; }

  // --- handle virtualization ------------------------------------------------
  u64 fresh_vhandle(RankId r);
  u64 create_stream(RankId r, u64 vid);  // logs + maps; returns vid
  void destroy_stream(RankId r, u64 vid);
  vdev::StreamId resolve_stream(RankId r, u64 vid) const;
  void remap_stream(RankId r, u64 vid, vdev::StreamId phys);
  void log_comm_init(RankId r, u64 vid, int comm_id);
  int comm_count(int comm_id) const;
  void reset_comm_counts() { comm_counts_.clear(); }

  const std::vector<ReplayEntry>& replay_log() const { return replay_log_; }
  std::vector<ReplayEntry> replay_log_for(RankId r) const;
  // Replays one entry against this (fresh) server, remapping handles.
  void replay(const ReplayEntry& e);

  // --- allocators -----------------------------------------------------------
  mem::BidiAllocator& allocator(RankId r);

  // --- delayed error notification --------------------------------------------
  void record_fault(RankId r, const std::string& what);
  // Pending fault surfaced before the next dispatched call returns.
  std::optional<std::string> take_fault(RankId r);

  // --- result installs deferred to activation --------------------------------
  struct DeferredInstall {
    int slot = -1;
    std::vector<u64> words;
  };
  std::map<RankId, std::deque<DeferredInstall>> install_queue;

  // --- squash window state ----------------------------------------------------
  struct WindowState {
    RankId root = kNoRank;
    bool validation = false;
    std::map<RankId, bool> closed;
    std::map<RankId, splice::ValidationRecord> records;
    std::map<RankId, std::map<u64, std::pair<u64, sim::Digest>>> open_snapshot;
    std::map<u64, sim::Digest> root_stable_digests;  // addr -> digest after window
    std::map<RankId, u64> squashed, executed;
  };
  std::map<int, WindowState> windows;  // by mini-batch

  // --- per-device boundary timing (overhead monitor input) -------------------
  std::map<int, std::map<RankId, Time>> boundary_times;  // mb -> rank -> t
  std::map<int, Time> cycle_done;                        // mb -> completion
  splice::OverheadMonitor monitor;

  int switch_seq = 0;
  u64 total_swap_out_bytes = 0;
  u64 total_swap_in_bytes = 0;
  u64 total_d2d_bytes = 0;
  u64 server_calls = 0;

 private:
  sim::Engine& eng_;
  const sim::CostModel& cost_;
  TraceSink& trace_;
  int job_id_;
  GpuKey key_;
  std::unique_ptr<vdev::Gpu> gpu_;
  std::unique_ptr<splice::GpuLedger> ledger_;
  splice::DeviceLayout layout_;
  std::vector<RankId> residents_;
  RankId active_ = kNoRank;
  bool active_yielded_ = false;
  std::map<RankId, std::unique_ptr<mem::BidiAllocator>> allocators_;
  std::map<RankId, std::map<u64, vdev::StreamId>> stream_map_;
  std::map<RankId, u64> next_vh_;
  std::map<int, int> comm_counts_;
  std::map<RankId, std::optional<std::string>> pending_fault_;
  std::vector<ReplayEntry> replay_log_;
};

}  // namespace fleetsim::proxy
