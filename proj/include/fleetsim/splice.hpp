#pragma once

#include <map>
#include <optional>
#include <set>
#include <vector>

#include "fleetsim/sim.hpp"
#include "fleetsim/trace.hpp"
#include "fleetsim/vdev.hpp"

namespace fleetsim::splice {

// Device layout carved by the proxy at startup: ranks see [0, rank_region_end),
// the staging scratch sits above it, and a slack fraction models state the
// device libraries keep for themselves.
struct DeviceLayout {
  u64 rank_region_end = 0;
  u64 scratch_base = 0;
  u64 scratch_bytes = 0;

  static DeviceLayout carve(u64 mem_bytes, u64 max_buffer_bytes,
                            double slack_fraction);
};

struct RankBuf {
  int slot = -1;
  u64 addr = 0;
  u64 bytes = 0;
  vdev::BufCat cat{};
  sim::Digest digest{};   // authoritative only while the owner is inactive
  bool live = false;
  bool pending_result = false;  // consumed by an accumulated collective
};

struct SwitchPlan {
  struct Move {
    u64 src = 0, dst = 0, bytes = 0;
  };
  std::vector<u64> swap_out_addrs;
  std::vector<std::pair<u64, sim::Digest>> swap_ins;  // dst addr, content digest
  std::vector<Move> moves;                            // staged, in execution order
  u64 swap_out_bytes = 0;
  u64 swap_out_stable_bytes = 0;
  u64 swap_in_bytes = 0;
  u64 swap_in_stable_bytes = 0;
  u64 d2d_bytes = 0;
};

struct ValidationRecord {
  // mutation set: addr -> (bytes, digest after window)
  std::map<u64, std::pair<u64, sim::Digest>> mutations;
  std::vector<std::pair<u64, sim::Digest>> d2h_copies;  // (bytes, digest)
};

struct ValidationOutcome {
  bool pass = true;
  std::string reason;
};

// Compares per-rank mutation sets and in-window d2h copies; any asymmetry
// across sharing ranks disables squashing for the job (performance fallback,
// never a correctness change).
ValidationOutcome validate_window(const std::map<RankId, ValidationRecord>& records);

// Per-GPU buffer ledger: what occupies device memory, which digests the host
// cache holds, and every sharing rank's logical buffer map.
class GpuLedger {
 public:
  GpuLedger(vdev::Gpu& gpu, DeviceLayout layout) : gpu_(&gpu), layout_(layout) {}

  const DeviceLayout& layout() const { return layout_; }

  // --- allocation hooks (active rank only) ---------------------------------
  void on_alloc(RankId r, int slot, u64 addr, u64 bytes, vdev::BufCat cat);
  void on_free(RankId r, int slot);

  void mark_pending_result(RankId r, int slot);
  bool has_pending(RankId r) const;
  // Installs a collective result into an (active) rank's buffer.
  void install_result(RankId r, int slot, std::span<const u64> words);

  // --- context switch -------------------------------------------------------
  // from/to may be kNoRank (first activation / drained GPU).
  SwitchPlan plan_switch(RankId from, RankId to);
  void execute_switch(RankId from, RankId to, const SwitchPlan& plan);

  // Refreshes the active rank's digests from device content.
  void refresh_digests(RankId r);

  // Content of a logical buffer regardless of residency (device or host cache).
  std::vector<u64> content_of(RankId r, int slot) const;
  std::optional<std::vector<u64>> find_bytes(sim::Digest d, u64 bytes) const;
  // True when the bytes for a digest sit in device memory (a dump must d2h).
  bool digest_on_device(sim::Digest d, u64 bytes) const;

  const std::map<int, RankBuf>& bufs(RankId r) const;
  std::map<RankId, std::map<int, RankBuf>>& all_bufs() { return rank_bufs_; }
  u64 host_cache_bytes() const { return host_cache_bytes_; }
  bool host_cache_has(sim::Digest d) const { return host_cache_.count(d.value) != 0; }

  // Restore support: seeds logical maps and host cache without transfers.
  void restore_rank_buf(RankId r, const RankBuf& buf);
  void seed_host_cache(sim::Digest d, std::vector<u64> words);
  void adopt_resident(RankId r);  // registers r's buffers as device-resident

  // Stable (P/O) address/size list, for squash preconditions.
  std::vector<std::pair<u64, u64>> stable_layout(RankId r) const;

  // Test hook: deliberately forget one future swap-in (negative control).
  void corrupt_next_swap_in() { corrupt_next_swap_in_ = true; }

 private:
  struct Entry {  // device-resident region
    u64 addr = 0, bytes = 0;
    vdev::BufCat cat{};
    sim::Digest digest{};
    bool active = false;  // owned by the currently active rank
    RankId owner = kNoRank;
  };

  void evict_overlap(u64 addr, u64 bytes, bool allow_active_clobber = false);
  void host_cache_put(sim::Digest d, std::span<const u64> words);

  vdev::Gpu* gpu_;
  DeviceLayout layout_;
  std::map<u64, Entry> entries_;                    // by addr
  std::map<u64, std::vector<u64>> host_cache_;      // digest value -> words
  u64 host_cache_bytes_ = 0;
  std::map<RankId, std::map<int, RankBuf>> rank_bufs_;
  bool corrupt_next_swap_in_ = false;
};

// Squashing + validation configuration (per job).
struct SquashConfig {
  bool enabled = true;
  int validation_period = 5;  // every k-th mini-batch revalidates; 0 = only mb 1
  bool rollback_on_failure = false;
  double overhead_threshold = 0.05;

  bool is_validation_mb(int mb) const {
    if (mb == 1) return true;
    return validation_period > 0 && mb % validation_period == 0;
  }
};

// Sliced/dedicated mini-batch time ratio monitor.
struct OverheadMonitor {
  double last_overhead = 0.0;
  bool disable_recommended = false;

  // Returns true when the decision flips to "disable time slicing".
  bool observe(Dur sliced_mb, int sharing, Dur dedicated_mb, double threshold);
};

}  // namespace fleetsim::splice
