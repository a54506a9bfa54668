#pragma once

#include <map>
#include <optional>

#include "fleetsim/common.hpp"
#include "fleetsim/sim.hpp"

namespace fleetsim::mem {

enum class Stability { Stable, Transient };

// Bi-directional bump allocator over [low, high). Stable requests are carved
// top-down from the high end, transient requests bottom-up from the low end,
// so churn in transient allocations never perturbs stable addresses: the
// stable-end metadata is a pure function of the stable request sequence alone.
class BidiAllocator {
 public:
  BidiAllocator(u64 low, u64 high);

  static constexpr u64 kAlign = 256;

  // Returns the allocated address, or nullopt when the cursors would cross
  // (out of memory). Caller decides whether to GC and retry.
  std::optional<u64> alloc(u64 bytes, Stability st);
  void free(u64 addr);

  u64 low() const { return low_; }
  u64 high() const { return high_; }
  u64 transient_cursor() const { return transient_cursor_; }
  u64 stable_cursor() const { return stable_cursor_; }
  u64 live_bytes() const { return live_bytes_; }
  bool owns(u64 addr) const { return live_.count(addr) != 0; }
  u64 size_of(u64 addr) const;

  // Digest over the stable-end metadata; used by tests to assert purity.
  sim::Digest stable_state_digest() const;

  const std::map<u64, std::pair<u64, Stability>>& live() const { return live_; }

  // Exact state capture for checkpoint manifests.
  struct Snapshot {
    u64 transient_cursor = 0;
    u64 stable_cursor = 0;
    std::vector<std::pair<u64, u64>> free_low, free_high;
    std::vector<std::tuple<u64, u64, int>> live;  // addr, bytes, stability
  };
  Snapshot snapshot() const;
  void restore(const Snapshot& s);

 private:
  std::optional<u64> take_from_free(std::map<u64, u64>& fl, u64 bytes, bool from_high);
  void insert_free(std::map<u64, u64>& fl, u64 addr, u64 bytes);

  u64 low_, high_;
  u64 transient_cursor_;  // first unused byte at the low end
  u64 stable_cursor_;     // one past the last unused byte at the high end
  u64 live_bytes_ = 0;
  std::map<u64, u64> free_low_;   // addr -> bytes, freed transient blocks
  std::map<u64, u64> free_high_;  // addr -> bytes, freed stable blocks
  std::map<u64, std::pair<u64, Stability>> live_;
};

}  // namespace fleetsim::mem
