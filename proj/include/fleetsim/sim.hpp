#pragma once

#include <cstring>
#include <functional>
#include <map>
#include <queue>
#include <span>
#include <vector>

#include "fleetsim/common.hpp"

namespace fleetsim::sim {

// ---------------------------------------------------------------------------
// Deterministic RNG (splitmix64). State is a single word so worker snapshots
// can carry it verbatim.

class Rng {
 public:
  explicit Rng(u64 seed = 0) : state_(seed) {}

  u64 next() {
    u64 z = (state_ += 0x9e3779b97f4a7c15ull);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
  }

  u64 state() const { return state_; }
  void set_state(u64 s) { state_ = s; }

 private:
  u64 state_;
};

// Stateless mixer used for seeding and synthetic tensor math.
inline u64 mix64(u64 x) {
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

inline u64 mix2(u64 a, u64 b) { return mix64(a + 0x9e3779b97f4a7c15ull * (b + 1)); }
inline u64 mix3(u64 a, u64 b, u64 c) { return mix2(mix2(a, b), c); }

// ---------------------------------------------------------------------------
// Content checksums. 64-bit FNV-1a; pure function of the byte content.

struct Digest {
  u64 value = 0;
  friend bool operator==(const Digest&, const Digest&) = default;
  friend auto operator<=>(const Digest&, const Digest&) = default;
};

constexpr u64 kFnvOffset = 14695981039346656037ull;
constexpr u64 kFnvPrime = 1099511628211ull;

inline Digest digest_of(std::span<const u8> bytes) {
  u64 h = kFnvOffset;
  for (u8 b : bytes) {
    h ^= b;
    h *= kFnvPrime;
  }
  return Digest{h};
}

inline Digest digest_of_words(std::span<const u64> words) {
  return digest_of(std::span<const u8>(reinterpret_cast<const u8*>(words.data()),
                                       words.size() * sizeof(u64)));
}

// ---------------------------------------------------------------------------
// Transfer/compute cost model. Rates in bytes/sec; all durations integer ns.

enum class Channel { H2D, D2H, D2D, Net, Store };

struct CostModel {
  double h2d_bw = 16.0 * (1ull << 30);
  double d2h_bw = 16.0 * (1ull << 30);
  double d2d_bw = 600.0 * (1ull << 30);
  double net_bw = 25.0 * (1ull << 30);
  double store_bw = 2.0 * (1ull << 30);
  Dur net_latency = 10 * kUsec;
  Dur kernel_cost = 10 * kUsec;
  Dur dispatch_latency = 200;  // ns, per synchronous proxy round trip

  void validate() const;
  Dur transfer_time(u64 bytes, Channel ch) const;
};

// ---------------------------------------------------------------------------
// Discrete-event engine. Single-threaded; ties broken FIFO by insertion order.

using EventFn = std::function<void()>;
using EventId = u64;

class Engine {
 public:
  Time now() const { return now_; }

  EventId schedule(Dur delay, EventFn fn);
  void cancel(EventId id) { cancelled_.insert({id, true}); }

  // Runs until the queue drains or `horizon` (if >= 0) is reached.
  // Returns true if the queue drained naturally.
  bool run(Time horizon = -1);

  bool empty() const { return queue_.empty(); }
  u64 events_processed() const { return processed_; }

 private:
  struct Entry {
    Time at;
    u64 seq;
    EventId id;
    bool operator>(const Entry& o) const {
      if (at != o.at) return at > o.at;
      return seq > o.seq;
    }
  };

  Time now_ = 0;
  u64 seq_ = 0;
  u64 next_id_ = 1;
  u64 processed_ = 0;
  std::priority_queue<Entry, std::vector<Entry>, std::greater<>> queue_;
  std::map<EventId, EventFn> pending_;
  std::map<EventId, bool> cancelled_;
};

}  // namespace fleetsim::sim
