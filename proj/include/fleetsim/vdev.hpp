#pragma once

#include <map>
#include <optional>
#include <span>
#include <vector>

#include "fleetsim/common.hpp"
#include "fleetsim/sim.hpp"

namespace fleetsim::vdev {

// Device-memory categories. Param/OptState are stable across mini-batches;
// the rest churn.
enum class BufCat { Param, OptState, Grad, Activation, Scratch };

const char* to_string(BufCat c);
bool is_stable_cat(BufCat c);

// All tensor math is modular 64-bit integer arithmetic so reductions are
// order-independent and equivalence checks can be literal bit comparisons.
enum class KOp {
  Zero,       // w[i] = 0
  Fill,       // w[i] = mix(imm + i)
  MapMix,     // w[i] = mix(r0[i % n0] + mix(imm + i))
  Zip2,       // w[i] = mix(r0[i % n0] * P1 + r1[i % n1] * P2 + imm + i)
  AddInto,    // w[i] += r0[i % n0]
  DivImm,     // w[i] = w[i] / imm
  OptApply,   // w[i] -= (r0[i % n0] >> imm)
  ReduceSum,  // w[i] = mix(sum_j r0[j] + imm + i)
  AddImm,     // w[i] += imm        (adversarial hooks use this)
};

struct Transform {
  KOp op;
  u64 imm = 0;
};

// Computes a kernel's write content from read contents. Shared by the device
// and the straight-line oracle; this *is* the synthetic model's math.
void apply_transform(const Transform& t, std::span<u64> write,
                     std::span<const u64> r0, std::span<const u64> r1);

struct MemRange {
  u64 addr = 0;
  u64 bytes = 0;
  u64 end() const { return addr + bytes; }
};

// A kernel names its reads and writes by device address range. The splice
// validator deliberately ignores these declarations and infers mutations from
// checksums instead.
struct KernelDesc {
  Transform transform;
  std::vector<MemRange> reads;
  MemRange write;
};

using StreamId = int;
using EventMarkId = int;

// One simulated accelerator: a flat word-addressed memory plus stream/event
// timing state. Content mutations are applied at issue time (program order of
// the single active issuer); completion timestamps model the device timeline.
class Gpu {
 public:
  Gpu(int id, u64 mem_bytes);

  int id() const { return id_; }
  u64 mem_bytes() const { return mem_bytes_; }

  // --- buffer registry -----------------------------------------------------
  void register_buffer(MemRange r, BufCat cat);
  void release_buffer(u64 addr);
  bool buffer_at(u64 addr) const { return buffers_.count(addr) != 0; }
  BufCat buffer_cat(u64 addr) const;
  const std::map<u64, std::pair<u64, BufCat>>& buffers() const { return buffers_; }

  // Checks [addr, addr+bytes) lies inside one registered live buffer.
  bool range_valid(MemRange r) const;

  std::span<u64> words(MemRange r);
  std::span<const u64> words(MemRange r) const;
  sim::Digest digest(MemRange r) const;
  void write_words(MemRange r, std::span<const u64> src);

  // --- streams and events --------------------------------------------------
  StreamId create_stream();
  void destroy_stream(StreamId s);
  bool stream_live(StreamId s) const { return streams_.count(s) != 0; }

  // Launches on a stream at client time `t`; returns completion time.
  Time launch(StreamId s, const KernelDesc& k, Time t, Dur kernel_cost);

  // On-device part of a copy (content applied by caller); returns completion.
  Time stream_op(StreamId s, Time t, Dur duration);

  EventMarkId record_event(StreamId s, Time t);
  void stream_wait_event(StreamId s, EventMarkId e, Time t);
  Time event_time(EventMarkId e) const;
  bool event_live(EventMarkId e) const { return events_.count(e) != 0; }

  Time stream_tail(StreamId s) const;
  // Completion time of everything issued so far on the given streams.
  Time sync_time(const std::vector<StreamId>& ss) const;
  Time all_streams_tail() const;

  // Device is unavailable to new ops before this instant (context switches).
  void gate_until(Time t) { gate_ = std::max(gate_, t); }
  Time gate() const { return gate_; }

 private:
  int id_;
  u64 mem_bytes_;
  std::vector<u64> mem_;
  std::map<u64, std::pair<u64, BufCat>> buffers_;  // addr -> (bytes, cat)
  std::map<StreamId, Time> streams_;               // id -> tail time
  std::map<EventMarkId, Time> events_;
  int next_stream_ = 1;
  int next_event_ = 1;
  Time gate_ = 0;
};

}  // namespace fleetsim::vdev
