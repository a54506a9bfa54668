#include "fleetsim/vdev.hpp"

#include <algorithm>

namespace fleetsim::vdev {

const char* to_string(BufCat c) {
  switch (c) {
    case BufCat::Param: return "P";
    case BufCat::OptState: return "O";
    case BufCat::Grad: return "G";
    case BufCat::Activation: return "A";
    case BufCat::Scratch: return "S";
  }
  return "?";
}

bool is_stable_cat(BufCat c) { return c == BufCat::Param || c == BufCat::OptState; }

void apply_transform(const Transform& t, std::span<u64> w,
                     std::span<const u64> r0, std::span<const u64> r1) {
  using sim::mix64;
  const u64 n = w.size();
  const u64 n0 = r0.size();
  const u64 n1 = r1.size();
  switch (t.op) {
    case KOp::Zero:
      for (u64 i = 0; i < n; ++i) w[i] = 0;
      break;
    case KOp::Fill:
      for (u64 i = 0; i < n; ++i) w[i] = mix64(t.imm + i);
      break;
    case KOp::MapMix:
      internal_check(n0 > 0, "MapMix: empty read");
      for (u64 i = 0; i < n; ++i) w[i] = mix64(r0[i % n0] + mix64(t.imm + i));
      break;
    case KOp::Zip2:
      internal_check(n0 > 0 && n1 > 0, "Zip2: empty read");
      for (u64 i = 0; i < n; ++i)
        w[i] = mix64(r0[i % n0] * 0x9e3779b97f4a7c15ull +
                     r1[i % n1] * 0xc2b2ae3d27d4eb4full + t.imm + i);
      break;
    case KOp::AddInto:
      internal_check(n0 > 0, "AddInto: empty read");
      for (u64 i = 0; i < n; ++i) w[i] += r0[i % n0];
      break;
    case KOp::DivImm:
      internal_check(t.imm > 0, "DivImm: zero divisor");
      for (u64 i = 0; i < n; ++i) w[i] /= t.imm;
      break;
    case KOp::OptApply:
      internal_check(n0 > 0, "OptApply: empty read");
      for (u64 i = 0; i < n; ++i) w[i] -= (r0[i % n0] >> t.imm);
      break;
    case KOp::ReduceSum: {
      u64 base = 0;
      for (u64 j = 0; j < n0; ++j) base += r0[j];
      for (u64 i = 0; i < n; ++i) w[i] = mix64(base + t.imm + i);
      break;
    }
    case KOp::AddImm:
      for (u64 i = 0; i < n; ++i) w[i] += t.imm;
      break;
  }
}

Gpu::Gpu(int id, u64 mem_bytes) : id_(id), mem_bytes_(mem_bytes) {
  internal_check(mem_bytes % 8 == 0, "gpu memory must be word aligned");
  mem_.assign(mem_bytes / 8, 0);
}

void Gpu::register_buffer(MemRange r, BufCat cat) {
  internal_check(r.bytes > 0 && r.addr % 8 == 0 && r.bytes % 8 == 0,
                 "register_buffer: misaligned range");
  if (r.end() > mem_bytes_) throw SimFault("register_buffer: out of device range");
  // Live buffers never overlap.
  auto it = buffers_.lower_bound(r.addr);
  if (it != buffers_.end() && it->first < r.end())
    throw SimFault("register_buffer: overlap with live buffer");
  if (it != buffers_.begin()) {
    auto prev = std::prev(it);
    if (prev->first + prev->second.first > r.addr)
      throw SimFault("register_buffer: overlap with live buffer");
  }
  buffers_.emplace(r.addr, std::make_pair(r.bytes, cat));
}

void Gpu::release_buffer(u64 addr) {
  if (!buffers_.erase(addr)) throw SimFault("release_buffer: no live buffer at address");
}

BufCat Gpu::buffer_cat(u64 addr) const {
  auto it = buffers_.find(addr);
  if (it == buffers_.end()) throw SimFault("buffer_cat: no live buffer at address");
  return it->second.second;
}

bool Gpu::range_valid(MemRange r) const {
  if (r.bytes == 0) return false;
  auto it = buffers_.upper_bound(r.addr);
  if (it == buffers_.begin()) return false;
  --it;
  return r.addr >= it->first && r.end() <= it->first + it->second.first;
}

std::span<u64> Gpu::words(MemRange r) {
  internal_check(r.end() <= mem_bytes_ && r.addr % 8 == 0 && r.bytes % 8 == 0,
                 "words: bad range");
  return {mem_.data() + r.addr / 8, r.bytes / 8};
}

std::span<const u64> Gpu::words(MemRange r) const {
  internal_check(r.end() <= mem_bytes_ && r.addr % 8 == 0 && r.bytes % 8 == 0,
                 "words: bad range");
  return {mem_.data() + r.addr / 8, r.bytes / 8};
}

sim::Digest Gpu::digest(MemRange r) const { return sim::digest_of_words(words(r)); }

void Gpu::write_words(MemRange r, std::span<const u64> src) {
  auto dst = words(r);
  internal_check(src.size() == dst.size(), "write_words: size mismatch");
  std::copy(src.begin(), src.end(), dst.begin());
}

StreamId Gpu::create_stream() {
  StreamId s = next_stream_++;
  streams_.emplace(s, Time{0});
  return s;
}

void Gpu::destroy_stream(StreamId s) {
  if (!streams_.erase(s)) throw SimFault("destroy_stream: unknown stream");
}

Time Gpu::launch(StreamId s, const KernelDesc& k, Time t, Dur kernel_cost) {
  for (const auto& r : k.reads)
    if (!range_valid(r)) throw SimFault("launch_kernel: dangling read address");
  if (!range_valid(k.write)) throw SimFault("launch_kernel: dangling write address");

  // Content applies eagerly in issue order; per-stream FIFO plus event edges
  // give the completion timestamp.
  std::vector<u64> in0, in1;
  if (!k.reads.empty()) {
    auto sp = words(k.reads[0]);
    in0.assign(sp.begin(), sp.end());
  }
  if (k.reads.size() > 1) {
    auto sp = words(k.reads[1]);
    in1.assign(sp.begin(), sp.end());
  }
  apply_transform(k.transform, words(k.write), in0, in1);
  return stream_op(s, t, kernel_cost);
}

Time Gpu::stream_op(StreamId s, Time t, Dur duration) {
  auto it = streams_.find(s);
  if (it == streams_.end()) throw SimFault("stream_op: unknown stream");
  Time start = std::max({it->second, t, gate_});
  it->second = start + duration;
  return it->second;
}

EventMarkId Gpu::record_event(StreamId s, Time t) {
  auto it = streams_.find(s);
  if (it == streams_.end()) throw SimFault("record_event: unknown stream");
  EventMarkId e = next_event_++;
  events_.emplace(e, std::max(it->second, t));
  return e;
}

void Gpu::stream_wait_event(StreamId s, EventMarkId e, Time t) {
  auto es = events_.find(e);
  if (es == events_.end()) throw SimFault("stream_wait_event: unknown or destroyed event");
  auto it = streams_.find(s);
  if (it == streams_.end()) throw SimFault("stream_wait_event: unknown stream");
  it->second = std::max({it->second, es->second, t});
}

Time Gpu::event_time(EventMarkId e) const {
  auto it = events_.find(e);
  if (it == events_.end()) throw SimFault("event_time: unknown event");
  return it->second;
}

Time Gpu::stream_tail(StreamId s) const {
  auto it = streams_.find(s);
  if (it == streams_.end()) throw SimFault("stream_tail: unknown stream");
  return it->second;
}

Time Gpu::sync_time(const std::vector<StreamId>& ss) const {
  Time t = 0;
  for (StreamId s : ss) t = std::max(t, stream_tail(s));
  return t;
}

Time Gpu::all_streams_tail() const {
  Time t = 0;
  for (const auto& [s, tail] : streams_) t = std::max(t, tail);
  return t;
}

}  // namespace fleetsim::vdev
