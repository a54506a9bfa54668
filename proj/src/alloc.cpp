#include "fleetsim/alloc.hpp"

namespace fleetsim::mem {

namespace {
u64 round_up(u64 v, u64 a) { return (v + a - 1) / a * a; }
}  // namespace

BidiAllocator::BidiAllocator(u64 low, u64 high)
    : low_(low), high_(high), transient_cursor_(low), stable_cursor_(high) {
  internal_check(low % kAlign == 0 && high % kAlign == 0 && low < high,
                 "allocator region must be aligned and non-empty");
}

std::optional<u64> BidiAllocator::take_from_free(std::map<u64, u64>& fl, u64 bytes,
                                                 bool from_high) {
  // First fit in address order; stable side prefers the highest block so the
  // layout stays packed against its own end.
  if (from_high) {
    for (auto it = fl.rbegin(); it != fl.rend(); ++it) {
      if (it->second >= bytes) {
        u64 addr = it->first + it->second - bytes;  // carve from block top
        u64 rem = it->second - bytes;
        u64 base = it->first;
        fl.erase(std::next(it).base());
        if (rem > 0) fl.emplace(base, rem);
        return addr;
      }
    }
  } else {
    for (auto it = fl.begin(); it != fl.end(); ++it) {
      if (it->second >= bytes) {
        u64 addr = it->first;
        u64 rem = it->second - bytes;
        fl.erase(it);
        if (rem > 0) fl.emplace(addr + bytes, rem);
        return addr;
      }
    }
  }
  return std::nullopt;
}

void BidiAllocator::insert_free(std::map<u64, u64>& fl, u64 addr, u64 bytes) {
  auto it = fl.emplace(addr, bytes).first;
  // Coalesce with neighbours.
  if (it != fl.begin()) {
    auto prev = std::prev(it);
    if (prev->first + prev->second == it->first) {
      prev->second += it->second;
      fl.erase(it);
      it = prev;
    }
  }
  auto next = std::next(it);
  if (next != fl.end() && it->first + it->second == next->first) {
    it->second += next->second;
    fl.erase(next);
  }
}

std::optional<u64> BidiAllocator::alloc(u64 bytes, Stability st) {
  if (bytes == 0) throw SimFault("alloc: zero size");
  bytes = round_up(bytes, kAlign);
  std::optional<u64> addr;
  if (st == Stability::Stable) {
    addr = take_from_free(free_high_, bytes, true);
    if (!addr) {
      if (stable_cursor_ < transient_cursor_ + bytes) return std::nullopt;
      stable_cursor_ -= bytes;
      addr = stable_cursor_;
    }
  } else {
    addr = take_from_free(free_low_, bytes, false);
    if (!addr) {
      if (transient_cursor_ + bytes > stable_cursor_) return std::nullopt;
      addr = transient_cursor_;
      transient_cursor_ += bytes;
    }
  }
  live_.emplace(*addr, std::make_pair(bytes, st));
  live_bytes_ += bytes;
  return addr;
}

void BidiAllocator::free(u64 addr) {
  auto it = live_.find(addr);
  if (it == live_.end()) throw SimFault("free: unknown allocation");
  auto [bytes, st] = it->second;
  live_.erase(it);
  live_bytes_ -= bytes;
  if (st == Stability::Stable) {
    insert_free(free_high_, addr, bytes);
    // Retreat the cursor over a free block sitting right at it.
    auto lo = free_high_.find(stable_cursor_);
    if (lo != free_high_.end()) {
      stable_cursor_ += lo->second;
      free_high_.erase(lo);
    }
  } else {
    insert_free(free_low_, addr, bytes);
    auto last = free_low_.rbegin();
    if (last != free_low_.rend() && last->first + last->second == transient_cursor_) {
      transient_cursor_ = last->first;
      free_low_.erase(std::prev(free_low_.end()));
    }
  }
}

u64 BidiAllocator::size_of(u64 addr) const {
  auto it = live_.find(addr);
  if (it == live_.end()) throw SimFault("size_of: unknown allocation");
  return it->second.first;
}

BidiAllocator::Snapshot BidiAllocator::snapshot() const {
  Snapshot s;
  s.transient_cursor = transient_cursor_;
  s.stable_cursor = stable_cursor_;
  s.free_low.assign(free_low_.begin(), free_low_.end());
  s.free_high.assign(free_high_.begin(), free_high_.end());
  for (const auto& [a, meta] : live_)
    s.live.push_back({a, meta.first, meta.second == Stability::Stable ? 1 : 0});
  return s;
}

void BidiAllocator::restore(const Snapshot& s) {
  transient_cursor_ = s.transient_cursor;
  stable_cursor_ = s.stable_cursor;
  free_low_.clear();
  free_high_.clear();
  for (auto [a, b] : s.free_low) free_low_[a] = b;
  for (auto [a, b] : s.free_high) free_high_[a] = b;
  live_.clear();
  live_bytes_ = 0;
  for (auto [a, b, st] : s.live) {
    live_[a] = {b, st ? Stability::Stable : Stability::Transient};
    live_bytes_ += b;
  }
}

sim::Digest BidiAllocator::stable_state_digest() const {
  std::vector<u64> words;
  words.push_back(stable_cursor_);
  for (const auto& [a, b] : free_high_) {
    words.push_back(a);
    words.push_back(b);
  }
  for (const auto& [a, meta] : live_)
    if (meta.second == Stability::Stable) {
      words.push_back(a);
      words.push_back(meta.first);
    }
  return sim::digest_of_words(words);
}

}  // namespace fleetsim::mem
