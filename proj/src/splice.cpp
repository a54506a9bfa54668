#include "fleetsim/splice.hpp"

#include <algorithm>

namespace fleetsim::splice {

DeviceLayout DeviceLayout::carve(u64 mem_bytes, u64 max_buffer_bytes,
                                 double slack_fraction) {
  DeviceLayout l;
  u64 align = 256;
  u64 slack = static_cast<u64>(mem_bytes * slack_fraction);
  u64 scratch = std::max<u64>(max_buffer_bytes, 4096);
  scratch = (scratch + align - 1) / align * align;
  internal_check(mem_bytes > slack + scratch + align, "device too small for layout");
  l.scratch_bytes = scratch;
  l.scratch_base = (mem_bytes - slack - scratch) / align * align;
  l.rank_region_end = l.scratch_base;
  return l;
}

ValidationOutcome validate_window(const std::map<RankId, ValidationRecord>& records) {
  ValidationOutcome out;
  if (records.size() <= 1) return out;
  auto it = records.begin();
  const auto& ref = it->second;
  RankId ref_rank = it->first;
  for (++it; it != records.end(); ++it) {
    const auto& rec = it->second;
    if (rec.mutations.size() != ref.mutations.size()) {
      out.pass = false;
      out.reason = "mutation count differs between rank " + std::to_string(ref_rank) +
                   " and rank " + std::to_string(it->first);
      return out;
    }
    for (auto a = ref.mutations.begin(), b = rec.mutations.begin();
         a != ref.mutations.end(); ++a, ++b) {
      if (a->first != b->first) {
        out.pass = false;
        out.reason = "mutation addresses differ (0x" + std::to_string(a->first) +
                     " vs 0x" + std::to_string(b->first) + ")";
        return out;
      }
      if (a->second.first != b->second.first) {
        out.pass = false;
        out.reason = "mutation sizes differ at addr " + std::to_string(a->first);
        return out;
      }
      if (!(a->second.second == b->second.second)) {
        out.pass = false;
        out.reason = "mutation digests differ at addr " + std::to_string(a->first);
        return out;
      }
    }
    if (rec.d2h_copies != ref.d2h_copies) {
      out.pass = false;
      out.reason = "in-window d2h copies differ across ranks";
      return out;
    }
  }
  return out;
}

bool OverheadMonitor::observe(Dur sliced_mb, int sharing, Dur dedicated_mb,
                              double threshold) {
  if (sharing <= 1 || dedicated_mb <= 0) {
    last_overhead = 0.0;
    return false;
  }
  last_overhead = static_cast<double>(sliced_mb) /
                      (static_cast<double>(sharing) * static_cast<double>(dedicated_mb)) -
                  1.0;
  bool was = disable_recommended;
  if (last_overhead > threshold) disable_recommended = true;
  return disable_recommended && !was;
}

// ---------------------------------------------------------------------------

void GpuLedger::host_cache_put(sim::Digest d, std::span<const u64> words) {
  auto [it, fresh] = host_cache_.try_emplace(d.value, words.begin(), words.end());
  if (fresh) host_cache_bytes_ += words.size() * 8;
}

void GpuLedger::evict_overlap(u64 addr, u64 bytes, bool allow_active_clobber) {
  u64 end = addr + bytes;
  auto it = entries_.lower_bound(addr);
  if (it != entries_.begin()) {
    auto prev = std::prev(it);
    if (prev->second.addr + prev->second.bytes > addr) it = prev;
  }
  while (it != entries_.end() && it->second.addr < end) {
    if (it->second.active && !allow_active_clobber)
      throw SimFault("splice: overlap with active-resident buffer");
    if (!it->second.active)
      internal_check(host_cache_.count(it->second.digest.value) != 0,
                     "splice: evicting uncached version");
    it = entries_.erase(it);
  }
}

void GpuLedger::on_alloc(RankId r, int slot, u64 addr, u64 bytes, vdev::BufCat cat) {
  // Lazy GC: allocation claims space squatted by cached (non-active) versions.
  evict_overlap(addr, bytes);
  Entry e;
  e.addr = addr;
  e.bytes = bytes;
  e.cat = cat;
  e.active = true;
  e.owner = r;
  entries_[addr] = e;
  RankBuf b;
  b.slot = slot;
  b.addr = addr;
  b.bytes = bytes;
  b.cat = cat;
  b.live = true;
  rank_bufs_[r][slot] = b;
}

void GpuLedger::on_free(RankId r, int slot) {
  auto& bufs = rank_bufs_.at(r);
  auto it = bufs.find(slot);
  internal_check(it != bufs.end() && it->second.live, "splice: free of dead slot");
  auto ent = entries_.find(it->second.addr);
  if (ent != entries_.end() && ent->second.active && ent->second.owner == r)
    entries_.erase(ent);
  bufs.erase(it);
}

void GpuLedger::mark_pending_result(RankId r, int slot) {
  rank_bufs_.at(r).at(slot).pending_result = true;
}

bool GpuLedger::has_pending(RankId r) const {
  auto it = rank_bufs_.find(r);
  if (it == rank_bufs_.end()) return false;
  for (const auto& [slot, b] : it->second)
    if (b.live && b.pending_result) return true;
  return false;
}

void GpuLedger::install_result(RankId r, int slot, std::span<const u64> words) {
  RankBuf& b = rank_bufs_.at(r).at(slot);
  internal_check(b.live, "install into dead buffer");
  internal_check(words.size() * 8 == b.bytes, "install size mismatch");
  gpu_->write_words({b.addr, b.bytes}, words);
  b.pending_result = false;
}

void GpuLedger::refresh_digests(RankId r) {
  auto it = rank_bufs_.find(r);
  if (it == rank_bufs_.end()) return;
  for (auto& [slot, b] : it->second)
    if (b.live && !b.pending_result) {
      b.digest = gpu_->digest({b.addr, b.bytes});
      auto ent = entries_.find(b.addr);
      if (ent != entries_.end()) ent->second.digest = b.digest;
    }
}

bool GpuLedger::digest_on_device(sim::Digest d, u64 bytes) const {
  for (const auto& [a, e] : entries_)
    if (e.bytes == bytes && e.digest == d) return true;
  return false;
}

SwitchPlan GpuLedger::plan_switch(RankId from, RankId to) {
  SwitchPlan plan;
  // Swap-out phase: conditional on the host cache already holding the bytes.
  if (from != kNoRank && rank_bufs_.count(from)) {
    for (auto& [slot, b] : rank_bufs_.at(from)) {
      if (!b.live) continue;
      internal_check(b.cat != vdev::BufCat::Activation,
                     "activation buffer live at a switch point");
      if (b.pending_result) continue;  // consumed by local accumulation
      b.digest = gpu_->digest({b.addr, b.bytes});
      if (host_cache_.count(b.digest.value) == 0) {
        plan.swap_out_addrs.push_back(b.addr);
        plan.swap_out_bytes += b.bytes;
        if (vdev::is_stable_cat(b.cat)) plan.swap_out_stable_bytes += b.bytes;
      }
    }
  }
  // Swap-in phase: find each incoming buffer's content on device or plan a
  // transfer from the host cache. Device hits at foreign addresses become
  // device-to-device moves.
  if (to != kNoRank && rank_bufs_.count(to)) {
    std::set<u64> claimed;  // addresses this plan writes
    for (const auto& [slot, b] : rank_bufs_.at(to)) {
      if (!b.live || b.pending_result) continue;
      auto ent = entries_.find(b.addr);
      bool here = ent != entries_.end() && !ent->second.active &&
                  ent->second.bytes == b.bytes && ent->second.digest == b.digest;
      // Content left by the outgoing rank at the same address also counts once
      // its digest is refreshed (done in the swap-out phase above).
      if (!here && ent != entries_.end() && ent->second.bytes == b.bytes &&
          ent->second.digest == b.digest)
        here = true;
      if (here) continue;
      u64 src_addr = 0;
      bool moved = false;
      for (const auto& [a, e] : entries_) {
        if (a == b.addr || claimed.count(a)) continue;
        if (e.bytes == b.bytes && e.digest == b.digest && !e.active) {
          src_addr = a;
          moved = true;
          break;
        }
      }
      if (moved) {
        plan.moves.push_back({src_addr, b.addr, b.bytes});
        plan.d2d_bytes += b.bytes;
        claimed.insert(b.addr);
      } else {
        if (corrupt_next_swap_in_) {
          corrupt_next_swap_in_ = false;
          continue;  // deliberately lose this restore (negative-control hook)
        }
        if (host_cache_.count(b.digest.value) == 0)
          throw SimFault("splice: content for digest lost (ledger bug)");
        plan.swap_ins.push_back({b.addr, b.digest});
        plan.swap_in_bytes += b.bytes;
        if (vdev::is_stable_cat(b.cat)) plan.swap_in_stable_bytes += b.bytes;
        claimed.insert(b.addr);
      }
    }
    // Stage cyclic moves through scratch: a move is safe once no pending move
    // still reads its destination.
    if (!plan.moves.empty()) {
      std::vector<SwitchPlan::Move> pending = plan.moves;
      std::vector<SwitchPlan::Move> ordered;
      while (!pending.empty()) {
        bool progressed = false;
        for (size_t i = 0; i < pending.size(); ++i) {
          bool read_later = false;
          for (size_t j = 0; j < pending.size(); ++j)
            if (j != i && pending[j].src == pending[i].dst) read_later = true;
          if (!read_later) {
            ordered.push_back(pending[i]);
            pending.erase(pending.begin() + i);
            progressed = true;
            break;
          }
        }
        if (!progressed) {
          // Break the cycle: stage the first move's source in scratch.
          SwitchPlan::Move m = pending.front();
          internal_check(m.bytes <= layout_.scratch_bytes, "move exceeds scratch");
          ordered.push_back({m.src, layout_.scratch_base, m.bytes});
          pending.front().src = layout_.scratch_base;
          plan.d2d_bytes += m.bytes;
        }
      }
      plan.moves = std::move(ordered);
    }
  }
  return plan;
}

void GpuLedger::execute_switch(RankId from, RankId to, const SwitchPlan& plan) {
  // 1. swap-outs: upload to host cache, demote entries, drop vdev registration.
  if (from != kNoRank && rank_bufs_.count(from)) {
    std::set<u64> outs(plan.swap_out_addrs.begin(), plan.swap_out_addrs.end());
    for (auto& [slot, b] : rank_bufs_.at(from)) {
      if (!b.live) continue;
      if (outs.count(b.addr)) host_cache_put(b.digest, gpu_->words({b.addr, b.bytes}));
      auto ent = entries_.find(b.addr);
      if (b.pending_result) {
        if (ent != entries_.end()) entries_.erase(ent);
      } else if (ent != entries_.end()) {
        ent->second.active = false;
        ent->second.digest = b.digest;
        ent->second.owner = from;
      }
      if (gpu_->buffer_at(b.addr)) gpu_->release_buffer(b.addr);
    }
  }
  // 2. moves (already staged in order).
  for (const auto& m : plan.moves) {
    std::vector<u64> tmp(gpu_->words({m.src, m.bytes}).begin(),
                         gpu_->words({m.src, m.bytes}).end());
    evict_overlap(m.dst, m.bytes);
    gpu_->write_words({m.dst, m.bytes}, tmp);
    auto src_ent = entries_.find(m.src);
    if (src_ent != entries_.end()) {
      Entry e = src_ent->second;
      entries_.erase(src_ent);
      e.addr = m.dst;
      if (m.dst < layout_.rank_region_end) entries_[m.dst] = e;
    }
  }
  // 3. swap-ins from host cache.
  for (const auto& [addr, digest] : plan.swap_ins) {
    const auto& words = host_cache_.at(digest.value);
    evict_overlap(addr, words.size() * 8);
    gpu_->write_words({addr, words.size() * 8}, std::span<const u64>(words));
    Entry e;
    e.addr = addr;
    e.bytes = words.size() * 8;
    e.digest = digest;
    e.active = false;
    entries_[addr] = e;
  }
  // 4. adopt the incoming rank's buffers as active residents.
  if (to != kNoRank) adopt_resident(to);
}

void GpuLedger::adopt_resident(RankId r) {
  if (rank_bufs_.count(r) == 0) return;
  for (auto& [slot, b] : rank_bufs_.at(r)) {
    if (!b.live) continue;
    auto ent = entries_.find(b.addr);
    if (ent == entries_.end()) {
      evict_overlap(b.addr, b.bytes);
      Entry e;
      e.addr = b.addr;
      e.bytes = b.bytes;
      entries_[b.addr] = e;
      ent = entries_.find(b.addr);
    }
    ent->second.active = true;
    ent->second.owner = r;
    ent->second.cat = b.cat;
    ent->second.bytes = b.bytes;
    if (!gpu_->buffer_at(b.addr)) gpu_->register_buffer({b.addr, b.bytes}, b.cat);
  }
}

std::vector<u64> GpuLedger::content_of(RankId r, int slot) const {
  const RankBuf& b = rank_bufs_.at(r).at(slot);
  internal_check(b.live, "content_of: dead buffer");
  auto ent = entries_.find(b.addr);
  if (ent != entries_.end() && ent->second.active && ent->second.owner == r) {
    auto sp = gpu_->words({b.addr, b.bytes});
    return {sp.begin(), sp.end()};
  }
  auto found = find_bytes(b.digest, b.bytes);
  if (!found) throw SimFault("content_of: bytes not found for digest");
  return *found;
}

std::optional<std::vector<u64>> GpuLedger::find_bytes(sim::Digest d, u64 bytes) const {
  for (const auto& [a, e] : entries_) {
    if (e.bytes != bytes) continue;
    sim::Digest ed = e.active ? gpu_->digest({e.addr, e.bytes}) : e.digest;
    if (ed == d) {
      auto sp = gpu_->words({e.addr, e.bytes});
      return std::vector<u64>(sp.begin(), sp.end());
    }
  }
  auto it = host_cache_.find(d.value);
  if (it != host_cache_.end() && it->second.size() * 8 == bytes) return it->second;
  return std::nullopt;
}

const std::map<int, RankBuf>& GpuLedger::bufs(RankId r) const {
  static const std::map<int, RankBuf> kEmpty;
  auto it = rank_bufs_.find(r);
  return it == rank_bufs_.end() ? kEmpty : it->second;
}

void GpuLedger::restore_rank_buf(RankId r, const RankBuf& buf) {
  rank_bufs_[r][buf.slot] = buf;
}

void GpuLedger::seed_host_cache(sim::Digest d, std::vector<u64> words) {
  auto [it, fresh] = host_cache_.try_emplace(d.value, std::move(words));
  if (fresh) host_cache_bytes_ += it->second.size() * 8;
}

std::vector<std::pair<u64, u64>> GpuLedger::stable_layout(RankId r) const {
  std::vector<std::pair<u64, u64>> out;
  for (const auto& [slot, b] : bufs(r))
    if (b.live && vdev::is_stable_cat(b.cat)) out.push_back({b.addr, b.bytes});
  return out;
}

}  // namespace fleetsim::splice
