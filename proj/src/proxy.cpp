#include "fleetsim/proxy.hpp"

#include <algorithm>

namespace fleetsim::proxy {

ProxyServer::ProxyServer(sim::Engine& eng, const sim::CostModel& cost,
                         TraceSink& trace, int job_id, GpuKey key, u64 mem_bytes,
                         splice::DeviceLayout layout)
    : eng_(eng), cost_(cost), trace_(trace), job_id_(job_id), key_(key),
      layout_(layout) {
  gpu_ = std::make_unique<vdev::Gpu>(key, mem_bytes);
  ledger_ = std::make_unique<splice::GpuLedger>(*gpu_, layout_);
}

void ProxyServer::register_rank(RankId r) {
  internal_check(std::find(residents_.begin(), residents_.end(), r) == residents_.end(),
                 "rank registered twice");
  residents_.push_back(r);
  if (active_ == kNoRank) active_ = r;
}

RankId ProxyServer::next_resident_after(RankId r) const {
  auto it = std::find(residents_.begin(), residents_.end(), r);
  internal_check(it != residents_.end(), "unknown resident");
  ++it;
  if (it == residents_.end()) it = residents_.begin();
  return *it;
}

u64 ProxyServer::fresh_vhandle(RankId r) {
  u64& n = next_vh_[r];
  return ++n;
}

u64 ProxyServer::create_stream(RankId r, u64 vid) {
  vdev::StreamId s = gpu_->create_stream();
  stream_map_[r][vid] = s;
  replay_log_.push_back({ReplayEntry::Call::CreateStream, r, vid, 0});
  return vid;
}

void ProxyServer::destroy_stream(RankId r, u64 vid) {
  auto& m = stream_map_.at(r);
  auto it = m.find(vid);
  if (it == m.end()) throw SimFault("destroy_stream: unknown virtual handle");
  gpu_->destroy_stream(it->second);
  m.erase(it);
  // Log compaction: a destroy cancels its create.
  for (auto rit = replay_log_.rbegin(); rit != replay_log_.rend(); ++rit) {
    if (rit->call == ReplayEntry::Call::CreateStream && rit->rank == r &&
        rit->vhandle == vid) {
      replay_log_.erase(std::next(rit).base());
      return;
    }
  }
  throw SimFault("destroy_stream: no matching create in replay log");
}

vdev::StreamId ProxyServer::resolve_stream(RankId r, u64 vid) const {
  auto rm = stream_map_.find(r);
  if (rm == stream_map_.end()) throw SimFault("resolve: unknown rank");
  auto it = rm->second.find(vid);
  if (it == rm->second.end()) throw SimFault("resolve: destroyed or unknown handle");
  return it->second;
}

void ProxyServer::remap_stream(RankId r, u64 vid, vdev::StreamId phys) {
  stream_map_[r][vid] = phys;
}

void ProxyServer::log_comm_init(RankId r, u64 vid, int comm_id) {
  ++comm_counts_[comm_id];
  replay_log_.push_back({ReplayEntry::Call::CommInit, r, vid, comm_id});
}

int ProxyServer::comm_count(int comm_id) const {
  auto it = comm_counts_.find(comm_id);
  return it == comm_counts_.end() ? 0 : it->second;
}

std::vector<ReplayEntry> ProxyServer::replay_log_for(RankId r) const {
  std::vector<ReplayEntry> out;
  for (const auto& e : replay_log_)
    if (e.rank == r) out.push_back(e);
  return out;
}

void ProxyServer::replay(const ReplayEntry& e) {
  switch (e.call) {
    case ReplayEntry::Call::CreateStream:
      create_stream(e.rank, e.vhandle);
      break;
    case ReplayEntry::Call::CommInit:
      log_comm_init(e.rank, e.vhandle, static_cast<int>(e.arg));
      break;
  }
}

mem::BidiAllocator& ProxyServer::allocator(RankId r) {
  auto it = allocators_.find(r);
  if (it == allocators_.end()) {
    it = allocators_
             .emplace(r, std::make_unique<mem::BidiAllocator>(0, layout_.rank_region_end))
             .first;
  }
  return *it->second;
}

void ProxyServer::record_fault(RankId r, const std::string& what) {
  auto& f = pending_fault_[r];
  if (!f) f = what;
}

std::optional<std::string> ProxyServer::take_fault(RankId r) {
  auto it = pending_fault_.find(r);
  if (it == pending_fault_.end() || !it->second) return std::nullopt;
  auto out = it->second;
  it->second.reset();
  return out;
}

}  // namespace fleetsim::proxy
