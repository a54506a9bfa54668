#include "fleetsim/collectives.hpp"

#include <algorithm>

namespace fleetsim::coll {

const char* to_string(Cls c) {
  switch (c) {
    case Cls::Unknown: return "unknown";
    case Cls::DataParallel: return "data_parallel";
    case Cls::Other: return "other";
  }
  return "?";
}

CollectiveEngine::CollectiveEngine(sim::Engine& eng, const sim::CostModel& cost,
                                   TraceSink& trace, int job_id)
    : eng_(eng), cost_(cost), trace_(trace), job_id_(job_id) {}

void CollectiveEngine::define(const prog::CommDef& def) {
  internal_check(!def.members.empty(), "comm with no members");
  Comm c;
  c.def = def;
  for (RankId r : def.members) c.next_seq[r] = 0;
  comms_[def.comm_id] = std::move(c);
}

void CollectiveEngine::set_placement(const std::map<RankId, GpuKey>& placement) {
  placement_ = placement;
  for (auto& [id, c] : comms_) {
    c.gpus.clear();
    for (RankId r : c.def.members) c.gpus.insert(placement_.at(r));
    c.ring.assign(c.gpus.begin(), c.gpus.end());
  }
}

void CollectiveEngine::rendezvous(const std::map<RankId, GpuKey>& placement) {
  for (auto& [id, c] : comms_) {
    internal_check(c.pending.empty() || std::all_of(c.pending.begin(), c.pending.end(),
                                                    [](const auto& p) {
                                                      return p.second.completed;
                                                    }),
                   "rendezvous with in-flight collectives");
    c.pending.clear();
    c.cls = Cls::Unknown;
    c.init_issued.clear();
    c.init_ready.clear();
    c.init_done = false;
  }
  for (const auto& [r, g] : placement)
    if (placement_.count(r) == 0) throw SimFault("rendezvous: unknown worker");
  set_placement(placement);
  Json j;
  j["job"] = job_id_;
  int n = 0;
  for (const auto& [id, c] : comms_) n += static_cast<int>(c.ring.size());
  j["comms"] = static_cast<int>(comms_.size());
  trace_.emit(eng_.now(), "rendezvous", j);
}

int CollectiveEngine::local_count(int comm_id, GpuKey g) const {
  const Comm& c = comms_.at(comm_id);
  int n = 0;
  for (RankId r : c.def.members)
    if (placement_.at(r) == g) ++n;
  return n;
}

void CollectiveEngine::classify(Comm& c) {
  int max_local = 0;
  for (GpuKey g : c.gpus) {
    int n = 0;
    for (RankId r : c.def.members)
      if (placement_.at(r) == g) ++n;
    max_local = std::max(max_local, n);
  }
  Cls before = c.cls;
  c.cls = max_local > 1 ? Cls::DataParallel : Cls::Other;
  if (c.cls != before) {
    Json j;
    j["job"] = job_id_;
    j["comm"] = c.def.comm_id;
    j["label"] = c.def.label;
    j["cls"] = to_string(c.cls);
    j["local_count"] = max_local;
    trace_.emit(eng_.now(), "comm_classify", j);
  }
}

bool CollectiveEngine::init_issue(RankId r, int comm_id, Time ready) {
  auto it = comms_.find(comm_id);
  if (it == comms_.end()) throw SimFault("comm_init: unknown communicator");
  Comm& c = it->second;
  if (std::find(c.def.members.begin(), c.def.members.end(), r) == c.def.members.end())
    throw SimFault("comm_init: rank not a member (mismatched member lists)");
  c.init_issued.insert(r);
  c.init_ready[r] = std::max(c.init_ready[r], ready);
  if (!c.init_done && c.init_issued.size() == c.def.members.size()) {
    Time t = 0;
    for (const auto& [m, tt] : c.init_ready) t = std::max(t, tt);
    c.init_done = true;
    c.init_at = t + (c.gpus.size() > 1 ? cost_.net_latency : 0);
    classify(c);
  }
  return c.init_done;
}

CollectiveEngine::IssueResult CollectiveEngine::issue(RankId r, int comm_id,
                                                      prog::CollKind kind,
                                                      std::vector<u64> contrib,
                                                      u64 payload_words,
                                                      int expects_slot, int root,
                                                      Time ready) {
  auto cit = comms_.find(comm_id);
  if (cit == comms_.end()) throw SimFault("collective: unknown communicator");
  Comm& c = cit->second;
  if (!c.init_done) throw SimFault("collective: communicator not initialized");
  u64 seq = c.next_seq.at(r)++;
  issue_log_[r].push_back({comm_id, seq});
  Pending& p = c.pending[seq];
  bool first = p.issued.empty();
  if (first) {
    p.kind = kind;
    p.payload_words = payload_words;
    p.root = root;
  } else {
    bool transfer_pair =
        (p.kind == prog::CollKind::Send && kind == prog::CollKind::Recv) ||
        (p.kind == prog::CollKind::Recv && kind == prog::CollKind::Send);
    if (!(p.kind == kind || transfer_pair))
      throw SimFault("collective: mismatched op across members");
    if (p.payload_words != payload_words)
      throw SimFault("collective: mismatched payload size across members");
    if (kind == prog::CollKind::Send) p.kind = prog::CollKind::Send;
  }
  internal_check(p.issued.insert(r).second, "collective: duplicate issue");
  if (!contrib.empty()) {
    if (p.sum.empty()) p.sum.assign(payload_words, 0);
    internal_check(contrib.size() == payload_words, "collective: bad contrib size");
    if (kind == prog::CollKind::Allreduce)
      for (u64 i = 0; i < payload_words; ++i) p.sum[i] += contrib[i];
    else
      p.sum = std::move(contrib);  // send / broadcast root: routed content
  }
  if (expects_slot >= 0) p.out_slot[r] = expects_slot;

  GpuKey g = placement_.at(r);
  int& n = p.gpu_issued[g];
  ++n;
  auto& gr = p.gpu_ready[g];
  gr = std::max(gr, ready);
  IssueResult out;
  out.key = {comm_id, seq};
  out.local_closer = n == local_count(comm_id, g);

  if (p.issued.size() == c.def.members.size()) {
    finish(comm_id, seq);
    out.completed = true;
    out.complete_at = p.complete_at;
  }
  return out;
}

void CollectiveEngine::finish(int comm_id, u64 seq) {
  Comm& c = comms_.at(comm_id);
  Pending& p = c.pending.at(seq);
  Time ready = 0;
  for (const auto& [g, t] : p.gpu_ready) ready = std::max(ready, t);
  Dur cost = c.gpus.size() > 1
                 ? cost_.transfer_time(p.payload_words * 8, sim::Channel::Net)
                 : 0;
  p.complete_at = ready + cost;
  p.completed = true;
  if (on_complete_) {
    CompletionInfo info;
    info.key = {comm_id, seq};
    info.kind = p.kind;
    info.complete_at = p.complete_at;
    info.result = p.sum;
    info.out_slot = p.out_slot;
    Dur delay = std::max<Dur>(0, p.complete_at - eng_.now());
    auto fn = on_complete_;
    eng_.schedule(delay, [fn, info]() { fn(info); });
  }
}

bool CollectiveEngine::completed(CollKey k) const {
  const Comm& c = comms_.at(k.comm_id);
  auto it = c.pending.find(k.seq);
  return it != c.pending.end() && it->second.completed;
}

Time CollectiveEngine::complete_time(CollKey k) const {
  return comms_.at(k.comm_id).pending.at(k.seq).complete_at;
}

std::vector<CollKey> CollectiveEngine::partially_issued() const {
  std::vector<CollKey> out;
  for (const auto& [id, c] : comms_)
    for (const auto& [seq, p] : c.pending)
      if (!p.completed) out.push_back({id, seq});
  return out;
}

u64 CollectiveEngine::issued_seq(int comm_id, RankId r) const {
  return comms_.at(comm_id).next_seq.at(r);
}

std::map<int, u64> CollectiveEngine::seq_snapshot(RankId r) const {
  std::map<int, u64> out;
  for (const auto& [id, c] : comms_)
    if (c.next_seq.count(r)) out[id] = c.next_seq.at(r);
  return out;
}

void CollectiveEngine::restore_seq(RankId r, const std::map<int, u64>& seqs) {
  for (const auto& [id, s] : seqs) comms_.at(id).next_seq[r] = s;
}

const std::vector<std::pair<int, u64>>& CollectiveEngine::issue_log(RankId r) const {
  static const std::vector<std::pair<int, u64>> kEmpty;
  auto it = issue_log_.find(r);
  return it == issue_log_.end() ? kEmpty : it->second;
}

}  // namespace fleetsim::coll
