#include "fleetsim/sim.hpp"

namespace fleetsim::sim {

void CostModel::validate() const {
  auto positive = [](double v, const char* name) {
    if (!(v > 0)) throw ConfigError(std::string("cost model: ") + name + " must be > 0");
  };
  positive(h2d_bw, "h2d_bw");
  positive(d2h_bw, "d2h_bw");
  positive(d2d_bw, "d2d_bw");
  positive(net_bw, "net_bw");
  positive(store_bw, "store_bw");
  if (net_latency < 0 || kernel_cost < 0 || dispatch_latency < 0)
    throw ConfigError("cost model: latencies must be >= 0");
  if (!(d2d_bw > h2d_bw))
    throw ConfigError("cost model: d2d_bw must exceed h2d_bw");
}

Dur CostModel::transfer_time(u64 bytes, Channel ch) const {
  double bw = 0;
  Dur fixed = 0;
  switch (ch) {
    case Channel::H2D: bw = h2d_bw; break;
    case Channel::D2H: bw = d2h_bw; break;
    case Channel::D2D: bw = d2d_bw; break;
    case Channel::Net: bw = net_bw; fixed = net_latency; break;
    case Channel::Store: bw = store_bw; break;
  }
  if (bw <= 0) throw SimFault("transfer_time: unknown channel");
  return fixed + static_cast<Dur>(std::llround(static_cast<double>(bytes) / bw * 1e9));
}

EventId Engine::schedule(Dur delay, EventFn fn) {
  internal_check(delay >= 0, "schedule: negative delay");
  EventId id = next_id_++;
  queue_.push(Entry{now_ + delay, seq_++, id});
  pending_.emplace(id, std::move(fn));
  return id;
}

bool Engine::run(Time horizon) {
  while (!queue_.empty()) {
    Entry e = queue_.top();
    if (horizon >= 0 && e.at > horizon) {
      now_ = horizon;
      return false;
    }
    queue_.pop();
    internal_check(e.at >= now_, "clock regression");
    now_ = e.at;
    auto it = pending_.find(e.id);
    if (it == pending_.end()) continue;
    if (cancelled_.count(e.id)) {
      cancelled_.erase(e.id);
      pending_.erase(it);
      continue;
    }
    EventFn fn = std::move(it->second);
    pending_.erase(it);
    ++processed_;
    fn();
  }
  return true;
}

}  // namespace fleetsim::sim
