#include "fleetsim/job.hpp"

#include <algorithm>

namespace fleetsim::job {

JobRuntime::JobRuntime(sim::Engine& engine, const sim::CostModel& cost_in,
                       TraceSink& trace_in, int id, wl::BuiltJob built_in,
                       JobConfig config, std::vector<Dur> oracle_mb_ns)
    : eng(engine), cost(cost_in), trace(trace_in), job_id(id),
      built(std::move(built_in)), cfg(config), oracle_mb(std::move(oracle_mb_ns)),
      comms(engine, cost_in, trace_in, id),
      barrier(engine, trace_in, id, built.spec.world, config.barrier_mode) {
  alive = std::make_shared<bool>(true);
  workers.resize(built.spec.world);
  for (int r = 0; r < built.spec.world; ++r) {
    workers[r].rank = r;
    workers[r].rng = sim::Rng(sim::mix2(built.spec.seed, built.topo.coords[r].dp));
  }
  for (const auto& c : built.comms) comms.define(c);
  comms.set_on_complete([this](const coll::CollectiveEngine::CompletionInfo& info) {
    on_coll_complete(info);
  });
}

JobRuntime::~JobRuntime() { *alive = false; }

void JobRuntime::guarded(Dur delay, std::function<void()> fn) {
  std::weak_ptr<bool> tok = alive;
  eng.schedule(delay, [tok, fn = std::move(fn)]() {
    auto p = tok.lock();
    if (p && *p) fn();
  });
}

void JobRuntime::start(const std::map<RankId, GpuKey>& placement_in,
                       u64 gpu_mem_bytes) {
  placement = placement_in;
  internal_check(placement.size() == static_cast<size_t>(world()),
                 "placement must cover every rank");
  comms.set_placement(placement);

  // Residents grouped per GPU in data-parallel index order so switch cycles
  // line up across devices (deadlock-free communication scheduling).
  std::map<GpuKey, std::vector<RankId>> residents;
  for (const auto& [r, g] : placement) residents[g].push_back(r);
  for (auto& [g, rs] : residents) {
    std::sort(rs.begin(), rs.end(), [&](RankId a, RankId b) {
      return built.topo.coords[a].dp < built.topo.coords[b].dp;
    });
    // Placement legality: one (tp, pp, shard) coordinate per device.
    for (RankId r : rs) {
      const auto& c0 = built.topo.coords[rs.front()];
      const auto& c = built.topo.coords[r];
      if (c.tp != c0.tp || c.pp != c0.pp || c.shard != c0.shard)
        throw SimFault("placement violates splicing-aware constraint");
    }
  }

  u64 max_buf = 256;
  for (RankId r = 0; r < world(); ++r)
    max_buf = std::max(max_buf, built.peak_transient_bytes[r] > 0
                                    ? built.stable_bytes[r] + built.peak_transient_bytes[r]
                                    : built.stable_bytes[r]);
  // Scratch must stage the largest single buffer; a full replica bound is
  // cheap at desk scale and always sufficient.
  auto layout = splice::DeviceLayout::carve(gpu_mem_bytes, max_buf, cfg.slack_fraction);

  for (auto& [g, rs] : residents) {
    auto px = std::make_unique<proxy::ProxyServer>(eng, cost, trace, job_id, g,
                                                   gpu_mem_bytes, layout);
    for (RankId r : rs) {
      // Capacity: the stable footprint is shared across sharers; each rank
      // additionally needs its transient peak while active.
      if (built.stable_bytes[r] + built.peak_transient_bytes[r] > layout.rank_region_end)
        throw SimFault("placement capacity insufficient for requested slicing");
      px->register_rank(r);
    }
    proxies[g] = std::move(px);
  }
  if (cfg.corrupt_splice_dedup && !proxies.empty())
    proxies.begin()->second->ledger().corrupt_next_swap_in();

  for (auto& [g, px] : proxies) {
    RankId first = px->residents().front();
    for (RankId r : px->residents())
      workers[r].state = (r == first) ? WState::Idle : WState::AwaitSlice;
    schedule_run(first, eng.now());
  }
}

void JobRuntime::teardown() {
  *alive = false;
  alive = std::make_shared<bool>(false);
  proxies.clear();
}

void JobRuntime::schedule_run(RankId r, Time at_least) {
  auto& w = workers[r];
  w.resume_floor = std::max(w.resume_floor, at_least);
  if (w.run_scheduled) return;
  w.run_scheduled = true;
  w.state = WState::RunScheduled;
  Dur delay = std::max<Dur>(0, w.resume_floor - eng.now());
  guarded(delay, [this, r]() { run_worker(r); });
}

void JobRuntime::rank_ready(RankId r, Time at_least) {
  auto& w = workers[r];
  if (w.state == WState::Finished || w.state == WState::Failed ||
      w.state == WState::Parked)
    return;
  w.resume_floor = std::max(w.resume_floor, at_least);
  auto& px = proxy_of(r);
  if (px.active() == r) {
    px.set_active_yielded(false);
    schedule_run(r, w.resume_floor);
  } else if (px.active_yielded()) {
    px.set_active_yielded(false);
    switch_to(px, r, w.resume_floor);
  } else {
    w.state = WState::AwaitSlice;
  }
}

void JobRuntime::yield_slice(RankId r) {
  auto& px = proxy_of(r);
  if (px.active() != r) return;
  RankId next = kNoRank;
  RankId cur = r;
  for (int i = 1; i < px.sharing(); ++i) {
    cur = px.next_resident_after(cur);
    if (workers[cur].state == WState::AwaitSlice) {
      next = cur;
      break;
    }
  }
  if (next == kNoRank) {
    px.set_active_yielded(true);
    return;
  }
  px.set_active_yielded(false);
  switch_to(px, next, workers[next].resume_floor);
}

void JobRuntime::switch_to(proxy::ProxyServer& px, RankId next, Time floor) {
  RankId from = px.active() == next ? kNoRank : px.active();
  internal_check(next != kNoRank, "switch to nobody");
  Time decide = std::max(eng.now(), from != kNoRank ? workers[from].t : Time{0});
  Time drained = decide;
  if (from != kNoRank) {
    for (const auto& [slot, vh] : workers[from].stream_vh)
      drained = std::max(drained, px.gpu().stream_tail(px.resolve_stream(from, vh)));
  }

  auto plan = px.ledger().plan_switch(from, next);
  Dur dur = 0;
  if (plan.swap_out_bytes)
    dur += cost.transfer_time(plan.swap_out_bytes, sim::Channel::D2H);
  if (plan.swap_in_bytes)
    dur += cost.transfer_time(plan.swap_in_bytes, sim::Channel::H2D);
  if (plan.d2d_bytes) dur += cost.transfer_time(plan.d2d_bytes, sim::Channel::D2D);

  u64 install_bytes = 0;
  auto& queue = px.install_queue[next];
  for (const auto& q : queue) install_bytes += q.words.size() * 8;
  if (install_bytes) dur += cost.transfer_time(install_bytes, sim::Channel::D2D);

  px.ledger().execute_switch(from, next, plan);
  for (auto& q : queue) px.ledger().install_result(next, q.slot, q.words);
  queue.clear();

  Time done = drained + dur;
  px.gpu().gate_until(done);
  px.set_active(next);
  px.switch_seq++;
  px.total_swap_out_bytes += plan.swap_out_bytes;
  px.total_swap_in_bytes += plan.swap_in_bytes;
  px.total_d2d_bytes += plan.d2d_bytes + install_bytes;

  Json j;
  j["job"] = job_id;
  j["gpu"] = px.key();
  j["seq"] = px.switch_seq;
  j["from"] = from;
  j["to"] = next;
  j["t0"] = decide;
  j["done"] = done;
  j["swap_out_bytes"] = plan.swap_out_bytes;
  j["swap_out_stable_bytes"] = plan.swap_out_stable_bytes;
  j["swap_in_bytes"] = plan.swap_in_bytes;
  j["swap_in_stable_bytes"] = plan.swap_in_stable_bytes;
  j["d2d_bytes"] = plan.d2d_bytes;
  j["install_bytes"] = install_bytes;
  trace.emit(eng.now(), "switch_report", j);

  schedule_run(next, std::max(floor, cfg.eager_dispatch ? decide : done));
}

void JobRuntime::on_coll_complete(const coll::CollectiveEngine::CompletionInfo& info) {
  if (failed_flag) return;
  if (info.key.comm_id == built.meta_comm_id()) {
    internal_check(info.result.size() == 2, "meta payload must be 2 words");
    barrier.on_meta_complete(info.key.seq, info.result[0], info.result[1]);
  }
  bool accumulated =
      comms.classification(info.key.comm_id) == coll::Cls::DataParallel;
  for (const auto& [r, slot] : info.out_slot) {
    auto& px = proxy_of(r);
    if (px.active() == r) {
      px.ledger().install_result(r, slot, info.result);
      if (accumulated && px.sharing() > 1) {
        auto it = workers[r].stream_vh.find(0);
        if (it != workers[r].stream_vh.end())
          px.gpu().stream_op(px.resolve_stream(r, it->second), info.complete_at,
                             cost.transfer_time(info.result.size() * 8,
                                                sim::Channel::D2D));
      }
    } else {
      px.install_queue[r].push_back({slot, info.result});
    }
  }
  // Mark client-side handles and wake blocked members.
  for (RankId m : comms.def(info.key.comm_id).members) {
    auto& w = workers[m];
    for (auto& [hslot, h] : w.handles)
      if (h.comm_id == info.key.comm_id && h.seq == info.key.seq && !h.completed) {
        h.completed = true;
        h.complete_at = info.complete_at;
      }
    if (w.state == WState::BlockedColl && w.wait_key == info.key) {
      rank_ready(m, info.complete_at);
    } else if (w.state == WState::BlockedHandles) {
      bool all = true;
      Time t = 0;
      for (int hs : w.wait_handle_slots) {
        const auto& h = w.handles.at(hs);
        if (!h.completed) {
          all = false;
          break;
        }
        t = std::max(t, h.complete_at);
      }
      if (all) rank_ready(m, t);
    }
  }
}

void JobRuntime::resume_from_release() {
  for (auto& w : workers) {
    if (w.state != WState::Parked) continue;
    const auto& ins = built.programs[w.rank].code[w.pc];
    using Op = prog::Instr::Op;
    if (ins.op == Op::MinibatchEnd) {
      ++w.pc;
      w.substate = 0;
    } else if (ins.op == Op::Collective) {
      w.substate = 2;  // meta done, data collective still to issue
    } else if (ins.op == Op::Halt) {
      w.substate = 0;  // re-run the quiesce round
    }
    w.state = WState::AwaitSlice;
  }
  for (auto& [g, px] : proxies) {
    px->set_active_yielded(false);
    // Reactivate the rank currently holding the device; others rotate in.
    RankId a = px->active();
    if (workers[a].state == WState::AwaitSlice) {
      workers[a].state = WState::Idle;
      schedule_run(a, eng.now());
    }
  }
}

void JobRuntime::fail_job(RankId r, const std::string& what) {
  if (failed_flag) return;
  failed_flag = true;
  fail_reason = what;
  Json j;
  j["job"] = job_id;
  j["rank"] = r;
  j["reason"] = what;
  trace.emit(eng.now(), "job_fail", j);
  for (auto& w : workers)
    if (w.state != WState::Finished) w.state = WState::Failed;
  if (on_fail) {
    auto cb = on_fail;
    auto reason = fail_reason;
    guarded(0, [cb, reason]() { cb(reason); });
  }
}

void JobRuntime::capture_final() {
  finals.assign(world(), {});
  for (RankId r = 0; r < world(); ++r) {
    auto& px = proxy_of(r);
    auto& f = finals[r];
    for (const auto& [slot, b] : px.ledger().bufs(r))
      if (b.live && vdev::is_stable_cat(b.cat)) {
        f.stable[slot] = px.ledger().content_of(r, slot);
        f.stable_addr[slot] = b.addr;
      }
    f.host = workers[r].host;
    f.files = workers[r].files;
    f.rng_state = workers[r].rng.state();
  }
}

}  // namespace fleetsim::job
