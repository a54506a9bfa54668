#include <algorithm>

#include "fleetsim/job.hpp"

namespace fleetsim::job {

using prog::CollKind;
using prog::ImmMode;
using prog::Instr;
using Op = prog::Instr::Op;
using vdev::BufCat;

namespace {
constexpr int kSubFresh = 0;
constexpr int kSubMetaWait = 1;
constexpr int kSubDataIssue = 2;
constexpr int kSubDataWait = 3;
constexpr int kSubJoinWait = 1;
constexpr int kSubPostJoin = 2;
constexpr int kSubParked = 9;
}  // namespace

// Instruction interpreter for one rank. Each call runs until the worker
// blocks, parks, yields its slice, finishes, or faults.
struct WorkerExec {
  JobRuntime& J;
  RankId r;
  WorkerState& w;
  proxy::ProxyServer& px;
  const std::vector<Instr>& code;

  WorkerExec(JobRuntime& j, RankId rank)
      : J(j), r(rank), w(j.workers[rank]), px(j.proxy_of(rank)),
        code(j.built.programs[rank].code) {}

  void advance() {
    ++w.pc;
    w.substate = kSubFresh;
  }

  void dispatch_prelude(const char* call) {
    ++px.server_calls;
    if (auto f = px.take_fault(r))
      throw SimFault(std::string(call) + ": delayed fault from earlier call: " + *f);
  }

  void trace_dispatch(const char* call, i64 aux = 0) {
    if (!J.trace.dispatch_records()) return;
    Json j;
    j["job"] = J.job_id;
    j["rank"] = r;
    j["gpu"] = px.key();
    j["call"] = call;
    if (aux) j["aux"] = aux;
    J.trace.emit(w.t, "dispatch", j);
  }

  vdev::StreamId main_stream() { return px.resolve_stream(r, w.stream_vh.at(0)); }

  u64 resolve_imm(const prog::KernelSpec& k) const {
    switch (k.imm_mode) {
      case ImmMode::Literal: return k.imm;
      case ImmMode::AddInputSeed: return k.imm + w.input_seed;
      case ImmMode::AddRank: return k.imm + static_cast<u64>(r);
    }
    return k.imm;
  }

  vdev::MemRange range_of(int slot) const {
    const DevSlot& d = w.dev.at(slot);
    internal_check(d.live, "use of dead device slot");
    return {d.addr, d.words * 8};
  }

  bool comm_is_dp(int comm_id) const {
    return J.comms.classification(comm_id) == coll::Cls::DataParallel;
  }

  void block_on(coll::CollKey key, int substate, bool yield) {
    w.state = WState::BlockedColl;
    w.wait_key = key;
    w.substate = substate;
    if (yield && px.sharing() > 1) J.yield_slice(r);
  }

  coll::CollectiveEngine::IssueResult issue_meta() {
    auto [need, ack] = J.barrier.payload(r);
    auto res = J.comms.issue(r, J.built.meta_comm_id(), CollKind::Allreduce,
                             {need, ack}, 2, -1, -1, w.t);
    J.barrier.on_meta_issued(r, res.key.seq);
    ++J.meta_issues;
    return res;
  }

  void park() {
    w.state = WState::Parked;
    J.yield_slice(r);
  }

  void finish() {
    w.state = WState::Finished;
    w.substate = kSubFresh;
    J.barrier.mark_rank_finished(r);
    ++J.finished_count;
    J.yield_slice(r);
    if (J.finished_count == J.world()) {
      J.capture_final();
      Json j;
      j["job"] = J.job_id;
      J.trace.emit(w.t, "job_complete", j);
      if (J.on_complete) {
        auto cb = J.on_complete;
        J.guarded(0, cb);
      }
    }
  }

  // Returns false when the worker must stop interpreting.
  bool step();
  bool do_alloc(const Instr& ins);
  bool do_launch(const Instr& ins);
  bool do_comm_init(const Instr& ins);
  bool do_collective(const Instr& ins);
  bool do_wait_handles(const Instr& ins);
  bool do_window_open();
  bool do_window_close();
  bool do_boundary(const Instr& ins);
  bool do_halt();
};

bool WorkerExec::do_alloc(const Instr& ins) {
  dispatch_prelude("alloc");
  int slot = static_cast<int>(ins.a);
  u64 words = ins.size.base_words;
  if (ins.c != 0) words = w.dev.at(static_cast<int>(ins.c) - 1).words;
  if (ins.size.jitter_words) words += w.rng.next() % ins.size.jitter_words;
  internal_check(words > 0, "alloc of zero words");
  auto stability = ins.stability;
  if (stability == mem::Stability::Stable) {
    ++w.stable_allocs;
    if (J.cfg.misclassify_stable_every > 0 &&
        w.stable_allocs % J.cfg.misclassify_stable_every == 0)
      stability = mem::Stability::Transient;
  }
  auto addr = px.allocator(r).alloc(words * 8, stability);
  if (!addr) throw SimFault("alloc: device out of memory");
  px.ledger().on_alloc(r, slot, *addr, px.allocator(r).size_of(*addr), ins.cat);
  px.gpu().register_buffer({*addr, px.allocator(r).size_of(*addr)}, ins.cat);
  w.dev[slot] = {*addr, words, ins.cat, true};
  w.t += J.cost.dispatch_latency;
  trace_dispatch("alloc", static_cast<i64>(words * 8));
  advance();
  return true;
}

bool WorkerExec::do_launch(const Instr& ins) {
  if (w.squashing_now) {
    // Squashed: the kernel launch is omitted entirely on this rank.
    auto& win = px.windows[w.cur_mb];
    ++win.squashed[r];
    advance();
    return true;
  }
  dispatch_prelude("launch_kernel");
  const auto& k = ins.kern;
  vdev::KernelDesc desc;
  desc.transform = {k.op, resolve_imm(k)};
  if (k.read0 >= 0) desc.reads.push_back(range_of(k.read0));
  if (k.read1 >= 0) desc.reads.push_back(range_of(k.read1));
  desc.write = range_of(k.write);
  auto stream = px.resolve_stream(r, w.stream_vh.at(static_cast<int>(ins.a)));
  try {
    px.gpu().launch(stream, desc, w.t, J.cost.kernel_cost);
    w.last_error_cache = 0;
  } catch (const SimFault& f) {
    // Delayed error notification: the client keeps going, the fault surfaces
    // before the next dispatched call returns.
    px.record_fault(r, f.what());
    w.last_error_cache = 1;
  }
  if (w.in_window && px.sharing() > 1) ++px.windows[w.cur_mb].executed[r];
  trace_dispatch("launch_kernel");
  advance();
  return true;
}

bool WorkerExec::do_comm_init(const Instr& ins) {
  int slot = static_cast<int>(ins.a);
  int comm_id = static_cast<int>(ins.b);
  if (w.substate == kSubFresh) {
    dispatch_prelude("comm_init");
    u64 vid = w.next_vh++;
    w.comm_vh[slot] = vid;
    w.comm_of_slot[slot] = comm_id;
    px.log_comm_init(r, vid, comm_id);
    w.t += J.cost.dispatch_latency;
    trace_dispatch("comm_init", comm_id);
    bool done = J.comms.init_issue(r, comm_id, w.t);
    if (done) {
      // This issue closed the join: wake the members blocked on it.
      Time at = J.comms.init_at(comm_id);
      for (RankId m : J.comms.def(comm_id).members) {
        if (m == r) continue;
        auto& wm = J.workers[m];
        if (wm.state == WState::BlockedInit && wm.wait_key.comm_id == comm_id)
          J.rank_ready(m, at);
      }
      w.t = std::max(w.t, at);
      w.substate = kSubPostJoin;
    } else {
      w.state = WState::BlockedInit;
      w.wait_key = {comm_id, 0};
      w.substate = kSubJoinWait;
      if (px.sharing() > 1) J.yield_slice(r);
      return false;
    }
  }
  if (w.substate == kSubJoinWait) {
    w.t = std::max(w.t, J.comms.init_at(comm_id));
    w.substate = kSubPostJoin;
  }
  // Forced context switch after every communicator init.
  advance();
  if (px.sharing() > 1) {
    w.state = WState::AwaitSlice;
    J.yield_slice(r);
    if (px.active() == r) {
      // Nobody else was ready; keep the slice.
      w.state = WState::Running;
      return true;
    }
    return false;
  }
  return true;
}

bool WorkerExec::do_collective(const Instr& ins) {
  int comm_id = w.comm_of_slot.at(ins.comm_slot);
  bool is_data_ar = ins.ckind == CollKind::Allreduce &&
                    comm_id != J.built.meta_comm_id();
  bool tandem = J.barrier.mode() == bar::Mode::PerCollective && is_data_ar;

  if (w.substate == kSubFresh) {
    // Harvest point: completed metas are examined when issuing a collective.
    auto phase = J.barrier.harvest(r);
    if (phase == bar::BPhase::Acquired) {
      internal_check(tandem, "mid-batch acquisition outside per-collective mode");
      w.substate = kSubDataIssue;  // resume by issuing the data collective
      park();
      return false;
    }
    if (tandem) {
      auto res = issue_meta();
      if (J.barrier.sync_mode(r)) {
        block_on(res.key, kSubMetaWait, comm_is_dp(J.built.meta_comm_id()));
        return false;
      }
    }
    w.substate = kSubDataIssue;
  }
  if (w.substate == kSubMetaWait) {
    auto phase = J.barrier.harvest(r);
    if (phase == bar::BPhase::Acquired) {
      w.substate = kSubDataIssue;
      park();
      return false;
    }
    w.substate = kSubDataIssue;
  }
  if (w.substate == kSubParked) {
    w.substate = kSubDataIssue;
  }
  internal_check(w.substate == kSubDataIssue, "collective substate");

  dispatch_prelude("collective");
  const DevSlot& d = w.dev.at(ins.payload_slot);
  internal_check(d.live, "collective on dead buffer");
  bool contributes = ins.ckind == CollKind::Allreduce || ins.ckind == CollKind::Send ||
                     (ins.ckind == CollKind::Broadcast && ins.root == r);
  bool receives = ins.ckind == CollKind::Allreduce || ins.ckind == CollKind::Recv ||
                  (ins.ckind == CollKind::Broadcast && ins.root != r);
  std::vector<u64> contrib;
  if (contributes) {
    auto sp = px.gpu().words(range_of(ins.payload_slot));
    contrib.assign(sp.begin(), sp.end());
  }
  Time ready = w.t;
  if (!w.stream_vh.empty())
    ready = std::max(ready, px.gpu().stream_tail(main_stream()));
  bool sliced_dp = comm_is_dp(comm_id) && px.sharing() > 1;
  if (sliced_dp && contributes) {
    // Local accumulation into proxy scratch, charged as a device-side copy.
    Time tail = px.gpu().stream_op(main_stream(), w.t,
                                   J.cost.transfer_time(d.words * 8,
                                                        sim::Channel::D2D));
    ready = std::max(ready, tail);
  }
  if (receives) px.ledger().mark_pending_result(r, ins.payload_slot);
  auto res = J.comms.issue(r, comm_id, ins.ckind, std::move(contrib), d.words,
                           receives ? ins.payload_slot : -1, ins.root, ready);
  w.handles[ins.handle_slot] = {comm_id, res.key.seq, false, 0};
  trace_dispatch(prog::to_string(ins.ckind), comm_id);
  if (res.local_closer && sliced_dp && is_data_ar) {
    px.windows[w.cur_mb].root = r;  // device-level issuer owns the window
    if (J.trace.dispatch_records()) {
      Json j;
      j["job"] = J.job_id;
      j["gpu"] = px.key();
      j["rank"] = r;
      j["comm"] = comm_id;
      j["seq"] = static_cast<i64>(res.key.seq);
      J.trace.emit(w.t, "device_collective", j);
    }
  }

  bool sync = !ins.async || J.barrier.sync_mode(r);
  if (sync) {
    block_on(res.key, kSubDataWait, sliced_dp);
    return false;
  }
  advance();
  return true;
}

bool WorkerExec::do_wait_handles(const Instr& ins) {
  bool all = true;
  Time t = 0;
  bool any_dp = false;
  w.wait_handle_slots.clear();
  for (i64 h = ins.a; h < ins.a + ins.b; ++h) {
    const Handle& hd = w.handles.at(static_cast<int>(h));
    w.wait_handle_slots.push_back(static_cast<int>(h));
    if (!hd.completed) {
      all = false;
      if (comm_is_dp(hd.comm_id)) any_dp = true;
    } else {
      t = std::max(t, hd.complete_at);
    }
  }
  if (all) {
    w.t = std::max(w.t, t);
    w.wait_handle_slots.clear();
    advance();
    return true;
  }
  w.state = WState::BlockedHandles;
  if (any_dp && px.sharing() > 1) J.yield_slice(r);
  return false;
}

bool WorkerExec::do_window_open() {
  w.in_window = true;
  if (px.sharing() > 1) {
    auto& win = px.windows[w.cur_mb];
    win.validation = J.cfg.squash.is_validation_mb(w.cur_mb);
    if (win.validation) {
      px.ledger().refresh_digests(r);
      auto& snap = win.open_snapshot[r];
      snap.clear();
      for (const auto& [slot, b] : px.ledger().bufs(r))
        if (b.live && !b.pending_result) snap[b.addr] = {b.bytes, b.digest};
      win.records[r] = {};
    } else if (J.cfg.squash.enabled && J.squash_runtime) {
      internal_check(win.root != kNoRank, "squash window without a root");
      if (px.ledger().stable_layout(r) != px.ledger().stable_layout(win.root)) {
        J.squash_runtime = false;
        Json j;
        j["job"] = J.job_id;
        j["gpu"] = px.key();
        j["mb"] = w.cur_mb;
        j["rank"] = r;
        j["reason"] = "stable addresses inconsistent across sharing ranks";
        J.trace.emit(w.t, "squash_precondition_failed", j);
      } else if (r != win.root) {
        w.squashing_now = true;
      }
    }
  }
  advance();
  return true;
}

bool WorkerExec::do_window_close() {
  if (px.sharing() > 1) {
    auto wit = px.windows.find(w.cur_mb);
    internal_check(wit != px.windows.end(), "window close without open");
    auto& win = wit->second;
    if (w.squashing_now) {
      w.squashing_now = false;
      // The squashed rank's visible P/O content is the root's result at the
      // same addresses.
      internal_check(!win.root_stable_digests.empty(),
                     "squashed window closed before the root's");
      auto& bufs = px.ledger().all_bufs()[r];
      for (const auto& [addr, digest] : win.root_stable_digests) {
        bool found = false;
        for (auto& [slot, b] : bufs)
          if (b.live && b.addr == addr) {
            b.digest = digest;
            found = true;
          }
        internal_check(found, "root mutation at address unknown to squashed rank");
      }
    } else if (r == win.root && !win.validation) {
      px.ledger().refresh_digests(r);
      win.root_stable_digests.clear();
      for (const auto& [slot, b] : px.ledger().bufs(r))
        if (b.live && vdev::is_stable_cat(b.cat))
          win.root_stable_digests[b.addr] = b.digest;
    }
    if (win.validation) {
      px.ledger().refresh_digests(r);
      auto& rec = win.records[r];
      const auto& snap = win.open_snapshot.at(r);
      for (const auto& [slot, b] : px.ledger().bufs(r)) {
        if (!b.live || b.pending_result) continue;
        auto it = snap.find(b.addr);
        if (it == snap.end() || !(it->second.second == b.digest) ||
            it->second.first != b.bytes)
          rec.mutations[b.addr] = {b.bytes, b.digest};
      }
    }
    win.closed[r] = true;
    {
      Json j;
      j["job"] = J.job_id;
      j["gpu"] = px.key();
      j["mb"] = w.cur_mb;
      j["rank"] = r;
      j["root"] = win.root;
      j["executed"] = static_cast<i64>(win.executed[r]);
      j["squashed"] = static_cast<i64>(win.squashed[r]);
      J.trace.emit(w.t, "squash_window", j);
    }
    if (static_cast<int>(win.closed.size()) == px.sharing()) {
      if (win.validation) {
        auto outcome = splice::validate_window(win.records);
        Json j;
        j["job"] = J.job_id;
        j["gpu"] = px.key();
        j["mb"] = w.cur_mb;
        j["pass"] = outcome.pass;
        if (!outcome.pass) j["reason"] = outcome.reason;
        J.trace.emit(w.t, "validation", j);
        if (!outcome.pass) {
          J.squash_runtime = false;
          if (J.cfg.squash.rollback_on_failure && J.on_validation_rollback) {
            auto cb = J.on_validation_rollback;
            J.guarded(0, cb);
          }
        }
      }
      px.windows.erase(wit);
    }
  }
  w.in_window = false;
  advance();
  return true;
}

bool WorkerExec::do_boundary(const Instr& ins) {
  int mb = static_cast<int>(ins.a);
  if (w.substate == kSubFresh) {
    w.step = mb;
    {
      Json j;
      j["job"] = J.job_id;
      j["rank"] = r;
      j["mb"] = mb;
      J.trace.emit(w.t, "minibatch_complete", j);
    }
    px.boundary_times[mb][r] = w.t;
    if (static_cast<int>(px.boundary_times[mb].size()) == px.sharing()) {
      Time done = 0;
      for (const auto& [rr, tt] : px.boundary_times[mb]) done = std::max(done, tt);
      px.cycle_done[mb] = done;
      if (px.sharing() > 1 && mb >= 2 && px.cycle_done.count(mb - 1) &&
          !J.cfg.squash.is_validation_mb(mb) &&
          static_cast<size_t>(mb) <= J.oracle_mb.size()) {
        Dur sliced = done - px.cycle_done[mb - 1];
        bool flipped = px.monitor.observe(sliced, px.sharing(), J.oracle_mb[mb - 1],
                                          J.cfg.squash.overhead_threshold);
        Json j;
        j["job"] = J.job_id;
        j["gpu"] = px.key();
        j["mb"] = mb;
        j["overhead"] = px.monitor.last_overhead;
        j["decision"] = px.monitor.disable_recommended ? "disable_time_slicing" : "keep";
        J.trace.emit(done, "monitor", j);
        if (flipped) {
          J.slicing_disabled = true;
          if (J.on_monitor_disable) J.on_monitor_disable(px.monitor.last_overhead);
        }
      }
    }
    if (++J.mb_rank_done[mb] == J.world() && J.on_minibatch) J.on_minibatch(mb);

    // --- barrier boundary procedure ---------------------------------------
    auto phase = J.barrier.harvest(r);
    if (phase == bar::BPhase::Acquired) {
      w.substate = kSubParked;
      park();
      return false;
    }
    auto res = issue_meta();
    if (J.barrier.phase(r) == bar::BPhase::Phase1) {
      phase = J.barrier.harvest(r);  // catch an instantly-completed meta
      if (phase == bar::BPhase::Phase2 && J.world() == 1) {
        // Single-rank job: run the ack round at this same boundary.
        auto res2 = issue_meta();
        block_on(res2.key, kSubMetaWait, comm_is_dp(J.built.meta_comm_id()));
        return false;
      }
      internal_check(phase != bar::BPhase::Acquired, "async meta acquired early");
      advance();
      return true;
    }
    block_on(res.key, kSubMetaWait, comm_is_dp(J.built.meta_comm_id()));
    return false;
  }
  if (w.substate == kSubMetaWait) {
    auto phase = J.barrier.harvest(r);
    if (phase == bar::BPhase::Acquired) {
      w.substate = kSubParked;
      park();
      return false;
    }
    advance();  // keep running, in sync mode, into the next mini-batch
    return true;
  }
  internal_check(false, "boundary substate");
  return false;
}

bool WorkerExec::do_halt() {
  if (w.substate == kSubFresh) {
    // Settle the device, then run the job-end quiesce round.
    if (!w.stream_vh.empty())
      w.t = std::max(w.t, px.gpu().stream_tail(main_stream()));
    auto phase = J.barrier.harvest(r);
    if (phase == bar::BPhase::Acquired) {
      w.substate = kSubParked;
      park();
      return false;
    }
    J.barrier.mark_quiesce_issued(r);
    auto res = issue_meta();
    block_on(res.key, kSubMetaWait, comm_is_dp(J.built.meta_comm_id()));
    return false;
  }
  if (w.substate == kSubMetaWait) {
    auto phase = J.barrier.harvest(r);
    if (phase == bar::BPhase::Acquired) {
      w.substate = kSubParked;
      park();
      return false;
    }
    if (phase == bar::BPhase::Phase1 && !J.barrier.got_command(r)) {
      finish();
      return false;
    }
    w.substate = kSubFresh;  // protocol in flight: another quiesce round
    return true;
  }
  internal_check(false, "halt substate");
  return false;
}

bool WorkerExec::step() {
  internal_check(w.pc < code.size(), "pc out of range");
  const Instr& ins = code[w.pc];
  switch (ins.op) {
    case Op::HostPrep:
      w.t += ins.a;
      advance();
      return true;
    case Op::HostAlloc: {
      std::vector<u64> words(static_cast<size_t>(ins.b), 0);
      if (ins.c == 1)
        for (size_t i = 0; i < words.size(); ++i)
          words[i] = sim::mix2(J.built.spec.seed ^ 0x64617461ull, i);
      w.host[static_cast<int>(ins.a)] = std::move(words);
      advance();
      return true;
    }
    case Op::HostNote: {
      auto& dst = w.host.at(static_cast<int>(ins.b));
      dst[static_cast<u64>(ins.c) % dst.size()] = w.host.at(static_cast<int>(ins.a))[0];
      advance();
      return true;
    }
    case Op::HostWriteFile: {
      u64 loss = 0;
      if (auto it = w.host.find(wl::kHostLossOut); it != w.host.end())
        loss = it->second[0];
      std::string path = wl::file_path(static_cast<int>(ins.a), r, ins.b);
      auto content = wl::file_content(static_cast<int>(ins.a), J.built.spec, r, ins.b,
                                      loss);
      w.files[path] = content;
      if (std::find(w.mutated_files.begin(), w.mutated_files.end(), path) ==
          w.mutated_files.end())
        w.mutated_files.push_back(path);
      w.deleted_files.erase(path);
      if (J.trace.dispatch_records()) {
        Json j;
        j["job"] = J.job_id;
        j["rank"] = r;
        j["path"] = path;
        J.trace.emit(w.t, "file_write", j);
      }
      advance();
      return true;
    }
    case Op::HostDeleteFile: {
      std::string path = wl::file_path(static_cast<int>(ins.a), r, ins.b);
      w.files.erase(path);
      if (std::find(w.mutated_files.begin(), w.mutated_files.end(), path) !=
          w.mutated_files.end())
        w.deleted_files.insert(path);
      advance();
      return true;
    }
    case Op::SeedInput:
      w.input_seed = w.rng.next();
      advance();
      return true;
    case Op::AllocDev:
      return do_alloc(ins);
    case Op::FreeDev: {
      dispatch_prelude("free");
      int slot = static_cast<int>(ins.a);
      auto& d = w.dev.at(slot);
      internal_check(d.live, "free of dead slot");
      px.ledger().on_free(r, slot);
      px.gpu().release_buffer(d.addr);
      px.allocator(r).free(d.addr);
      d.live = false;
      trace_dispatch("free");
      advance();
      return true;
    }
    case Op::CreateStream: {
      dispatch_prelude("create_stream");
      u64 vid = w.next_vh++;
      px.create_stream(r, vid);
      w.stream_vh[static_cast<int>(ins.a)] = vid;
      w.t += J.cost.dispatch_latency;
      trace_dispatch("create_stream");
      advance();
      return true;
    }
    case Op::Launch:
      return do_launch(ins);
    case Op::CopyD2H: {
      dispatch_prelude("copy_d2h");
      auto range = range_of(static_cast<int>(ins.a));
      auto& dst = w.host.at(static_cast<int>(ins.b));
      auto sp = px.gpu().words(range);
      internal_check(sp.size() == dst.size(), "copy_d2h size mismatch");
      std::copy(sp.begin(), sp.end(), dst.begin());
      Time done = px.gpu().stream_op(main_stream(), w.t,
                                     J.cost.transfer_time(range.bytes,
                                                          sim::Channel::D2H));
      w.t = done;
      if (w.in_window && px.sharing() > 1) {
        auto wit = px.windows.find(w.cur_mb);
        if (wit != px.windows.end() && wit->second.validation)
          wit->second.records[r].d2h_copies.push_back(
              {range.bytes, sim::digest_of_words(sp)});
      }
      trace_dispatch("copy_d2h", static_cast<i64>(range.bytes));
      advance();
      return true;
    }
    case Op::CopyH2D: {
      dispatch_prelude("copy_h2d");
      const auto& src = w.host.at(static_cast<int>(ins.a));
      auto range = range_of(static_cast<int>(ins.b));
      internal_check(src.size() * 8 == range.bytes, "copy_h2d size mismatch");
      px.gpu().write_words(range, src);
      Time done = px.gpu().stream_op(main_stream(), w.t,
                                     J.cost.transfer_time(range.bytes,
                                                          sim::Channel::H2D));
      w.t = done;
      trace_dispatch("copy_h2d", static_cast<i64>(range.bytes));
      advance();
      return true;
    }
    case Op::CommInit:
      return do_comm_init(ins);
    case Op::Collective:
      return do_collective(ins);
    case Op::WaitHandles:
      return do_wait_handles(ins);
    case Op::WindowOpen:
      return do_window_open();
    case Op::WindowClose:
      return do_window_close();
    case Op::MinibatchEnd:
      return do_boundary(ins);
    case Op::PhaseMark:
      w.cur_mb = static_cast<int>(ins.a);
      w.phase = static_cast<prog::Phase>(ins.b);
      advance();
      return true;
    case Op::Halt:
      return do_halt();
  }
  internal_check(false, "unknown instruction");
  return false;
}

void JobRuntime::interpret(RankId r) {
  WorkerExec ex(*this, r);
  while (workers[r].state == WState::Running) {
    if (!ex.step()) break;
  }
}

void JobRuntime::run_worker(RankId r) {
  auto& w = workers[r];
  w.run_scheduled = false;
  if (failed_flag || w.state == WState::Finished || w.state == WState::Failed ||
      w.state == WState::Parked)
    return;
  internal_check(proxy_of(r).active() == r, "run_worker on inactive rank");
  w.t = std::max(w.t, w.resume_floor);
  w.state = WState::Running;
  try {
    interpret(r);
  } catch (const SimFault& f) {
    fail_job(r, f.what());
  }
}

}  // namespace fleetsim::job
