#include "fleetsim/ckpt.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <set>

namespace fleetsim::ckpt {

using job::JobRuntime;
using job::WorkerState;

// ---------------------------------------------------------------------------
// BlobStore

BlobStore::PutResult BlobStore::put(std::span<const u64> words) {
  sim::Digest d = sim::digest_of_words(words);
  auto [it, fresh] = blobs_.try_emplace(d.value, words.begin(), words.end());
  if (fresh) total_bytes_ += words.size() * 8;
  return {d, fresh};
}

const std::vector<u64>& BlobStore::get(sim::Digest d) const {
  auto it = blobs_.find(d.value);
  if (it == blobs_.end()) throw SimFault("blob store: missing blob");
  if (!(sim::digest_of_words(it->second) == d))
    throw SimFault("blob store: digest verification failed");
  return it->second;
}

void BlobStore::release(sim::Digest d) {
  auto it = refs_.find(d.value);
  if (it != refs_.end() && --it->second <= 0) refs_.erase(it);
}

std::string BlobStore::blob_rel_path(sim::Digest d) {
  char buf[32];
  snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(d.value));
  std::string hex(buf);
  return "blobs/" + hex.substr(0, 2) + "/" + hex;
}

void BlobStore::persist(const std::string& dir) const {
  namespace fs = std::filesystem;
  for (const auto& [dv, words] : blobs_) {
    fs::path p = fs::path(dir) / blob_rel_path(sim::Digest{dv});
    fs::create_directories(p.parent_path());
    std::ofstream out(p, std::ios::binary);
    out.write(reinterpret_cast<const char*>(words.data()),
              static_cast<std::streamsize>(words.size() * 8));
  }
}

// ---------------------------------------------------------------------------
// Manifest build

namespace {

std::vector<u64> paged_host_words(const WorkerState& w,
                                  std::vector<std::pair<int, u64>>* layout) {
  std::vector<u64> all;
  for (const auto& [slot, words] : w.host) {
    if (layout) layout->push_back({slot, words.size()});
    all.insert(all.end(), words.begin(), words.end());
  }
  while (all.size() % kPageWords != 0) all.push_back(0);
  return all;
}

}  // namespace

void track_file_write(job::WorkerState& w, const std::string& path) {
  if (std::find(w.mutated_files.begin(), w.mutated_files.end(), path) ==
      w.mutated_files.end())
    w.mutated_files.push_back(path);
  w.deleted_files.erase(path);
}

Manifest build_manifest(JobRuntime& J, BlobStore& store, const Manifest* prev,
                        const std::string& kind, int index) {
  internal_check(J.barrier.all_acquired(), "manifest requires an acquired barrier");
  Manifest m;
  m.job_id = J.job_id;
  m.job_name = J.built.spec.name;
  m.kind = kind;
  m.index = index;
  m.taken_at = J.eng.now();
  m.spec = J.built.spec;
  m.program_hash = J.built.program_hash;

  // Previous checkpoint's page sets per rank, for temporal dedup accounting.
  std::map<RankId, std::set<u64>> prev_pages;
  if (prev)
    for (const auto& ws : prev->workers)
      for (u64 p : ws.pages) prev_pages[ws.rank].insert(p);

  std::set<u64> unique_device;                 // digest values
  std::map<u64, u64> device_blob_bytes;        // digest -> bytes
  std::map<GpuKey, u64> dump_bytes;            // per-GPU d2h reads
  int min_step = INT32_MAX;

  for (auto& [g, px] : J.proxies) px->ledger().refresh_digests(px->active());

  for (RankId r = 0; r < J.world(); ++r) {
    const WorkerState& w = J.workers[r];
    internal_check(w.state == job::WState::Parked || w.state == job::WState::Finished,
                   "checkpoint of a non-quiesced worker");
    auto& px = J.proxy_of(r);
    WorkerSnapshot ws;
    ws.rank = r;
    ws.pc = w.pc;
    ws.step = w.step;
    ws.phase = static_cast<int>(w.phase);
    ws.substate = w.substate;
    ws.rng_state = w.rng.state();
    ws.input_seed = w.input_seed;
    ws.next_vh = w.next_vh;
    ws.last_error_cache = w.last_error_cache;
    ws.stable_allocs = w.stable_allocs;
    min_step = std::min(min_step, w.step);

    auto all = paged_host_words(w, &ws.host_bufs);
    for (size_t off = 0; off < all.size(); off += kPageWords) {
      auto res = store.put(std::span<const u64>(all.data() + off, kPageWords));
      ws.pages.push_back(res.digest.value);
      m.s_cr += kPageWords * 8;
      if (res.fresh) m.upload_bytes += kPageWords * 8;
      if (!prev || !prev_pages[r].count(res.digest.value))
        m.s_cr_inc += kPageWords * 8;
    }

    for (const auto& path : w.mutated_files) {
      WorkerSnapshot::FileRec f;
      f.path = path;
      if (w.deleted_files.count(path)) {
        f.deleted = true;
      } else {
        const auto& content = w.files.at(path);
        auto res = store.put(content);
        f.digest = res.digest.value;
        f.words = content.size();
        if (res.fresh) m.upload_bytes += content.size() * 8;
      }
      ws.files.push_back(std::move(f));
    }

    for (const auto& [slot, b] : px.ledger().bufs(r)) {
      if (!b.live) continue;
      internal_check(!b.pending_result, "checkpoint with a pending collective result");
      WorkerSnapshot::DevRec d;
      d.slot = slot;
      d.addr = b.addr;
      d.words = b.bytes / 8;
      d.cat = static_cast<int>(b.cat);
      d.digest = b.digest.value;
      ws.dev.push_back(d);
      if (unique_device.insert(b.digest.value).second) {
        device_blob_bytes[b.digest.value] = b.bytes;
        m.s_g += b.bytes;
        bool on_device = px.ledger().digest_on_device(b.digest, b.bytes);
        auto content = px.ledger().content_of(r, slot);
        auto res = store.put(content);
        internal_check(res.digest == b.digest, "ledger digest mismatch at dump");
        if (res.fresh) m.upload_bytes += b.bytes;
        if (on_device) dump_bytes[px.key()] += b.bytes;
      }
    }

    for (const auto& [hslot, h] : w.handles)
      ws.handles.push_back({hslot, h.comm_id, h.seq, h.completed});
    ws.stream_vh = w.stream_vh;
    ws.comm_vh = w.comm_vh;
    ws.comm_of_slot = w.comm_of_slot;
    ws.barrier_phase = static_cast<int>(J.barrier.phase(r));
    ws.got_command = J.barrier.got_command(r);
    ws.comm_seq = J.comms.seq_snapshot(r);
    ws.alloc = px.allocator(r).snapshot();
    ws.replay = px.replay_log_for(r);
    m.workers.push_back(std::move(ws));
  }
  m.step = min_step;
  for (const auto& [d, b] : device_blob_bytes) m.device_blobs.push_back({d, b});
  for (const auto& [g, b] : dump_bytes) m.dump_d2h_max = std::max(m.dump_d2h_max, b);
  m.total_blob_bytes = m.s_g + m.s_cr;
  for (const auto& ws : m.workers)
    for (const auto& f : ws.files)
      if (!f.deleted) m.total_blob_bytes += f.words * 8;
  return m;
}

// ---------------------------------------------------------------------------
// Manifest serialization (stable field order)

Json Manifest::to_json() const {
  Json j;
  j["version"] = version;
  j["job_id"] = job_id;
  j["job_name"] = job_name;
  j["ckpt_kind"] = kind;
  j["index"] = index;
  j["taken_at"] = taken_at;
  j["step"] = step;
  j["spec"] = wl::spec_to_json(spec);
  j["program_hash"] = program_hash;
  j["sizes"] = {{"s_g", s_g},
                {"s_cr", s_cr},
                {"s_cr_inc", s_cr_inc},
                {"upload_bytes", upload_bytes},
                {"dump_d2h_max", dump_d2h_max},
                {"total_blob_bytes", total_blob_bytes}};
  Json blobs = Json::array();
  for (auto [d, b] : device_blobs) blobs.push_back({d, b});
  j["device_blobs"] = blobs;
  Json out = Json::array();
  for (const auto& ws : workers) {
    Json w;
    w["rank"] = ws.rank;
    w["pc"] = ws.pc;
    w["step"] = ws.step;
    w["phase"] = ws.phase;
    w["substate"] = ws.substate;
    w["rng"] = ws.rng_state;
    w["input_seed"] = ws.input_seed;
    w["next_vh"] = ws.next_vh;
    w["last_error"] = ws.last_error_cache;
    w["stable_allocs"] = ws.stable_allocs;
    Json hb = Json::array();
    for (auto [s, n] : ws.host_bufs) hb.push_back({s, n});
    w["host_bufs"] = hb;
    w["pages"] = ws.pages;
    Json files = Json::array();
    for (const auto& f : ws.files)
      files.push_back({{"path", f.path},
                       {"deleted", f.deleted},
                       {"digest", f.digest},
                       {"words", f.words}});
    w["files"] = files;
    Json dev = Json::array();
    for (const auto& d : ws.dev)
      dev.push_back({{"slot", d.slot},
                     {"addr", d.addr},
                     {"words", d.words},
                     {"cat", d.cat},
                     {"digest", d.digest}});
    w["dev"] = dev;
    Json hs = Json::array();
    for (const auto& h : ws.handles)
      hs.push_back({{"slot", h.slot},
                    {"comm", h.comm_id},
                    {"seq", h.seq},
                    {"completed", h.completed}});
    w["handles"] = hs;
    Json svh = Json::object(), cvh = Json::object(), cos = Json::object(),
         cseq = Json::object();
    for (auto [k, v] : ws.stream_vh) svh[std::to_string(k)] = v;
    for (auto [k, v] : ws.comm_vh) cvh[std::to_string(k)] = v;
    for (auto [k, v] : ws.comm_of_slot) cos[std::to_string(k)] = v;
    for (auto [k, v] : ws.comm_seq) cseq[std::to_string(k)] = v;
    w["stream_vh"] = svh;
    w["comm_vh"] = cvh;
    w["comm_of_slot"] = cos;
    w["comm_seq"] = cseq;
    w["barrier_phase"] = ws.barrier_phase;
    w["got_command"] = ws.got_command;
    Json al;
    al["transient_cursor"] = ws.alloc.transient_cursor;
    al["stable_cursor"] = ws.alloc.stable_cursor;
    Json fl = Json::array(), fh = Json::array(), lv = Json::array();
    for (auto [a, b] : ws.alloc.free_low) fl.push_back({a, b});
    for (auto [a, b] : ws.alloc.free_high) fh.push_back({a, b});
    for (auto [a, b, st] : ws.alloc.live) lv.push_back({a, b, st});
    al["free_low"] = fl;
    al["free_high"] = fh;
    al["live"] = lv;
    w["alloc"] = al;
    Json rp = Json::array();
    for (const auto& e : ws.replay)
      rp.push_back({static_cast<int>(e.call), e.rank, e.vhandle, e.arg});
    w["replay"] = rp;
    out.push_back(std::move(w));
  }
  j["workers"] = out;
  return j;
}

Manifest Manifest::from_json(const Json& j) {
  Manifest m;
  if (j.at("version").get<int>() != 1) throw ConfigError("manifest: unknown version");
  m.job_id = j.at("job_id").get<int>();
  m.job_name = j.at("job_name").get<std::string>();
  m.kind = j.at("ckpt_kind").get<std::string>();
  m.index = j.at("index").get<int>();
  m.taken_at = j.at("taken_at").get<Time>();
  m.step = j.at("step").get<int>();
  m.spec = wl::spec_from_json(j.at("spec"));
  m.program_hash = j.at("program_hash").get<u64>();
  const auto& sz = j.at("sizes");
  m.s_g = sz.at("s_g").get<u64>();
  m.s_cr = sz.at("s_cr").get<u64>();
  m.s_cr_inc = sz.at("s_cr_inc").get<u64>();
  m.upload_bytes = sz.at("upload_bytes").get<u64>();
  m.dump_d2h_max = sz.at("dump_d2h_max").get<u64>();
  m.total_blob_bytes = sz.at("total_blob_bytes").get<u64>();
  for (const auto& b : j.at("device_blobs"))
    m.device_blobs.push_back({b.at(0).get<u64>(), b.at(1).get<u64>()});
  for (const auto& w : j.at("workers")) {
    WorkerSnapshot ws;
    ws.rank = w.at("rank").get<int>();
    ws.pc = w.at("pc").get<u64>();
    ws.step = w.at("step").get<int>();
    ws.phase = w.at("phase").get<int>();
    ws.substate = w.at("substate").get<int>();
    ws.rng_state = w.at("rng").get<u64>();
    ws.input_seed = w.at("input_seed").get<u64>();
    ws.next_vh = w.at("next_vh").get<u64>();
    ws.last_error_cache = w.at("last_error").get<u64>();
    ws.stable_allocs = w.at("stable_allocs").get<int>();
    for (const auto& hb : w.at("host_bufs"))
      ws.host_bufs.push_back({hb.at(0).get<int>(), hb.at(1).get<u64>()});
    for (const auto& p : w.at("pages")) ws.pages.push_back(p.get<u64>());
    for (const auto& f : w.at("files"))
      ws.files.push_back({f.at("path").get<std::string>(), f.at("deleted").get<bool>(),
                          f.at("digest").get<u64>(), f.at("words").get<u64>()});
    for (const auto& d : w.at("dev"))
      ws.dev.push_back({d.at("slot").get<int>(), d.at("addr").get<u64>(),
                        d.at("words").get<u64>(), d.at("cat").get<int>(),
                        d.at("digest").get<u64>()});
    for (const auto& h : w.at("handles"))
      ws.handles.push_back({h.at("slot").get<int>(), h.at("comm").get<int>(),
                            h.at("seq").get<u64>(), h.at("completed").get<bool>()});
    for (const auto& [k, v] : w.at("stream_vh").items())
      ws.stream_vh[std::stoi(k)] = v.get<u64>();
    for (const auto& [k, v] : w.at("comm_vh").items())
      ws.comm_vh[std::stoi(k)] = v.get<u64>();
    for (const auto& [k, v] : w.at("comm_of_slot").items())
      ws.comm_of_slot[std::stoi(k)] = v.get<int>();
    for (const auto& [k, v] : w.at("comm_seq").items())
      ws.comm_seq[std::stoi(k)] = v.get<u64>();
    ws.barrier_phase = w.at("barrier_phase").get<int>();
    ws.got_command = w.at("got_command").get<bool>();
    const auto& al = w.at("alloc");
    ws.alloc.transient_cursor = al.at("transient_cursor").get<u64>();
    ws.alloc.stable_cursor = al.at("stable_cursor").get<u64>();
    for (const auto& e : al.at("free_low"))
      ws.alloc.free_low.push_back({e.at(0).get<u64>(), e.at(1).get<u64>()});
    for (const auto& e : al.at("free_high"))
      ws.alloc.free_high.push_back({e.at(0).get<u64>(), e.at(1).get<u64>()});
    for (const auto& e : al.at("live"))
      ws.alloc.live.push_back(
          {e.at(0).get<u64>(), e.at(1).get<u64>(), e.at(2).get<int>()});
    for (const auto& e : w.at("replay"))
      ws.replay.push_back({static_cast<proxy::ReplayEntry::Call>(e.at(0).get<int>()),
                           e.at(1).get<int>(), e.at(2).get<u64>(), e.at(3).get<i64>()});
    m.workers.push_back(std::move(ws));
  }
  return m;
}

Json LatencyBreakdown::to_json() const {
  Json j;
  j["barrier"] = barrier;
  j["dump"] = dump;
  j["upload"] = upload;
  j["download"] = download;
  j["restore"] = restore;
  j["rendezvous"] = rendezvous;
  j["total"] = total();
  return j;
}

LatencyBreakdown migration_latency(const Manifest& m, const sim::CostModel& cost,
                                   const std::map<RankId, GpuKey>& placement,
                                   Dur measured_barrier_wait) {
  LatencyBreakdown b;
  b.barrier = measured_barrier_wait;
  b.dump = cost.transfer_time(m.dump_d2h_max, sim::Channel::D2H);
  b.upload = cost.transfer_time(m.upload_bytes, sim::Channel::Store);
  b.download = cost.transfer_time(m.total_blob_bytes, sim::Channel::Store);

  // Restore: the first resident of each target GPU materializes on device.
  std::map<GpuKey, std::vector<RankId>> residents;
  for (const auto& [r, g] : placement) residents[g].push_back(r);
  u64 h2d_max = 0;
  u64 replay_max = 0;
  for (const auto& [g, rs] : residents) {
    RankId first = *std::min_element(rs.begin(), rs.end());
    u64 bytes = 0;
    for (const auto& ws : m.workers)
      if (ws.rank == first)
        for (const auto& d : ws.dev) bytes += d.words * 8;
    h2d_max = std::max(h2d_max, bytes);
    u64 entries = 0;
    for (const auto& ws : m.workers)
      if (std::find(rs.begin(), rs.end(), ws.rank) != rs.end())
        entries += ws.replay.size();
    replay_max = std::max(replay_max, entries);
  }
  b.restore = cost.transfer_time(h2d_max, sim::Channel::H2D) +
              static_cast<Dur>(replay_max) * cost.dispatch_latency;
  b.rendezvous = 2 * cost.net_latency;
  return b;
}

// ---------------------------------------------------------------------------
// Restore

std::unique_ptr<JobRuntime> restore_job(sim::Engine& eng, const sim::CostModel& cost,
                                        TraceSink& trace, BlobStore& store,
                                        const Manifest& m,
                                        const std::map<RankId, GpuKey>& placement,
                                        u64 gpu_mem_bytes, job::JobConfig cfg,
                                        std::vector<Dur> oracle_mb) {
  auto built = wl::build_job(m.spec);
  if (built.program_hash != m.program_hash)
    throw SimFault("restore: program hash mismatch");
  auto J = std::make_unique<JobRuntime>(eng, cost, trace, m.job_id, std::move(built),
                                        cfg, std::move(oracle_mb));
  internal_check(placement.size() == static_cast<size_t>(J->world()),
                 "restore: placement must cover every rank");
  J->placement = placement;
  J->comms.set_placement(placement);

  std::map<GpuKey, std::vector<RankId>> residents;
  for (const auto& [r, g] : placement) residents[g].push_back(r);
  for (auto& [g, rs] : residents)
    std::sort(rs.begin(), rs.end(), [&](RankId a, RankId b) {
      return J->built.topo.coords[a].dp < J->built.topo.coords[b].dp;
    });

  u64 max_buf = 256;
  for (RankId r = 0; r < J->world(); ++r)
    max_buf = std::max(max_buf,
                       J->built.stable_bytes[r] + J->built.peak_transient_bytes[r]);
  auto layout = splice::DeviceLayout::carve(gpu_mem_bytes, max_buf, cfg.slack_fraction);

  for (auto& [g, rs] : residents) {
    auto px = std::make_unique<proxy::ProxyServer>(eng, cost, trace, m.job_id, g,
                                                   gpu_mem_bytes, layout);
    for (RankId r : rs) {
      const auto& c0 = J->built.topo.coords[rs.front()];
      const auto& c = J->built.topo.coords[r];
      if (c.tp != c0.tp || c.pp != c0.pp || c.shard != c0.shard)
        throw SimFault("restore placement violates splicing-aware constraint");
      if (J->built.stable_bytes[r] + J->built.peak_transient_bytes[r] >
          layout.rank_region_end)
        throw SimFault("restore: capacity insufficient for requested slicing");
      px->register_rank(r);
    }
    J->proxies[g] = std::move(px);
  }

  for (const auto& ws : m.workers) {
    RankId r = ws.rank;
    auto& w = J->workers[r];
    auto& px = J->proxy_of(r);
    w.pc = ws.pc;
    w.step = ws.step;
    w.cur_mb = ws.step;
    w.phase = static_cast<prog::Phase>(ws.phase);
    w.substate = ws.substate;
    w.rng.set_state(ws.rng_state);
    w.input_seed = ws.input_seed;
    w.next_vh = ws.next_vh;
    w.last_error_cache = ws.last_error_cache;
    w.stable_allocs = ws.stable_allocs;
    w.state = job::WState::Parked;
    w.t = eng.now();

    // Host buffers from pages.
    std::vector<u64> all;
    for (u64 pd : ws.pages) {
      const auto& page = store.get(sim::Digest{pd});
      all.insert(all.end(), page.begin(), page.end());
    }
    size_t off = 0;
    for (auto [slot, words] : ws.host_bufs) {
      internal_check(off + words <= all.size(), "restore: host pages short");
      w.host[slot] = std::vector<u64>(all.begin() + off, all.begin() + off + words);
      off += words;
    }

    for (const auto& f : ws.files) {
      track_file_write(w, f.path);
      if (f.deleted) {
        w.files.erase(f.path);
        w.deleted_files.insert(f.path);
      } else {
        w.files[f.path] = store.get(sim::Digest{f.digest});
      }
    }

    for (const auto& h : ws.handles)
      w.handles[h.slot] = {h.comm_id, h.seq, h.completed, 0};
    w.stream_vh = ws.stream_vh;
    w.comm_vh = ws.comm_vh;
    w.comm_of_slot = ws.comm_of_slot;

    px.allocator(r).restore(ws.alloc);
    for (const auto& e : ws.replay) px.replay(e);
    J->comms.restore_seq(r, ws.comm_seq);
    J->barrier.restore_rank(r, static_cast<bar::BPhase>(ws.barrier_phase),
                            ws.got_command);

    for (const auto& d : ws.dev) {
      splice::RankBuf b;
      b.slot = d.slot;
      b.addr = d.addr;
      b.bytes = d.words * 8;
      b.cat = static_cast<vdev::BufCat>(d.cat);
      b.digest = sim::Digest{d.digest};
      b.live = true;
      px.ledger().restore_rank_buf(r, b);
      w.dev[d.slot] = {d.addr, d.words, b.cat, true};
    }
  }

  // Materialize device state: blobs land at the same addresses they had.
  for (auto& [g, px] : J->proxies) {
    RankId first = px->residents().front();
    for (const auto& ws : m.workers) {
      if (placement.at(ws.rank) != g) continue;
      for (const auto& d : ws.dev) {
        const auto& words = store.get(sim::Digest{d.digest});
        if (ws.rank == first) {
          px->gpu().write_words({d.addr, d.words * 8}, words);
        } else if (!px->ledger().host_cache_has(sim::Digest{d.digest})) {
          px->ledger().seed_host_cache(sim::Digest{d.digest}, words);
        }
      }
    }
    px->ledger().adopt_resident(first);
    px->ledger().refresh_digests(first);
  }

  J->comms.rendezvous(placement);
  internal_check(J->barrier.all_acquired(), "restore: barrier state incomplete");
  return J;
}

// ---------------------------------------------------------------------------
// CheckpointFlow

CheckpointFlow::CheckpointFlow(JobRuntime& J, BlobStore& store, TraceSink& trace)
    : J_(J), store_(store), trace_(trace) {}

void CheckpointFlow::start(const std::string& kind, bool hold_barrier,
                           std::optional<Manifest> prev, int index, DoneFn done) {
  Req req{kind, hold_barrier, std::move(prev), index, std::move(done)};
  if (busy_) {
    queue_.push_back(std::move(req));
    return;
  }
  busy_ = true;
  run_one(std::move(req));
}

void CheckpointFlow::run_one(Req req) {
  Time t0 = J_.eng.now();
  {
    Json j;
    j["job"] = J_.job_id;
    j["ckpt_kind"] = req.kind;
    j["index"] = req.index;
    trace_.emit(t0, "checkpoint_begin", j);
  }
  if (!J_.barrier.request(J_.cfg.barrier_targets)) {
    busy_ = false;
    req.done(std::nullopt, {});
    return;
  }
  auto shared = std::make_shared<Req>(std::move(req));
  J_.barrier.on_all_acquired = [this, shared, t0]() {
    Time t1 = J_.eng.now();
    // Safety: a consistent cut has no partially issued collectives.
    auto partial = J_.comms.partially_issued();
    internal_check(partial.empty(), "barrier acquired with in-flight collectives");
    {
      Json j;
      j["job"] = J_.job_id;
      j["in_flight"] = static_cast<int>(partial.size());
      trace_.emit(t1, "barrier_safety", j);
    }
    Manifest m = build_manifest(J_, store_, shared->prev ? &*shared->prev : nullptr,
                                shared->kind, shared->index);
    LatencyBreakdown lat = migration_latency(m, J_.cost, J_.placement, t1 - t0);
    Time ready = t1 + lat.dump + lat.upload;
    {
      Json j;
      j["job"] = J_.job_id;
      j["ckpt_kind"] = shared->kind;
      j["index"] = shared->index;
      j["step"] = m.step;
      j["s_g"] = m.s_g;
      j["s_cr"] = m.s_cr;
      j["s_cr_inc"] = m.s_cr_inc;
      j["upload_bytes"] = m.upload_bytes;
      j["barrier_wait"] = t1 - t0;
      j["ready_at"] = ready;
      trace_.emit(t1, "checkpoint_manifest", j);
    }
    J_.guarded(std::max<Dur>(0, ready - J_.eng.now()),
               [this, m = std::move(m), lat, shared]() mutable {
                 if (!shared->hold) {
                   J_.barrier.release();
                   J_.resume_from_release();
                 }
                 busy_ = false;
                 shared->done(std::move(m), lat);
                 if (!queue_.empty()) {
                   Req next = std::move(queue_.front());
                   queue_.erase(queue_.begin());
                   busy_ = true;
                   run_one(std::move(next));
                 }
               });
  };
}

}  // namespace fleetsim::ckpt
