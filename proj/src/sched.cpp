#include "fleetsim/sched.hpp"

#include <algorithm>
#include <set>

namespace fleetsim::sched {

const char* to_string(JobState s) {
  switch (s) {
    case JobState::Queued: return "queued";
    case JobState::Running: return "running";
    case JobState::Draining: return "draining";
    case JobState::Preempted: return "preempted";
    case JobState::Finished: return "finished";
    case JobState::Failed: return "failed";
  }
  return "?";
}

int FleetConfig::total_gpus() const {
  int n = 0;
  for (const auto& r : regions)
    for (const auto& c : r.clusters)
      for (const auto& nd : c.nodes) n += nd.gpus;
  return n;
}

Scheduler::Scheduler(sim::Engine& eng, const sim::CostModel& cost, TraceSink& trace,
                     ckpt::BlobStore& store, FleetConfig fleet, SlaTargets t)
    : targets(t), eng_(eng), cost_(cost), trace_(trace), store_(store),
      fleet_cfg_(std::move(fleet)) {
  int key = 0;
  for (size_t ri = 0; ri < fleet_cfg_.regions.size(); ++ri)
    for (size_t ci = 0; ci < fleet_cfg_.regions[ri].clusters.size(); ++ci) {
      const auto& cl = fleet_cfg_.regions[ri].clusters[ci];
      for (size_t ni = 0; ni < cl.nodes.size(); ++ni) {
        const auto& nd = cl.nodes[ni];
        if (nd.gpus <= 0) throw ConfigError("fleet: node with zero GPUs");
        for (int g = 0; g < nd.gpus; ++g) {
          GpuSlot s;
          s.key = key++;
          s.region = static_cast<int>(ri);
          s.cluster = static_cast<int>(ci);
          s.node = static_cast<int>(ni);
          s.mem_bytes = nd.mem_mib * (1ull << 20);
          gpus_.push_back(s);
        }
      }
    }
  if (gpus_.empty()) throw ConfigError("fleet: no GPUs");
}

void Scheduler::action_trace(const std::string& action, const JobRecord& j,
                             Json extra) {
  Json rec;
  rec["action"] = action;
  rec["job"] = j.id;
  rec["state"] = to_string(j.state);
  for (auto& [k, v] : extra.items()) rec[k] = v;
  trace_.emit(eng_.now(), "sched_action", rec);
}

int Scheduler::submit(const wl::JobSpec& spec, const job::JobConfig& cfg,
                      std::vector<Dur> oracle_mb) {
  auto j = std::make_unique<JobRecord>();
  j->id = next_id_++;
  j->spec = spec;
  j->built = wl::build_job(spec);
  j->cfg = cfg;
  j->oracle_mb = std::move(oracle_mb);
  j->ckpt_interval = cfg.checkpoint_interval;
  j->sla.tier = spec.tier;
  j->sla.submitted = eng_.now();
  j->max_slicing = spec.dp / spec.zero_shards;
  j->min_gpus = spec.world / j->max_slicing;

  int node_size = 0;
  for (const auto& g : gpus_) {
    int count = 0;
    for (const auto& h : gpus_)
      if (h.region == g.region && h.cluster == g.cluster && h.node == g.node) ++count;
    node_size = std::max(node_size, count);
  }
  j->single_node = spec.world <= node_size;

  int healthy = 0;
  for (const auto& g : gpus_)
    if (g.healthy) ++healthy;
  JobRecord& ref = *j;
  jobs_[ref.id] = std::move(j);
  {
    Json e;
    e["name"] = spec.name;
    e["tier"] = wl::to_string(spec.tier);
    e["world"] = spec.world;
    e["min_gpus"] = ref.min_gpus;
    action_trace("submit", ref, e);
  }
  if (ref.min_gpus > healthy) {
    ref.state = JobState::Failed;
    Json e;
    e["reason"] = "not shrinkable to available capacity";
    action_trace("reject", ref, e);
    return ref.id;
  }
  if (!tick_scheduled_) {
    tick_scheduled_ = true;
    eng_.schedule(kHourNs, [this]() { hourly_tick(); });
  }
  plan("arrival");
  return ref.id;
}

std::vector<GpuKey> Scheduler::free_keys(const std::set<GpuKey>& exclude) const {
  std::vector<GpuKey> out;
  for (const auto& g : gpus_)
    if (g.healthy && g.job < 0 && !exclude.count(g.key)) out.push_back(g.key);
  return out;
}

std::optional<std::map<RankId, GpuKey>> Scheduler::find_placement(
    JobRecord& j, int slicing, const std::set<GpuKey>& exclude) {
  int dpg = j.spec.dp / j.spec.zero_shards;
  if (slicing <= 0 || dpg % slicing != 0) return std::nullopt;
  int need = j.spec.world / slicing;
  auto free = free_keys(exclude);
  if (static_cast<int>(free.size()) < need) return std::nullopt;

  std::vector<GpuKey> chosen;
  auto in_same = [&](GpuKey a, GpuKey b, bool node_level) {
    const auto& ga = gpus_[a];
    const auto& gb = gpus_[b];
    if (ga.region != gb.region || ga.cluster != gb.cluster) return false;
    return !node_level || ga.node == gb.node;
  };
  if (j.single_node) {
    for (GpuKey anchor : free) {
      std::vector<GpuKey> local;
      for (GpuKey k : free)
        if (in_same(anchor, k, true)) local.push_back(k);
      if (static_cast<int>(local.size()) >= need) {
        chosen.assign(local.begin(), local.begin() + need);
        break;
      }
    }
    if (chosen.empty()) return std::nullopt;
  } else {
    for (GpuKey anchor : free) {
      std::vector<GpuKey> local;
      for (GpuKey k : free)
        if (in_same(anchor, k, false)) local.push_back(k);
      if (static_cast<int>(local.size()) >= need) {
        chosen.assign(local.begin(), local.begin() + need);
        break;
      }
    }
    if (chosen.empty()) chosen.assign(free.begin(), free.begin() + need);
  }

  // Splicing-aware assignment: chunks of `slicing` replicas of one
  // (tp, pp, shard) coordinate per device, in dp order.
  std::map<std::tuple<int, int, int>, std::vector<RankId>> groups;
  for (RankId r = 0; r < j.spec.world; ++r) {
    const auto& c = j.built.topo.coords[r];
    groups[{c.pp, c.tp, c.shard}].push_back(r);
  }
  std::map<RankId, GpuKey> placement;
  size_t gi = 0;
  for (auto& [key, ranks] : groups) {
    std::sort(ranks.begin(), ranks.end(), [&](RankId a, RankId b) {
      return j.built.topo.coords[a].dp < j.built.topo.coords[b].dp;
    });
    for (size_t i = 0; i < ranks.size(); i += slicing) {
      internal_check(gi < chosen.size(), "placement arithmetic");
      for (int k = 0; k < slicing; ++k) placement[ranks[i + k]] = chosen[gi];
      ++gi;
    }
  }
  internal_check(gi == chosen.size(), "placement arithmetic");
  return placement;
}

void Scheduler::wire_runtime(JobRecord& j) {
  auto& J = *j.runtime;
  int id = j.id;
  J.on_minibatch = [this, id](int mb) { account_minibatch(*jobs_.at(id), mb); };
  J.on_complete = [this, id]() {
    auto& j = *jobs_.at(id);
    j.finals = j.runtime->finals;
    j.state = JobState::Finished;
    j.sla.completed = eng_.now();
    free_gpus(j);
    j.flow.reset();
    j.runtime->teardown();
    action_trace("complete", j, Json::object());
    plan("completion");
  };
  J.on_fail = [this, id](const std::string& reason) {
    handle_failure(*jobs_.at(id), reason);
  };
  J.on_monitor_disable = [this, id](double overhead) {
    auto& j = *jobs_.at(id);
    Json e;
    e["overhead"] = overhead;
    action_trace("monitor_disable_time_slicing", j, e);
    if (j.cfg.monitor_autoscale && j.state == JobState::Running && j.slicing > 1)
      resize(id, 1);
  };
}

void Scheduler::launch(JobRecord& j, const std::map<RankId, GpuKey>& placement,
                       int slicing, bool restored, Dur start_delay) {
  u64 mem = gpu_mem(placement.begin()->second);
  if (restored) {
    internal_check(j.last_manifest.has_value(), "restore without manifest");
    j.runtime = ckpt::restore_job(eng_, cost_, trace_, store_, *j.last_manifest,
                                  placement, mem, j.cfg, j.oracle_mb);
    wire_runtime(j);
    auto* J = j.runtime.get();
    J->guarded(start_delay, [J]() {
      J->barrier.release();
      J->resume_from_release();
    });
  } else {
    j.runtime = std::make_unique<job::JobRuntime>(eng_, cost_, trace_, j.id, j.built,
                                                  j.cfg, j.oracle_mb);
    wire_runtime(j);
    j.runtime->start(placement, mem);
  }
  j.flow = std::make_unique<ckpt::CheckpointFlow>(*j.runtime, store_, trace_);
  j.placement = placement;
  j.slicing = slicing;
  j.state = JobState::Running;
  for (const auto& [r, g] : placement) gpus_[g].job = j.id;
  Json e;
  e["slicing"] = slicing;
  e["gpus"] = static_cast<int>(j.spec.world / slicing);
  e["restored"] = restored;
  Json pl = Json::array();
  for (const auto& [r, g] : placement) pl.push_back({r, g});
  e["placement"] = pl;
  action_trace(restored ? "restore" : "place", j, e);
  start_periodic(j);
}

bool Scheduler::try_place(JobRecord& j, const std::set<GpuKey>& exclude) {
  int dpg = j.spec.dp / j.spec.zero_shards;
  for (int n = 1; n <= dpg; ++n) {
    if (dpg % n != 0) continue;
    auto placement = find_placement(j, n, exclude);
    if (!placement) continue;
    bool restored = j.last_manifest.has_value();
    Dur delay = 0;
    if (restored) {
      auto lat = ckpt::migration_latency(*j.last_manifest, cost_, *placement, 0);
      delay = lat.download + lat.restore + lat.rendezvous;
    }
    try {
      launch(j, *placement, n, restored, delay);
      if (restored) {
        Json e = ckpt::migration_latency(*j.last_manifest, cost_, *placement, 0)
                     .to_json();
        e["slicing"] = n;
        action_trace("restore_latency", j, e);
      }
      return true;
    } catch (const SimFault& f) {
      // Capacity or constraint failure at this slicing; try the next degree.
      j.flow.reset();
      if (j.runtime) j.runtime->teardown();
      j.runtime.reset();
      for (const auto& [r, g] : *placement)
        if (gpus_[g].job == j.id) gpus_[g].job = -1;
      Json e;
      e["slicing"] = n;
      e["reason"] = f.what();
      action_trace("place_failed", j, e);
    }
  }
  return false;
}

void Scheduler::free_gpus(JobRecord& j) {
  for (const auto& [r, g] : j.placement)
    if (gpus_[g].job == j.id) gpus_[g].job = -1;
  j.placement.clear();
}

void Scheduler::start_periodic(JobRecord& j) {
  if (j.ckpt_interval <= 0 || !j.runtime) return;
  int id = j.id;
  j.runtime->guarded(j.ckpt_interval, [this, id]() {
    auto it = jobs_.find(id);
    if (it == jobs_.end()) return;
    auto& j = *it->second;
    if (j.state != JobState::Running || !j.flow || j.flow->busy()) {
      start_periodic(j);
      return;
    }
    j.flow->start("periodic", false, j.last_manifest, j.ckpt_count,
                  [this, id](std::optional<ckpt::Manifest> m,
                             ckpt::LatencyBreakdown) {
                    auto it = jobs_.find(id);
                    if (it == jobs_.end()) return;
                    auto& j = *it->second;
                    if (m) {
                      j.last_manifest = std::move(m);
                      ++j.ckpt_count;
                    }
                    start_periodic(j);
                  });
  });
}

void Scheduler::request_checkpoint(int job_id) {
  auto& j = rec(job_id);
  if (j.state != JobState::Running || !j.flow) {
    Json e;
    e["reason"] = "job not running";
    action_trace("checkpoint_skipped", j, e);
    return;
  }
  j.flow->start("on_demand", false, j.last_manifest, j.ckpt_count,
                [this, job_id](std::optional<ckpt::Manifest> m,
                               ckpt::LatencyBreakdown) {
                  auto& j = rec(job_id);
                  if (m) {
                    j.last_manifest = std::move(m);
                    ++j.ckpt_count;
                  }
                });
}

void Scheduler::request_barrier_probe(int job_id,
                                      const std::vector<RankId>& targets_in) {
  auto& j = rec(job_id);
  if (j.state != JobState::Running || !j.runtime) return;
  auto targets = targets_in;
  if (targets.empty()) targets = j.cfg.barrier_targets;
  auto* J = j.runtime.get();
  if (!J->barrier.request(targets)) return;
  J->barrier.on_all_acquired = [this, job_id]() {
    auto& j = rec(job_id);
    auto* J = j.runtime.get();
    internal_check(J->comms.partially_issued().empty(),
                   "barrier acquired with in-flight collectives");
    Json e;
    e["acquired_at"] = J->barrier.acquired_at();
    action_trace("barrier_probe_acquired", j, e);
    J->barrier.release();
    J->resume_from_release();
  };
}

void Scheduler::do_preempt(JobRecord& j, bool then_requeue) {
  if (j.state != JobState::Running || !j.flow) return;
  j.state = JobState::Draining;
  action_trace("preempt_begin", j, Json::object());
  int id = j.id;
  j.flow->start("on_demand", true, j.last_manifest, j.ckpt_count,
                [this, id, then_requeue](std::optional<ckpt::Manifest> m,
                                         ckpt::LatencyBreakdown lat) {
                  auto& j = rec(id);
                  if (!m) {
                    // Job was completing; preemption is moot.
                    if (j.state == JobState::Draining) j.state = JobState::Running;
                    return;
                  }
                  j.last_manifest = std::move(m);
                  ++j.ckpt_count;
                  j.flow.reset();
                  j.runtime->teardown();
                  j.runtime.reset();
                  free_gpus(j);
                  j.state = JobState::Preempted;
                  Json e;
                  e["latency"] = lat.to_json();
                  action_trace("preempted", j, e);
                  if (then_requeue) plan("preempt_done");
                });
}

void Scheduler::preempt(int job_id) { do_preempt(rec(job_id), true); }

void Scheduler::resize(int job_id, int new_slicing) {
  auto& j = rec(job_id);
  if (j.state != JobState::Running || new_slicing == j.slicing) return;
  int dpg = j.spec.dp / j.spec.zero_shards;
  if (new_slicing <= 0 || dpg % new_slicing != 0) {
    Json e;
    e["requested"] = new_slicing;
    e["reason"] = "illegal slicing degree";
    action_trace("resize_rejected", j, e);
    return;
  }
  j.state = JobState::Draining;
  int id = j.id;
  j.flow->start(
      "on_demand", true, j.last_manifest, j.ckpt_count,
      [this, id, new_slicing](std::optional<ckpt::Manifest> m,
                              ckpt::LatencyBreakdown) {
        auto& j = rec(id);
        if (!m) {
          if (j.state == JobState::Draining) j.state = JobState::Running;
          return;
        }
        j.last_manifest = std::move(m);
        ++j.ckpt_count;
        j.flow.reset();
        j.runtime->teardown();
        j.runtime.reset();
        free_gpus(j);
        j.state = JobState::Preempted;
        auto placement = find_placement(j, new_slicing, {});
        if (placement) {
          auto lat = ckpt::migration_latency(*j.last_manifest, cost_, *placement, 0);
          launch(j, *placement, new_slicing, true,
                 lat.download + lat.restore + lat.rendezvous);
          Json e;
          e["slicing"] = new_slicing;
          action_trace("resized", j, e);
        } else {
          action_trace("resize_queued", j, Json::object());
          plan("resize_capacity");
        }
      });
}

void Scheduler::migrate(int job_id) {
  auto& j = rec(job_id);
  if (j.state != JobState::Running) return;
  std::set<GpuKey> old;
  for (const auto& [r, g] : j.placement) old.insert(g);
  int slicing = j.slicing;
  j.state = JobState::Draining;
  int id = j.id;
  j.flow->start("on_demand", true, j.last_manifest, j.ckpt_count,
                [this, id, slicing, old](std::optional<ckpt::Manifest> m,
                                         ckpt::LatencyBreakdown) {
                  auto& j = rec(id);
                  if (!m) {
                    if (j.state == JobState::Draining) j.state = JobState::Running;
                    return;
                  }
                  j.last_manifest = std::move(m);
                  ++j.ckpt_count;
                  j.flow.reset();
                  j.runtime->teardown();
                  j.runtime.reset();
                  free_gpus(j);
                  j.state = JobState::Preempted;
                  auto placement = find_placement(j, slicing, old);
                  if (!placement) placement = find_placement(j, slicing, {});
                  if (placement) {
                    auto lat =
                        ckpt::migration_latency(*j.last_manifest, cost_, *placement, 0);
                    launch(j, *placement, slicing, true,
                           lat.download + lat.restore + lat.rendezvous);
                    Json e;
                    e["migrated"] = true;
                    action_trace("migrated", j, e);
                  } else {
                    plan("migrate_capacity");
                  }
                });
}

void Scheduler::node_fail(GpuKey any_gpu_on_node) {
  const auto& anchor = gpus_.at(any_gpu_on_node);
  std::set<int> victims;
  for (auto& g : gpus_)
    if (g.region == anchor.region && g.cluster == anchor.cluster &&
        g.node == anchor.node) {
      g.healthy = false;
      if (g.job >= 0) victims.insert(g.job);
    }
  {
    Json e;
    e["node"] = anchor.node;
    e["cluster"] = anchor.cluster;
    trace_.emit(eng_.now(), "node_fail", e);
  }
  for (int id : victims) handle_failure(rec(id), "node failure");
}

void Scheduler::node_add(int region, int cluster, int count, u64 mem_mib) {
  internal_check(region >= 0 && static_cast<size_t>(region) < fleet_cfg_.regions.size(),
                 "node_add: bad region");
  auto& cl = fleet_cfg_.regions[region].clusters.at(cluster);
  cl.nodes.push_back({count, mem_mib});
  int node_idx = static_cast<int>(cl.nodes.size()) - 1;
  for (int g = 0; g < count; ++g) {
    GpuSlot s;
    s.key = static_cast<GpuKey>(gpus_.size());
    s.region = region;
    s.cluster = cluster;
    s.node = node_idx;
    s.mem_bytes = mem_mib * (1ull << 20);
    gpus_.push_back(s);
  }
  Json e;
  e["gpus"] = count;
  trace_.emit(eng_.now(), "node_add", e);
  plan("capacity_change");
}

void Scheduler::handle_failure(JobRecord& j, const std::string& reason) {
  if (j.state == JobState::Finished || j.state == JobState::Failed) return;
  ++j.failures;
  j.flow.reset();
  if (j.runtime) j.runtime->teardown();
  j.runtime.reset();
  free_gpus(j);
  Json e;
  e["reason"] = reason;
  e["has_manifest"] = j.last_manifest.has_value();
  if (j.last_manifest) {
    j.state = JobState::Preempted;  // restore from the most recent checkpoint
    e["resume_step"] = j.last_manifest->step;
  } else {
    j.state = JobState::Queued;  // restart from scratch
  }
  action_trace("failure", j, e);
  plan("failure");
}

void Scheduler::account_minibatch(JobRecord& j, int mb) {
  if (j.oracle_mb.empty()) return;
  internal_check(mb >= 1 && static_cast<size_t>(mb) <= j.oracle_mb.size(),
                 "minibatch index out of range");
  i64 ideal = j.oracle_mb[mb - 1];
  j.sla.ideal_total_ns += ideal;
  j.sla.window_ideal_ns[eng_.now() / kHourNs] += ideal;
}

void Scheduler::close_window(JobRecord& j, i64 index, Time wstart, Time wend) {
  Time lo = std::max<Time>(wstart, j.sla.submitted);
  Time hi = j.sla.completed >= 0 ? std::min<Time>(wend, j.sla.completed) : wend;
  if (hi <= lo) return;
  SlaWindow w;
  w.index = index;
  w.real_ns = hi - lo;
  auto it = j.sla.window_ideal_ns.find(index);
  w.ideal_ns = it == j.sla.window_ideal_ns.end() ? 0 : it->second;
  double fraction = static_cast<double>(w.ideal_ns) / static_cast<double>(w.real_ns);
  double target = 0;
  if (j.sla.tier == wl::Tier::Premium) target = targets.premium;
  if (j.sla.tier == wl::Tier::Standard) target = targets.standard;
  w.violated = target > 0 && fraction + 1e-9 < target;
  j.sla.closed.push_back(w);
  Json e;
  e["job"] = j.id;
  e["tier"] = wl::to_string(j.sla.tier);
  e["window"] = index;
  e["ideal_ns"] = w.ideal_ns;
  e["real_ns"] = w.real_ns;
  e["fraction"] = fraction;
  e["usage_ns"] = w.ideal_ns;  // charged for actual usage, not quota
  trace_.emit(eng_.now(), "sla_window", e);
  if (w.violated) {
    Json v;
    v["job"] = j.id;
    v["tier"] = wl::to_string(j.sla.tier);
    v["window"] = index;
    v["fraction"] = fraction;
    v["target"] = target;
    trace_.emit(eng_.now(), "sla_violation", v);
  }
}

void Scheduler::hourly_tick() {
  tick_scheduled_ = false;
  i64 idx = eng_.now() / kHourNs - 1;
  Time wstart = idx * kHourNs;
  Time wend = (idx + 1) * kHourNs;
  for (auto& [id, j] : jobs_) {
    if (j->sla.submitted >= wend) continue;
    if (j->sla.completed >= 0 && j->sla.completed <= wstart) continue;
    if (j->state == JobState::Failed && !j->last_manifest) continue;
    close_window(*j, idx, wstart, wend);
  }
  Json e;
  e["window"] = idx;
  trace_.emit(eng_.now(), "hourly_tick", e);
  plan("hourly_tick");
  bool live = false;
  for (auto& [id, j] : jobs_)
    if (j->state != JobState::Finished && j->state != JobState::Failed) live = true;
  if (live && !tick_scheduled_) {
    tick_scheduled_ = true;
    eng_.schedule(kHourNs, [this]() { hourly_tick(); });
  }
}

int Scheduler::defragment() {
  // Find a queued single-node job that fails placement only by fragmentation.
  for (auto& [id, j] : jobs_) {
    if (j->state != JobState::Queued && j->state != JobState::Preempted) continue;
    if (!j->single_node) continue;
    int need = j->spec.world;  // full scale-up demand
    auto free = free_keys({});
    if (static_cast<int>(free.size()) < need) continue;
    if (find_placement(*j, 1, {})) continue;  // placeable; not fragmentation
    // Pick the node needing the fewest moved ranks to clear `need` slots.
    std::map<std::tuple<int, int, int>, std::vector<GpuKey>> by_node;
    for (const auto& g : gpus_)
      if (g.healthy) by_node[{g.region, g.cluster, g.node}].push_back(g.key);
    int best_cost = INT32_MAX;
    std::tuple<int, int, int> best_node;
    std::vector<int> best_victims;
    for (const auto& [nk, keys] : by_node) {
      if (static_cast<int>(keys.size()) < need) continue;
      int free_here = 0;
      std::map<int, int> occupant_ranks;  // job -> resident rank count here
      for (GpuKey k : keys) {
        if (gpus_[k].job < 0) ++free_here;
        else ++occupant_ranks[gpus_[k].job];
      }
      std::vector<std::pair<int, int>> movable;  // (ranks here, job)
      for (auto [jid, cnt] : occupant_ranks) {
        const auto& cand = rec(jid);
        if (cand.state == JobState::Running) movable.push_back({cnt, jid});
      }
      std::sort(movable.begin(), movable.end());
      int cost = 0, gained = free_here;
      std::vector<int> victims;
      for (auto [cnt, jid] : movable) {
        if (gained >= need) break;
        victims.push_back(jid);
        cost += rec(jid).spec.world;
        gained += cnt;
      }
      if (gained >= need && cost < best_cost) {
        best_cost = cost;
        best_node = nk;
        best_victims = victims;
      }
    }
    if (best_victims.empty()) continue;
    Json e;
    e["job"] = j->id;
    e["migrations"] = static_cast<int>(best_victims.size());
    trace_.emit(eng_.now(), "defragment", e);
    for (int vid : best_victims) migrate(vid);
    return static_cast<int>(best_victims.size());
  }
  return 0;
}

void Scheduler::plan(const std::string& reason) {
  if (planning_) return;
  planning_ = true;
  Json e;
  e["reason"] = reason;
  trace_.emit(eng_.now(), "plan", e);

  auto tier_order = {wl::Tier::Premium, wl::Tier::Standard, wl::Tier::Basic};
  // 1. Place waiting jobs, highest tier first, FIFO within a tier.
  for (auto tier : tier_order) {
    for (auto& [id, j] : jobs_) {
      if (j->sla.tier != tier) continue;
      if (j->state != JobState::Queued && j->state != JobState::Preempted) continue;
      if (try_place(*j)) continue;
      // Fragmentation-only failures get a defragmentation pass.
      if (defragment() > 0) continue;
      // Capacity pressure: preempt lower tiers (Basic first; Standard only
      // for Premium arrivals; Premium is preempted only by hardware failure).
      std::vector<wl::Tier> victims_tiers;
      if (tier == wl::Tier::Premium)
        victims_tiers = {wl::Tier::Basic, wl::Tier::Standard};
      else if (tier == wl::Tier::Standard)
        victims_tiers = {wl::Tier::Basic};
      bool preempted = false;
      for (auto vt : victims_tiers) {
        std::vector<JobRecord*> victims;
        for (auto& [vid, v] : jobs_)
          if (v->sla.tier == vt && v->state == JobState::Running)
            victims.push_back(v.get());
        std::sort(victims.begin(), victims.end(), [](JobRecord* a, JobRecord* b) {
          int ga = a->spec.world / std::max(1, a->slicing);
          int gb = b->spec.world / std::max(1, b->slicing);
          if (ga != gb) return ga > gb;
          return a->id > b->id;
        });
        if (!victims.empty()) {
          do_preempt(*victims.front(), true);
          preempted = true;
          break;
        }
      }
      if (preempted) break;  // re-planned when the drain completes
    }
  }
  // 2. Spare capacity: scale sliced jobs back up, Premium first.
  for (auto tier : tier_order) {
    for (auto& [id, j] : jobs_) {
      if (j->sla.tier != tier || j->state != JobState::Running) continue;
      if (j->slicing <= 1) continue;
      for (int n = 1; n < j->slicing; ++n) {
        int dpg = j->spec.dp / j->spec.zero_shards;
        if (dpg % n != 0) continue;
        if (find_placement(*j, n, {})) {
          resize(id, n);
          planning_ = false;
          return;  // one structural action per round; replan on completion
        }
      }
    }
  }
  planning_ = false;
}

bool Scheduler::all_jobs_settled() const {
  for (const auto& [id, j] : jobs_)
    if (j->state != JobState::Finished && j->state != JobState::Failed) return false;
  return true;
}

}  // namespace fleetsim::sched
