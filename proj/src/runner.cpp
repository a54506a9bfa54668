#include "fleetsim/runner.hpp"

#include <algorithm>
#include <set>

namespace fleetsim::cli {

bool oracle_feasible(const wl::JobSpec& spec, std::string* why) {
  u64 kernels = static_cast<u64>(spec.world) * spec.minibatches *
                (static_cast<u64>(spec.microbatches) * spec.layers * 4 + spec.layers * 4);
  u64 words = static_cast<u64>(spec.world) *
              (spec.params_per_layer * spec.layers * 3 + spec.input_elems);
  if (kernels > 50'000'000 || words > (1ull << 31)) {
    if (why) *why = "job too large for the dedicated oracle";
    return false;
  }
  return true;
}

RunResult run_scenario(Scenario s) {
  s.cost.validate();
  RunResult out;
  sim::Engine eng;
  TraceSink trace(s.dispatch_records);
  ckpt::BlobStore store;
  sched::Scheduler sched(eng, s.cost, trace, store, s.fleet, s.sla);

  // Per-job oracle pass: equivalence reference and the T_ideal source.
  struct Pre {
    wl::JobSpec spec;
    std::vector<Dur> mb;
    oracle::Result oracle;
    bool ok = false;
    std::string skip;
  };
  std::vector<Pre> pre(s.jobs.size());
  for (size_t i = 0; i < s.jobs.size(); ++i) {
    auto& e = s.jobs[i];
    wl::JobSpec spec = e.spec;
    spec.seed = sim::mix3(s.seed, i, spec.seed);
    pre[i].spec = spec;
    if (oracle_feasible(spec, &pre[i].skip)) {
      auto built = wl::build_job(spec);
      pre[i].oracle = oracle::run(built, s.cost);
      pre[i].mb = pre[i].oracle.minibatch_ns;
      pre[i].ok = true;
    }
  }

  std::map<std::string, int> ids;
  for (size_t i = 0; i < s.jobs.size(); ++i) {
    const auto& e = s.jobs[i];
    Dur at = from_secs(e.arrival_sec);
    auto cfg = e.cfg;
    auto spec = pre[i].spec;
    auto mb = pre[i].mb;
    eng.schedule(at, [&sched, &ids, spec, cfg, mb]() {
      ids[spec.name] = sched.submit(spec, cfg, mb);
    });
  }
  for (const auto& ev : s.events) {
    eng.schedule(from_secs(ev.at_sec), [&sched, &ids, ev]() {
      auto job_id = [&]() -> int {
        auto it = ids.find(ev.job);
        return it == ids.end() ? -1 : it->second;
      };
      if (ev.kind == "checkpoint") {
        if (job_id() > 0) sched.request_checkpoint(job_id());
      } else if (ev.kind == "preempt") {
        if (job_id() > 0) sched.preempt(job_id());
      } else if (ev.kind == "resize") {
        if (job_id() > 0) sched.resize(job_id(), ev.slicing);
      } else if (ev.kind == "migrate") {
        if (job_id() > 0) sched.migrate(job_id());
      } else if (ev.kind == "barrier") {
        if (job_id() > 0) sched.request_barrier_probe(job_id(), ev.targets);
      } else if (ev.kind == "node_fail") {
        sched.node_fail(ev.gpu);
      } else if (ev.kind == "node_add") {
        sched.node_add(ev.region, ev.cluster, ev.gpus, ev.mem_mib);
      }
    });
  }

  Time horizon = s.horizon_sec > 0 ? from_secs(s.horizon_sec) : -1;
  bool drained = eng.run(horizon);

  // Deadlock detection: quiescence with unfinished jobs and no horizon cut.
  for (const auto& [id, j] : sched.jobs()) {
    if (j->state == sched::JobState::Running && j->runtime &&
        !j->runtime->finished() && !j->runtime->failed()) {
      if (drained) {
        out.deadlock = true;
        std::string d = "job " + j->spec.name + " quiescent but unfinished;";
        auto partial = j->runtime->comms.partially_issued();
        d += " partially-issued collectives: " + std::to_string(partial.size());
        for (const auto& k : partial)
          d += " (comm " + std::to_string(k.comm_id) + " seq " +
               std::to_string(k.seq) + ")";
        out.diagnostics.push_back(d);
        Json e;
        e["job"] = id;
        e["detail"] = d;
        trace.emit(eng.now(), "deadlock", e);
      } else {
        out.diagnostics.push_back("job " + j->spec.name + " cut by horizon");
      }
    }
  }

  // Summary.
  Json jobs_summary = Json::object();
  for (const auto& [id, j] : sched.jobs()) {
    size_t i = 0;
    for (; i < pre.size(); ++i)
      if (pre[i].spec.name == j->spec.name) break;
    JobOutcome o;
    o.spec = j->spec;
    o.state = j->state;
    o.finals = j->finals;
    o.failures = j->failures;
    if (i < pre.size()) {
      o.oracle = pre[i].oracle;
      o.oracle_ok = pre[i].ok;
      o.oracle_skip_reason = pre[i].skip;
    }
    Json js;
    js["state"] = sched::to_string(j->state);
    js["slicing"] = j->slicing;
    js["failures"] = j->failures;
    js["checkpoints"] = j->ckpt_count;
    if (j->last_manifest) {
      js["s_g"] = j->last_manifest->s_g;
      js["s_cr"] = j->last_manifest->s_cr;
      js["s_cr_inc"] = j->last_manifest->s_cr_inc;
    }
    Json windows = Json::array();
    int violations = 0;
    for (const auto& w : j->sla.closed) {
      Json wj;
      wj["window"] = w.index;
      wj["fraction"] = static_cast<double>(w.ideal_ns) / static_cast<double>(w.real_ns);
      wj["violated"] = w.violated;
      if (w.violated) ++violations;
      windows.push_back(wj);
    }
    js["sla_windows"] = windows;
    js["sla_violations"] = violations;
    jobs_summary[j->spec.name] = js;
    out.jobs[j->spec.name] = std::move(o);
  }
  out.summary["jobs"] = jobs_summary;
  out.summary["events_processed"] = eng.events_processed();
  out.summary["sim_time_s"] = to_secs(eng.now());
  out.summary["deadlock"] = out.deadlock;
  out.trace_text = trace.joined();
  return out;
}

namespace {

std::string hex(u64 v) {
  char buf[24];
  snprintf(buf, sizeof buf, "0x%llx", static_cast<unsigned long long>(v));
  return buf;
}

}  // namespace

VerifyOutcome verify_scenario(Scenario s) {
  s.dispatch_records = true;  // the audits need per-issue records
  VerifyOutcome v;
  auto fail = [&](const std::string& msg) {
    v.pass = false;
    v.failures.push_back(msg);
  };

  RunResult run = run_scenario(s);
  if (run.deadlock) {
    for (const auto& d : run.diagnostics) fail("deadlock: " + d);
    return v;
  }

  for (auto& [name, o] : run.jobs) {
    if (o.state != sched::JobState::Finished) {
      fail("job " + name + " ended in state " +
           sched::to_string(o.state));
      continue;
    }
    if (!o.oracle_ok) {
      v.notes.push_back("job " + name + ": oracle skipped (" +
                        o.oracle_skip_reason + ")");
      continue;
    }
    // Bit-exact equivalence of final stable (P/O) state per rank.
    bool diverged = false;
    for (int r = 0; r < o.spec.world && !diverged; ++r) {
      const auto& got = o.finals.at(r);
      const auto& want = o.oracle.ranks.at(r);
      if (got.stable.size() != want.stable.size()) {
        fail("job " + name + " rank " + std::to_string(r) + ": stable buffer count " +
             std::to_string(got.stable.size()) + " vs oracle " +
             std::to_string(want.stable.size()));
        diverged = true;
        break;
      }
      for (const auto& [slot, words] : want.stable) {
        auto it = got.stable.find(slot);
        if (it == got.stable.end()) {
          fail("job " + name + " rank " + std::to_string(r) + ": missing stable slot " +
               std::to_string(slot));
          diverged = true;
          break;
        }
        if (it->second != words) {
          u64 addr = got.stable_addr.count(slot) ? got.stable_addr.at(slot) : 0;
          size_t idx = 0;
          while (idx < words.size() && idx < it->second.size() &&
                 it->second[idx] == words[idx])
            ++idx;
          fail("job " + name + " rank " + std::to_string(r) +
               ": stable state diverges from oracle at device address " +
               hex(addr + idx * 8) + " (slot " + std::to_string(slot) + ")");
          diverged = true;
          break;
        }
      }
      if (!diverged && got.rng_state != want.rng_state)
        fail("job " + name + " rank " + std::to_string(r) + ": RNG state diverges");
      if (!diverged && got.files != want.files)
        fail("job " + name + " rank " + std::to_string(r) +
             ": filesystem state diverges from oracle");
    }
  }

  // Trace audits.
  auto records = parse_trace(run.trace_text);
  std::map<int, int> resume_step;  // failure resume points
  std::map<int, int> failures;
  for (const auto& rec : records) {
    if (rec["kind"] == "sched_action" && rec["action"] == "failure") {
      int id = rec["job"].get<int>();
      failures[id]++;
      if (rec.contains("resume_step")) resume_step[id] = rec["resume_step"].get<int>();
    }
  }
  // Step-ledger uniqueness: each (job, rank, mb) executed exactly once, with
  // post-failure replay since the last manifest as the only exception.
  std::map<std::tuple<int, int, int>, int> steps;
  for (const auto& rec : records)
    if (rec["kind"] == "minibatch_complete")
      steps[{rec["job"].get<int>(), rec["rank"].get<int>(), rec["mb"].get<int>()}]++;
  for (const auto& [key, count] : steps) {
    auto [jid, rank, mb] = key;
    int allowed = 1;
    if (failures.count(jid) && mb > resume_step[jid]) allowed = 1 + failures[jid];
    if (count > allowed)
      fail("job " + std::to_string(jid) + " rank " + std::to_string(rank) + " mb " +
           std::to_string(mb) + " executed " + std::to_string(count) +
           " times (allowed " + std::to_string(allowed) + ")");
  }

  // Barrier safety: every acquisition reported zero in-flight collectives.
  int acquired = 0, safety = 0;
  for (const auto& rec : records) {
    if (rec["kind"] == "barrier_acquired") ++acquired;
    if (rec["kind"] == "barrier_safety") {
      ++safety;
      if (rec["in_flight"].get<int>() != 0)
        fail("barrier acquired with in-flight collectives");
    }
  }

  // Placement legality: every device hosts replicas of one model-parallel
  // partition and one ZeRO shard, at most dp/s of them.
  std::map<int, std::string> id_to_name;
  for (const auto& rec : records)
    if (rec["kind"] == "sched_action" && rec["action"] == "submit")
      id_to_name[rec["job"].get<int>()] = rec["name"].get<std::string>();
  for (const auto& rec : records) {
    if (rec["kind"] != "sched_action") continue;
    if (rec["action"] != "place" && rec["action"] != "restore") continue;
    int jid = rec["job"].get<int>();
    auto nit = id_to_name.find(jid);
    if (nit == id_to_name.end() || !run.jobs.count(nit->second)) continue;
    const auto& spec = run.jobs.at(nit->second).spec;
    auto topo = wl::RankTopology::build(spec);
    std::map<int, std::vector<int>> per_gpu;
    for (const auto& pair : rec["placement"])
      per_gpu[pair.at(1).get<int>()].push_back(pair.at(0).get<int>());
    int max_slicing = spec.dp / spec.zero_shards;
    for (const auto& [gpu, ranks] : per_gpu) {
      if (static_cast<int>(ranks.size()) > max_slicing)
        fail("placement: job " + nit->second + " gpu " + std::to_string(gpu) +
             " hosts " + std::to_string(ranks.size()) + " ranks > dp/s");
      const auto& c0 = topo.coords[ranks.front()];
      for (int r : ranks) {
        const auto& c = topo.coords[r];
        if (c.tp != c0.tp || c.pp != c0.pp || c.shard != c0.shard)
          fail("placement: job " + nit->second +
               " co-locates ranks of different partitions/shards");
      }
    }
  }

  // Program-order rule: common members issue shared collectives in the same
  // relative order.
  std::map<int, std::map<int, std::vector<std::pair<int, u64>>>> issue_order;
  for (const auto& rec : records) {
    if (rec["kind"] != "dispatch") continue;
    std::string call = rec["call"].get<std::string>();
    if (call != "allreduce" && call != "send" && call != "recv" && call != "broadcast")
      continue;
    // dispatch records carry the communicator id in aux
    if (!rec.contains("aux")) continue;
    issue_order[rec["job"].get<int>()][rec["rank"].get<int>()].push_back(
        {rec["aux"].get<int>(), 0});
  }
  // Sequence numbers are implicit per (rank, comm): assign by counting.
  for (auto& [jid, ranks] : issue_order) {
    for (auto& [rank, seq] : ranks) {
      std::map<int, u64> next;
      for (auto& [comm, s] : seq) s = next[comm]++;
    }
    for (auto a = ranks.begin(); a != ranks.end(); ++a) {
      std::map<std::pair<int, u64>, size_t> pos;
      for (size_t i = 0; i < a->second.size(); ++i) pos[a->second[i]] = i;
      for (auto b = std::next(a); b != ranks.end(); ++b) {
        i64 last = -1;
        for (const auto& key : b->second) {
          auto it = pos.find(key);
          if (it == pos.end()) continue;
          if (static_cast<i64>(it->second) < last) {
            fail("program-order violation: job " + std::to_string(jid) + " ranks " +
                 std::to_string(a->first) + "/" + std::to_string(b->first) +
                 " disagree on collective order");
            break;
          }
          last = static_cast<i64>(it->second);
        }
      }
    }
  }

  if (v.pass && acquired > 0 && safety == 0)
    v.notes.push_back("acquisitions happened outside checkpoint flows");
  for (const auto& rec : records)
    if (rec["kind"] == "validation" && rec["pass"].get<bool>() == false)
      v.notes.push_back("validation failure on job " +
                        std::to_string(rec["job"].get<int>()) + " mb " +
                        std::to_string(rec["mb"].get<int>()) +
                        " (squashing fell back to swaps)");
  return v;
}

}  // namespace fleetsim::cli
