#include "fleetsim/workload.hpp"

#include <algorithm>

namespace fleetsim::wl {

using prog::CollKind;
using prog::ImmMode;
using prog::Instr;
using vdev::BufCat;
using vdev::KOp;
using mem::Stability;
using Op = prog::Instr::Op;

const char* to_string(Tier t) {
  switch (t) {
    case Tier::Premium: return "Premium";
    case Tier::Standard: return "Standard";
    case Tier::Basic: return "Basic";
  }
  return "?";
}

Tier tier_from_string(const std::string& s) {
  if (s == "Premium") return Tier::Premium;
  if (s == "Standard") return Tier::Standard;
  if (s == "Basic") return Tier::Basic;
  throw ConfigError("unknown tier: " + s);
}

void JobSpec::validate() const {
  if (world <= 0) throw ConfigError("jobs[].spec.world: must be > 0");
  if (dp <= 0 || tp <= 0 || pp <= 0)
    throw ConfigError("jobs[].spec: parallel degrees must be > 0");
  if (world != dp * tp * pp)
    throw ConfigError("jobs[].spec.world: must equal dp*tp*pp");
  if (zero_shards <= 0 || dp % zero_shards != 0)
    throw ConfigError("jobs[].spec.zero_shards: must divide dp");
  if (layers <= 0 || layers % pp != 0)
    throw ConfigError("jobs[].spec.layers: must be a positive multiple of pp");
  if (params_per_layer == 0 || params_per_layer % tp != 0)
    throw ConfigError("jobs[].spec.params_per_layer: must be a positive multiple of tp");
  if (minibatches <= 0 || microbatches <= 0)
    throw ConfigError("jobs[].spec: minibatches/microbatches must be > 0");
  if (input_elems == 0 || act_elems_base == 0)
    throw ConfigError("jobs[].spec: input_elems/act_elems_base must be > 0");
  if (!topology_override.empty() &&
      topology_override.size() != static_cast<size_t>(world))
    throw ConfigError("jobs[].spec.rank_topology: must list every rank");
}

RankTopology RankTopology::build(const JobSpec& spec) {
  RankTopology t;
  t.coords.resize(spec.world);
  if (!spec.topology_override.empty()) {
    std::vector<bool> seen(spec.world, false);
    for (int r = 0; r < spec.world; ++r) {
      auto [d, tpi, p] = spec.topology_override[r];
      if (d < 0 || d >= spec.dp || tpi < 0 || tpi >= spec.tp || p < 0 || p >= spec.pp)
        throw ConfigError("jobs[].spec.rank_topology: coordinate out of range");
      int flat = p * spec.dp * spec.tp + d * spec.tp + tpi;
      if (seen[flat]) throw ConfigError("jobs[].spec.rank_topology: duplicate coordinate");
      seen[flat] = true;
      t.coords[r] = {d, tpi, p, 0, 0};
    }
  } else {
    for (int r = 0; r < spec.world; ++r) {
      int tpi = r % spec.tp;
      int d = (r / spec.tp) % spec.dp;
      int p = r / (spec.tp * spec.dp);
      t.coords[r] = {d, tpi, p, 0, 0};
    }
  }
  for (auto& c : t.coords) {
    c.shard = c.dp % spec.zero_shards;
    c.subgroup = c.dp / spec.zero_shards;
  }
  return t;
}

RankId RankTopology::rank_of(int dp, int tp, int pp, const JobSpec&) const {
  for (size_t r = 0; r < coords.size(); ++r)
    if (coords[r].dp == dp && coords[r].tp == tp && coords[r].pp == pp)
      return static_cast<RankId>(r);
  throw InternalError("rank_of: no such coordinate");
}

std::vector<RankId> RankTopology::splice_group(RankId r) const {
  std::vector<RankId> out;
  const auto& c = coords[r];
  for (size_t i = 0; i < coords.size(); ++i)
    if (coords[i].tp == c.tp && coords[i].pp == c.pp && coords[i].shard == c.shard)
      out.push_back(static_cast<RankId>(i));
  return out;
}

ZeroLayout zero_layout(const JobSpec& spec) {
  spec.validate();
  ZeroLayout z;
  z.shards = spec.zero_shards;
  z.max_slicing = spec.dp / spec.zero_shards;
  auto topo = RankTopology::build(spec);
  z.shard_of_rank.resize(spec.world);
  z.owned_local_layers.resize(spec.world);
  int local_layers = spec.layers / spec.pp;
  for (int r = 0; r < spec.world; ++r) {
    z.shard_of_rank[r] = topo.coords[r].shard;
    for (int l = 0; l < local_layers; ++l)
      if (l % spec.zero_shards == topo.coords[r].shard)
        z.owned_local_layers[r].push_back(l);
  }
  return z;
}

std::string file_path(int kind, RankId rank, i64 aux) {
  if (kind == 0) return "pkg/setup.bin";
  return "logs/rank" + std::to_string(rank) + "/step" + std::to_string(aux) + ".txt";
}

std::vector<u64> file_content(int kind, const JobSpec& spec, RankId rank, i64 aux,
                              u64 loss_word) {
  if (kind == 0) {
    std::vector<u64> w(32);
    for (size_t i = 0; i < w.size(); ++i) w[i] = sim::mix2(spec.seed ^ 0x706b67ull, i);
    return w;
  }
  return {sim::mix3(spec.seed, static_cast<u64>(rank), static_cast<u64>(aux)), loss_word,
          static_cast<u64>(aux)};
}

namespace {

// Mutable build context per rank.
struct Builder {
  prog::RankProgram p;
  int next_dev = 0;
  int next_host = 0;
  int next_handle = 0;
  int next_comm = 0;

  int dev_slot() { return next_dev++; }
  int host_slot() { return next_host++; }
  int handle() { return next_handle++; }
  int comm() { return next_comm++; }

  Instr& add(Op op) {
    p.code.emplace_back();
    p.code.back().op = op;
    return p.code.back();
  }

  void alloc_dev(int slot, BufCat cat, Stability st, u64 base_words, u64 jitter = 0) {
    auto& i = add(Op::AllocDev);
    i.a = slot;
    i.cat = cat;
    i.stability = st;
    i.size = {base_words, jitter};
  }

  void launch(int stream, KOp op, u64 imm, int w, int r0 = -1, int r1 = -1,
              ImmMode mode = ImmMode::Literal) {
    auto& i = add(Op::Launch);
    i.a = stream;
    i.kern = {op, imm, mode, r0, r1, w};
  }

  int collective(int comm_slot, CollKind kind, int payload, bool async, int root = -1) {
    auto& i = add(Op::Collective);
    i.comm_slot = comm_slot;
    i.ckind = kind;
    i.payload_slot = payload;
    i.async = async;
    i.handle_slot = handle();
    i.root = root;
    return i.handle_slot;
  }
};

u64 hash_programs(const std::vector<prog::RankProgram>& ps) {
  std::vector<u64> w;
  for (const auto& rp : ps) {
    w.push_back(rp.code.size());
    for (const auto& ins : rp.code) {
      w.push_back(static_cast<u64>(ins.op));
      w.push_back(static_cast<u64>(ins.a) ^ (static_cast<u64>(ins.b) << 20) ^
                  (static_cast<u64>(ins.c) << 40));
      w.push_back(ins.size.base_words ^ (ins.size.jitter_words << 32));
      w.push_back(static_cast<u64>(ins.kern.op) ^ (ins.kern.imm << 8) ^
                  (static_cast<u64>(ins.kern.write + 2) << 48));
      w.push_back(static_cast<u64>(ins.comm_slot) ^
                  (static_cast<u64>(ins.payload_slot) << 16) ^
                  (static_cast<u64>(ins.handle_slot) << 32) ^
                  (ins.async ? 1ull << 63 : 0));
    }
  }
  return sim::digest_of_words(w).value;
}

}  // namespace

BuiltJob build_job(const JobSpec& spec) {
  spec.validate();
  BuiltJob job;
  job.spec = spec;
  job.topo = RankTopology::build(spec);
  job.zero = zero_layout(spec);

  const int Ls = spec.layers / spec.pp;  // stage-local layers
  const u64 p_words = spec.params_per_layer / spec.tp;

  // --- communicator inventory (canonical order; ids are list indices) ------
  auto& comms = job.comms;
  comms.push_back({0, "meta", {}});
  for (int r = 0; r < spec.world; ++r) comms[0].members.push_back(r);

  std::map<std::pair<int, int>, int> dp_comm;    // (tp, pp) -> id
  std::map<std::pair<int, int>, int> tp_comm;    // (dp, pp) -> id
  std::map<std::tuple<int, int, int>, int> pp_comm;  // (dp, tp, stage k->k+1) -> id
  std::map<std::tuple<int, int, int>, int> ps_comm;  // (tp, pp, subgroup) -> id

  if (spec.dp > 1)
    for (int p = 0; p < spec.pp; ++p)
      for (int t = 0; t < spec.tp; ++t) {
        prog::CommDef d;
        d.comm_id = static_cast<int>(comms.size());
        d.label = "dp.t" + std::to_string(t) + ".p" + std::to_string(p);
        for (int dd = 0; dd < spec.dp; ++dd)
          d.members.push_back(job.topo.rank_of(dd, t, p, spec));
        dp_comm[{t, p}] = d.comm_id;
        comms.push_back(std::move(d));
      }
  if (spec.tp > 1)
    for (int p = 0; p < spec.pp; ++p)
      for (int dd = 0; dd < spec.dp; ++dd) {
        prog::CommDef d;
        d.comm_id = static_cast<int>(comms.size());
        d.label = "tp.d" + std::to_string(dd) + ".p" + std::to_string(p);
        for (int t = 0; t < spec.tp; ++t)
          d.members.push_back(job.topo.rank_of(dd, t, p, spec));
        tp_comm[{dd, p}] = d.comm_id;
        comms.push_back(std::move(d));
      }
  if (spec.pp > 1)
    for (int k = 0; k + 1 < spec.pp; ++k)
      for (int dd = 0; dd < spec.dp; ++dd)
        for (int t = 0; t < spec.tp; ++t) {
          prog::CommDef d;
          d.comm_id = static_cast<int>(comms.size());
          d.label = "pp.d" + std::to_string(dd) + ".t" + std::to_string(t) + ".s" +
                    std::to_string(k);
          d.members = {job.topo.rank_of(dd, t, k, spec),
                       job.topo.rank_of(dd, t, k + 1, spec)};
          pp_comm[{dd, t, k}] = d.comm_id;
          comms.push_back(std::move(d));
        }
  if (spec.zero_shards > 1)
    for (int p = 0; p < spec.pp; ++p)
      for (int t = 0; t < spec.tp; ++t)
        for (int g = 0; g < spec.dp / spec.zero_shards; ++g) {
          prog::CommDef d;
          d.comm_id = static_cast<int>(comms.size());
          d.label = "psync.t" + std::to_string(t) + ".p" + std::to_string(p) + ".g" +
                    std::to_string(g);
          for (int sh = 0; sh < spec.zero_shards; ++sh)
            d.members.push_back(
                job.topo.rank_of(g * spec.zero_shards + sh, t, p, spec));
          ps_comm[{t, p, g}] = d.comm_id;
          comms.push_back(std::move(d));
        }

  // --- per-rank programs ----------------------------------------------------
  job.programs.resize(spec.world);
  for (RankId r = 0; r < spec.world; ++r) {
    Builder b;
    const auto& c = job.topo.coords[r];
    const bool first_stage = c.pp == 0;
    const bool last_stage = c.pp == spec.pp - 1;

    // Host state: static dataset cache, staging, loss log, loss landing pad.
    internal_check(b.host_slot() == kHostDataset, "slot layout");
    internal_check(b.host_slot() == kHostStaging, "slot layout");
    internal_check(b.host_slot() == kHostLossLog, "slot layout");
    internal_check(b.host_slot() == kHostLossOut, "slot layout");
    {
      auto& i = b.add(Op::HostAlloc);
      i.a = kHostDataset;
      i.b = static_cast<i64>(spec.host_dataset_kib * 1024 / 8);
      i.c = 1;
      auto& j = b.add(Op::HostAlloc);
      j.a = kHostStaging;
      j.b = static_cast<i64>(spec.input_elems);
      auto& k = b.add(Op::HostAlloc);
      k.a = kHostLossLog;
      k.b = spec.minibatches;
      auto& l = b.add(Op::HostAlloc);
      l.a = kHostLossOut;
      l.b = 8;
    }
    {
      auto& i = b.add(Op::HostWriteFile);  // package install at startup
      i.a = 0;
    }

    const int stream = 0;
    {
      auto& i = b.add(Op::CreateStream);
      i.a = stream;
      b.p.stream_slots = 1;
    }

    // Communicators, fixed global order.
    const int meta_slot = b.comm();
    {
      auto& i = b.add(Op::CommInit);
      i.a = meta_slot;
      i.b = 0;
    }
    int dp_slot = -1, tp_slot = -1, pp_prev_slot = -1, pp_next_slot = -1, ps_slot = -1;
    if (spec.dp > 1) {
      dp_slot = b.comm();
      auto& i = b.add(Op::CommInit);
      i.a = dp_slot;
      i.b = dp_comm.at({c.tp, c.pp});
    }
    if (spec.tp > 1) {
      tp_slot = b.comm();
      auto& i = b.add(Op::CommInit);
      i.a = tp_slot;
      i.b = tp_comm.at({c.dp, c.pp});
    }
    if (spec.pp > 1 && !first_stage) {
      pp_prev_slot = b.comm();
      auto& i = b.add(Op::CommInit);
      i.a = pp_prev_slot;
      i.b = pp_comm.at({c.dp, c.tp, c.pp - 1});
    }
    if (spec.pp > 1 && !last_stage) {
      pp_next_slot = b.comm();
      auto& i = b.add(Op::CommInit);
      i.a = pp_next_slot;
      i.b = pp_comm.at({c.dp, c.tp, c.pp});
    }
    if (spec.zero_shards > 1) {
      ps_slot = b.comm();
      auto& i = b.add(Op::CommInit);
      i.a = ps_slot;
      i.b = ps_comm.at({c.tp, c.pp, c.subgroup});
    }

    // Parameters per local layer; optimizer state is allocated lazily at the
    // first optimizer step, after transient churn has begun.
    std::vector<int> P(Ls), O(Ls, -1), G(Ls, -1);
    for (int l = 0; l < Ls; ++l) {
      int gl = c.pp * Ls + l;
      P[l] = b.dev_slot();
      b.alloc_dev(P[l], BufCat::Param, Stability::Stable, p_words);
      b.launch(stream, KOp::Fill, sim::mix3(spec.seed ^ 0x5000ull, gl, c.tp), P[l]);
    }
    const auto& owned = job.zero.owned_local_layers[r];
    auto is_owned = [&](int l) {
      return std::find(owned.begin(), owned.end(), l) != owned.end();
    };

    for (int mb = 1; mb <= spec.minibatches; ++mb) {
      {
        auto& i = b.add(Op::PhaseMark);
        i.a = mb;
        i.b = static_cast<i64>(prog::Phase::Fwd);
      }
      {
        auto& i = b.add(Op::HostPrep);
        i.a = spec.host_prep;
      }
      b.add(Op::SeedInput);

      // Gradient accumulators for the mini-batch.
      for (int l = 0; l < Ls; ++l) {
        G[l] = b.dev_slot();
        b.alloc_dev(G[l], BufCat::Grad, Stability::Transient, p_words);
        b.launch(stream, KOp::Zero, 0, G[l]);
      }

      for (int ub = 1; ub <= spec.microbatches; ++ub) {
        // Forward chain.
        std::vector<int> A(Ls + 1, -1);
        A[0] = b.dev_slot();
        if (first_stage) {
          b.alloc_dev(A[0], BufCat::Activation, Stability::Transient, spec.input_elems);
          b.launch(stream, KOp::Fill, static_cast<u64>(ub), A[0], -1, -1,
                   ImmMode::AddInputSeed);
        } else {
          b.alloc_dev(A[0], BufCat::Activation, Stability::Transient,
                      spec.act_elems_base);
          b.collective(pp_prev_slot, CollKind::Recv, A[0], false);
        }
        for (int l = 0; l < Ls; ++l) {
          int gl = c.pp * Ls + l;
          A[l + 1] = b.dev_slot();
          bool boundary = l == Ls - 1;
          b.alloc_dev(A[l + 1], BufCat::Activation, Stability::Transient,
                      spec.act_elems_base, boundary ? 0 : spec.act_elems_jitter);
          b.launch(stream, KOp::Zip2, static_cast<u64>(gl) + 1, A[l + 1], P[l], A[l]);
          if (tp_slot >= 0) b.collective(tp_slot, CollKind::Allreduce, A[l + 1], false);
        }
        if (!last_stage) b.collective(pp_next_slot, CollKind::Send, A[Ls], true);

        // Backward chain; `gup` is the gradient flowing toward the input.
        int gup = b.dev_slot();
        if (last_stage) {
          int loss = b.dev_slot();
          b.alloc_dev(loss, BufCat::Activation, Stability::Transient, 8);
          b.launch(stream, KOp::ReduceSum, static_cast<u64>(mb), loss, A[Ls]);
          if (ub == spec.microbatches) {
            auto& cp = b.add(Op::CopyD2H);
            cp.a = loss;
            cp.b = kHostLossOut;
          }
          b.alloc_dev(gup, BufCat::Activation, Stability::Transient,
                      spec.act_elems_base);
          b.launch(stream, KOp::MapMix, 0x4c4fu, gup, A[Ls]);
          auto& fl = b.add(Op::FreeDev);
          fl.a = loss;
        } else {
          b.alloc_dev(gup, BufCat::Activation, Stability::Transient,
                      spec.act_elems_base);
          b.collective(pp_next_slot, CollKind::Recv, gup, false);
        }
        for (int l = Ls - 1; l >= 0; --l) {
          int gl = c.pp * Ls + l;
          int agrad = b.dev_slot();
          // Gradient w.r.t. the layer input mirrors that input's size.
          b.alloc_dev(agrad, BufCat::Activation, Stability::Transient, 0, 0);
          b.p.code.back().c = A[l] + 1;  // size from slot (1-based; 0 = none)
          b.launch(stream, KOp::Zip2, static_cast<u64>(gl) + 0x4242ull, agrad, P[l], gup);
          if (tp_slot >= 0) b.collective(tp_slot, CollKind::Allreduce, agrad, false);
          int gpart = b.dev_slot();
          b.alloc_dev(gpart, BufCat::Grad, Stability::Transient, p_words);
          b.launch(stream, KOp::Zip2, static_cast<u64>(gl) + 0x7000ull, gpart, A[l], gup);
          b.launch(stream, KOp::AddInto, 0, G[l], gpart);
          auto& f1 = b.add(Op::FreeDev);
          f1.a = gpart;
          auto& f2 = b.add(Op::FreeDev);
          f2.a = A[l + 1];
          auto& f3 = b.add(Op::FreeDev);
          f3.a = gup;
          gup = agrad;
        }
        if (!first_stage) b.collective(pp_prev_slot, CollKind::Send, gup, true);
        auto& f4 = b.add(Op::FreeDev);
        f4.a = gup;
        auto& f5 = b.add(Op::FreeDev);
        f5.a = A[0];
      }

      {
        auto& i = b.add(Op::PhaseMark);
        i.a = mb;
        i.b = static_cast<i64>(prog::Phase::Comm);
      }
      // Data-parallel gradient exchange: async allreduces, then the sync wait
      // (the context-switch point under time-slicing).
      if (dp_slot >= 0) {
        int first_handle = -1;
        for (int l = 0; l < Ls; ++l) {
          int h = b.collective(dp_slot, CollKind::Allreduce, G[l], true);
          if (first_handle < 0) first_handle = h;
        }
        auto& w = b.add(Op::WaitHandles);
        w.a = first_handle;
        w.b = Ls;
      }

      {
        auto& i = b.add(Op::PhaseMark);
        i.a = mb;
        i.b = static_cast<i64>(prog::Phase::Opt);
      }
      if (mb == 1) {
        // Lazy optimizer-state allocation, as frameworks do on first step().
        for (int l = 0; l < Ls; ++l) {
          if (!is_owned(l)) continue;
          int gl = c.pp * Ls + l;
          O[l] = b.dev_slot();
          b.alloc_dev(O[l], BufCat::OptState, Stability::Stable, p_words);
          b.launch(stream, KOp::Fill, sim::mix3(spec.seed ^ 0x4f00ull, gl, c.tp), O[l]);
        }
      }
      for (int l = 0; l < Ls; ++l)
        b.launch(stream, KOp::DivImm, static_cast<u64>(spec.dp), G[l], G[l]);

      b.add(Op::WindowOpen);
      for (int l = 0; l < Ls; ++l) {
        if (!is_owned(l)) continue;
        b.launch(stream, KOp::AddInto, 0, O[l], G[l]);
        b.launch(stream, KOp::OptApply, 8, P[l], O[l]);
      }
      if (spec.adversarial == Adversarial::OptAddsRank && !owned.empty())
        b.launch(stream, KOp::AddImm, 1, P[owned.front()], -1, -1, ImmMode::AddRank);
      b.add(Op::WindowClose);

      if (ps_slot >= 0) {
        // Re-assemble the full parameter set across the ZeRO subgroup.
        for (int l = 0; l < Ls; ++l) {
          int owner_shard = l % spec.zero_shards;
          RankId root = job.topo.rank_of(c.subgroup * spec.zero_shards + owner_shard,
                                         c.tp, c.pp, spec);
          b.collective(ps_slot, CollKind::Broadcast, P[l], false, root);
        }
      }
      for (int l = 0; l < Ls; ++l) {
        auto& f = b.add(Op::FreeDev);
        f.a = G[l];
      }

      if (last_stage) {
        auto& n = b.add(Op::HostNote);
        n.a = kHostLossOut;
        n.b = kHostLossLog;
        n.c = mb - 1;
      }
      {
        auto& wf = b.add(Op::HostWriteFile);
        wf.a = 1;
        wf.b = mb;
      }
      {
        auto& i = b.add(Op::MinibatchEnd);
        i.a = mb;
      }
    }
    {
      auto& i = b.add(Op::PhaseMark);
      i.a = spec.minibatches;
      i.b = static_cast<i64>(prog::Phase::Done);
    }
    b.add(Op::Halt);

    b.p.dev_slots = b.next_dev;
    b.p.host_slots = b.next_host;
    b.p.handle_slots = b.next_handle;
    b.p.comm_slots = b.next_comm;
    job.programs[r] = std::move(b.p);
  }

  job.program_hash = hash_programs(job.programs);

  // Exact footprint from a sizes-only dry run of each rank program.
  job.stable_bytes.resize(spec.world, 0);
  job.peak_transient_bytes.resize(spec.world, 0);
  for (RankId r = 0; r < spec.world; ++r) {
    sim::Rng rng(sim::mix2(spec.seed, job.topo.coords[r].dp));
    std::map<int, u64> slot_words;
    u64 stable = 0, transient = 0, peak = 0;
    for (const auto& ins : job.programs[r].code) {
      switch (ins.op) {
        case Op::SeedInput: rng.next(); break;
        case Op::AllocDev: {
          u64 words = ins.size.base_words;
          if (ins.c != 0) words = slot_words.at(static_cast<int>(ins.c) - 1);
          if (ins.size.jitter_words) words += rng.next() % ins.size.jitter_words;
          slot_words[static_cast<int>(ins.a)] = words;
          u64 bytes = (words * 8 + mem::BidiAllocator::kAlign - 1) /
                      mem::BidiAllocator::kAlign * mem::BidiAllocator::kAlign;
          if (ins.stability == Stability::Stable) stable += bytes;
          else transient += bytes;
          peak = std::max(peak, transient);
          break;
        }
        case Op::FreeDev: {
          u64 words = slot_words.at(static_cast<int>(ins.a));
          u64 bytes = (words * 8 + mem::BidiAllocator::kAlign - 1) /
                      mem::BidiAllocator::kAlign * mem::BidiAllocator::kAlign;
          transient -= bytes;
          break;
        }
        default: break;
      }
    }
    job.stable_bytes[r] = stable;
    job.peak_transient_bytes[r] = peak;
  }
  return job;
}

std::vector<int> BuiltJob::dp_comm_ids() const {
  std::vector<int> out;
  for (const auto& c : comms)
    if (c.label.rfind("dp.", 0) == 0) out.push_back(c.comm_id);
  return out;
}

Json spec_to_json(const JobSpec& s) {
  Json j;
  j["name"] = s.name;
  j["world"] = s.world;
  j["dp"] = s.dp;
  j["tp"] = s.tp;
  j["pp"] = s.pp;
  j["zero_shards"] = s.zero_shards;
  j["layers"] = s.layers;
  j["params_per_layer"] = s.params_per_layer;
  j["minibatches"] = s.minibatches;
  j["microbatches"] = s.microbatches;
  j["input_elems"] = s.input_elems;
  j["act_elems_base"] = s.act_elems_base;
  j["act_elems_jitter"] = s.act_elems_jitter;
  j["host_dataset_kib"] = s.host_dataset_kib;
  j["host_prep_us"] = s.host_prep / kUsec;
  j["tier"] = to_string(s.tier);
  j["adversarial"] = s.adversarial == Adversarial::OptAddsRank ? "opt_adds_rank" : "none";
  j["seed"] = s.seed;
  if (!s.topology_override.empty()) {
    Json t = Json::array();
    for (const auto& c : s.topology_override) t.push_back({c[0], c[1], c[2]});
    j["rank_topology"] = t;
  }
  return j;
}

JobSpec spec_from_json(const Json& j) {
  JobSpec s;
  auto get = [&](const char* k, auto& field) {
    using T = std::decay_t<decltype(field)>;
    if (j.contains(k)) field = j.at(k).get<T>();
  };
  get("name", s.name);
  get("world", s.world);
  get("dp", s.dp);
  get("tp", s.tp);
  get("pp", s.pp);
  get("zero_shards", s.zero_shards);
  get("layers", s.layers);
  get("params_per_layer", s.params_per_layer);
  get("minibatches", s.minibatches);
  get("microbatches", s.microbatches);
  get("input_elems", s.input_elems);
  get("act_elems_base", s.act_elems_base);
  get("act_elems_jitter", s.act_elems_jitter);
  get("host_dataset_kib", s.host_dataset_kib);
  if (j.contains("host_prep_us")) s.host_prep = j.at("host_prep_us").get<i64>() * kUsec;
  if (j.contains("tier")) s.tier = tier_from_string(j.at("tier").get<std::string>());
  if (j.contains("adversarial")) {
    auto a = j.at("adversarial").get<std::string>();
    if (a == "opt_adds_rank") s.adversarial = Adversarial::OptAddsRank;
    else if (a == "none") s.adversarial = Adversarial::None;
    else throw ConfigError("jobs[].spec.adversarial: unknown value " + a);
  }
  get("seed", s.seed);
  if (j.contains("rank_topology")) {
    for (const auto& c : j.at("rank_topology"))
      s.topology_override.push_back({c.at(0).get<int>(), c.at(1).get<int>(),
                                     c.at(2).get<int>()});
  }
  s.validate();
  return s;
}

}  // namespace fleetsim::wl
