#include "fleetsim/oracle.hpp"

#include <algorithm>
#include <set>

namespace fleetsim::oracle {

using prog::CollKind;
using prog::ImmMode;
using prog::Instr;
using Op = prog::Instr::Op;
using vdev::BufCat;

namespace {

struct DevBuf {
  std::vector<u64> words;
  BufCat cat{};
  bool live = false;
};

struct PendingColl {
  CollKind kind{};
  u64 payload_words = 0;
  int root = -1;
  std::map<RankId, std::vector<u64>> contribs;  // senders' snapshots
  std::map<RankId, Time> ready;                 // per issued member
  std::map<RankId, int> out_slot;               // members expecting a result
  std::set<RankId> issued;
  bool completed = false;
  Time complete_at = 0;
};

struct CommRun {
  prog::CommDef def;
  std::map<RankId, u64> next_seq;
  std::map<u64, PendingColl> pending;  // by seq
  // comm_init join
  std::set<RankId> init_issued;
  std::map<RankId, Time> init_ready;
  bool init_done = false;
  Time init_at = 0;
};

struct RankRun {
  size_t pc = 0;
  sim::Rng rng{0};
  u64 input_seed = 0;
  Time t_host = 0;
  Time t_dev = 0;
  std::map<int, DevBuf> dev;
  std::map<int, std::vector<u64>> host;
  std::map<std::string, std::vector<u64>> files;
  std::map<int, std::pair<int, u64>> handle_to_coll;  // handle -> (comm_id, seq)
  std::map<int, int> slot_to_comm;                    // comm slot -> comm id
  // blocking
  enum class Block { None, CommInit, Coll, Handles, Halted };
  Block block = Block::None;
  int block_comm = -1;
  u64 block_seq = 0;
  std::vector<std::pair<int, u64>> block_handles;
  std::vector<Time> boundary;  // per mini-batch, max(t_host, t_dev)
};

u64 resolve_imm(const prog::KernelSpec& k, const RankRun& rr, RankId r) {
  switch (k.imm_mode) {
    case ImmMode::Literal: return k.imm;
    case ImmMode::AddInputSeed: return k.imm + rr.input_seed;
    case ImmMode::AddRank: return k.imm + static_cast<u64>(r);
  }
  return k.imm;
}

}  // namespace

Result run(const wl::BuiltJob& job, const sim::CostModel& cost) {
  const auto& spec = job.spec;
  std::vector<RankRun> rr(spec.world);
  std::map<int, CommRun> comms;
  for (const auto& c : job.comms) comms[c.comm_id].def = c;

  for (int r = 0; r < spec.world; ++r) {
    rr[r].rng = sim::Rng(sim::mix2(spec.seed, job.topo.coords[r].dp));
    for (const auto& ins : job.programs[r].code)
      if (ins.op == Op::CommInit)
        rr[r].slot_to_comm[static_cast<int>(ins.a)] = static_cast<int>(ins.b);
  }

  auto coll_cost = [&](const PendingColl& p, size_t members) -> Dur {
    if (members <= 1) return 0;
    return cost.transfer_time(p.payload_words * 8, sim::Channel::Net);
  };

  // Completes a collective whose members have all issued: computes the result,
  // writes every member's output buffer, records timing.
  auto finish_coll = [&](CommRun& cr, u64 seq) {
    PendingColl& p = cr.pending.at(seq);
    Time ready = 0;
    for (const auto& [r, t] : p.ready) ready = std::max(ready, t);
    p.complete_at = ready + coll_cost(p, cr.def.members.size());
    p.completed = true;
    std::vector<u64> result;
    switch (p.kind) {
      case CollKind::Allreduce: {
        result.assign(p.payload_words, 0);
        for (const auto& [r, words] : p.contribs)
          for (u64 i = 0; i < p.payload_words; ++i) result[i] += words[i];
        break;
      }
      case CollKind::Broadcast:
        result = p.contribs.at(p.root);
        break;
      case CollKind::Send:
      case CollKind::Recv: {
        internal_check(p.contribs.size() == 1, "transfer needs one sender");
        result = p.contribs.begin()->second;
        break;
      }
    }
    for (const auto& [r, slot] : p.out_slot) {
      auto& buf = rr[r].dev.at(slot);
      internal_check(buf.words.size() == result.size(), "collective size mismatch");
      buf.words = result;
    }
  };

  bool progressed = true;
  int halted = 0;
  while (halted < spec.world) {
    internal_check(progressed, "oracle: deadlock (program bug)");
    progressed = false;
    for (RankId r = 0; r < spec.world; ++r) {
      RankRun& s = rr[r];
      // Try to clear a block first.
      if (s.block == RankRun::Block::Halted) continue;
      if (s.block == RankRun::Block::CommInit) {
        CommRun& cr = comms.at(s.block_comm);
        if (!cr.init_done) continue;
        s.t_host = std::max(s.t_host, cr.init_at);
        s.block = RankRun::Block::None;
      } else if (s.block == RankRun::Block::Coll) {
        CommRun& cr = comms.at(s.block_comm);
        auto it = cr.pending.find(s.block_seq);
        internal_check(it != cr.pending.end(), "missing pending collective");
        if (!it->second.completed) continue;
        s.t_host = std::max(s.t_host, it->second.complete_at);
        s.block = RankRun::Block::None;
      } else if (s.block == RankRun::Block::Handles) {
        Time t = 0;
        bool all = true;
        for (auto [cid, seq] : s.block_handles) {
          const auto& p = comms.at(cid).pending.at(seq);
          if (!p.completed) {
            all = false;
            break;
          }
          t = std::max(t, p.complete_at);
        }
        if (!all) continue;
        s.t_host = std::max(s.t_host, t);
        s.block = RankRun::Block::None;
        s.block_handles.clear();
      }
      progressed = true;

      const auto& code = job.programs[r].code;
      while (s.block == RankRun::Block::None) {
        internal_check(s.pc < code.size(), "oracle: pc out of range");
        const Instr& ins = code[s.pc];
        switch (ins.op) {
          case Op::HostPrep:
            s.t_host += ins.a;
            break;
          case Op::HostAlloc: {
            std::vector<u64> w(static_cast<size_t>(ins.b), 0);
            if (ins.c == 1)
              for (size_t i = 0; i < w.size(); ++i)
                w[i] = sim::mix2(spec.seed ^ 0x64617461ull, i);
            s.host[static_cast<int>(ins.a)] = std::move(w);
            break;
          }
          case Op::HostNote: {
            auto& dst = s.host.at(static_cast<int>(ins.b));
            const auto& src = s.host.at(static_cast<int>(ins.a));
            dst[static_cast<u64>(ins.c) % dst.size()] = src[0];
            break;
          }
          case Op::HostWriteFile: {
            u64 loss = 0;
            auto it = s.host.find(wl::kHostLossOut);
            if (it != s.host.end()) loss = it->second[0];
            s.files[wl::file_path(static_cast<int>(ins.a), r, ins.b)] =
                wl::file_content(static_cast<int>(ins.a), spec, r, ins.b, loss);
            break;
          }
          case Op::HostDeleteFile:
            s.files.erase(wl::file_path(static_cast<int>(ins.a), r, ins.b));
            break;
          case Op::SeedInput:
            s.input_seed = s.rng.next();
            break;
          case Op::AllocDev: {
            u64 words = ins.size.base_words;
            if (ins.c != 0) words = s.dev.at(static_cast<int>(ins.c) - 1).words.size();
            if (ins.size.jitter_words) words += s.rng.next() % ins.size.jitter_words;
            DevBuf b;
            b.words.assign(words, 0);
            b.cat = ins.cat;
            b.live = true;
            s.dev[static_cast<int>(ins.a)] = std::move(b);
            break;
          }
          case Op::FreeDev:
            s.dev.at(static_cast<int>(ins.a)).live = false;
            break;
          case Op::CreateStream:
            break;
          case Op::Launch: {
            const auto& k = ins.kern;
            auto& w = s.dev.at(k.write);
            internal_check(w.live, "oracle: write to dead buffer");
            std::vector<u64> r0, r1;
            if (k.read0 >= 0) r0 = s.dev.at(k.read0).words;
            if (k.read1 >= 0) r1 = s.dev.at(k.read1).words;
            vdev::Transform t{k.op, resolve_imm(k, s, r)};
            vdev::apply_transform(t, w.words, r0, r1);
            s.t_dev = std::max(s.t_dev, s.t_host) + cost.kernel_cost;
            break;
          }
          case Op::CopyD2H: {
            const auto& src = s.dev.at(static_cast<int>(ins.a));
            auto& dst = s.host.at(static_cast<int>(ins.b));
            internal_check(src.words.size() == dst.size(), "oracle: copy size mismatch");
            dst = src.words;
            s.t_dev = std::max(s.t_dev, s.t_host) +
                      cost.transfer_time(src.words.size() * 8, sim::Channel::D2H);
            s.t_host = s.t_dev;
            break;
          }
          case Op::CopyH2D: {
            const auto& src = s.host.at(static_cast<int>(ins.a));
            auto& dst = s.dev.at(static_cast<int>(ins.b));
            internal_check(src.size() == dst.words.size(), "oracle: copy size mismatch");
            dst.words = src;
            s.t_dev = std::max(s.t_dev, s.t_host) +
                      cost.transfer_time(src.size() * 8, sim::Channel::H2D);
            s.t_host = s.t_dev;
            break;
          }
          case Op::CommInit: {
            CommRun& cr = comms.at(static_cast<int>(ins.b));
            cr.init_issued.insert(r);
            cr.init_ready[r] = s.t_host;
            if (cr.init_issued.size() == cr.def.members.size() && !cr.init_done) {
              Time t = 0;
              for (const auto& [m, tt] : cr.init_ready) t = std::max(t, tt);
              cr.init_done = true;
              cr.init_at =
                  t + (cr.def.members.size() > 1 ? cost.net_latency : 0);
            }
            if (cr.init_done) {
              s.t_host = std::max(s.t_host, cr.init_at);
            } else {
              s.block = RankRun::Block::CommInit;
              s.block_comm = static_cast<int>(ins.b);
            }
            break;
          }
          case Op::Collective: {
            int cid = s.slot_to_comm.at(ins.comm_slot);
            CommRun& cr = comms.at(cid);
            u64 seq = cr.next_seq[r]++;
            PendingColl& p = cr.pending[seq];
            auto& buf = s.dev.at(ins.payload_slot);
            internal_check(buf.live, "oracle: collective on dead buffer");
            if (p.issued.empty()) {
              p.kind = ins.ckind;
              p.payload_words = buf.words.size();
              p.root = ins.root;
            } else {
              internal_check(p.payload_words == buf.words.size(),
                             "oracle: payload size mismatch across members");
            }
            p.issued.insert(r);
            p.ready[r] = std::max(s.t_host, s.t_dev);
            bool contributes =
                ins.ckind == CollKind::Allreduce || ins.ckind == CollKind::Send ||
                (ins.ckind == CollKind::Broadcast && ins.root == r);
            if (contributes) p.contribs[r] = buf.words;
            bool receives = ins.ckind == CollKind::Allreduce ||
                            ins.ckind == CollKind::Recv ||
                            (ins.ckind == CollKind::Broadcast && ins.root != r);
            if (receives) p.out_slot[r] = ins.payload_slot;
            if (p.issued.size() == cr.def.members.size()) finish_coll(cr, seq);
            s.handle_to_coll[ins.handle_slot] = {cid, seq};
            if (!ins.async) {
              if (p.completed) {
                s.t_host = std::max(s.t_host, p.complete_at);
              } else {
                s.block = RankRun::Block::Coll;
                s.block_comm = cid;
                s.block_seq = seq;
              }
            }
            break;
          }
          case Op::WaitHandles: {
            s.block_handles.clear();
            Time t = 0;
            bool all = true;
            for (i64 h = ins.a; h < ins.a + ins.b; ++h) {
              auto [cid, seq] = s.handle_to_coll.at(static_cast<int>(h));
              const auto& p = comms.at(cid).pending.at(seq);
              if (!p.completed) all = false;
              s.block_handles.push_back({cid, seq});
              if (p.completed) t = std::max(t, p.complete_at);
            }
            if (all) {
              s.t_host = std::max(s.t_host, t);
              s.block_handles.clear();
            } else {
              s.block = RankRun::Block::Handles;
            }
            break;
          }
          case Op::WindowOpen:
          case Op::WindowClose:
          case Op::PhaseMark:
            break;
          case Op::MinibatchEnd:
            s.boundary.push_back(std::max(s.t_host, s.t_dev));
            break;
          case Op::Halt:
            s.t_host = std::max(s.t_host, s.t_dev);
            s.block = RankRun::Block::Halted;
            ++halted;
            break;
        }
        ++s.pc;
      }
    }
  }

  Result out;
  out.ranks.resize(spec.world);
  Time total = 0;
  for (RankId r = 0; r < spec.world; ++r) {
    RankRun& s = rr[r];
    auto& dst = out.ranks[r];
    for (const auto& [slot, buf] : s.dev)
      if (buf.live && vdev::is_stable_cat(buf.cat)) dst.stable[slot] = buf.words;
    dst.host = s.host;
    dst.files = s.files;
    dst.rng_state = s.rng.state();
    total = std::max(total, std::max(s.t_host, s.t_dev));
  }
  out.total_ns = total;
  out.minibatch_ns.resize(spec.minibatches, 0);
  Time prev = 0;
  for (int m = 0; m < spec.minibatches; ++m) {
    Time bound = 0;
    for (RankId r = 0; r < spec.world; ++r) {
      internal_check(static_cast<size_t>(m) < rr[r].boundary.size(),
                     "oracle: missing boundary");
      bound = std::max(bound, rr[r].boundary[m]);
    }
    out.minibatch_ns[m] = bound - prev;
    prev = bound;
  }
  return out;
}

}  // namespace fleetsim::oracle
