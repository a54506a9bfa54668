#pragma once

#include <functional>
#include <map>
#include <set>
#include <vector>

#include "fleetsim/program.hpp"
#include "fleetsim/sim.hpp"
#include "fleetsim/trace.hpp"

namespace fleetsim::coll {

enum class Cls { Unknown, DataParallel, Other };

const char* to_string(Cls c);

struct CollKey {
  int comm_id = 0;
  u64 seq = 0;
  auto operator<=>(const CollKey&) const = default;
};

// Job-scoped collective-communication engine. Logical collectives complete
// when every member has issued the matching (comm, seq) call; the device
// level sees one slot per GPU, so co-resident members are locally aggregated
// and only the last sharer's issue triggers the cross-GPU operation.
class CollectiveEngine {
 public:
  struct CompletionInfo {
    CollKey key;
    prog::CollKind kind;
    Time complete_at = 0;
    std::vector<u64> result;  // empty for pure sends
    // members that expect the result written back (slot per member)
    std::map<RankId, int> out_slot;
  };
  using CompletionFn = std::function<void(const CompletionInfo&)>;

  CollectiveEngine(sim::Engine& eng, const sim::CostModel& cost, TraceSink& trace,
                   int job_id);

  void define(const prog::CommDef& def);
  const prog::CommDef& def(int comm_id) const { return comms_.at(comm_id).def; }
  bool has_comm(int comm_id) const { return comms_.count(comm_id) != 0; }

  // Physical placement; drives device-level membership and classification.
  void set_placement(const std::map<RankId, GpuKey>& placement);

  // Rendezvous after restore/resize: rebuilds rings against new locations,
  // preserves sequence counters, resets intent classification.
  void rendezvous(const std::map<RankId, GpuKey>& placement);

  // --- communicator init (blocking join + registration count) -------------
  // Returns true when the join is complete (all members issued).
  bool init_issue(RankId r, int comm_id, Time ready);
  bool init_done(int comm_id) const { return comms_.at(comm_id).init_done; }
  Time init_at(int comm_id) const { return comms_.at(comm_id).init_at; }
  Cls classification(int comm_id) const { return comms_.at(comm_id).cls; }
  int local_count(int comm_id, GpuKey g) const;

  // --- collective issue ----------------------------------------------------
  struct IssueResult {
    CollKey key;
    bool completed = false;   // completed synchronously at issue
    Time complete_at = 0;
    bool local_closer = false;  // this issue triggered the device-level op
  };
  // `contrib`: payload snapshot for contributors (allreduce/send/bcast root);
  // empty otherwise. `expects_result`: install target slot or -1.
  IssueResult issue(RankId r, int comm_id, prog::CollKind kind,
                    std::vector<u64> contrib, u64 payload_words, int expects_slot,
                    int root, Time ready);

  bool completed(CollKey k) const;
  Time complete_time(CollKey k) const;
  void set_on_complete(CompletionFn fn) { on_complete_ = std::move(fn); }

  // --- bookkeeping / invariants --------------------------------------------
  // Collectives with at least one but not all member issues outstanding.
  std::vector<CollKey> partially_issued() const;
  u64 issued_seq(int comm_id, RankId r) const;
  std::map<int, u64> seq_snapshot(RankId r) const;
  void restore_seq(RankId r, const std::map<int, u64>& seqs);
  // Per-rank ordered issue log (comm, seq) for program-order audits.
  const std::vector<std::pair<int, u64>>& issue_log(RankId r) const;

 private:
  struct Pending {
    prog::CollKind kind{};
    u64 payload_words = 0;
    int root = -1;
    std::vector<u64> sum;                 // accumulated contributions
    std::map<RankId, int> out_slot;
    std::set<RankId> issued;
    std::map<GpuKey, int> gpu_issued;     // residents issued per GPU
    std::map<GpuKey, Time> gpu_ready;
    bool completed = false;
    Time complete_at = 0;
  };
  struct Comm {
    prog::CommDef def;
    std::set<RankId> init_issued;
    std::map<RankId, Time> init_ready;
    bool init_done = false;
    Time init_at = 0;
    Cls cls = Cls::Unknown;
    std::map<RankId, u64> next_seq;
    std::map<u64, Pending> pending;
    std::vector<GpuKey> ring;
    std::set<GpuKey> gpus;  // GPUs hosting members
  };

  void classify(Comm& c);
  void finish(int comm_id, u64 seq);

  sim::Engine& eng_;
  const sim::CostModel& cost_;
  TraceSink& trace_;
  int job_id_;
  std::map<int, Comm> comms_;
  std::map<RankId, GpuKey> placement_;
  std::map<RankId, std::vector<std::pair<int, u64>>> issue_log_;
  CompletionFn on_complete_;
};

}  // namespace fleetsim::coll
