#pragma once

#include <deque>
#include <functional>
#include <map>
#include <vector>

#include "fleetsim/sim.hpp"
#include "fleetsim/trace.hpp"

namespace fleetsim::bar {

// Acquisition point selection. Boundary is the default for every job type;
// PerCollective keeps the pure data-parallel protocol (a tandem meta before
// every data allreduce) behind a scenario flag.
enum class Mode { Boundary, PerCollective };

enum class BPhase { Phase1, Phase2, Acquired };

const char* to_string(BPhase p);

struct BarrierRankState {
  BPhase phase = BPhase::Phase1;
  bool got_command = false;
  std::deque<u64> outstanding;  // issued meta seqs, not yet harvested
  bool quiesce_issued = false;  // issued a job-end quiesce meta already
};

// Per-job protocol state. Meta-allreduces ride the dedicated all-ranks meta
// communicator; this controller only tracks phases, harvests and sums — the
// worker loop issues the metas so program order is preserved by construction.
class BarrierController {
 public:
  BarrierController(sim::Engine& eng, TraceSink& trace, int job_id, int world,
                    Mode mode);

  Mode mode() const { return mode_; }
  int world() const { return world_; }

  // Command delivery. Returns false (refused) when the job is already
  // completing: every target has issued its final quiesce meta.
  bool request(const std::vector<RankId>& targets);
  // Resets every rank to Phase1; precondition: all ranks Acquired.
  void release();

  std::pair<u64, u64> payload(RankId r) const;
  void on_meta_issued(RankId r, u64 seq);
  void on_meta_complete(u64 seq, u64 need_sum, u64 ack_sum);
  bool meta_completed(u64 seq) const { return completed_.count(seq) != 0; }

  // Processes completed metas in issue order; returns the phase afterwards.
  BPhase harvest(RankId r);

  BPhase phase(RankId r) const { return st_[r].phase; }
  bool sync_mode(RankId r) const { return st_[r].phase == BPhase::Phase2; }
  bool got_command(RankId r) const { return st_[r].got_command; }
  bool all_acquired() const { return acquired_ == world_; }
  int acquired_count() const { return acquired_; }
  Time acquired_at() const { return acquired_at_; }

  void mark_quiesce_issued(RankId r) { st_[r].quiesce_issued = true; }
  void mark_rank_finished(RankId r) { finished_[r] = true; }
  bool any_outstanding() const;

  std::function<void()> on_all_acquired;

  // restore support
  void restore_rank(RankId r, BPhase phase, bool got_command);

 private:
  void set_phase(RankId r, BPhase p);

  sim::Engine& eng_;
  TraceSink& trace_;
  int job_id_;
  int world_;
  Mode mode_;
  std::vector<BarrierRankState> st_;
  std::map<u64, std::pair<u64, u64>> completed_;
  std::map<RankId, bool> finished_;
  int acquired_ = 0;
  Time acquired_at_ = -1;
};

}  // namespace fleetsim::bar
