#include "fleetsim/barrier.hpp"

namespace fleetsim::bar {

const char* to_string(BPhase p) {
  switch (p) {
    case BPhase::Phase1: return "phase1";
    case BPhase::Phase2: return "phase2";
    case BPhase::Acquired: return "acquired";
  }
  return "?";
}

BarrierController::BarrierController(sim::Engine& eng, TraceSink& trace, int job_id,
                                     int world, Mode mode)
    : eng_(eng), trace_(trace), job_id_(job_id), world_(world), mode_(mode) {
  st_.resize(world);
}

bool BarrierController::request(const std::vector<RankId>& targets) {
  internal_check(!targets.empty(), "barrier request with no targets");
  // The job-end quiesce meta closes the gate: a command landing after every
  // target issued its quiesce round is too late, the job is completing.
  bool all_late = true;
  for (RankId r : targets)
    if (!(st_.at(r).quiesce_issued || finished_.count(r))) all_late = false;
  Json j;
  j["job"] = job_id_;
  j["targets"] = targets;
  if (all_late) {
    j["refused"] = "job_completing";
    trace_.emit(eng_.now(), "barrier_request", j);
    return false;
  }
  trace_.emit(eng_.now(), "barrier_request", j);
  for (RankId r : targets) st_.at(r).got_command = true;
  return true;
}

void BarrierController::release() {
  if (acquired_ != world_) throw SimFault("release_barrier: not all ranks acquired");
  for (int r = 0; r < world_; ++r) {
    st_[r].phase = BPhase::Phase1;
    st_[r].got_command = false;
    internal_check(st_[r].outstanding.empty(), "release with outstanding metas");
  }
  acquired_ = 0;
  acquired_at_ = -1;
  Json j;
  j["job"] = job_id_;
  trace_.emit(eng_.now(), "barrier_release", j);
}

std::pair<u64, u64> BarrierController::payload(RankId r) const {
  const auto& s = st_.at(r);
  return {s.got_command ? 1u : 0u, s.phase == BPhase::Phase2 ? 1u : 0u};
}

void BarrierController::on_meta_issued(RankId r, u64 seq) {
  st_.at(r).outstanding.push_back(seq);
}

void BarrierController::on_meta_complete(u64 seq, u64 need_sum, u64 ack_sum) {
  completed_[seq] = {need_sum, ack_sum};
}

void BarrierController::set_phase(RankId r, BPhase p) {
  auto& s = st_.at(r);
  internal_check(static_cast<int>(p) >= static_cast<int>(s.phase),
                 "barrier phase must be monotone");
  if (p == s.phase) return;
  s.phase = p;
  Json j;
  j["job"] = job_id_;
  j["rank"] = r;
  j["phase"] = to_string(p);
  trace_.emit(eng_.now(), "barrier_phase", j);
  if (p == BPhase::Acquired) {
    ++acquired_;
    if (acquired_ == world_) {
      acquired_at_ = eng_.now();
      Json a;
      a["job"] = job_id_;
      trace_.emit(eng_.now(), "barrier_acquired", a);
      if (on_all_acquired) {
        auto fn = on_all_acquired;
        eng_.schedule(0, fn);
      }
    }
  }
}

BPhase BarrierController::harvest(RankId r) {
  auto& s = st_.at(r);
  while (!s.outstanding.empty()) {
    auto it = completed_.find(s.outstanding.front());
    if (it == completed_.end()) break;
    auto [need, ack] = it->second;
    s.outstanding.pop_front();
    if (s.phase == BPhase::Phase1 && need > 0) set_phase(r, BPhase::Phase2);
    if (s.phase == BPhase::Phase2 && ack == static_cast<u64>(world_)) {
      set_phase(r, BPhase::Acquired);
      break;
    }
  }
  return s.phase;
}

bool BarrierController::any_outstanding() const {
  for (const auto& s : st_)
    if (!s.outstanding.empty()) return true;
  return false;
}

void BarrierController::restore_rank(RankId r, BPhase phase, bool got_command) {
  st_.at(r).phase = phase;
  st_.at(r).got_command = got_command;
  if (phase == BPhase::Acquired) ++acquired_;
}

}  // namespace fleetsim::bar
