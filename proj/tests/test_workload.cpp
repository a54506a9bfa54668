#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <set>

#include "fleetsim/oracle.hpp"
#include "fleetsim/workload.hpp"

using namespace fleetsim;
using namespace fleetsim::wl;

namespace {

JobSpec small_dp(int dp) {
  JobSpec s;
  s.name = "dp" + std::to_string(dp);
  s.world = dp;
  s.dp = dp;
  s.layers = 4;
  s.params_per_layer = 512;
  s.minibatches = 3;
  s.microbatches = 2;
  s.input_elems = 256;
  s.act_elems_base = 256;
  s.act_elems_jitter = 128;
  s.seed = 42;
  return s;
}

}  // namespace

TEST_CASE("spec validation rejects inconsistent shapes") {
  JobSpec s = small_dp(4);
  CHECK_NOTHROW(s.validate());
  s.world = 5;
  CHECK_THROWS_AS(s.validate(), ConfigError);
  s = small_dp(4);
  s.zero_shards = 3;  // must divide dp
  CHECK_THROWS_AS(s.validate(), ConfigError);
  s = small_dp(4);
  s.layers = 3;
  s.pp = 2;
  s.world = 8;
  s.dp = 4;
  CHECK_THROWS_AS(s.validate(), ConfigError);  // layers % pp != 0
}

TEST_CASE("Megatron-order topology: tp fastest, dp middle, pp slowest") {
  JobSpec s;
  s.world = 32;
  s.dp = 4;
  s.tp = 2;
  s.pp = 4;
  s.layers = 4;
  s.validate();
  auto t = RankTopology::build(s);
  // rank = pp*(dp*tp) + dp*tp + tp
  CHECK(t.coords[0].dp == 0);
  CHECK(t.coords[0].tp == 0);
  CHECK(t.coords[0].pp == 0);
  CHECK(t.coords[1].tp == 1);
  CHECK(t.coords[2].dp == 1);
  CHECK(t.coords[8].pp == 1);
  CHECK(t.rank_of(3, 1, 2, s) == 2 * 8 + 3 * 2 + 1);
}

TEST_CASE("pure-DP job builds one DP communicator and no pipeline pairs") {
  auto job = build_job(small_dp(4));
  REQUIRE(job.comms.size() == 2);  // meta + dp
  CHECK(job.comms[0].label == "meta");
  CHECK(job.comms[0].members.size() == 4);
  CHECK(job.comms[1].label.rfind("dp.", 0) == 0);
  CHECK(job.comms[1].members.size() == 4);
}

TEST_CASE("8-rank 4-way pipeline x 2-way data-parallel communicator inventory") {
  JobSpec s;
  s.world = 8;
  s.dp = 2;
  s.pp = 4;
  s.layers = 4;
  s.params_per_layer = 256;
  s.validate();
  auto job = build_job(s);
  int dp_comms = 0, pp_comms = 0;
  for (const auto& c : job.comms) {
    if (c.label.rfind("dp.", 0) == 0) {
      ++dp_comms;
      CHECK(c.members.size() == 2);
    }
    if (c.label.rfind("pp.", 0) == 0) {
      ++pp_comms;
      CHECK(c.members.size() == 2);
    }
  }
  CHECK(dp_comms == 4);      // one per pipeline stage
  CHECK(pp_comms == 3 * 2);  // 3 adjacent pairs x 2 replicas
}

TEST_CASE("32-rank 3D communicator inventory matches an independent enumeration") {
  JobSpec s;
  s.world = 32;
  s.dp = 4;
  s.tp = 2;
  s.pp = 4;
  s.layers = 4;
  s.params_per_layer = 512;
  s.validate();
  auto job = build_job(s);
  auto topo = RankTopology::build(s);
  // Independent oracle: enumerate member sets per dimension directly.
  std::set<std::set<RankId>> want_dp;
  for (int p = 0; p < 4; ++p)
    for (int t = 0; t < 2; ++t) {
      std::set<RankId> m;
      for (int d = 0; d < 4; ++d)
        for (RankId r = 0; r < 32; ++r)
          if (topo.coords[r].dp == d && topo.coords[r].tp == t &&
              topo.coords[r].pp == p)
            m.insert(r);
      want_dp.insert(m);
    }
  std::set<std::set<RankId>> got_dp;
  for (const auto& c : job.comms)
    if (c.label.rfind("dp.", 0) == 0)
      got_dp.insert(std::set<RankId>(c.members.begin(), c.members.end()));
  CHECK(got_dp == want_dp);
  CHECK(job.dp_comm_ids().size() == 8);
}

TEST_CASE("zero layout: max slicing and shard groups") {
  JobSpec s = small_dp(4);
  auto z = zero_layout(s);
  CHECK(z.max_slicing == 4);  // s=1

  s = small_dp(8);
  s.zero_shards = 2;
  z = zero_layout(s);
  CHECK(z.max_slicing == 4);
  // slicing groups contain only equal shard indices
  auto topo = RankTopology::build(s);
  for (RankId r = 0; r < s.world; ++r) {
    auto group = topo.splice_group(r);
    for (RankId m : group) CHECK(topo.coords[m].shard == topo.coords[r].shard);
    CHECK(static_cast<int>(group.size()) == z.max_slicing);
  }

  s = small_dp(4);
  s.zero_shards = 4;  // dp == s: not shrinkable at all
  z = zero_layout(s);
  CHECK(z.max_slicing == 1);
}

TEST_CASE("zero-sharded optimizer state partitions the local layers") {
  JobSpec s = small_dp(4);
  s.zero_shards = 2;
  auto z = zero_layout(s);
  for (RankId r = 0; r < 4; ++r) {
    CHECK(z.owned_local_layers[r].size() == 2);  // 4 layers / 2 shards
    for (int l : z.owned_local_layers[r]) CHECK(l % 2 == z.shard_of_rank[r]);
  }
}

TEST_CASE("stable allocation sequence is identical across a DP replica group") {
  auto job = build_job(small_dp(4));
  using Op = prog::Instr::Op;
  auto stable_seq = [&](RankId r) {
    std::vector<std::pair<u64, int>> seq;
    for (const auto& ins : job.programs[r].code)
      if (ins.op == Op::AllocDev && ins.stability == mem::Stability::Stable)
        seq.push_back({ins.size.base_words, static_cast<int>(ins.cat)});
    return seq;
  };
  auto ref = stable_seq(0);
  CHECK(!ref.empty());
  for (RankId r = 1; r < 4; ++r) CHECK(stable_seq(r) == ref);
}

TEST_CASE("footprint estimate is positive and stable bytes match P+O") {
  auto job = build_job(small_dp(2));
  u64 expect_stable = 0;
  // 4 layers of P plus 4 layers of O, each rounded to the 256-byte alignment.
  u64 per = (512 * 8 + 255) / 256 * 256;
  expect_stable = 8 * per;
  for (RankId r = 0; r < 2; ++r) {
    CHECK(job.stable_bytes[r] == expect_stable);
    CHECK(job.peak_transient_bytes[r] > 0);
  }
}

TEST_CASE("oracle is deterministic and differs across seeds") {
  auto job = build_job(small_dp(2));
  sim::CostModel cost;
  auto r1 = oracle::run(job, cost);
  auto r2 = oracle::run(job, cost);
  CHECK(r1.ranks.size() == 2);
  for (int r = 0; r < 2; ++r) {
    CHECK(r1.ranks[r].stable == r2.ranks[r].stable);
    CHECK(r1.ranks[r].rng_state == r2.ranks[r].rng_state);
  }
  CHECK(r1.minibatch_ns == r2.minibatch_ns);
  CHECK(r1.total_ns == r2.total_ns);

  auto spec2 = small_dp(2);
  spec2.seed = 43;
  auto other = oracle::run(build_job(spec2), cost);
  CHECK(other.ranks[0].stable != r1.ranks[0].stable);
}

TEST_CASE("oracle P/O state is identical across data-parallel replicas") {
  auto job = build_job(small_dp(4));
  sim::CostModel cost;
  auto res = oracle::run(job, cost);
  for (int r = 1; r < 4; ++r) CHECK(res.ranks[r].stable == res.ranks[0].stable);
  // gradients differ per replica before the allreduce, so the input seeds
  // must differ: check the staging host input landed differently
  CHECK(res.ranks[0].rng_state == res.ranks[1].rng_state);  // same draw count
}

TEST_CASE("oracle handles 3D parallelism and per-mini-batch times are positive") {
  JobSpec s;
  s.world = 8;
  s.dp = 2;
  s.tp = 2;
  s.pp = 2;
  s.layers = 4;
  s.params_per_layer = 256;
  s.minibatches = 2;
  s.microbatches = 2;
  s.input_elems = 128;
  s.act_elems_base = 128;
  s.act_elems_jitter = 64;
  s.validate();
  auto job = build_job(s);
  sim::CostModel cost;
  auto res = oracle::run(job, cost);
  REQUIRE(res.minibatch_ns.size() == 2);
  CHECK(res.minibatch_ns[0] > 0);
  CHECK(res.minibatch_ns[1] > 0);
  // DP replicas of the same (tp, pp) coordinate converge to the same P/O.
  auto topo = job.topo;
  for (RankId a = 0; a < 8; ++a)
    for (RankId b = 0; b < 8; ++b)
      if (topo.coords[a].tp == topo.coords[b].tp &&
          topo.coords[a].pp == topo.coords[b].pp)
        CHECK(res.ranks[a].stable == res.ranks[b].stable);
}

TEST_CASE("topology override API is honored and validated") {
  JobSpec s = small_dp(2);
  s.topology_override = {{1, 0, 0}, {0, 0, 0}};  // swap the two replicas
  auto t = RankTopology::build(s);
  CHECK(t.coords[0].dp == 1);
  CHECK(t.coords[1].dp == 0);
  s.topology_override = {{0, 0, 0}, {0, 0, 0}};  // duplicate
  CHECK_THROWS_AS(RankTopology::build(s), ConfigError);
}
