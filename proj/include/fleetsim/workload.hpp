#pragma once

#include <array>
#include <optional>
#include <string>
#include <vector>

#include "fleetsim/program.hpp"
#include "fleetsim/trace.hpp"

namespace fleetsim::wl {

enum class Tier { Premium, Standard, Basic };

const char* to_string(Tier t);
Tier tier_from_string(const std::string& s);

enum class Adversarial { None, OptAddsRank };

// Synthetic training job: a mini-batch loop over P/O/G/A buffers with
// data/tensor/pipeline parallelism and optional partial optimizer sharding.
struct JobSpec {
  std::string name = "job";
  int world = 1;
  int dp = 1;
  int tp = 1;
  int pp = 1;
  int zero_shards = 1;  // s; 1 = off
  int layers = 4;
  u64 params_per_layer = 2048;  // words, per full layer (split across tp)
  int minibatches = 4;
  int microbatches = 2;
  u64 input_elems = 1024;        // per-rank mini-batch size, constant
  u64 act_elems_base = 1024;     // boundary activation width
  u64 act_elems_jitter = 512;    // internal activation jitter (per rank, step)
  u64 host_dataset_kib = 256;    // static host state (dataset cache analog)
  Dur host_prep = 20 * kUsec;    // per-mini-batch host-side data prep
  Tier tier = Tier::Basic;
  Adversarial adversarial = Adversarial::None;
  u64 seed = 1;

  // Optional explicit rank -> (dp, tp, pp) mapping override.
  std::vector<std::array<int, 3>> topology_override;

  void validate() const;
};

struct RankCoord {
  int dp = 0, tp = 0, pp = 0;
  int shard = 0;     // ZeRO shard index within the subgroup
  int subgroup = 0;  // ZeRO subgroup index
};

// Mirrored Megatron/DeepSpeed assignment: tp fastest, dp middle, pp slowest.
struct RankTopology {
  std::vector<RankCoord> coords;

  static RankTopology build(const JobSpec& spec);
  RankId rank_of(int dp, int tp, int pp, const JobSpec& spec) const;
  // Ranks that may legally share a GPU with `r`: equal (tp, pp, shard).
  std::vector<RankId> splice_group(RankId r) const;
};

struct ZeroLayout {
  int shards = 1;
  int max_slicing = 1;                   // dp / s
  std::vector<int> shard_of_rank;        // by rank
  std::vector<std::vector<int>> owned_local_layers;  // by rank, stage-local idx
};

// Optimizer-state partition for partial sharding. Throws ConfigError when the
// spec violates `s divides dp`.
ZeroLayout zero_layout(const JobSpec& spec);

struct BuiltJob {
  JobSpec spec;
  RankTopology topo;
  ZeroLayout zero;
  std::vector<prog::RankProgram> programs;  // by rank
  std::vector<prog::CommDef> comms;
  u64 program_hash = 0;  // over all instruction streams

  // Per-rank device footprint (exact, from a sizes-only dry run).
  std::vector<u64> stable_bytes;
  std::vector<u64> peak_transient_bytes;

  int meta_comm_id() const { return 0; }
  // Communicator ids in the data-parallel dimension (the oracle set for
  // intent-inference checks).
  std::vector<int> dp_comm_ids() const;
};

BuiltJob build_job(const JobSpec& spec);

// Well-known host buffer slots every rank program uses.
constexpr int kHostDataset = 0;
constexpr int kHostStaging = 1;
constexpr int kHostLossLog = 2;
constexpr int kHostLossOut = 3;

// Simulated file identities (per-rank container filesystem).
std::string file_path(int kind, RankId rank, i64 aux);
std::vector<u64> file_content(int kind, const JobSpec& spec, RankId rank, i64 aux,
                              u64 loss_word);

Json spec_to_json(const JobSpec& s);
JobSpec spec_from_json(const Json& j);

}  // namespace fleetsim::wl
