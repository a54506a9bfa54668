#pragma once

#include <string>
#include <vector>

#include "fleetsim/alloc.hpp"
#include "fleetsim/common.hpp"
#include "fleetsim/vdev.hpp"

namespace fleetsim::prog {

enum class CollKind { Allreduce, Send, Recv, Broadcast };

const char* to_string(CollKind k);

// Immediate operands can fold in runtime values: the per-mini-batch input
// seed (data shard) or the rank id (adversarial models only).
enum class ImmMode { Literal, AddInputSeed, AddRank };

struct KernelSpec {
  vdev::KOp op{};
  u64 imm = 0;
  ImmMode imm_mode = ImmMode::Literal;
  int read0 = -1;  // device buffer slots; -1 = none
  int read1 = -1;
  int write = -1;
};

// Transient sizes may be drawn from the worker RNG at execution time.
struct SizeRule {
  u64 base_words = 0;
  u64 jitter_words = 0;  // draw in [0, jitter) added to base
};

enum class Phase { Init, Fwd, Bwd, Comm, Opt, Done };

const char* to_string(Phase p);

// One deterministic per-rank instruction. Programs are pure data interpreted
// by the event loop (simulator) or directly (oracle).
struct Instr {
  enum class Op {
    HostPrep,        // a = duration ns
    HostAlloc,       // a = host slot, b = words, c = fill (0 zero, 1 dataset)
    HostNote,        // host[b][c % len] = host[a][0]
    HostWriteFile,   // a = file kind (0 package, 1 step log), b = aux (mb)
    HostDeleteFile,  // a = file kind, b = aux
    SeedInput,       // input_seed = rng.next()
    AllocDev,        // a = slot; cat/stability/size
    FreeDev,         // a = slot
    CreateStream,    // a = stream slot
    Launch,          // kern; a = stream slot
    CopyD2H,         // a = dev slot, b = host slot
    CopyH2D,         // a = host slot, b = dev slot
    CommInit,        // a = comm slot, b = comm id
    Collective,      // comm_slot/ckind/payload_slot/async/handle_slot/root
    WaitHandles,     // a = first handle slot, b = count
    WindowOpen,      // optimizer-step squashing window
    WindowClose,
    MinibatchEnd,    // a = mb index, 1-based
    PhaseMark,       // a = step, b = phase
    Halt,
  };

  Op op{};
  i64 a = 0, b = 0, c = 0;
  vdev::BufCat cat{};
  mem::Stability stability{};
  SizeRule size{};
  KernelSpec kern{};
  int comm_slot = 0;
  CollKind ckind{};
  int payload_slot = 0;
  bool async = false;
  int handle_slot = 0;
  int root = -1;  // broadcast root (global rank)
};

struct CommDef {
  int comm_id = 0;
  std::string label;
  std::vector<RankId> members;
};

struct RankProgram {
  std::vector<Instr> code;
  int dev_slots = 0;
  int host_slots = 0;
  int handle_slots = 0;
  int comm_slots = 0;
  int stream_slots = 0;
};

}  // namespace fleetsim::prog
