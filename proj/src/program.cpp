#include "fleetsim/program.hpp"

namespace fleetsim::prog {

const char* to_string(CollKind k) {
  switch (k) {
    case CollKind::Allreduce: return "allreduce";
    case CollKind::Send: return "send";
    case CollKind::Recv: return "recv";
    case CollKind::Broadcast: return "broadcast";
  }
  return "?";
}

const char* to_string(Phase p) {
  switch (p) {
    case Phase::Init: return "init";
    case Phase::Fwd: return "fwd";
    case Phase::Bwd: return "bwd";
    case Phase::Comm: return "comm";
    case Phase::Opt: return "opt";
    case Phase::Done: return "done";
  }
  return "?";
}

}  // namespace fleetsim::prog
