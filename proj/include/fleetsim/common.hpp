#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>

namespace fleetsim {

using u8 = std::uint8_t;
using u32 = std::uint32_t;
using u64 = std::uint64_t;
using i64 = std::int64_t;

// Virtual time in integer nanoseconds. No real time anywhere in the simulator.
using Time = i64;
using Dur = i64;

constexpr Time kUsec = 1'000;
constexpr Time kMsec = 1'000'000;
constexpr Time kSecond = 1'000'000'000;

inline Time from_secs(double s) { return static_cast<Time>(std::llround(s * 1e9)); }
inline double to_secs(Time t) { return static_cast<double>(t) / 1e9; }

using RankId = int;
using GpuKey = int;  // global flat GPU index within the fleet

constexpr RankId kNoRank = -1;

// A fault raised by simulated device/proxy machinery. Aborts the issuing job,
// surfaced to the scheduler; never tears down the simulation itself.
struct SimFault : std::runtime_error {
  explicit SimFault(const std::string& what) : std::runtime_error(what) {}
};

// Malformed scenario/config input. CLI exits with code 2 on these.
struct ConfigError : std::runtime_error {
  explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

// Internal consistency violation (a simulator bug, not a modeled fault).
struct InternalError : std::logic_error {
  explicit InternalError(const std::string& what) : std::logic_error(what) {}
};

inline void internal_check(bool ok, const char* msg) {
  if (!ok) throw InternalError(msg);
}

}  // namespace fleetsim
