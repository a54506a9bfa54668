#pragma once

#include <string>

#include "fleetsim/trace.hpp"

namespace fleetsim::cli {

// Renders the size accounting, migration latency breakdowns, time-slicing
// overhead percentages and SLA windows from a serialized trace.
// Returns the rendered text; sets *warning for truncated input.
std::string render_report(const std::string& trace_text, std::string* warning);

}  // namespace fleetsim::cli
