#include "fleetsim/trace.hpp"

#include <sstream>

namespace fleetsim {

std::vector<Json> parse_trace(const std::string& text, bool* truncated) {
  std::vector<Json> out;
  if (truncated) *truncated = false;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    Json rec = Json::parse(line, nullptr, false);
    if (rec.is_discarded()) {
      if (truncated) *truncated = true;
      break;
    }
    out.push_back(std::move(rec));
  }
  if (out.empty()) throw ConfigError("trace: empty input");
  const Json& head = out.front();
  if (!head.contains("kind") || head["kind"] != "trace_header" || !head.contains("version"))
    throw ConfigError("trace: missing header record");
  if (head["version"].get<int>() != kTraceVersion)
    throw ConfigError("trace: unknown version " + head["version"].dump());
  return out;
}

}  // namespace fleetsim
