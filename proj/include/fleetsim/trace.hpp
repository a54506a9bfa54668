#pragma once

#include <string>
#include <vector>

#include <json.hpp>

#include "fleetsim/common.hpp"

namespace fleetsim {

using Json = nlohmann::ordered_json;

constexpr int kTraceVersion = 1;

// Line-delimited structured trace. One self-describing record per event.
// Records are buffered in memory; callers may stream them to a file after a
// run. Field order is fixed by insertion so identical runs emit identical
// bytes.
class TraceSink {
 public:
  explicit TraceSink(bool dispatch_records = true)
      : dispatch_records_(dispatch_records) {
    Json header;
    header["t"] = 0;
    header["kind"] = "trace_header";
    header["version"] = kTraceVersion;
    lines_.push_back(header.dump());
  }

  void emit(Time t, const std::string& kind, Json fields) {
    Json rec;
    rec["t"] = t;
    rec["kind"] = kind;
    for (auto& [k, v] : fields.items()) rec[k] = v;
    lines_.push_back(rec.dump());
  }

  bool dispatch_records() const { return dispatch_records_; }

  const std::vector<std::string>& lines() const { return lines_; }

  std::string joined() const {
    std::string out;
    for (const auto& l : lines_) {
      out += l;
      out += '\n';
    }
    return out;
  }

 private:
  bool dispatch_records_;
  std::vector<std::string> lines_;
};

// Parses a serialized trace back into records. Throws ConfigError on a
// missing/unknown version header.
std::vector<Json> parse_trace(const std::string& text, bool* truncated = nullptr);

}  // namespace fleetsim
