#include "fleetsim/report.hpp"

#include <algorithm>
#include <map>
#include <sstream>
#include <vector>

namespace fleetsim::cli {

namespace {

std::string mib(u64 bytes) {
  char buf[32];
  snprintf(buf, sizeof buf, "%.3f", static_cast<double>(bytes) / (1 << 20));
  return buf;
}

std::string ms(i64 ns) {
  char buf[32];
  snprintf(buf, sizeof buf, "%.3f", static_cast<double>(ns) / 1e6);
  return buf;
}

void table(std::ostringstream& out, const std::string& title,
           const std::vector<std::string>& header,
           const std::vector<std::vector<std::string>>& rows) {
  out << "== " << title << " ==\n";
  if (rows.empty()) {
    out << "(no records)\n\n";
    return;
  }
  std::vector<size_t> width(header.size());
  for (size_t i = 0; i < header.size(); ++i) width[i] = header[i].size();
  for (const auto& r : rows)
    for (size_t i = 0; i < r.size(); ++i) width[i] = std::max(width[i], r[i].size());
  auto line = [&](const std::vector<std::string>& r) {
    for (size_t i = 0; i < r.size(); ++i) {
      out << r[i];
      if (i + 1 < r.size()) out << std::string(width[i] - r[i].size() + 2, ' ');
    }
    out << "\n";
  };
  line(header);
  for (const auto& r : rows) line(r);
  out << "\n";
}

}  // namespace

std::string render_report(const std::string& trace_text, std::string* warning) {
  std::ostringstream out;
  if (warning) warning->clear();
  if (trace_text.empty()) {
    out << "(empty trace)\n";
    return out.str();
  }
  bool truncated = false;
  auto records = parse_trace(trace_text, &truncated);
  if (truncated && warning)
    *warning = "trace truncated; report covers the parsed prefix only";

  // Checkpoint size accounting.
  std::vector<std::vector<std::string>> sizes;
  for (const auto& r : records) {
    if (r["kind"] != "checkpoint_manifest") continue;
    sizes.push_back({std::to_string(r["job"].get<int>()),
                     std::to_string(r["index"].get<int>()),
                     r.contains("ckpt_kind") ? r["ckpt_kind"].get<std::string>() : "",
                     std::to_string(r["step"].get<int>()),
                     mib(r["s_g"].get<u64>()), mib(r["s_cr"].get<u64>()),
                     mib(r["s_cr_inc"].get<u64>()), mib(r["upload_bytes"].get<u64>())});
  }
  table(out, "checkpoint sizes (MiB)",
        {"job", "idx", "kind", "step", "S_G", "S_Cr", "S_Cr_inc", "uploaded"}, sizes);

  // Migration / restore latency breakdowns.
  std::vector<std::vector<std::string>> lat;
  for (const auto& r : records) {
    if (r["kind"] != "sched_action") continue;
    std::string action = r["action"].get<std::string>();
    const Json* b = nullptr;
    if (action == "preempted" && r.contains("latency")) b = &r["latency"];
    if (action == "restore_latency") b = &r;
    if (!b) continue;
    lat.push_back({std::to_string(r["job"].get<int>()), action,
                   ms((*b)["barrier"].get<i64>()), ms((*b)["dump"].get<i64>()),
                   ms((*b)["upload"].get<i64>()), ms((*b)["download"].get<i64>()),
                   ms((*b)["restore"].get<i64>()), ms((*b)["rendezvous"].get<i64>()),
                   ms((*b)["total"].get<i64>())});
  }
  table(out, "migration latency (ms)",
        {"job", "action", "barrier", "dump", "upload", "download", "restore",
         "rendezvous", "total"},
        lat);

  // Time-slicing overhead per device (latest observation per job/gpu).
  std::map<std::pair<int, int>, std::pair<double, std::string>> overhead;
  for (const auto& r : records) {
    if (r["kind"] != "monitor") continue;
    overhead[{r["job"].get<int>(), r["gpu"].get<int>()}] = {
        r["overhead"].get<double>(), r["decision"].get<std::string>()};
  }
  std::vector<std::vector<std::string>> mon;
  for (const auto& [k, v] : overhead) {
    char buf[32];
    snprintf(buf, sizeof buf, "%.2f%%", v.first * 100.0);
    mon.push_back({std::to_string(k.first), std::to_string(k.second), buf, v.second});
  }
  table(out, "time-slicing overhead", {"job", "gpu", "overhead", "decision"}, mon);

  // SLA windows.
  std::vector<std::vector<std::string>> sla;
  for (const auto& r : records) {
    if (r["kind"] != "sla_window") continue;
    char buf[32];
    snprintf(buf, sizeof buf, "%.4f", r["fraction"].get<double>());
    sla.push_back({std::to_string(r["job"].get<int>()), r["tier"].get<std::string>(),
                   std::to_string(r["window"].get<i64>()), buf,
                   r.contains("violated") && r["violated"].get<bool>() ? "VIOLATED"
                                                                        : ""});
  }
  {
    // violation markers come from separate records
    std::map<std::pair<int, i64>, bool> violated;
    for (const auto& r : records)
      if (r["kind"] == "sla_violation")
        violated[{r["job"].get<int>(), r["window"].get<i64>()}] = true;
    size_t idx = 0;
    for (const auto& r : records) {
      if (r["kind"] != "sla_window") continue;
      if (violated.count({r["job"].get<int>(), r["window"].get<i64>()}))
        sla[idx][4] = "VIOLATED";
      ++idx;
    }
  }
  table(out, "SLA windows", {"job", "tier", "window", "fraction", ""}, sla);

  // Switch traffic totals.
  std::map<int, std::array<u64, 3>> traffic;  // job -> out/in/d2d
  for (const auto& r : records) {
    if (r["kind"] != "switch_report") continue;
    auto& t = traffic[r["job"].get<int>()];
    t[0] += r["swap_out_bytes"].get<u64>();
    t[1] += r["swap_in_bytes"].get<u64>();
    t[2] += r["d2d_bytes"].get<u64>() + r["install_bytes"].get<u64>();
  }
  std::vector<std::vector<std::string>> sw;
  for (const auto& [jid, t] : traffic)
    sw.push_back({std::to_string(jid), mib(t[0]), mib(t[1]), mib(t[2])});
  table(out, "context-switch traffic (MiB)", {"job", "swap_out", "swap_in", "d2d"}, sw);

  if (truncated) out << "WARNING: trace truncated; partial report.\n";
  return out.str();
}

}  // namespace fleetsim::cli
