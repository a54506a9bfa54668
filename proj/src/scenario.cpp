#include "fleetsim/scenario.hpp"

#include <cstdlib>
#include <fstream>

namespace fleetsim::cli {

namespace {

[[noreturn]] void bad(const std::string& path, const std::string& what) {
  throw ConfigError(path + ": " + what);
}

double get_num(const Json& j, const std::string& path, const char* key, double dflt,
               bool required = false) {
  if (!j.contains(key)) {
    if (required) bad(path + "." + key, "missing required field");
    return dflt;
  }
  if (!j.at(key).is_number()) bad(path + "." + key, "must be a number");
  return j.at(key).get<double>();
}

double gib(double v) { return v * static_cast<double>(1ull << 30); }

}  // namespace

Scenario Scenario::parse(const Json& j) {
  Scenario s;
  if (!j.is_object()) bad("$", "scenario must be a JSON object");
  s.seed = static_cast<u64>(get_num(j, "$", "seed", 1));
  s.horizon_sec = get_num(j, "$", "horizon_sec", -1);

  if (j.contains("cost_model")) {
    const Json& c = j.at("cost_model");
    if (!c.is_object()) bad("cost_model", "must be an object");
    s.cost.h2d_bw = gib(get_num(c, "cost_model", "h2d_gib_s", 16.0));
    s.cost.d2h_bw = gib(get_num(c, "cost_model", "d2h_gib_s", 16.0));
    s.cost.d2d_bw = gib(get_num(c, "cost_model", "d2d_gib_s", 600.0));
    s.cost.net_bw = gib(get_num(c, "cost_model", "net_gib_s", 25.0));
    s.cost.store_bw = gib(get_num(c, "cost_model", "store_gib_s", 2.0));
    s.cost.net_latency = from_secs(get_num(c, "cost_model", "net_latency_us", 10) / 1e6);
    s.cost.kernel_cost = from_secs(get_num(c, "cost_model", "kernel_us", 10) / 1e6);
    s.cost.dispatch_latency =
        from_secs(get_num(c, "cost_model", "dispatch_ns", 200) / 1e9);
  }
  s.cost.validate();

  if (!j.contains("fleet")) bad("fleet", "missing required field");
  {
    const Json& f = j.at("fleet");
    if (!f.contains("regions") || !f.at("regions").is_array() ||
        f.at("regions").empty())
      bad("fleet.regions", "must be a non-empty array");
    int ri = 0;
    for (const auto& rj : f.at("regions")) {
      std::string rpath = "fleet.regions[" + std::to_string(ri++) + "]";
      sched::FleetConfig::Region region;
      region.name = rj.contains("name") ? rj.at("name").get<std::string>()
                                        : "r" + std::to_string(ri - 1);
      if (!rj.contains("clusters") || !rj.at("clusters").is_array())
        bad(rpath + ".clusters", "must be an array");
      int ci = 0;
      for (const auto& cj : rj.at("clusters")) {
        std::string cpath = rpath + ".clusters[" + std::to_string(ci++) + "]";
        sched::FleetConfig::Cluster cluster;
        cluster.name = cj.contains("name") ? cj.at("name").get<std::string>()
                                           : "c" + std::to_string(ci - 1);
        if (!cj.contains("nodes") || !cj.at("nodes").is_array())
          bad(cpath + ".nodes", "must be an array");
        int ni = 0;
        for (const auto& nj : cj.at("nodes")) {
          std::string npath = cpath + ".nodes[" + std::to_string(ni++) + "]";
          sched::FleetConfig::Node node;
          node.gpus = static_cast<int>(get_num(nj, npath, "gpus", 0, true));
          if (node.gpus <= 0) bad(npath + ".gpus", "must be > 0");
          node.mem_mib = static_cast<u64>(get_num(nj, npath, "mem_mib", 4));
          if (node.mem_mib == 0) bad(npath + ".mem_mib", "must be > 0");
          cluster.nodes.push_back(node);
        }
        if (cluster.nodes.empty()) bad(cpath + ".nodes", "must be non-empty");
        region.clusters.push_back(std::move(cluster));
      }
      s.fleet.regions.push_back(std::move(region));
    }
  }

  if (j.contains("sla")) {
    s.sla.premium = get_num(j.at("sla"), "sla", "premium_fraction", 0.95);
    s.sla.standard = get_num(j.at("sla"), "sla", "standard_fraction", 0.70);
  }

  job::JobConfig dflt;
  auto parse_cfg = [&](const Json& src, const std::string& path, job::JobConfig base) {
    job::JobConfig c = base;
    if (src.contains("eager_dispatch")) c.eager_dispatch = src.at("eager_dispatch").get<bool>();
    if (src.contains("squashing")) c.squash.enabled = src.at("squashing").get<bool>();
    if (src.contains("validation_period"))
      c.squash.validation_period = src.at("validation_period").get<int>();
    if (src.contains("rollback_on_validation_failure"))
      c.squash.rollback_on_failure = src.at("rollback_on_validation_failure").get<bool>();
    if (src.contains("overhead_threshold"))
      c.squash.overhead_threshold = src.at("overhead_threshold").get<double>();
    if (src.contains("barrier_mode")) {
      auto m = src.at("barrier_mode").get<std::string>();
      if (m == "boundary") c.barrier_mode = bar::Mode::Boundary;
      else if (m == "per_collective") c.barrier_mode = bar::Mode::PerCollective;
      else bad(path + ".barrier_mode", "must be boundary|per_collective");
    }
    if (src.contains("barrier_targets")) {
      c.barrier_targets.clear();
      for (const auto& t : src.at("barrier_targets"))
        c.barrier_targets.push_back(t.get<int>());
      if (c.barrier_targets.empty()) bad(path + ".barrier_targets", "must be non-empty");
    }
    if (src.contains("misclassify_stable_every"))
      c.misclassify_stable_every = src.at("misclassify_stable_every").get<int>();
    if (src.contains("checkpoint_interval_sec"))
      c.checkpoint_interval = from_secs(src.at("checkpoint_interval_sec").get<double>());
    if (src.contains("slack_fraction"))
      c.slack_fraction = src.at("slack_fraction").get<double>();
    if (src.contains("monitor_autoscale"))
      c.monitor_autoscale = src.at("monitor_autoscale").get<bool>();
    return c;
  };
  if (j.contains("defaults")) dflt = parse_cfg(j.at("defaults"), "defaults", dflt);

  if (j.contains("test_hooks")) {
    const Json& h = j.at("test_hooks");
    if (h.contains("corrupt_splice_dedup") && h.at("corrupt_splice_dedup").get<bool>())
      dflt.corrupt_splice_dedup = true;
    if (h.contains("misclassify_stable_every"))
      dflt.misclassify_stable_every = h.at("misclassify_stable_every").get<int>();
  }

  if (!j.contains("jobs") || !j.at("jobs").is_array() || j.at("jobs").empty())
    bad("jobs", "must be a non-empty array");
  int ji = 0;
  std::set<std::string> names;
  for (const auto& je : j.at("jobs")) {
    std::string path = "jobs[" + std::to_string(ji++) + "]";
    JobEntry e;
    if (!je.contains("spec")) bad(path + ".spec", "missing required field");
    try {
      e.spec = wl::spec_from_json(je.at("spec"));
    } catch (const ConfigError& err) {
      bad(path + ".spec", err.what());
    }
    if (je.contains("name")) e.spec.name = je.at("name").get<std::string>();
    if (e.spec.name.empty()) e.spec.name = "job" + std::to_string(ji - 1);
    if (!names.insert(e.spec.name).second) bad(path + ".name", "duplicate job name");
    if (je.contains("tier"))
      e.spec.tier = wl::tier_from_string(je.at("tier").get<std::string>());
    e.arrival_sec = get_num(je, path, "arrival_sec", 0);
    e.cfg = parse_cfg(je, path, dflt);
    s.jobs.push_back(std::move(e));
  }

  if (j.contains("events")) {
    if (!j.at("events").is_array()) bad("events", "must be an array");
    int ei = 0;
    for (const auto& ev : j.at("events")) {
      std::string path = "events[" + std::to_string(ei++) + "]";
      EventEntry e;
      e.at_sec = get_num(ev, path, "at_sec", 0, true);
      if (!ev.contains("kind")) bad(path + ".kind", "missing required field");
      e.kind = ev.at("kind").get<std::string>();
      static const std::set<std::string> kinds = {
          "checkpoint", "preempt", "resize", "migrate",
          "node_fail",  "node_add", "barrier"};
      if (!kinds.count(e.kind)) bad(path + ".kind", "unknown event kind " + e.kind);
      if (ev.contains("job")) e.job = ev.at("job").get<std::string>();
      if (ev.contains("slicing")) e.slicing = ev.at("slicing").get<int>();
      if (ev.contains("gpu")) e.gpu = ev.at("gpu").get<int>();
      if (ev.contains("targets"))
        for (const auto& t : ev.at("targets")) e.targets.push_back(t.get<int>());
      if (ev.contains("region")) e.region = ev.at("region").get<int>();
      if (ev.contains("cluster")) e.cluster = ev.at("cluster").get<int>();
      if (ev.contains("gpus")) e.gpus = ev.at("gpus").get<int>();
      if (ev.contains("mem_mib")) e.mem_mib = ev.at("mem_mib").get<u64>();
      bool needs_job = e.kind != "node_fail" && e.kind != "node_add";
      if (needs_job && e.job.empty()) bad(path + ".job", "missing required field");
      if (needs_job && !names.count(e.job)) bad(path + ".job", "unknown job " + e.job);
      if (e.kind == "resize" && e.slicing <= 0)
        bad(path + ".slicing", "must be > 0 for resize");
      if (e.kind == "node_fail" && e.gpu < 0)
        bad(path + ".gpu", "must name a GPU on the failing node");
      s.events.push_back(std::move(e));
    }
  }

  if (j.contains("trace")) {
    const Json& t = j.at("trace");
    if (t.contains("dispatch_records"))
      s.dispatch_records = t.at("dispatch_records").get<bool>();
  }
  return s;
}

Scenario Scenario::load_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open scenario file: " + path);
  Json j = Json::parse(in, nullptr, false);
  if (j.is_discarded()) throw ConfigError(path + ": invalid JSON");
  return parse(j);
}

void apply_env_cost_overrides(sim::CostModel& cost) {
  auto env = [](const char* name) -> std::optional<double> {
    const char* v = std::getenv(name);
    if (!v || !*v) return std::nullopt;
    char* end = nullptr;
    double d = std::strtod(v, &end);
    if (end == v) throw ConfigError(std::string(name) + ": not a number");
    return d;
  };
  double g = static_cast<double>(1ull << 30);
  if (auto v = env("FLEETSIM_COST_H2D_GIB_S")) cost.h2d_bw = *v * g;
  if (auto v = env("FLEETSIM_COST_D2H_GIB_S")) cost.d2h_bw = *v * g;
  if (auto v = env("FLEETSIM_COST_D2D_GIB_S")) cost.d2d_bw = *v * g;
  if (auto v = env("FLEETSIM_COST_NET_GIB_S")) cost.net_bw = *v * g;
  if (auto v = env("FLEETSIM_COST_STORE_GIB_S")) cost.store_bw = *v * g;
  if (auto v = env("FLEETSIM_COST_NET_LATENCY_US")) cost.net_latency = from_secs(*v / 1e6);
  if (auto v = env("FLEETSIM_COST_KERNEL_US")) cost.kernel_cost = from_secs(*v / 1e6);
  if (auto v = env("FLEETSIM_COST_DISPATCH_NS")) cost.dispatch_latency = from_secs(*v / 1e9);
  cost.validate();
}

}  // namespace fleetsim::cli
