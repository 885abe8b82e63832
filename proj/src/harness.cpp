#include "decoy/harness.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <set>
#include <sstream>
#include <thread>

#include <json.hpp>

#include "decoy/vswitch.hpp"

namespace decoy {

using nlohmann::json;
namespace fs = std::filesystem;

ConfigError::ConfigError(std::string field, std::string reason)
    : std::runtime_error(field + ": " + reason), field_(std::move(field)) {}

// --------------------------------------------------------------- loading

namespace {

std::string join(const std::string& path, const std::string& key) {
  return path.empty() ? key : path + "." + key;
}

void allow_keys(const json& obj, const std::string& path, std::initializer_list<const char*> keys) {
  if (!obj.is_object()) throw ConfigError(path.empty() ? "<root>" : path, "expected object");
  for (const auto& [k, v] : obj.items()) {
    bool known = false;
    for (const char* allowed : keys) known = known || k == allowed;
    if (!known) throw ConfigError(join(path, k), "unknown field");
  }
}

std::uint64_t get_uint(const json& obj, const std::string& path, const char* key,
                       std::uint64_t fallback) {
  if (!obj.contains(key)) return fallback;
  const json& v = obj[key];
  if (!v.is_number_integer() || v.get<std::int64_t>() < 0)
    throw ConfigError(join(path, key), "expected non-negative integer");
  return v.get<std::uint64_t>();
}

std::uint32_t get_u32(const json& obj, const std::string& path, const char* key,
                      std::uint32_t fallback) {
  const std::uint64_t v = get_uint(obj, path, key, fallback);
  if (v > UINT32_MAX) throw ConfigError(join(path, key), "value too large");
  return static_cast<std::uint32_t>(v);
}

double get_num(const json& obj, const std::string& path, const char* key, double fallback) {
  if (!obj.contains(key)) return fallback;
  if (!obj[key].is_number()) throw ConfigError(join(path, key), "expected number");
  return obj[key].get<double>();
}

bool get_bool(const json& obj, const std::string& path, const char* key, bool fallback) {
  if (!obj.contains(key)) return fallback;
  if (!obj[key].is_boolean()) throw ConfigError(join(path, key), "expected true or false");
  return obj[key].get<bool>();
}

std::string get_str(const json& obj, const std::string& path, const char* key,
                    const std::string& fallback) {
  if (!obj.contains(key)) return fallback;
  if (!obj[key].is_string()) throw ConfigError(join(path, key), "expected string");
  return obj[key].get<std::string>();
}

template <typename E>
E get_enum(const json& obj, const std::string& path, const char* key, E fallback,
           std::initializer_list<std::pair<const char*, E>> names) {
  if (!obj.contains(key)) return fallback;
  const std::string v = get_str(obj, path, key, "");
  std::string options;
  for (const auto& [n, e] : names) {
    if (v == n) return e;
    options += options.empty() ? n : std::string(" | ") + n;
  }
  throw ConfigError(join(path, key), "expected one of " + options);
}

std::string resolve(const std::string& base_dir, const std::string& p) {
  if (p.empty() || fs::path(p).is_absolute()) return p;
  return (fs::path(base_dir) / p).lexically_normal().string();
}

LinkModel parse_link(const json& j, const std::string& path) {
  allow_keys(j, path, {"base_delay_us", "jitter"});
  LinkModel m;
  m.base_delay = static_cast<SimTime>(get_uint(j, path, "base_delay_us", 1000));
  if (!j.contains("jitter")) return m;
  const std::string jp = join(path, "jitter");
  const json& jit = j["jitter"];
  allow_keys(jit, jp, {"dist", "lo_us", "hi_us", "mean_us", "sd_us", "fraction"});
  const std::string dist = get_str(jit, jp, "dist", "none");
  if (dist == "none") {
    m.jitter = NoJitter{};
  } else if (dist == "uniform") {
    const double lo = get_num(jit, jp, "lo_us", 0), hi = get_num(jit, jp, "hi_us", 0);
    if (lo > hi) throw ConfigError(join(jp, "lo_us"), "must not exceed hi_us");
    m.jitter = UniformJitter{static_cast<SimTime>(std::llround(lo)), static_cast<SimTime>(std::llround(hi))};
  } else if (dist == "uniform_pct") {
    const double f = get_num(jit, jp, "fraction", 0);
    if (f < 0 || f >= 1) throw ConfigError(join(jp, "fraction"), "must be in [0, 1)");
    m = LinkModel::uniform_pct(m.base_delay, f);
  } else if (dist == "normal") {
    const double sd = get_num(jit, jp, "sd_us", 0);
    if (sd < 0) throw ConfigError(join(jp, "sd_us"), "must be >= 0");
    m.jitter = NormalJitter{get_num(jit, jp, "mean_us", 0), sd};
  } else {
    throw ConfigError(join(jp, "dist"), "expected one of none | uniform | uniform_pct | normal");
  }
  return m;
}

}  // namespace

Scenario parse_scenario(std::string_view json_text, const std::string& base_dir) {
  json doc;
  try {
    doc = json::parse(json_text);
  } catch (const json::exception& e) {
    throw ConfigError("<root>", std::string("malformed document: ") + e.what());
  }
  allow_keys(doc, "",
             {"name", "description", "seed", "repetitions", "topology", "ruleset", "trigger",
              "total_packets", "request", "iss", "background", "clone", "replay", "migrate",
              "restore_at"});
  Scenario s;
  s.name = get_str(doc, "", "name", s.name);
  s.seed = get_uint(doc, "", "seed", s.seed);
  s.repetitions = get_u32(doc, "", "repetitions", s.repetitions);
  s.total_packets = get_u32(doc, "", "total_packets", s.total_packets);
  s.replay = get_bool(doc, "", "replay", s.replay);
  s.migrate = get_bool(doc, "", "migrate", s.migrate);
  s.random_iss = get_enum(doc, "", "iss", true, {{"random", true}, {"fixed", false}});
  if (doc.contains("restore_at") && !doc["restore_at"].is_null())
    s.restore_at = get_u32(doc, "", "restore_at", 0);

  if (doc.contains("topology")) {
    const json& t = doc["topology"];
    allow_keys(t, "topology",
               {"link", "control_delay_us", "controller_service_us", "server_processing_us",
                "honey_addressing"});
    if (t.contains("link")) s.link = parse_link(t["link"], "topology.link");
    s.control_delay = static_cast<SimTime>(get_uint(t, "topology", "control_delay_us", 50));
    s.controller_service = static_cast<SimTime>(get_uint(t, "topology", "controller_service_us", 5));
    s.server_processing = static_cast<SimTime>(get_uint(t, "topology", "server_processing_us", 200));
    s.honey_addressing = get_enum(t, "topology", "honey_addressing", HoneyAddressing::same,
                                  {{"same", HoneyAddressing::same},
                                   {"distinct", HoneyAddressing::distinct}});
  }

  if (doc.contains("trigger")) {
    const json& t = doc["trigger"];
    allow_keys(t, "trigger", {"kind", "n"});
    s.trigger = get_enum(t, "trigger", "kind", TriggerKind::nth_packet,
                         {{"nth_packet", TriggerKind::nth_packet},
                          {"threshold", TriggerKind::threshold}});
    s.trigger_n = get_u32(t, "trigger", "n", s.trigger_n);
  }
  s.ruleset = resolve(base_dir, get_str(doc, "", "ruleset", ""));

  if (doc.contains("request")) {
    const json& r = doc["request"];
    allow_keys(r, "request", {"min_bytes", "max_bytes", "interval_us"});
    s.min_request_bytes = get_u32(r, "request", "min_bytes", s.min_request_bytes);
    s.max_request_bytes = get_u32(r, "request", "max_bytes", s.max_request_bytes);
    s.request_interval = static_cast<SimTime>(get_uint(r, "request", "interval_us", 10000));
  }

  if (doc.contains("background") && !doc["background"].is_null()) {
    const json& b = doc["background"];
    allow_keys(b, "background", {"n_hosts", "procs_per_host", "interval_us", "payload_bytes"});
    BackgroundLoadSpec spec;
    spec.n_hosts = get_u32(b, "background", "n_hosts", 0);
    spec.procs_per_host = get_u32(b, "background", "procs_per_host", 0);
    spec.msg_interval = static_cast<SimTime>(get_uint(b, "background", "interval_us", 1000000));
    spec.payload_bytes = get_u32(b, "background", "payload_bytes", 56);
    s.background = spec;
  }

  if (doc.contains("clone")) {
    const json& c = doc["clone"];
    allow_keys(c, "clone", {"mode", "strategy", "cost_table", "cutover", "fail_policy"});
    s.clone_mode = get_enum(c, "clone", "mode", CloneMode::static_honey,
                            {{"static", CloneMode::static_honey},
                             {"on_demand", CloneMode::on_demand}});
    const std::string strategy = get_str(c, "clone", "strategy", "VICTIM_IMAGE");
    try {
      s.strategy = parse_clone_kind(strategy);
    } catch (const std::invalid_argument& e) {
      throw ConfigError("clone.strategy", e.what());
    }
    s.cost_table = resolve(base_dir, get_str(c, "clone", "cost_table", ""));
    s.cutover = get_enum(c, "clone", "cutover", CutoverPolicy::immediate,
                         {{"immediate", CutoverPolicy::immediate},
                          {"on_clone_ready", CutoverPolicy::on_clone_ready}});
    s.fail_policy = get_enum(c, "clone", "fail_policy", FailPolicy::fail_open,
                             {{"fail_open", FailPolicy::fail_open},
                              {"fail_closed", FailPolicy::fail_closed}});
  }

  if (!s.cost_table.empty()) {
    try {
      s.costs = CostTable::load(s.cost_table);
    } catch (const std::exception& e) {
      throw ConfigError("clone.cost_table", e.what());
    }
  }
  if (!s.ruleset.empty()) {
    try {
      s.rules = load_ruleset(s.ruleset);
    } catch (const std::exception& e) {
      throw ConfigError("ruleset", e.what());
    }
  }
  validate(s);
  return s;
}

Scenario load_scenario(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("<file>", "cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_scenario(ss.str(), fs::path(path).parent_path().string());
}

void validate(const Scenario& s) {
  if (s.repetitions < 1) throw ConfigError("repetitions", "must be >= 1");
  if (s.total_packets < 1) throw ConfigError("total_packets", "must be >= 1");
  if (s.link.base_delay < 0) throw ConfigError("topology.link.base_delay_us", "must be >= 0");
  if (s.min_request_bytes < 1) throw ConfigError("request.min_bytes", "must be >= 1");
  if (s.max_request_bytes < s.min_request_bytes)
    throw ConfigError("request.max_bytes", "must be >= request.min_bytes");
  if (s.max_request_bytes > 1400) throw ConfigError("request.max_bytes", "must be <= 1400");
  if (s.request_interval <= 0) throw ConfigError("request.interval_us", "must be > 0");
  if (s.trigger == TriggerKind::nth_packet) {
    if (s.trigger_n < 1) throw ConfigError("trigger.n", "must be >= 1");
    if (s.trigger_n > s.total_packets) throw ConfigError("trigger.n", "exceeds total_packets");
  } else {
    if (s.ruleset.empty()) throw ConfigError("ruleset", "required for a threshold trigger");
    if (s.rules.empty()) throw ConfigError("ruleset", "contains no rules");
  }
  if (s.restore_at) {
    if (s.trigger == TriggerKind::nth_packet && *s.restore_at <= s.trigger_n)
      throw ConfigError("restore_at", "must be greater than the trigger index");
    if (*s.restore_at >= s.total_packets)
      throw ConfigError("restore_at", "must be less than total_packets");
  }
  if (s.background && s.background->msg_interval <= 0)
    throw ConfigError("background.interval_us", "must be > 0");
  if (s.clone_mode == CloneMode::on_demand && !s.costs.has(s.strategy))
    throw ConfigError("clone.strategy", "not present in the cost table");
}

std::uint64_t repetition_seed(std::uint64_t seed, std::uint32_t rep) {
  return splitmix64(seed ^ (std::uint64_t{rep} * 0x9e3779b97f4a7c15ULL));
}

// --------------------------------------------------------------- testbed

namespace {

constexpr PortId kAttackerPort = 1;
constexpr PortId kVictimPort = 2;
constexpr PortId kHoneyPort = 3;

const HostAddr kAttacker{0x0a000001, 0x020000000001};  // 10.0.0.1
const HostAddr kVictim{0x0a000002, 0x020000000002};    // 10.0.0.2
const HostAddr kHoneyDistinct{0x0a000102, 0x020000000102};  // 10.0.1.2
constexpr std::uint16_t kServicePort = 80;
constexpr std::uint16_t kAttackerSport = 40001;
constexpr std::uint32_t kMigrateSid = 1;
constexpr std::uint32_t kRestoreSid = 2;

std::optional<SimTime> phase_time(const MigrationRecord& r, Phase p) {
  for (const auto& st : r.history)
    if (st.phase == p) return st.at;
  return std::nullopt;
}

}  // namespace

RepetitionResult run_repetition(const Scenario& s, std::uint32_t rep) {
  Engine engine(repetition_seed(s.seed, rep));
  Switch sw(engine);

  const SocketAddr service{kVictim, kServicePort};
  const HostAddr honey_addr = s.honey_addressing == HoneyAddressing::same ? kVictim : kHoneyDistinct;
  auto iss_for = [&](const char* who, std::uint32_t fixed) {
    return s.random_iss ? IssPolicy::seeded(engine.stream(std::string(who) + ".iss"))
                        : IssPolicy::fixed(fixed);
  };

  ServerHost victim(engine, ServerConfig{"victim", service, "web-v1", s.server_processing, true},
                    iss_for("victim", 7000));
  victim.set_uplink(sw.connect(kVictimPort, s.link, [&](TcpSegment seg) { victim.receive(std::move(seg)); }));

  std::unique_ptr<ServerHost> honey;
  auto provision_honey = [&] {
    honey = std::make_unique<ServerHost>(
        engine, ServerConfig{"honey", SocketAddr{honey_addr, kServicePort}, "web-v1", s.server_processing, true},
        iss_for("honey", 9000));
    ServerHost* h = honey.get();
    h->set_uplink(sw.connect(kHoneyPort, s.link, [h](TcpSegment seg) { h->receive(std::move(seg)); }));
  };

  ControllerConfig cc;
  cc.control_delay = s.control_delay;
  cc.service_time = s.controller_service;
  cc.replay = s.replay;
  cc.cutover = s.cutover;
  cc.fail_policy = s.fail_policy;
  Controller ctl(engine, sw, cc,
                 ServiceLayout{service, kVictimPort, SocketAddr{honey_addr, kServicePort}, kHoneyPort});
  ctl.add_route(kAttacker.ip, kAttackerPort);
  ctl.add_route(kVictim.ip, kVictimPort);
  sw.set_packet_in([&](PacketIn pin) { ctl.on_packet_in(std::move(pin)); });

  std::unique_ptr<CloneManager> clones;
  if (s.clone_mode == CloneMode::static_honey) {
    provision_honey();
  } else {
    clones = std::make_unique<CloneManager>(engine, s.costs, engine.stream("clonemgr"),
                                            [&](const VictimSpec&, const CloneHandle&) { provision_honey(); });
    ctl.use_clone_manager(*clones, VictimSpec{kVictim, "web-v1", {kServicePort}, "v1"}, s.strategy);
  }

  std::unique_ptr<BackgroundLoad> background;
  if (s.background) background = spawn_background_load(engine, sw, *s.background);

  RepetitionResult out;
  out.trace.rep = rep;
  std::vector<ControllerEvent> harness_events;

  // IDS on the mirror port.
  std::optional<NthPacketTrigger> nth;
  std::optional<RuleEngine> rules;
  if (s.trigger == TriggerKind::nth_packet)
    nth.emplace(kVictim.ip, kServicePort, s.trigger_n, kMigrateSid, "MIGRATE");
  else
    rules.emplace(s.rules);
  std::optional<NthPacketTrigger> restore_trigger;
  if (s.restore_at) restore_trigger.emplace(kVictim.ip, kServicePort, *s.restore_at + 1, kRestoreSid, "RESTORE");
  NthPacketTrigger counter(kVictim.ip, kServicePort, UINT64_MAX);

  StealthMonitor monitor;
  std::optional<FiveTuple> pending_restore;
  ctl.on_phase([&](const FiveTuple& conn, Phase p) {
    if (!pending_restore || !(*pending_restore == conn)) return;
    if (p == Phase::fallback) {
      harness_events.push_back({engine.now(), "restore_dropped", "migration fell back"});
      pending_restore.reset();
    } else if (p == Phase::redirected) {
      pending_restore.reset();
      engine.schedule(engine.now(), [&ctl, conn] { ctl.restore_original(conn); }, "harness.restore");
    }
  });
  sw.set_mirror([&](const TcpSegment& seg, PortId port) {
    ctl.observe(seg, port);
    counter.observe(seg, engine.now());
    if (!s.migrate) return;
    std::vector<Alert> alerts;
    if (nth) {
      if (auto a = nth->observe(seg, engine.now())) alerts.push_back(std::move(*a));
    } else {
      alerts = rules->observe(seg, engine.now());
    }
    for (const Alert& a : alerts) {
      try {
        const Phase before = ctl.migration(a.tuple) ? ctl.migration(a.tuple)->phase : Phase::idle;
        ctl.on_alert(a);
        if (before == Phase::idle && out.trace.trigger_index == 0) {
          out.trace.trigger_index = static_cast<std::uint32_t>(counter.count(a.tuple));
          harness_events.push_back(
              {engine.now(), "trigger", "index=" + std::to_string(out.trace.trigger_index)});
        }
      } catch (const AlertForUnknownConnection& e) {
        harness_events.push_back({engine.now(), "alert_unknown_connection", format_tuple(a.tuple)});
      }
    }
    if (restore_trigger) {
      if (auto a = restore_trigger->observe(seg, engine.now())) {
        const MigrationRecord* m = ctl.migration(a->tuple);
        const bool in_flight = m && (m->phase == Phase::cloning || m->phase == Phase::splicing);
        try {
          if (in_flight) {
            // Too early: ask again once the honey side is live.
            pending_restore = a->tuple;
            harness_events.push_back({engine.now(), "restore_deferred", to_string(m->phase)});
          } else {
            ctl.restore_original(a->tuple, a->segment.seq);
          }
        } catch (const InvalidPhase& e) {
          harness_events.push_back({engine.now(), "restore_rejected", e.what()});
          monitor.add({engine.now(), "restore_rejected", e.what()});
        }
      }
    }
  });

  ClientConfig client;
  client.local = SocketAddr{kAttacker, kAttackerSport};
  client.server = service;
  client.total_requests = s.total_packets;
  client.interval = s.request_interval;
  client.min_request_bytes = s.min_request_bytes;
  client.max_request_bytes = s.max_request_bytes;
  AttackerClient attacker(engine, client, iss_for("attacker", 1000), engine.stream("attacker.payload"));
  attacker.set_uplink(sw.connect(kAttackerPort, s.link, [&](TcpSegment seg) { attacker.receive(std::move(seg)); }));
  attacker.on_send([&](const TcpSegment& seg, const ConnectionState& st) { monitor.on_send(seg, st); });
  attacker.on_receive([&](const TcpSegment& seg, const ConnectionState& st) {
    monitor.on_receive(seg, st, engine.now());
  });
  attacker.on_complete([&] { engine.stop(); });
  attacker.start();

  const SimTime guard = SimTime{s.total_packets} * s.request_interval + 10 * kSecond;
  engine.run_until(guard);

  // Outcome.
  out.completed = attacker.complete();
  if (!out.completed)
    monitor.add({engine.now(), "incomplete",
                 "answered " + std::to_string(attacker.answered()) + " of " +
                     std::to_string(s.total_packets)});
  const FiveTuple conn{Proto::tcp, kAttacker.ip, kVictim.ip, kAttackerSport, kServicePort};
  if (const MigrationRecord* m = ctl.migration(conn)) {
    out.migration = *m;
    // Containment: nothing reaches the victim while the honey holds the session.
    if (auto redirected = phase_time(*m, Phase::redirected)) {
      SimTime until = INT64_MAX;
      for (const auto& e : ctl.events())
        if (e.event == "restore_requested") until = std::min(until, e.time);
      for (const auto& entry : victim.app_log())
        if (entry.at > *redirected && entry.at < until)
          monitor.add({entry.at, "containment", "victim received " + entry.request});
    }
  }

  for (const auto& r : attacker.requests()) {
    PacketRecord p;
    p.index = r.index;
    p.send_us = r.send_us;
    p.recv_us = r.recv_us.value_or(-1);
    p.rtt_us = r.recv_us ? *r.recv_us - r.send_us : -1;
    out.trace.packets.push_back(p);
    out.attacker_requests.push_back(r.request);
  }
  out.trace.events = std::move(harness_events);
  for (const auto& e : ctl.events()) out.trace.events.push_back(e);
  std::stable_sort(out.trace.events.begin(), out.trace.events.end(),
                   [](const ControllerEvent& a, const ControllerEvent& b) { return a.time < b.time; });

  out.violations = monitor.violations();
  out.attacker_stream = attacker.connection().rcvd_stream();
  for (const auto& e : victim.app_log()) out.victim_requests.push_back(e.request);
  if (honey)
    for (const auto& e : honey->app_log()) out.honey_requests.push_back(e.request);
  out.packet_ins = ctl.packet_ins_handled();
  out.background_flows = background ? background->flows().size() : 0;
  out.clones_created = clones ? clones->clones_created() : 0;
  return out;
}

std::vector<LatencyTrace> ExperimentResult::traces() const {
  std::vector<LatencyTrace> out;
  out.reserve(reps.size());
  for (const auto& r : reps) out.push_back(r.trace);
  return out;
}

std::size_t ExperimentResult::violation_count() const {
  std::size_t n = 0;
  for (const auto& r : reps) n += r.violations.size();
  return n;
}

ExperimentResult run_experiment(const Scenario& s, unsigned threads) {
  validate(s);
  ExperimentResult result;
  result.reps.resize(s.repetitions);
  if (threads == 0) threads = std::max(1u, std::thread::hardware_concurrency());
  threads = std::min<unsigned>(threads, s.repetitions);

  std::atomic<std::uint32_t> next{0};
  std::vector<std::exception_ptr> errors(s.repetitions);
  auto worker = [&] {
    for (std::uint32_t rep; (rep = next++) < s.repetitions;) {
      try {
        result.reps[rep] = run_repetition(s, rep);
      } catch (...) {
        errors[rep] = std::current_exception();
      }
    }
  };
  std::vector<std::thread> pool;
  for (unsigned i = 1; i < threads; ++i) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();

  for (std::uint32_t rep = 0; rep < s.repetitions; ++rep) {
    if (!errors[rep]) continue;
    try {
      std::rethrow_exception(errors[rep]);
    } catch (const std::exception& e) {
      throw std::runtime_error("repetition " + std::to_string(rep) + ": " + e.what());
    }
  }
  return result;
}

// ------------------------------------------------------------ statistics

Summary summarize(const std::vector<LatencyTrace>& traces) {
  if (traces.empty()) throw std::invalid_argument("summarize needs at least one trace");
  Summary sum;
  for (const auto& t : traces)
    if (t.trigger_index) {
      sum.trigger_index = t.trigger_index;
      break;
    }

  std::map<std::uint32_t, std::vector<double>> by_index;
  for (const auto& t : traces)
    for (const auto& p : t.packets)
      if (p.rtt_us >= 0) by_index[p.index].push_back(static_cast<double>(p.rtt_us));

  double pre_total = 0, post_total = 0;
  std::size_t pre_n = 0, post_n = 0;
  for (const auto& [index, v] : by_index) {
    IndexStats st;
    st.index = index;
    st.n = v.size();
    double total = 0;
    st.min = st.max = v.front();
    for (double x : v) {
      total += x;
      st.min = std::min(st.min, x);
      st.max = std::max(st.max, x);
    }
    st.mean = total / static_cast<double>(v.size());
    double sq = 0;
    for (double x : v) sq += (x - st.mean) * (x - st.mean);
    st.sd = std::sqrt(sq / static_cast<double>(v.size()));
    sum.per_index.push_back(st);

    if (sum.trigger_index == 0 || index < sum.trigger_index) {
      pre_total += total;
      pre_n += v.size();
    } else if (index > sum.trigger_index) {
      post_total += total;
      post_n += v.size();
    }
  }
  sum.pre_mean = pre_n ? pre_total / static_cast<double>(pre_n) : 0;
  sum.post_mean = post_n ? post_total / static_cast<double>(post_n) : 0;
  sum.ratio = sum.pre_mean > 0 && post_n ? sum.post_mean / sum.pre_mean : 0;

  for (const auto& t : traces)
    for (const auto& e : t.events)
      if (e.event == "clone_instantiated") {
        const auto at = e.detail.find("latency_us=");
        if (at != std::string::npos) sum.clone_latencies.push_back(std::stoll(e.detail.substr(at + 11)));
      }
  return sum;
}

// ------------------------------------------------------------------- CSV

std::string attacker_csv(const std::vector<LatencyTrace>& traces) {
  std::string out = "rep,packet_index,send_us,recv_us,rtt_us\n";
  for (const auto& t : traces)
    for (const auto& p : t.packets) {
      out += std::to_string(t.rep) + ',' + std::to_string(p.index) + ',' +
             std::to_string(p.send_us) + ',' + std::to_string(p.recv_us) + ',' +
             std::to_string(p.rtt_us) + '\n';
    }
  return out;
}

std::string controller_csv(const std::vector<LatencyTrace>& traces) {
  std::string out = "rep,event,time_us,detail\n";
  for (const auto& t : traces)
    for (const auto& e : t.events) {
      std::string detail = e.detail;
      std::replace(detail.begin(), detail.end(), ',', ';');
      std::replace(detail.begin(), detail.end(), '\n', ' ');
      out += std::to_string(t.rep) + ',' + e.event + ',' + std::to_string(e.time) + ',' + detail + '\n';
    }
  return out;
}

std::string summary_csv(const Summary& s) {
  std::string out = "packet_index,n,mean_us,min_us,max_us,sd_us\n";
  char buf[160];
  for (const auto& st : s.per_index) {
    std::snprintf(buf, sizeof buf, "%u,%zu,%.3f,%.3f,%.3f,%.3f\n", st.index, st.n, st.mean, st.min,
                  st.max, st.sd);
    out += buf;
  }
  return out;
}

void write_file(const std::string& path, const std::string& content) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot write " + path);
  f.write(content.data(), static_cast<std::streamsize>(content.size()));
  if (!f) throw IoError("write failed for " + path);
}

void export_csv(const std::vector<LatencyTrace>& traces, const std::string& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir + ": " + ec.message());
  write_file((fs::path(dir) / "attacker.csv").string(), attacker_csv(traces));
  write_file((fs::path(dir) / "controller.csv").string(), controller_csv(traces));
}

namespace {

std::vector<std::string> split_csv_line(const std::string& line, std::size_t fields) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (out.size() + 1 < fields) {
    const std::size_t comma = line.find(',', start);
    if (comma == std::string::npos) break;
    out.push_back(line.substr(start, comma - start));
    start = comma + 1;
  }
  out.push_back(line.substr(start));
  return out;
}

std::vector<std::string> read_lines(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read " + path);
  std::vector<std::string> lines;
  for (std::string line; std::getline(in, line);) lines.push_back(line);
  return lines;
}

}  // namespace

std::vector<LatencyTrace> read_traces(const std::string& dir) {
  std::map<std::uint32_t, LatencyTrace> by_rep;
  const auto attacker = read_lines((fs::path(dir) / "attacker.csv").string());
  if (attacker.empty() || attacker[0] != "rep,packet_index,send_us,recv_us,rtt_us")
    throw IoError(dir + "/attacker.csv: unexpected header");
  for (std::size_t i = 1; i < attacker.size(); ++i) {
    const auto f = split_csv_line(attacker[i], 5);
    if (f.size() != 5) throw IoError(dir + "/attacker.csv: bad row " + std::to_string(i + 1));
    try {
      LatencyTrace& t = by_rep[static_cast<std::uint32_t>(std::stoul(f[0]))];
      t.rep = static_cast<std::uint32_t>(std::stoul(f[0]));
      t.packets.push_back({static_cast<std::uint32_t>(std::stoul(f[1])), std::stoll(f[2]),
                           std::stoll(f[3]), std::stoll(f[4])});
    } catch (const std::logic_error&) {
      throw IoError(dir + "/attacker.csv: bad row " + std::to_string(i + 1));
    }
  }
  const fs::path ctl = fs::path(dir) / "controller.csv";
  if (fs::exists(ctl)) {
    const auto lines = read_lines(ctl.string());
    if (lines.empty() || lines[0] != "rep,event,time_us,detail")
      throw IoError(ctl.string() + ": unexpected header");
    for (std::size_t i = 1; i < lines.size(); ++i) {
      const auto f = split_csv_line(lines[i], 4);
      if (f.size() != 4) throw IoError(ctl.string() + ": bad row " + std::to_string(i + 1));
      try {
        LatencyTrace& t = by_rep[static_cast<std::uint32_t>(std::stoul(f[0]))];
        t.rep = static_cast<std::uint32_t>(std::stoul(f[0]));
        t.events.push_back({std::stoll(f[2]), f[1], f[3]});
        if (f[1] == "trigger" && f[3].rfind("index=", 0) == 0)
          t.trigger_index = static_cast<std::uint32_t>(std::stoul(f[3].substr(6)));
      } catch (const std::logic_error&) {
        throw IoError(ctl.string() + ": bad row " + std::to_string(i + 1));
      }
    }
  }
  std::vector<LatencyTrace> out;
  for (auto& [rep, t] : by_rep) out.push_back(std::move(t));
  return out;
}

}  // namespace decoy
