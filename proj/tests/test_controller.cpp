#include <doctest.h>

#include <map>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include "decoy/controller.hpp"
#include "decoy/harness.hpp"

using namespace decoy;

namespace {

const HostAddr kAttacker{0x0a000001, 0x020000000001};
const HostAddr kVictim{0x0a000002, 0x020000000002};
const SocketAddr kService{kVictim, 80};

// Attacker on port 1, victim on 2, honey on 3, all over 1 ms links; the
// migration fires on the n-th request.
struct Rig {
  Engine e{17};
  Switch sw{e};
  ServerHost victim;
  ServerHost honey;
  Controller ctl;
  AttackerClient attacker;
  NthPacketTrigger trigger;
  std::optional<NthPacketTrigger> restore;
  std::vector<TcpSegment> from_honey;
  std::vector<TcpSegment> to_attacker;
  std::map<std::uint64_t, std::uint32_t> honey_count_at_cutover;

  Rig(std::uint32_t n, std::uint32_t total, std::uint32_t viss, std::uint32_t hiss,
      std::optional<std::uint32_t> restore_at = {})
      : victim(e, ServerConfig{"victim", kService, "web-v1", 200, true}, IssPolicy::fixed(viss)),
        honey(e, ServerConfig{"honey", kService, "web-v1", 200, true}, IssPolicy::fixed(hiss)),
        ctl(e, sw, ControllerConfig{}, ServiceLayout{kService, 2, kService, 3}),
        attacker(e,
                 ClientConfig{SocketAddr{kAttacker, 40001}, kService, total, 10 * kMillisecond, 0,
                              32, 32},
                 IssPolicy::fixed(1000), e.stream("payload")),
        trigger(kVictim.ip, 80, n, 1) {
    const LinkModel link{kMillisecond, NoJitter{}};
    victim.set_uplink(sw.connect(2, link, [this](TcpSegment s) { victim.receive(s); }));
    auto honey_tx = sw.connect(3, link, [this](TcpSegment s) { honey.receive(s); });
    honey.set_uplink([this, honey_tx](TcpSegment s) {
      from_honey.push_back(s);
      honey_tx(s);
    });
    attacker.set_uplink(sw.connect(1, link, [this](TcpSegment s) {
      to_attacker.push_back(s);
      attacker.receive(s);
    }));
    ctl.add_route(kAttacker.ip, 1);
    ctl.add_route(kVictim.ip, 2);
    sw.set_packet_in([this](PacketIn p) { ctl.on_packet_in(std::move(p)); });
    if (restore_at) restore.emplace(kVictim.ip, 80, *restore_at + 1, 2);
    sw.set_mirror([this](const TcpSegment& s, PortId port) {
      ctl.observe(s, port);
      if (auto a = trigger.observe(s, e.now())) ctl.on_alert(*a);
      if (restore)
        if (auto a = restore->observe(s, e.now())) ctl.restore_original(a->tuple, a->segment.seq);
    });
    attacker.on_complete([this] { e.stop(); });
    attacker.start();
  }

  FiveTuple conn() const { return FiveTuple{Proto::tcp, kAttacker.ip, kVictim.ip, 40001, 80}; }
  void run() { e.run_until(30 * kSecond); }
};

}  // namespace

TEST_CASE("reactive forwarding installs both directions once") {
  Rig r(1000, 5, 7000, 9000);  // trigger never fires
  r.run();
  CHECK(r.attacker.complete());
  // The SYN misses; its SYN-ACK and everything after hit installed rules.
  CHECK(r.ctl.packet_ins_handled() == 1);
  CHECK(r.sw.table().size() == 2);
  CHECK(r.ctl.migration(r.conn()) == nullptr);
}

TEST_CASE("sequence deltas for fixed ISNs") {
  Rig r(100, 120, 7000, 9000);
  r.run();
  REQUIRE(r.attacker.complete());
  const MigrationRecord* m = r.ctl.migration(r.conn());
  REQUIRE(m);
  CHECK(m->phase == Phase::redirected);
  CHECK(m->seq_delta == 2000);
  CHECK(seq_add(SeqNum{m->seq_delta}, m->ack_delta).value == 0);
  REQUIRE(m->victim_isn);
  REQUIRE(m->honey_isn);
  CHECK(m->victim_isn->value == 7000);
  CHECK(m->honey_isn->value == 9000);

  // Every live honey data segment reaches the attacker shifted by -2000,
  // e.g. seq 9105 arrives as 7105.
  SimTime cutover = -1;
  for (const auto& ev : r.ctl.events())
    if (ev.event == "cutover") cutover = ev.time;
  REQUIRE(cutover >= 0);
  std::map<std::string, std::uint32_t> at_attacker;
  for (const auto& s : r.to_attacker)
    if (!s.payload.empty()) at_attacker[s.payload] = s.seq.value;
  int live = 0;
  for (const auto& s : r.from_honey) {
    auto it = at_attacker.find(s.payload);
    if (s.payload.empty() || it == at_attacker.end() || s.ts_sent < cutover) continue;
    ++live;
    CHECK(it->second == seq_add(s.seq, m->ack_delta).value);
  }
  CHECK(live == 21);
  TcpSegment probe;
  probe.seq = SeqNum{9105};
  Rewrite{m->ack_delta, 0, {}, {}}.apply(probe);
  CHECK(probe.seq.value == 7105);
}

TEST_CASE("equal ISNs give identity rewrites") {
  Rig r(100, 110, 7000, 7000);
  r.run();
  REQUIRE(r.attacker.complete());
  const MigrationRecord* m = r.ctl.migration(r.conn());
  REQUIRE(m);
  CHECK(m->seq_delta == 0);
  CHECK(m->ack_delta == 0);
}

TEST_CASE("victim gets 99 requests and the honey replays them first") {
  Rig r(100, 120, 7000, 9000);
  r.run();
  REQUIRE(r.attacker.complete());
  const auto& reqs = r.attacker.requests();
  REQUIRE(r.victim.app_log().size() == 99);
  for (std::size_t i = 0; i < 99; ++i) CHECK(r.victim.app_log()[i].request == reqs[i].request);
  REQUIRE(r.honey.app_log().size() == 120);
  for (std::size_t i = 0; i < 120; ++i) CHECK(r.honey.app_log()[i].request == reqs[i].request);

  SimTime cutover = -1;
  for (const auto& ev : r.ctl.events())
    if (ev.event == "cutover") cutover = ev.time;
  REQUIRE(cutover >= 0);
  // Honey served exactly the 99 replays before the first live request.
  CHECK(r.honey.app_log()[98].at <= cutover);
  CHECK(r.honey.app_log()[99].at > cutover);
  // The victim connection was reset by the controller, not by the attacker.
  CHECK(r.victim.resets_received() == 1);
  for (const auto& s : r.to_attacker) {
    CHECK_FALSE(s.flags.has(TcpFlag::rst));
    CHECK_FALSE(s.flags.has(TcpFlag::fin));
  }
}

TEST_CASE("phase history follows the migration order") {
  Rig r(100, 120, 7000, 9000);
  r.run();
  const MigrationRecord* m = r.ctl.migration(r.conn());
  REQUIRE(m);
  std::vector<Phase> phases;
  for (const auto& st : m->history) phases.push_back(st.phase);
  CHECK(phases ==
        std::vector<Phase>{Phase::idle, Phase::cloning, Phase::splicing, Phase::redirected});
  for (std::size_t i = 1; i < m->history.size(); ++i)
    CHECK(m->history[i - 1].at <= m->history[i].at);
}

TEST_CASE("duplicate alerts are ignored") {
  Rig r(100, 120, 7000, 9000);
  r.e.run_until(1000 * kMillisecond);  // request 100 leaves near 993 ms
  const MigrationRecord* m = r.ctl.migration(r.conn());
  REQUIRE(m);
  CHECK(m->phase != Phase::idle);
  Alert again;
  again.tuple = r.conn();
  again.sid = 1;
  const std::size_t before = r.ctl.events().size();
  r.ctl.on_alert(again);
  REQUIRE(r.ctl.events().size() == before + 1);
  CHECK(r.ctl.events().back().event == "alert_ignored");
  r.run();
  CHECK(r.attacker.complete());
}

TEST_CASE("alert for an unknown connection") {
  Engine e;
  Switch sw(e);
  Controller ctl(e, sw, {}, ServiceLayout{kService, 2, kService, 3});
  Alert a;
  a.tuple = FiveTuple{Proto::tcp, 1, 2, 3, 4};
  CHECK_THROWS_AS(ctl.on_alert(a), AlertForUnknownConnection);
}

TEST_CASE("restore outside REDIRECTED") {
  Engine e;
  Switch sw(e);
  Controller ctl(e, sw, {}, ServiceLayout{kService, 2, kService, 3});
  CHECK_THROWS_AS(ctl.restore_original(FiveTuple{Proto::tcp, 1, 2, 3, 4}), InvalidPhase);

  Rig r(1000, 3, 7000, 9000);
  r.run();
  CHECK_THROWS_AS(r.ctl.restore_original(r.conn()), InvalidPhase);
}

TEST_CASE("restore accounting") {
  Rig r(100, 120, 7000, 9000, 110);
  r.run();
  REQUIRE(r.attacker.complete());
  const MigrationRecord* m = r.ctl.migration(r.conn());
  REQUIRE(m);
  CHECK(m->phase == Phase::restored);
  CHECK(m->restore_replayed == 11);

  const auto& reqs = r.attacker.requests();
  // victim: 99 live, 11 replayed (100..110), 10 live (111..120)
  REQUIRE(r.victim.app_log().size() == 120);
  for (std::size_t i = 0; i < 120; ++i) CHECK(r.victim.app_log()[i].request == reqs[i].request);
  // honey: 99 replayed and 11 live, requests 1..110
  REQUIRE(r.honey.app_log().size() == 110);
  for (std::size_t i = 0; i < 110; ++i) CHECK(r.honey.app_log()[i].request == reqs[i].request);
  for (const auto& s : r.to_attacker) {
    CHECK_FALSE(s.flags.has(TcpFlag::rst));
    CHECK_FALSE(s.flags.has(TcpFlag::fin));
  }
}

TEST_CASE("delta algebra composes to identity") {
  std::mt19937_64 rng(8);
  for (int i = 0; i < 5000; ++i) {
    const SeqNum victim{static_cast<std::uint32_t>(rng())};
    const SeqNum honey{static_cast<std::uint32_t>(rng())};
    const std::uint32_t seq_delta = seq_diff(honey, victim);
    const std::uint32_t ack_delta = 0u - seq_delta;
    CHECK(seq_add(victim, seq_delta) == honey);
    TcpSegment s;
    s.seq = SeqNum{static_cast<std::uint32_t>(rng())};
    s.ack = SeqNum{static_cast<std::uint32_t>(rng())};
    const TcpSegment orig = s;
    Rewrite{seq_delta, ack_delta, {}, {}}.apply(s);
    Rewrite{ack_delta, seq_delta, {}, {}}.apply(s);
    CHECK(s.seq == orig.seq);
    CHECK(s.ack == orig.ack);
  }
}

TEST_CASE("behavioral equivalence with random ISNs") {
  for (std::uint64_t seed : {1u, 2u, 3u, 4u, 5u}) {
    Scenario s;
    s.seed = seed;
    s.total_packets = 60;
    s.trigger_n = 30;
    s.random_iss = true;
    const auto migrated = run_repetition(s, 0);
    Scenario base = s;
    base.migrate = false;
    const auto plain = run_repetition(base, 0);
    CHECK(migrated.completed);
    CHECK(migrated.violations.empty());
    REQUIRE(migrated.migration);
    CHECK(migrated.migration->phase == Phase::redirected);
    CHECK(migrated.attacker_stream == plain.attacker_stream);
  }
}

TEST_CASE("background flows each cost a packet-in") {
  Scenario s;
  s.total_packets = 20;
  s.trigger_n = 10;
  s.background = BackgroundLoadSpec{20, 70, 100 * kMillisecond, 56};
  const auto r = run_repetition(s, 0);
  CHECK(r.background_flows == 1400);
  CHECK(r.packet_ins >= 1400);
  CHECK(r.violations.empty());
}

TEST_CASE("clone failure falls back without touching the attacker") {
  Scenario s;
  s.total_packets = 20;
  s.trigger_n = 10;
  s.clone_mode = CloneMode::on_demand;
  s.costs = CostTable({CloneStrategy{CloneKind::victim_image, LatencyDist::fixed(100), 0, 0, 1.0, ""}});
  s.fail_policy = FailPolicy::fail_open;
  const auto open = run_repetition(s, 0);
  REQUIRE(open.migration);
  CHECK(open.migration->phase == Phase::fallback);
  CHECK(open.completed);
  CHECK(open.violations.empty());
  CHECK(open.victim_requests.size() == 20);

  s.fail_policy = FailPolicy::fail_closed;
  const auto closed = run_repetition(s, 0);
  REQUIRE(closed.migration);
  CHECK(closed.migration->phase == Phase::fallback);
  CHECK_FALSE(closed.completed);
  CHECK(closed.victim_requests.size() == 9);
  // The session just goes quiet; the only complaint is that it never finished.
  REQUIRE(closed.violations.size() == 1);
  CHECK(closed.violations[0].kind == "incomplete");
}

TEST_CASE("a restore signal during cloning waits for the redirect") {
  Scenario s;
  s.total_packets = 30;  // long enough to outlast the clone
  s.trigger_n = 8;
  s.restore_at = 9;
  s.request_interval = 6 * kMillisecond;
  s.clone_mode = CloneMode::on_demand;
  s.strategy = CloneKind::disk_copy;  // 45 ms, several requests long
  const auto r = run_repetition(s, 0);
  CHECK(r.completed);
  CHECK(r.violations.empty());
  REQUIRE(r.migration);
  CHECK(r.migration->phase == Phase::restored);
  CHECK(r.victim_requests == r.attacker_requests);
  bool deferred = false;
  for (const auto& e : r.trace.events) deferred = deferred || e.event == "restore_deferred";
  CHECK(deferred);
}
