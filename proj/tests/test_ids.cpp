#include <doctest.h>

#include <random>
#include <string>
#include <vector>

#include "decoy/ids.hpp"

using namespace decoy;

namespace {

const HostAddr kA{0x0a000001, 1};
const HostAddr kB{0x0a000003, 3};
const HostAddr kV{0x0a000002, 2};
const HostAddr kW{0x0a000004, 4};

TcpSegment data(HostAddr src, HostAddr dst, std::uint16_t sport = 40001,
                std::uint16_t dport = 80) {
  TcpSegment s;
  s.src = src;
  s.dst = dst;
  s.sport = sport;
  s.dport = dport;
  s.flags = {TcpFlag::psh, TcpFlag::ack};
  s.payload = "req";
  return s;
}

// The migration rule as written, split over lines, with a concrete address.
const char* kListing =
    "alert tcp any -> 10.0.0.2 \n"
    "any (msg: \"MIGRATE\"; flags: P.A.;\n"
    "threshold: type threshold, track\n"
    "by_dst, count 5, seconds 120; sid1000001;)";

}  // namespace

TEST_CASE("the multi-line migration rule parses") {
  const IdsRule r = parse_rule(kListing);
  CHECK_FALSE(r.src_ip);
  CHECK_FALSE(r.src_port);
  REQUIRE(r.dst_ip);
  CHECK(*r.dst_ip == 0x0a000002u);
  CHECK_FALSE(r.dst_port);
  CHECK(r.msg == "MIGRATE");
  CHECK(r.flags == TcpFlags({TcpFlag::psh, TcpFlag::ack}));
  REQUIRE(r.threshold);
  CHECK(r.threshold->count == 5);
  CHECK(r.threshold->seconds == 120);
  CHECK(r.sid == 1000001);
}

TEST_CASE("minimal rule") {
  const IdsRule r = parse_rule("alert tcp any any -> any any (sid:7;)");
  CHECK(r.sid == 7);
  CHECK(r.flags.empty());
  CHECK_FALSE(r.threshold);
  CHECK(r.matches(data(kA, kV)));
}

TEST_CASE("malformed rules") {
  CHECK_THROWS_AS(parse_rule("alert tcp any -> any (msg:\"x\";)"), ParseError);
  CHECK_THROWS_AS(parse_rule("alert udp any -> any (sid:1;)"), ParseError);
  CHECK_THROWS_AS(parse_rule("alert tcp any <> any (sid:1;)"), ParseError);
  CHECK_THROWS_AS(parse_rule("alert tcp any -> any (sid:1; sid:2;)"), ParseError);
  CHECK_THROWS_AS(parse_rule("alert tcp any -> any (content:\"a\"; sid:1;)"), ParseError);
  CHECK_THROWS_AS(parse_rule("alert tcp any -> any (sid:0;)"), ParseError);
  CHECK_THROWS_AS(
      parse_rule("alert tcp any -> any (threshold: type limit, track by_dst, count 1, "
                 "seconds 1; sid:1;)"),
      ParseError);
  CHECK_THROWS_AS(parse_rule("alert tcp any -> any (sid:1;) trailing"), ParseError);
  try {
    parse_rule("alert tcp any -> 10.0.0.300 any (sid:1;)");
    FAIL("expected ParseError");
  } catch (const ParseError& e) {
    CHECK(e.offset() >= std::string("alert tcp any -> ").size());
  }
}

TEST_CASE("render and parse round-trip") {
  const IdsRule r = parse_rule(kListing);
  const std::string text = render_rule(r);
  CHECK(text ==
        "alert tcp any any -> 10.0.0.2 any (msg:\"MIGRATE\"; flags:P.A.; threshold: type "
        "threshold, track by_dst, count 5, seconds 120; sid:1000001;)");
  CHECK(parse_rule(text) == r);

  std::mt19937_64 rng(5);
  for (int i = 0; i < 200; ++i) {
    IdsRule x;
    if (rng() % 2) x.src_ip = static_cast<std::uint32_t>(rng());
    if (rng() % 2) x.src_port = static_cast<std::uint16_t>(rng());
    if (rng() % 2) x.dst_ip = static_cast<std::uint32_t>(rng());
    if (rng() % 2) x.dst_port = static_cast<std::uint16_t>(rng());
    const char* msgs[] = {"", "a b", "semi;colon", "quote\"d", "back\\slash"};
    x.msg = msgs[rng() % 5];
    for (auto f : {TcpFlag::syn, TcpFlag::ack, TcpFlag::fin, TcpFlag::rst, TcpFlag::psh})
      if (rng() % 2) x.flags.set(f);
    if (rng() % 2)
      x.threshold = Threshold{1 + static_cast<std::uint32_t>(rng() % 9),
                              1 + static_cast<std::uint32_t>(rng() % 300)};
    x.sid = 1 + static_cast<std::uint32_t>(rng() % 100000);
    CHECK(parse_rule(render_rule(x)) == x);
  }
}

TEST_CASE("rulesets") {
  const auto rules = parse_ruleset("# comment\n\nalert tcp any -> any (sid:1;)\n"
                                   "alert tcp any -> any (sid:2;)\n");
  CHECK(rules.size() == 2);
  CHECK_THROWS_AS(parse_ruleset("alert tcp any -> any (sid:1;)\nalert tcp any -> any (sid:1;)"),
                  ParseError);
  try {
    parse_ruleset("alert tcp any -> any (sid:1;)\nalert tcp any -> any (bogus;)");
    FAIL("expected ParseError");
  } catch (const ParseError& e) {
    CHECK(e.offset() > std::string("alert tcp any -> any (sid:1;)\n").size());
  }
  const auto shipped = load_ruleset(std::string(DECOY_SOURCE_DIR) + "/rules/listing1.rules");
  REQUIRE(shipped.size() == 1);
  CHECK(shipped[0] == parse_rule(kListing));
}

TEST_CASE("flag requirement") {
  const IdsRule r = parse_rule("alert tcp any -> any (flags:PA; sid:1;)");
  CHECK(r.matches(data(kA, kV)));
  TcpSegment ack = data(kA, kV);
  ack.flags = {TcpFlag::ack};
  CHECK_FALSE(r.matches(ack));
}

// Reference: alerts are decided from the full list of match times. After an
// alert only later matches count, and only those inside the window.
std::vector<bool> reference_threshold(const std::vector<SimTime>& times, std::uint32_t count,
                                      SimTime window) {
  std::vector<bool> fired(times.size(), false);
  std::size_t first_eligible = 0;
  for (std::size_t i = 0; i < times.size(); ++i) {
    std::uint32_t in_window = 0;
    for (std::size_t j = first_eligible; j <= i; ++j)
      if (times[j] > times[i] - window) ++in_window;
    if (in_window >= count) {
      fired[i] = true;
      first_eligible = i + 1;
    }
  }
  return fired;
}

TEST_CASE("threshold agrees with a brute-force reference") {
  std::mt19937_64 rng(99);
  for (int trial = 0; trial < 300; ++trial) {
    const std::uint32_t count = 1 + static_cast<std::uint32_t>(rng() % 6);
    const std::uint32_t seconds = 1 + static_cast<std::uint32_t>(rng() % 4);
    IdsRule r;
    r.sid = 1;
    r.threshold = Threshold{count, seconds};
    RuleEngine eng({r});
    std::vector<SimTime> times;
    SimTime t = 0;
    const int n = static_cast<int>(rng() % 60);
    for (int i = 0; i < n; ++i) {
      t += static_cast<SimTime>(rng() % 3) * static_cast<SimTime>(rng() % 1500000);
      times.push_back(t);
    }
    const auto expect = reference_threshold(times, count, seconds * kSecond);
    for (int i = 0; i < n; ++i) {
      const auto alerts = eng.observe(data(kA, kV), times[i]);
      CHECK(alerts.size() == (expect[i] ? 1u : 0u));
      if (!alerts.empty()) CHECK(alerts[0].ordinal == static_cast<std::uint64_t>(i + 1));
    }
  }
}

TEST_CASE("threshold tracks destinations separately") {
  IdsRule r = parse_rule("alert tcp any -> any (threshold: type threshold, track by_dst, "
                         "count 3, seconds 10; sid:4;)");
  RuleEngine eng({r});
  int alerts_v = 0, alerts_w = 0;
  for (int i = 0; i < 9; ++i) {
    // interleave sources and destinations; only the destination matters
    const HostAddr src = i % 2 ? kA : kB;
    alerts_v += static_cast<int>(eng.observe(data(src, kV), i).size());
    if (i % 3 == 0) alerts_w += static_cast<int>(eng.observe(data(src, kW), i).size());
  }
  CHECK(alerts_v == 3);
  CHECK(alerts_w == 1);
}

TEST_CASE("rule without threshold alerts on every match") {
  RuleEngine eng({parse_rule("alert tcp any -> 10.0.0.2 80 (msg:\"m\"; sid:9;)")});
  CHECK(eng.observe(data(kA, kV), 0).size() == 1);
  CHECK(eng.observe(data(kA, kV, 1, 81), 0).empty());
  const auto a = eng.observe(data(kA, kV), 5);
  REQUIRE(a.size() == 1);
  CHECK(a[0].sid == 9);
  CHECK(a[0].msg == "m");
  CHECK(a[0].ordinal == 2);
  CHECK(a[0].time == 5);
}

TEST_CASE("nth packet trigger") {
  NthPacketTrigger trig(kV.ip, 80, 100, 1);
  TcpSegment ack = data(kA, kV);
  ack.flags = {TcpFlag::ack};
  ack.payload.clear();
  for (int i = 1; i <= 150; ++i) {
    CHECK_FALSE(trig.observe(ack, i));
    CHECK_FALSE(trig.observe(data(kV, kA, 80, 40001), i));  // reverse direction
    CHECK_FALSE(trig.observe(data(kA, kW), i));             // another service
    const auto a = trig.observe(data(kA, kV), i);
    CHECK(static_cast<bool>(a) == (i == 100));
    if (a) CHECK(a->tuple == FiveTuple::of(data(kA, kV)));
    // a second connection keeps its own count
    CHECK(static_cast<bool>(trig.observe(data(kB, kV, 5555), i)) == (i == 100));
  }
  CHECK(trig.count(FiveTuple::of(data(kA, kV))) == 150);
}

TEST_CASE("fifth data packet trips the published rule and the nth trigger alike") {
  RuleEngine eng({parse_rule(kListing)});
  NthPacketTrigger trig(kV.ip, 80, 5);
  for (int i = 1; i <= 12; ++i) {
    const auto seg = data(kA, kV);
    const bool rule_fired = !eng.observe(seg, i * 10 * kMillisecond).empty();
    const bool nth_fired = trig.observe(seg, i * 10 * kMillisecond).has_value();
    if (i <= 5) CHECK(rule_fired == nth_fired);
    CHECK(rule_fired == (i % 5 == 0));
  }
}
