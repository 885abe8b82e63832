#include <doctest.h>

#include <map>
#include <set>
#include <string>
#include <vector>

#include "decoy/simnet.hpp"

using namespace decoy;

TEST_CASE("equal times dispatch in insertion order") {
  Engine e;
  std::string order;
  e.schedule(100, [&] { order += 'a'; });
  e.schedule(50, [&] { order += 'b'; });
  e.schedule(100, [&] { order += 'c'; });
  e.schedule(100, [&] { order += 'd'; });
  e.run();
  CHECK(order == "bacd");
  CHECK(e.now() == 100);
}

TEST_CASE("scheduling in the past throws") {
  Engine e;
  e.schedule(500, [] {});
  e.run();
  CHECK_THROWS_AS(e.schedule(499, [] {}), SchedulingInPast);
  CHECK_NOTHROW(e.schedule(500, [] {}));
}

TEST_CASE("run_until dispatches up to and including t_end") {
  Engine e;
  int fired = 0;
  for (SimTime t : {10, 20, 30, 40}) e.schedule(t, [&] { ++fired; });
  CHECK(e.run_until(30) == 3);
  CHECK(fired == 3);
  CHECK(e.now() == 30);
  CHECK(e.pending() == 1);
  CHECK(e.run_until(35) == 0);
  CHECK(e.now() == 35);
  CHECK(e.run() == 1);
  CHECK(e.now() == 40);
}

TEST_CASE("cancelled events never fire") {
  Engine e;
  int fired = 0;
  const auto id = e.schedule(10, [&] { ++fired; });
  e.schedule(20, [&] { ++fired; });
  CHECK(e.cancel(id));
  CHECK_FALSE(e.cancel(id));
  e.run();
  CHECK(fired == 1);
}

TEST_CASE("stop ends a run") {
  Engine e;
  int fired = 0;
  e.schedule(1, [&] {
    ++fired;
    e.stop();
  });
  e.schedule(2, [&] { ++fired; });
  e.run();
  CHECK(fired == 1);
}

namespace {

// Self-scheduling workload whose shape depends only on RNG draws.
std::vector<std::tuple<SimTime, EventId, std::string>> trace_run(std::uint64_t seed) {
  Engine e(seed);
  std::vector<std::tuple<SimTime, EventId, std::string>> log;
  e.set_trace([&](SimTime t, EventId id, std::string_view label) {
    log.emplace_back(t, id, std::string(label));
  });
  auto rng = std::make_shared<RngStream>(e.stream("work"));
  std::function<void(int)> spawn = [&](int depth) {
    if (depth > 6) return;
    const int kids = static_cast<int>(rng->uniform_int(0, 2));
    for (int k = 0; k < kids; ++k)
      e.schedule_in(rng->uniform_int(0, 100), [&, depth] { spawn(depth + 1); },
                    "d" + std::to_string(depth));
  };
  for (int i = 0; i < 20; ++i) e.schedule(i * 3, [&] { spawn(0); }, "root");
  e.run();
  return log;
}

}  // namespace

TEST_CASE("identical seeds give identical dispatch traces") {
  const auto a = trace_run(42);
  const auto b = trace_run(42);
  CHECK(a.size() > 20);
  CHECK(a == b);
  CHECK(trace_run(43) != a);
}

TEST_CASE("rng streams are independent of each other") {
  RngStream x1(5, "attacker.iss");
  RngStream x2(5, "attacker.iss");
  RngStream y(5, "victim.iss");
  std::vector<std::uint64_t> a, b, c;
  for (int i = 0; i < 5; ++i) {
    a.push_back(x1.next_u64());
    c.push_back(y.next_u64());
  }
  // Interleaving draws from another stream does not disturb this one.
  for (int i = 0; i < 5; ++i) {
    b.push_back(x2.next_u64());
    (void)y.next_u64();
  }
  CHECK(a == b);
  CHECK(a != c);
  CHECK(RngStream::derive_seed(5, "a") != RngStream::derive_seed(6, "a"));
  for (int i = 0; i < 1000; ++i) {
    const auto v = x1.uniform_int(-3, 3);
    CHECK(v >= -3);
    CHECK(v <= 3);
    const double u = x1.uniform01();
    CHECK(u >= 0.0);
    CHECK(u < 1.0);
  }
}

TEST_CASE("link without jitter delivers after exactly base_delay") {
  Engine e;
  std::vector<SimTime> arrivals;
  Link link(e, LinkModel{1000, NoJitter{}}, e.stream("l"),
            [&](TcpSegment) { arrivals.push_back(e.now()); });
  for (SimTime t : {0, 5, 250, 4000}) e.schedule(t, [&] { link.send(TcpSegment{}); });
  e.run();
  CHECK(arrivals == std::vector<SimTime>{1000, 1005, 1250, 5000});
  CHECK(link.sent_count() == 4);
}

TEST_CASE("jittered link stays FIFO and within bounds") {
  Engine e(9);
  std::vector<int> order;
  Link link(e, LinkModel::uniform_pct(1000, 0.5), e.stream("l"),
            [&](TcpSegment s) { order.push_back(static_cast<int>(s.seq.value)); });
  link.record_transits(true);
  for (int i = 0; i < 500; ++i)
    e.schedule(i * 7, [&, i] {
      TcpSegment s;
      s.seq = SeqNum{static_cast<std::uint32_t>(i)};
      link.send(s);
    });
  e.run();
  REQUIRE(order.size() == 500);
  for (int i = 0; i < 500; ++i) CHECK(order[i] == i);
  SimTime prev = 0;
  for (const auto& t : link.transits()) {
    CHECK(t.delivered >= prev);
    CHECK(t.delivered - t.sent >= 500);
    prev = t.delivered;
  }
  // Without FIFO clamping the sample itself is bounded by 1500.
  const auto& tr = link.transits();
  CHECK(tr.front().delivered - tr.front().sent <= 1500);
}

TEST_CASE("uniform_pct spread") {
  const auto m = LinkModel::uniform_pct(2000, 0.1);
  CHECK(m.base_delay == 2000);
  const auto* u = std::get_if<UniformJitter>(&m.jitter);
  REQUIRE(u);
  CHECK(u->lo == -200);
  CHECK(u->hi == 200);
}

namespace {

struct LoopFabric : Fabric {
  Engine* e;
  std::map<std::uint32_t, std::function<void(TcpSegment)>> rx;
  std::uint64_t carried = 0;
  explicit LoopFabric(Engine& eng) : e(&eng) {}
  std::function<void(TcpSegment)> attach(const HostAddr& addr,
                                         std::function<void(TcpSegment)> r) override {
    rx[addr.ip] = std::move(r);
    return [this](TcpSegment s) {
      ++carried;
      e->schedule_in(100, [this, s]() mutable { rx.at(s.dst.ip)(std::move(s)); });
    };
  }
};

}  // namespace

TEST_CASE("background load creates one flow per host process") {
  struct Case {
    std::uint32_t hosts, procs;
    std::size_t flows;
  };
  for (const Case c : {Case{20, 70, 1400}, Case{1, 1, 1}, Case{0, 5, 0}, Case{3, 0, 0}}) {
    Engine e(1);
    LoopFabric fab(e);
    auto load = spawn_background_load(e, fab, {c.hosts, c.procs, kSecond, 56});
    CHECK(load->flows().size() == c.flows);
    std::set<FlowId> ids(load->flows().begin(), load->flows().end());
    CHECK(ids.size() == c.flows);
  }
}

TEST_CASE("background echoes are answered") {
  Engine e(3);
  LoopFabric fab(e);
  auto load = spawn_background_load(e, fab, {4, 3, 10 * kMillisecond, 56});
  e.run_until(kSecond);
  // 12 flows over one second at 10 ms spacing: 100 requests each, the first
  // one falling somewhere in the first interval.
  CHECK(load->requests_sent() >= 12 * 100);
  CHECK(load->requests_sent() <= 12 * 101);
  CHECK(load->replies_received() + 12 >= load->requests_sent());
}
