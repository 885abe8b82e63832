#include <doctest.h>

#include <random>
#include <string>
#include <vector>

#include "decoy/endpoint.hpp"

using namespace decoy;

namespace {

const SocketAddr kClient{HostAddr{0x0a000001, 0x1}, 40001};
const SocketAddr kServer{HostAddr{0x0a000002, 0x2}, 80};

struct Pair {
  ConnectionState c, s;
};

// Three-way handshake with the given initial sequence numbers.
Pair handshake(std::uint32_t ciss, std::uint32_t siss) {
  Pair p;
  auto ci = IssPolicy::fixed(ciss);
  auto si = IssPolicy::fixed(siss);
  const TcpSegment syn = p.c.open(kClient, kServer, ci, 0);
  const TcpSegment synack = p.s.accept(kServer, syn, si, 1);
  const auto out = p.c.on_segment(synack, 2);
  REQUIRE(out.emitted.size() == 1);
  p.s.on_segment(out.emitted[0], 3);
  return p;
}

TcpSegment data_seg(const ConnectionState& from, std::uint32_t seq, std::string payload) {
  TcpSegment s;
  s.src = from.local().host;
  s.dst = from.remote().host;
  s.sport = from.local().port;
  s.dport = from.remote().port;
  s.seq = SeqNum{seq};
  s.ack = from.rcv_nxt();
  s.flags = {TcpFlag::psh, TcpFlag::ack};
  s.payload = std::move(payload);
  return s;
}

}  // namespace

TEST_CASE("handshake") {
  auto ci = IssPolicy::fixed(1000);
  auto si = IssPolicy::fixed(7000);
  ConnectionState c, s;
  const TcpSegment syn = c.open(kClient, kServer, ci, 0);
  CHECK(syn.seq.value == 1000);
  CHECK(syn.flags == TcpFlags{TcpFlag::syn});
  CHECK(c.state() == TcpState::syn_sent);
  const TcpSegment synack = s.accept(kServer, syn, si, 0);
  CHECK(synack.seq.value == 7000);
  CHECK(synack.ack.value == 1001);
  CHECK(s.state() == TcpState::syn_rcvd);
  const auto out = c.on_segment(synack, 0);
  CHECK(c.state() == TcpState::established);
  REQUIRE(out.emitted.size() == 1);
  CHECK(out.emitted[0].seq.value == 1001);
  CHECK(out.emitted[0].ack.value == 7001);
  s.on_segment(out.emitted[0], 0);
  CHECK(s.state() == TcpState::established);
  CHECK_THROWS_AS(c.open(kClient, kServer, ci, 0), InvalidState);
}

TEST_CASE("in-order delivery and duplicates") {
  auto p = handshake(1000, 7000);
  const TcpSegment d = p.c.app_send("hello", 10);
  CHECK(d.seq.value == 1001);
  CHECK(p.c.snd_nxt().value == 1006);
  auto out = p.s.on_segment(d, 11);
  CHECK(out.delivered == "hello");
  CHECK(p.s.rcv_nxt().value == 1006);
  REQUIRE(out.emitted.size() == 1);
  CHECK(out.emitted[0].ack.value == 1006);

  // Replaying the same bytes delivers nothing but is still acknowledged.
  out = p.s.on_segment(d, 12);
  CHECK(out.delivered.empty());
  REQUIRE(out.emitted.size() == 1);
  CHECK(out.emitted[0].ack.value == 1006);
  CHECK(p.s.rcvd_stream() == "hello");
}

TEST_CASE("segments from the future are not delivered") {
  auto p = handshake(1000, 7000);
  const auto out = p.s.on_segment(data_seg(p.c, 1010, "xyz"), 5);
  CHECK(out.delivered.empty());
  CHECK(p.s.rcv_nxt().value == 1001);
}

TEST_CASE("app_send preconditions") {
  ConnectionState fresh;
  CHECK_THROWS_AS(fresh.app_send("x", 0), InvalidState);
  auto p = handshake(1, 2);
  CHECK_THROWS_AS(p.c.app_send("", 0), EmptyPayload);
  p.c.app_send("abc", 4);
  REQUIRE(p.c.sent_log().size() == 1);
  CHECK(p.c.sent_log()[0].seq.value == 2);
  CHECK(p.c.sent_log()[0].payload == "abc");
}

TEST_CASE("close and abort") {
  auto p = handshake(100, 500);
  p.c.app_send(std::string(99, 'a'), 0);
  CHECK(p.c.snd_nxt().value == 200);
  const TcpSegment fin = p.c.close(1);
  CHECK(fin.seq.value == 200);
  CHECK(fin.flags.has(TcpFlag::fin));
  CHECK(p.c.state() == TcpState::fin_wait);
  CHECK_THROWS_AS(p.c.close(2), InvalidState);

  ConnectionState fresh;
  CHECK_THROWS_AS(fresh.abort(0), InvalidState);
  auto q = handshake(1, 2);
  const TcpSegment rst = q.c.abort(3);
  CHECK(rst.flags.has(TcpFlag::rst));
  CHECK(q.c.state() == TcpState::closed_final);
  CHECK_THROWS_AS(q.c.abort(4), InvalidState);
}

TEST_CASE("RST acceptance depends on its sequence number") {
  auto p = handshake(1000, 7000);
  TcpSegment rst;
  rst.src = kServer.host;
  rst.dst = kClient.host;
  rst.sport = kServer.port;
  rst.dport = kClient.port;
  rst.flags = {TcpFlag::rst};
  rst.seq = SeqNum{7005};
  p.c.on_segment(rst, 5);
  CHECK(p.c.state() == TcpState::established);
  rst.seq = SeqNum{7001};
  p.c.on_segment(rst, 6);
  CHECK(p.c.state() == TcpState::closed_final);
}

TEST_CASE("SYN on an established connection gets a challenge ACK") {
  auto p = handshake(1000, 7000);
  TcpSegment syn;
  syn.src = kClient.host;
  syn.dst = kServer.host;
  syn.sport = kClient.port;
  syn.dport = kServer.port;
  syn.seq = SeqNum{555};
  syn.flags = {TcpFlag::syn};
  const auto out = p.s.on_segment(syn, 9);
  REQUIRE(out.emitted.size() == 1);
  CHECK(out.emitted[0].flags == TcpFlags{TcpFlag::ack});
  CHECK(out.emitted[0].ack.value == 1001);
  CHECK(p.s.state() == TcpState::established);
}

// Reference receiver in plain stream offsets: a segment covering the next
// expected byte advances the pointer to its end; nothing else is kept.
TEST_CASE("delivery matches a reference reassembler") {
  std::mt19937_64 rng(2024);
  for (int trial = 0; trial < 300; ++trial) {
    const std::uint32_t ciss =
        trial % 3 == 0 ? 0xFFFFFFF0u - static_cast<std::uint32_t>(rng() % 64)
                       : static_cast<std::uint32_t>(rng());
    auto p = handshake(ciss, static_cast<std::uint32_t>(rng()));
    std::string stream(1 + rng() % 400, '\0');
    for (auto& ch : stream) ch = static_cast<char>('A' + rng() % 26);

    std::size_t next = 0;  // oracle pointer
    const int nseg = 1 + static_cast<int>(rng() % 50);
    for (int i = 0; i < nseg; ++i) {
      const std::size_t start = rng() % stream.size();
      const std::size_t len = 1 + rng() % std::min<std::size_t>(64, stream.size() - start);
      const std::uint32_t seq = ciss + 1 + static_cast<std::uint32_t>(start);
      const auto out = p.s.on_segment(data_seg(p.c, seq, stream.substr(start, len)), i);
      if (start <= next && next < start + len) {
        CHECK(out.delivered == stream.substr(next, start + len - next));
        next = start + len;
      } else {
        CHECK(out.delivered.empty());
      }
      REQUIRE(out.emitted.size() == 1);
      CHECK(out.emitted[0].ack.value == ciss + 1 + static_cast<std::uint32_t>(next));
    }
    CHECK(p.s.rcvd_stream() == stream.substr(0, next));
    CHECK(p.s.rcv_nxt().value == ciss + 1 + static_cast<std::uint32_t>(next));
  }
}

TEST_CASE("responses depend only on app_id, request and count") {
  ServerApp a("web-v1"), b("web-v1"), other("web-v2");
  for (const char* req : {"Q1:abc", "Q2:xyz", "Q3:"}) {
    const auto ra = a.respond(req);
    CHECK(ra == b.respond(req));
    CHECK(ra != other.respond(req));
  }
  const auto r = ServerApp::response_for("web-v1", "abc", 7);
  CHECK(r.rfind("web-v1#7:", 0) == 0);
  CHECK(r.size() == std::string("web-v1#7:").size() + 16 + 1 + 3);
  CHECK(r.substr(r.size() - 3) == "cba");
  CHECK(ServerApp::response_for("web-v1", "abc", 8) != r);
}

TEST_CASE("seeded ISS is reproducible") {
  auto a = IssPolicy::seeded(RngStream(9, "victim.iss"));
  auto b = IssPolicy::seeded(RngStream(9, "victim.iss"));
  RngStream ref(9, "victim.iss");
  for (int i = 0; i < 10; ++i) {
    const auto x = a.next();
    CHECK(x == b.next());
    CHECK(x.value == ref.next_u32());
  }
  CHECK(IssPolicy::fixed(5).next().value == 5);
}

namespace {

struct Wire {
  Engine e{1};
  ServerHost server{e, ServerConfig{"v", kServer, "web-v1", 200, true}, IssPolicy::fixed(7000)};
  AttackerClient client;
  Wire(std::uint32_t n)
      : client(e, ClientConfig{kClient, kServer, n, 10 * kMillisecond, 0, 20, 40},
               IssPolicy::fixed(1000), e.stream("payload")) {
    client.set_uplink([this](TcpSegment s) {
      e.schedule_in(1000, [this, s] { server.receive(s); });
    });
    server.set_uplink([this](TcpSegment s) {
      e.schedule_in(1000, [this, s] { client.receive(s); });
    });
  }
};

}  // namespace

TEST_CASE("client and server over a fixed delay") {
  Wire w(10);
  w.client.start();
  w.e.run();
  CHECK(w.client.complete());
  REQUIRE(w.client.requests().size() == 10);
  REQUIRE(w.server.app_log().size() == 10);
  for (std::size_t i = 0; i < 10; ++i) {
    const auto& r = w.client.requests()[i];
    CHECK(r.request.size() >= 20);
    CHECK(r.request.size() <= 40);
    CHECK(w.server.app_log()[i].request == r.request);
    CHECK(r.response == ServerApp::response_for("web-v1", r.request, i + 1));
    // two link crossings plus processing
    REQUIRE(r.recv_us);
    CHECK(*r.recv_us - r.send_us == 2000 + 200);
  }
}

TEST_CASE("server resets unknown connections") {
  Engine e;
  ServerHost s(e, ServerConfig{"v", kServer, "x", 200, false}, IssPolicy::fixed(1));
  std::vector<TcpSegment> sent;
  s.set_uplink([&](TcpSegment seg) { sent.push_back(seg); });
  TcpSegment syn;
  syn.src = kClient.host;
  syn.dst = kServer.host;
  syn.sport = kClient.port;
  syn.dport = kServer.port;
  syn.seq = SeqNum{41};
  syn.flags = {TcpFlag::syn};
  s.receive(syn);
  REQUIRE(sent.size() == 1);
  CHECK(sent[0].flags.has(TcpFlag::rst));
  CHECK(sent[0].ack.value == 42);
  CHECK(s.connections_accepted() == 0);
}
