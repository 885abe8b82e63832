#pragma once

// Software switch with a prioritized match-action flow table, an IDS
// mirror tap, reactive packet-in on table miss, seq/ack rewriting and
// buffering queues.

#include <cstdint>
#include <deque>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <stdexcept>
#include <unordered_map>
#include <variant>
#include <vector>

#include "decoy/netcore.hpp"
#include "decoy/simnet.hpp"

namespace decoy {

using PortId = std::uint16_t;
using Cookie = std::uint64_t;
using QueueId = std::uint32_t;

class UnknownCookie : public std::out_of_range {
 public:
  explicit UnknownCookie(Cookie c);
};

class UnknownQueue : public std::out_of_range {
 public:
  explicit UnknownQueue(QueueId q);
};

/// Absent predicates match anything.
struct FlowMatch {
  std::optional<PortId> in_port;
  std::optional<Proto> proto;
  std::optional<std::uint32_t> src_ip;
  std::optional<std::uint32_t> dst_ip;
  std::optional<std::uint16_t> sport;
  std::optional<std::uint16_t> dport;
  TcpFlags flags;  // required subset

  bool matches(const TcpSegment& seg, PortId port) const;

  /// Matches exactly this flow (from any port unless `port` given).
  static FlowMatch exact(const FiveTuple& t, std::optional<PortId> port = std::nullopt);
};

struct Output {
  PortId port;
};
struct Rewrite {
  std::uint32_t seq_delta = 0;
  std::uint32_t ack_delta = 0;
  std::optional<HostAddr> new_dst;
  std::optional<HostAddr> new_src;

  void apply(TcpSegment& seg) const;
};
struct Buffer {
  QueueId queue;
};
struct Drop {};
struct ToController {};

using FlowAction = std::variant<Output, Rewrite, Buffer, Drop, ToController>;

struct FlowRule {
  int priority = 0;
  FlowMatch match;
  std::vector<FlowAction> actions;
  Cookie cookie = 0;  // 0: assigned on install
};

/// Rules are totally ordered by (priority desc, insertion order asc).
/// Fully specified five-tuple matches are hash-indexed; the rest are
/// scanned.
class FlowTable {
 public:
  Cookie install(FlowRule rule);
  /// Throws UnknownCookie if absent.
  bool remove(Cookie cookie);
  bool contains(Cookie cookie) const { return rules_.count(cookie) != 0; }

  const FlowRule* lookup(const TcpSegment& seg, PortId in_port) const;
  std::size_t size() const { return rules_.size(); }

 private:
  struct Entry {
    FlowRule rule;
    std::uint64_t order;
  };
  struct IndexKey {
    FiveTuple tuple;
    int port;  // -1 when the rule has no in_port predicate
    friend bool operator==(const IndexKey&, const IndexKey&) = default;
  };
  struct IndexHash {
    std::size_t operator()(const IndexKey& k) const noexcept {
      return FiveTupleHash{}(k.tuple) ^ (static_cast<std::size_t>(k.port + 1) * 0x9e3779b97f4a7c15ULL);
    }
  };
  static std::optional<IndexKey> index_key(const FlowMatch& m);
  static bool better(const Entry& a, const Entry& b) {
    return a.rule.priority != b.rule.priority ? a.rule.priority > b.rule.priority
                                              : a.order < b.order;
  }

  std::map<Cookie, Entry> rules_;
  std::unordered_map<IndexKey, std::vector<Cookie>, IndexHash> exact_;
  std::vector<Cookie> wildcard_;
  Cookie next_cookie_ = 1ULL << 48;
  std::uint64_t next_order_ = 0;
};

enum class PacketInReason { table_miss, action };

struct PacketIn {
  TcpSegment segment;
  PortId in_port = 0;
  PacketInReason reason = PacketInReason::table_miss;
};

/// Controller-to-switch messages. A batch passed to Switch::apply is
/// executed between packet dispatches, so no segment sees half of it.
struct InstallMsg {
  FlowRule rule;
};
struct RemoveMsg {
  Cookie cookie;
};
struct ReleaseBufferMsg {
  QueueId queue;
  std::optional<Rewrite> rewrite;
};
struct DropBufferMsg {
  QueueId queue;
};
struct PacketOutMsg {
  TcpSegment segment;
  PortId port;
};
struct ReleaseHeldMsg {
  FiveTuple flow;
};
struct CallbackMsg {
  std::function<void()> fn;
};
using SwitchMsg = std::variant<InstallMsg, RemoveMsg, ReleaseBufferMsg, DropBufferMsg,
                               PacketOutMsg, ReleaseHeldMsg, CallbackMsg>;

struct SwitchConfig {
  SimTime miss_hold_timeout = kSecond;
};

struct SwitchStats {
  std::uint64_t received = 0;
  std::uint64_t mirrored = 0;
  std::uint64_t forwarded = 0;
  std::uint64_t packet_ins = 0;
  std::uint64_t buffered = 0;
  std::uint64_t dropped = 0;
  std::uint64_t held_expired = 0;
  std::uint64_t packet_outs = 0;
};

class Switch : public Fabric {
 public:
  using MirrorTap = std::function<void(const TcpSegment&, PortId)>;
  using PacketInSink = std::function<void(PacketIn)>;

  Switch(Engine& engine, SwitchConfig config = {});

  /// Connects a host on `port`. `rx` receives segments the switch emits on
  /// that port; the returned function is the host's transmit side.
  std::function<void(TcpSegment)> connect(PortId port, LinkModel model,
                                          std::function<void(TcpSegment)> rx);
  bool has_port(PortId port) const { return ports_.count(port) != 0; }

  /// Fabric: attaches on the next free port >= 1000.
  std::function<void(TcpSegment)> attach(const HostAddr& addr,
                                         std::function<void(TcpSegment)> rx) override;
  std::optional<PortId> port_of(std::uint32_t ip) const;

  void set_mirror(MirrorTap tap) { mirror_ = std::move(tap); }
  void set_packet_in(PacketInSink sink) { packet_in_ = std::move(sink); }

  /// Ingress from a port: mirror, then exactly one best-match rule.
  void process(TcpSegment seg, PortId in_port);

  /// Installing a BUFFER rule creates its queue.
  Cookie install_rule(FlowRule rule);
  bool remove_rule(Cookie cookie) { return table_.remove(cookie); }
  /// Buffered segments re-enter the table in arrival order without being
  /// mirrored again. Throws UnknownQueue.
  std::size_t release_buffer(QueueId queue, const std::optional<Rewrite>& rewrite = {});
  std::size_t drop_buffer(QueueId queue);
  std::size_t buffered(QueueId queue) const;
  void packet_out(TcpSegment seg, PortId port);
  std::size_t release_held(const FiveTuple& flow);

  /// Applies a controller batch atomically.
  void apply(std::vector<SwitchMsg> batch);

  const FlowTable& table() const { return table_; }
  const SwitchStats& stats() const { return stats_; }
  Link* egress_link(PortId port);

 private:
  struct Port {
    std::unique_ptr<Link> egress;
    std::unique_ptr<Link> ingress;
  };
  struct Held {
    std::vector<std::pair<TcpSegment, PortId>> segments;
    std::uint64_t generation = 0;
  };

  void dispatch(TcpSegment seg, PortId in_port);
  void execute(const FlowRule& rule, TcpSegment seg, PortId in_port);
  void emit(TcpSegment seg, PortId port);

  Engine* engine_;
  SwitchConfig config_;
  FlowTable table_;
  std::map<PortId, Port> ports_;
  std::unordered_map<std::uint32_t, PortId> ip_ports_;
  std::map<QueueId, std::deque<std::pair<TcpSegment, PortId>>> queues_;
  std::unordered_map<FiveTuple, Held, FiveTupleHash> held_;
  MirrorTap mirror_;
  PacketInSink packet_in_;
  SwitchStats stats_;
  PortId next_fabric_port_ = 1000;
  std::uint64_t next_generation_ = 1;
};

}  // namespace decoy
