#pragma once

// The response side: reactive forwarding on packet-in, and on IDS alerts
// the mid-connection splice of an attacker session onto a honey server,
// plus the reverse splice back to the original server.

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include "decoy/clonemgr.hpp"
#include "decoy/endpoint.hpp"
#include "decoy/ids.hpp"
#include "decoy/netcore.hpp"
#include "decoy/simnet.hpp"
#include "decoy/vswitch.hpp"

namespace decoy {

class AlertForUnknownConnection : public std::invalid_argument {
 public:
  explicit AlertForUnknownConnection(const FiveTuple& t);
};

class InvalidPhase : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

class RestoreFailed : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// FALLBACK is entered only from CLONING when the clone cannot be made.
enum class Phase { idle, cloning, splicing, redirected, restored, fallback };
const char* to_string(Phase p);

/// When attacker traffic starts being held back.
enum class CutoverPolicy {
  immediate,       // on the alert itself
  on_clone_ready,  // the victim keeps serving until the clone exists
};

enum class FailPolicy { fail_open, fail_closed };

struct PhaseStamp {
  Phase phase;
  SimTime at;
};

struct MigrationRecord {
  FiveTuple conn;  // attacker -> service, as the attacker addresses it
  SocketAddr victim;
  SocketAddr honey;           // where the honey server actually lives
  std::uint32_t seq_delta = 0;  // target stream - attacker view
  std::uint32_t ack_delta = 0;  // -seq_delta
  std::vector<std::string> replay_buffer;  // payloads replayed to the honey
  Phase phase = Phase::idle;
  std::vector<PhaseStamp> history;
  SeqNum cut;  // first attacker seq the honey received live
  std::optional<SeqNum> restore_cut;
  std::optional<SeqNum> victim_isn;
  std::optional<SeqNum> honey_isn;
  std::optional<SimTime> clone_requested_at;
  std::optional<SimTime> clone_ready_at;
  std::uint32_t restore_replayed = 0;
  bool restore_failed = false;
};

struct ControllerEvent {
  SimTime time = 0;
  std::string event;
  std::string detail;  // never contains commas
};

struct ControllerConfig {
  SimTime control_delay = 50;  // one way, controller <-> switch
  SimTime service_time = 5;    // per handled message
  bool replay = true;
  CutoverPolicy cutover = CutoverPolicy::immediate;
  FailPolicy fail_policy = FailPolicy::fail_open;
  SimTime fallback_timeout = kSecond;
};

/// Where the protected service and its honey counterpart live.
struct ServiceLayout {
  SocketAddr service;  // the victim, as presented to clients
  PortId victim_port = 2;
  SocketAddr honey;  // honey's own address (equal to service when cloned exactly)
  PortId honey_port = 3;
};

/// Per-connection facts reconstructed from the mirror.
class ConnLedger {
 public:
  struct Payload {
    SeqNum seq;
    std::string data;
  };
  struct ServerSide {
    SeqNum isn;
    SeqNum end;  // next seq the server will send
    std::uint64_t responses = 0;
  };
  struct Entry {
    HostAddr attacker;
    SeqNum iss;
    SeqNum end;  // next seq the attacker will send
    PortId attacker_port = 0;
    std::vector<Payload> payloads;
    std::map<PortId, ServerSide> servers;  // latest incarnation per port
  };

  Entry* find(const FiveTuple& conn);
  const Entry* find(const FiveTuple& conn) const;
  Entry& client_segment(const FiveTuple& conn, const TcpSegment& seg, PortId port);
  void server_segment(const FiveTuple& conn, const TcpSegment& seg, PortId port);

  /// Payloads with base <= seq < cut, in order.
  static std::vector<const Payload*> range(const Entry& e, SeqNum base, SeqNum cut);

 private:
  std::map<FiveTuple, Entry> entries_;
};

class Controller {
 public:
  Controller(Engine& engine, Switch& sw, ControllerConfig config, ServiceLayout layout);

  void add_route(std::uint32_t ip, PortId port) { routes_[ip] = port; }

  /// Honey server that exists from the start.
  void use_static_honey() { clones_ = nullptr; }
  /// Honey server created per alert.
  void use_clone_manager(CloneManager& mgr, VictimSpec spec, CloneKind kind);

  /// Mirror tap; must run before the IDS sees the segment.
  void observe(const TcpSegment& seg, PortId in_port);
  void on_packet_in(PacketIn pin);

  /// Throws AlertForUnknownConnection. Alerts in any phase other than IDLE
  /// are logged and ignored.
  void on_alert(const Alert& alert);
  /// Throws InvalidPhase unless REDIRECTED. `cut` is the first attacker seq
  /// the victim should receive live; defaults to everything not yet seen.
  void restore_original(const FiveTuple& conn, std::optional<SeqNum> cut = {});

  /// Called after every phase change of a migrating connection.
  void on_phase(std::function<void(const FiveTuple&, Phase)> fn) { phase_hook_ = std::move(fn); }

  const MigrationRecord* migration(const FiveTuple& conn) const;
  std::vector<const MigrationRecord*> migrations() const;
  const std::vector<ControllerEvent>& events() const { return events_; }
  const ConnLedger& ledger() const { return ledger_; }
  std::uint64_t packet_ins_handled() const { return packet_ins_; }
  const ServiceLayout& layout() const { return layout_; }

 private:
  struct Splice {
    bool to_victim = false;
    PortId target_port = 0;
    SocketAddr target;
    PortId old_port = 0;
    SocketAddr old_server;
    SeqNum base;
    SeqNum cut;
    ConnectionState imp;
    std::vector<std::string> replay;
    std::size_t responses = 0;
    bool replay_sent = false;
    bool done = false;
  };
  struct Conn {
    MigrationRecord rec;
    QueueId queue = 0;
    Cookie buffer_rule = 0;
    Cookie divert_rule = 0;
    Cookie fwd_rule = 0;
    Cookie rev_rule = 0;
    SeqNum pending_cut;
    bool cut_known = false;
    bool clone_ready = false;
    bool waiting_quiet = false;
    bool splice_scheduled = false;
    bool restoring = false;
    PortId active_port = 0;
    SocketAddr active_server;
    std::uint32_t active_delta = 0;
    std::uint64_t active_replayed = 0;
    SeqNum active_live_start;
    std::optional<Splice> splice;
  };

  void log(std::string event, std::string detail = {});
  void set_phase(Conn& c, Phase p);
  /// Runs `fn` on the controller after the channel delay and FIFO service.
  void submit(std::function<void()> fn);
  void to_switch(std::vector<SwitchMsg> batch);
  std::optional<PortId> route(std::uint32_t ip) const;
  std::optional<FiveTuple> conn_of(const FiveTuple& t) const;

  FlowRule make_buffer_rule(Conn& c);
  void hold_attacker(Conn& c, SeqNum cut);
  void request_honey(Conn& c);
  void clone_ready(const FiveTuple& key);
  void maybe_start_splice(Conn& c);
  bool old_server_quiet(const Conn& c) const;
  void start_splice(const FiveTuple& key);
  void on_diverted(const FiveTuple& key, const TcpSegment& seg);
  void cutover(Conn& c, std::vector<SwitchMsg>& batch);
  void splice_failed(Conn& c, std::vector<SwitchMsg>& batch);
  void fallback(const FiveTuple& key);
  void fallback_batch(Conn& c, std::vector<SwitchMsg>& batch);
  TcpSegment forged_rst(const Conn& c, const SocketAddr& server, SeqNum seq) const;

  Engine* engine_;
  Switch* sw_;
  ControllerConfig config_;
  ServiceLayout layout_;
  CloneManager* clones_ = nullptr;
  VictimSpec clone_spec_;
  CloneKind clone_kind_ = CloneKind::victim_image;

  std::unordered_map<std::uint32_t, PortId> routes_;
  std::set<std::pair<FiveTuple, PortId>> installed_;
  ConnLedger ledger_;
  std::map<FiveTuple, Conn> conns_;
  std::function<void(const FiveTuple&, Phase)> phase_hook_;
  std::vector<ControllerEvent> events_;
  SimTime busy_until_ = 0;
  std::uint64_t packet_ins_ = 0;
  Cookie next_cookie_ = 1;
  QueueId next_queue_ = 1;
};

}  // namespace decoy
