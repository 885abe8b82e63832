#pragma once

// TCP-lite endpoints: connection state machine, deterministic server
// application, server host and the scripted attacker client.

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "decoy/netcore.hpp"
#include "decoy/simnet.hpp"

namespace decoy {

class InvalidState : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

class EmptyPayload : public std::invalid_argument {
 public:
  EmptyPayload() : std::invalid_argument("empty payload") {}
};

enum class TcpState {
  closed,
  syn_sent,
  syn_rcvd,
  established,
  fin_wait,
  close_wait,
  closed_final,
};

const char* to_string(TcpState s);

struct SocketAddr {
  HostAddr host;
  std::uint16_t port = 0;

  friend bool operator==(const SocketAddr&, const SocketAddr&) = default;
};

/// Initial send sequence selection: a constant, or draws from a seeded
/// stream.
class IssPolicy {
 public:
  static IssPolicy fixed(std::uint32_t iss) { return IssPolicy(iss); }
  static IssPolicy seeded(RngStream rng) { return IssPolicy(std::move(rng)); }

  SeqNum next();
  bool is_fixed() const { return fixed_.has_value(); }

 private:
  explicit IssPolicy(std::uint32_t iss) : fixed_(iss) {}
  explicit IssPolicy(RngStream rng) : rng_(std::move(rng)) {}

  std::optional<std::uint32_t> fixed_;
  RngStream rng_;
};

struct SentRecord {
  SeqNum seq;
  std::string payload;
  SimTime ts = 0;
};

struct SegmentOutcome {
  std::vector<TcpSegment> emitted;
  std::string delivered;
};

/// One side of a TCP-lite connection. No retransmission, no windows: links
/// are lossless, duplicates only appear through replay.
class ConnectionState {
 public:
  /// Active open. Throws InvalidState unless CLOSED.
  TcpSegment open(SocketAddr local, SocketAddr remote, IssPolicy& iss, SimTime now);
  /// Passive open on an incoming SYN. Throws InvalidState unless CLOSED.
  TcpSegment accept(SocketAddr local, const TcpSegment& syn, IssPolicy& iss,
                    SimTime now);

  SegmentOutcome on_segment(const TcpSegment& seg, SimTime now);

  TcpSegment app_send(std::string_view data, SimTime now);
  TcpSegment close(SimTime now);
  TcpSegment abort(SimTime now);

  TcpState state() const { return state_; }
  const SocketAddr& local() const { return local_; }
  const SocketAddr& remote() const { return remote_; }
  SeqNum iss() const { return iss_; }
  SeqNum irs() const { return irs_; }
  SeqNum snd_una() const { return snd_una_; }
  SeqNum snd_nxt() const { return snd_nxt_; }
  SeqNum rcv_nxt() const { return rcv_nxt_; }
  const std::vector<SentRecord>& sent_log() const { return sent_log_; }
  const std::string& rcvd_stream() const { return rcvd_stream_; }

 private:
  TcpSegment make_segment(TcpFlags flags, SimTime now) const;
  void process_data(const TcpSegment& seg, SegmentOutcome& out, SimTime now);

  TcpState state_ = TcpState::closed;
  SocketAddr local_;
  SocketAddr remote_;
  SeqNum iss_;
  SeqNum irs_;
  SeqNum snd_una_;
  SeqNum snd_nxt_;
  SeqNum rcv_nxt_;
  std::vector<SentRecord> sent_log_;
  std::string rcvd_stream_;
};

/// Deterministic request/response service. Two instances with the same
/// app_id and the same request history answer identically, which is what
/// makes a clone indistinguishable. The request counter belongs to the
/// service, not to a connection.
class ServerApp {
 public:
  explicit ServerApp(std::string app_id) : app_id_(std::move(app_id)) {}

  std::string respond(std::string_view request);

  static std::string response_for(std::string_view app_id, std::string_view request,
                                  std::uint64_t count);

  const std::string& app_id() const { return app_id_; }
  std::uint64_t request_count() const { return count_; }

 private:
  std::string app_id_;
  std::uint64_t count_ = 0;
};

struct ServerConfig {
  std::string name = "server";
  SocketAddr service;
  std::string app_id = "svc";
  SimTime processing_delay = 200;
  bool accepting = true;
};

/// Listener plus ServerApp. One response segment per request segment.
class ServerHost {
 public:
  struct LogEntry {
    SimTime at;
    SocketAddr peer;
    std::string request;
  };

  ServerHost(Engine& engine, ServerConfig config, IssPolicy iss);

  void set_uplink(std::function<void(TcpSegment)> tx) { tx_ = std::move(tx); }
  void receive(TcpSegment seg);

  void set_accepting(bool on) { config_.accepting = on; }

  const ServerConfig& config() const { return config_; }
  const ServerApp& app() const { return app_; }
  const std::vector<LogEntry>& app_log() const { return log_; }
  const ConnectionState* connection(const SocketAddr& peer) const;
  std::uint64_t resets_received() const { return resets_; }
  std::uint64_t connections_accepted() const { return accepted_; }

 private:
  static std::uint64_t peer_key(const SocketAddr& a) {
    return (std::uint64_t{a.host.ip} << 16) | a.port;
  }
  void send(TcpSegment seg) {
    if (tx_) tx_(std::move(seg));
  }

  Engine* engine_;
  ServerConfig config_;
  IssPolicy iss_;
  ServerApp app_;
  std::map<std::uint64_t, ConnectionState> conns_;
  std::vector<LogEntry> log_;
  std::function<void(TcpSegment)> tx_;
  std::uint64_t resets_ = 0;
  std::uint64_t accepted_ = 0;
};

struct ClientConfig {
  SocketAddr local;
  SocketAddr server;
  std::uint32_t total_requests = 1;
  SimTime interval = 10 * kMillisecond;
  SimTime start_at = 0;
  std::uint32_t min_request_bytes = 32;
  std::uint32_t max_request_bytes = 32;
};

/// Scripted client: one request every `interval` once connected; each
/// response is matched to the oldest outstanding request and its RTT
/// recorded.
class AttackerClient {
 public:
  struct RequestRecord {
    std::uint32_t index = 0;  // 1-based
    SimTime send_us = 0;
    std::optional<SimTime> recv_us;
    std::string request;
    std::string response;
  };
  using SegmentHook = std::function<void(const TcpSegment&, const ConnectionState&)>;

  AttackerClient(Engine& engine, ClientConfig config, IssPolicy iss, RngStream payload_rng);

  void set_uplink(std::function<void(TcpSegment)> tx) { tx_ = std::move(tx); }
  /// Called for every outgoing segment, after state update.
  void on_send(SegmentHook hook) { sent_hook_ = std::move(hook); }
  /// Called for every incoming segment, with the state before processing.
  void on_receive(SegmentHook hook) { recv_hook_ = std::move(hook); }
  void on_complete(std::function<void()> fn) { complete_hook_ = std::move(fn); }

  void start();
  void receive(TcpSegment seg);

  const ClientConfig& config() const { return config_; }
  const ConnectionState& connection() const { return conn_; }
  const std::vector<RequestRecord>& requests() const { return requests_; }
  bool complete() const { return answered_ == config_.total_requests; }
  std::uint32_t answered() const { return answered_; }

 private:
  void send(TcpSegment seg);
  void send_next_request();
  std::string make_request(std::uint32_t index);

  Engine* engine_;
  ClientConfig config_;
  IssPolicy iss_;
  RngStream payload_rng_;
  ConnectionState conn_;
  std::vector<RequestRecord> requests_;
  std::uint32_t answered_ = 0;
  std::function<void(TcpSegment)> tx_;
  SegmentHook sent_hook_;
  SegmentHook recv_hook_;
  std::function<void()> complete_hook_;
};

}  // namespace decoy
