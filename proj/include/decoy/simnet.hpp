#pragma once

// Deterministic discrete-event engine, links and background load.

#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <queue>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_set>
#include <variant>
#include <vector>

#include "decoy/netcore.hpp"

namespace decoy {

class SchedulingInPast : public std::logic_error {
 public:
  SchedulingInPast(SimTime at, SimTime now);
};

/// Independent pseudo-random stream. Streams are derived from a root seed
/// and an entity name, so adding an entity never shifts another entity's
/// draws.
class RngStream {
 public:
  RngStream() : RngStream(0, "") {}
  RngStream(std::uint64_t root_seed, std::string_view entity)
      : engine_(derive_seed(root_seed, entity)) {}

  static std::uint64_t derive_seed(std::uint64_t root, std::string_view entity) {
    return splitmix64(root ^ fnv1a64(entity));
  }

  std::uint64_t next_u64() { return engine_(); }
  std::uint32_t next_u32() { return static_cast<std::uint32_t>(engine_() >> 32); }
  /// Uniform integer in [lo, hi].
  std::int64_t uniform_int(std::int64_t lo, std::int64_t hi);
  /// Uniform real in [0, 1).
  double uniform01();
  double normal(double mean, double sd);

 private:
  std::mt19937_64 engine_;
};

using EventId = std::uint64_t;

class Engine {
 public:
  using Action = std::function<void()>;
  /// Observer invoked before each dispatch; used for determinism checks.
  using TraceHook = std::function<void(SimTime, EventId, std::string_view)>;

  explicit Engine(std::uint64_t root_seed = 0) : root_seed_(root_seed) {}
  Engine(const Engine&) = delete;
  Engine& operator=(const Engine&) = delete;

  SimTime now() const { return now_; }
  std::uint64_t root_seed() const { return root_seed_; }

  /// Queues `fn` at absolute time `at`. Equal times dispatch in insertion
  /// order.
  EventId schedule(SimTime at, Action fn, std::string_view label = {});
  EventId schedule_in(SimTime delay, Action fn, std::string_view label = {}) {
    return schedule(now_ + delay, std::move(fn), label);
  }
  bool cancel(EventId id);

  /// Dispatches every event with time <= t_end. Returns the number
  /// dispatched.
  std::size_t run_until(SimTime t_end);
  /// Dispatches until the queue drains or stop() is called.
  std::size_t run();
  /// Ends the current run after the event being dispatched.
  void stop() { stopped_ = true; }

  std::size_t pending() const { return live_.size(); }
  std::uint64_t dispatched_total() const { return dispatched_total_; }

  RngStream stream(std::string_view entity) const {
    return RngStream(root_seed_, entity);
  }

  void set_trace(TraceHook hook) { trace_ = std::move(hook); }

 private:
  struct Event {
    SimTime at;
    EventId id;
    Action fn;
    std::string label;
  };
  struct Later {
    bool operator()(const Event& a, const Event& b) const {
      return a.at != b.at ? a.at > b.at : a.id > b.id;
    }
  };

  bool dispatch_next(SimTime limit);

  std::uint64_t root_seed_;
  SimTime now_ = 0;
  EventId next_id_ = 1;
  bool stopped_ = false;
  std::uint64_t dispatched_total_ = 0;
  std::priority_queue<Event, std::vector<Event>, Later> queue_;
  std::unordered_set<EventId> live_;
  TraceHook trace_;
};

struct NoJitter {};
struct UniformJitter {
  SimTime lo = 0;  // added to base_delay; may be negative
  SimTime hi = 0;
};
struct NormalJitter {
  double mean = 0;
  double sd = 0;
};
using JitterDist = std::variant<NoJitter, UniformJitter, NormalJitter>;

struct LinkModel {
  SimTime base_delay = kMillisecond;
  JitterDist jitter = NoJitter{};

  /// +/- `fraction` of base_delay, uniformly.
  static LinkModel uniform_pct(SimTime base, double fraction);
};

/// One direction of a point-to-point link. Delivery is FIFO: a segment
/// never overtakes one sent earlier on the same link.
class Link {
 public:
  using Sink = std::function<void(TcpSegment)>;

  Link(Engine& engine, LinkModel model, RngStream rng, Sink sink);

  void send(TcpSegment seg);
  std::uint64_t sent_count() const { return sent_; }

  /// Observed (sent, delivered) times, when recording is enabled.
  struct Transit {
    SimTime sent;
    SimTime delivered;
  };
  void record_transits(bool on) { record_ = on; }
  const std::vector<Transit>& transits() const { return transits_; }

 private:
  SimTime sample_delay();

  Engine* engine_;
  LinkModel model_;
  RngStream rng_;
  Sink sink_;
  SimTime last_delivery_ = 0;
  std::uint64_t sent_ = 0;
  bool record_ = false;
  std::vector<Transit> transits_;
};

struct BackgroundLoadSpec {
  std::uint32_t n_hosts = 0;
  std::uint32_t procs_per_host = 0;
  SimTime msg_interval = kSecond;
  std::uint32_t payload_bytes = 56;
};

/// Where background hosts plug in. `attach` connects a host with the given
/// address and returns the function the host uses to transmit.
class Fabric {
 public:
  virtual ~Fabric() = default;
  virtual std::function<void(TcpSegment)> attach(
      const HostAddr& addr, std::function<void(TcpSegment)> rx) = 0;
};

using FlowId = std::uint32_t;

/// Echo-request/reply generators standing in for `ping` processes. Each
/// (host, process) pair is one flow with its own ICMP identifier.
class BackgroundLoad {
 public:
  BackgroundLoad(Engine& engine, Fabric& fabric, BackgroundLoadSpec spec,
                 std::uint32_t base_ip = 0x0a010001 /* 10.1.0.1 */);

  const std::vector<FlowId>& flows() const { return flow_ids_; }
  std::uint64_t requests_sent() const { return requests_sent_; }
  std::uint64_t replies_received() const { return replies_received_; }

  static HostAddr host_addr(std::uint32_t base_ip, std::uint32_t host);

 private:
  struct Host {
    HostAddr addr;
    std::function<void(TcpSegment)> tx;
  };
  void on_receive(std::uint32_t host, TcpSegment seg);
  void send_echo(FlowId flow);

  Engine* engine_;
  BackgroundLoadSpec spec_;
  std::vector<Host> hosts_;
  std::vector<FlowId> flow_ids_;
  std::vector<std::uint32_t> next_seq_;
  std::uint64_t requests_sent_ = 0;
  std::uint64_t replies_received_ = 0;
};

/// Creates the n_hosts x procs_per_host flows and starts them.
std::unique_ptr<BackgroundLoad> spawn_background_load(Engine& engine,
                                                      Fabric& fabric,
                                                      const BackgroundLoadSpec& spec);

}  // namespace decoy
