#pragma once

// Attacker-side observer that checks a spliced session stays invisible:
// no resets or closes the attacker did not start, acks that only ever
// acknowledge the attacker's own segment boundaries in order, and a peer
// byte stream without gaps.

#include <optional>
#include <set>
#include <string>
#include <vector>

#include "decoy/endpoint.hpp"
#include "decoy/netcore.hpp"

namespace decoy {

struct StealthViolation {
  SimTime at = 0;
  std::string kind;
  std::string detail;
};

class StealthMonitor {
 public:
  /// Hook for AttackerClient::on_send (state after the send).
  void on_send(const TcpSegment& seg, const ConnectionState& after);
  /// Hook for AttackerClient::on_receive (state before processing).
  void on_receive(const TcpSegment& seg, const ConnectionState& before, SimTime now);

  /// For checks made outside the packet path (containment, completion).
  void add(StealthViolation v) { violations_.push_back(std::move(v)); }

  bool ok() const { return violations_.empty(); }
  const std::vector<StealthViolation>& violations() const { return violations_; }
  std::uint64_t segments_checked() const { return checked_; }

 private:
  void flag(SimTime at, std::string kind, const TcpSegment& seg);

  std::set<std::uint32_t> boundaries_;
  std::optional<SeqNum> last_ack_;
  std::vector<StealthViolation> violations_;
  std::uint64_t checked_ = 0;
};

}  // namespace decoy
