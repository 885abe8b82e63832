#pragma once

// Snort-dialect detection rules with `threshold` semantics, plus the
// n-th-data-packet trigger used by the experiments.

#include <cstdint>
#include <deque>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "decoy/netcore.hpp"

namespace decoy {

class ParseError : public std::runtime_error {
 public:
  ParseError(std::size_t offset, std::string reason);

  std::size_t offset() const { return offset_; }
  const std::string& reason() const { return reason_; }

 private:
  std::size_t offset_;
  std::string reason_;
};

/// `type threshold, track by_dst`; the only form the dialect accepts.
struct Threshold {
  std::uint32_t count = 1;
  std::uint32_t seconds = 1;

  friend bool operator==(const Threshold&, const Threshold&) = default;
};

/// Supported subset: `alert tcp SRC [SPORT] -> DST [DPORT] (options)` with
/// options msg, flags, threshold and sid. Absent address or port means
/// `any`.
struct IdsRule {
  std::optional<std::uint32_t> src_ip;
  std::optional<std::uint16_t> src_port;
  std::optional<std::uint32_t> dst_ip;
  std::optional<std::uint16_t> dst_port;
  std::string msg;
  TcpFlags flags;  // required set
  std::optional<Threshold> threshold;
  std::uint32_t sid = 0;

  bool matches(const TcpSegment& seg) const;

  friend bool operator==(const IdsRule&, const IdsRule&) = default;
};

IdsRule parse_rule(std::string_view text);
std::string render_rule(const IdsRule& rule);

/// One rule per line; blank lines and `#` comments skipped. Offsets in
/// errors are relative to the whole text. Throws ParseError on duplicate
/// sids.
std::vector<IdsRule> parse_ruleset(std::string_view text);
std::vector<IdsRule> load_ruleset(const std::string& path);

struct Alert {
  std::uint32_t sid = 0;
  std::string msg;
  TcpSegment segment;
  FiveTuple tuple;
  SimTime time = 0;
  std::uint64_t ordinal = 0;  // matches counted so far for the track key
};

/// Stateful matcher over a ruleset. Without threshold every match alerts.
/// With threshold, matches are counted per destination IP over the sliding
/// window (now - seconds, now]; reaching `count` alerts and clears the
/// counter.
class RuleEngine {
 public:
  explicit RuleEngine(std::vector<IdsRule> rules);

  std::vector<Alert> observe(const TcpSegment& seg, SimTime now);

  const std::vector<IdsRule>& rules() const { return rules_; }

 private:
  struct Track {
    std::deque<SimTime> window;
    std::uint64_t matches = 0;
  };

  std::vector<IdsRule> rules_;
  std::vector<std::unordered_map<std::uint32_t, Track>> tracks_;  // per rule
};

/// Fires once per connection on its n-th client data segment (PSH+ACK with
/// payload) toward the watched service.
class NthPacketTrigger {
 public:
  NthPacketTrigger(std::uint32_t service_ip, std::uint16_t service_port,
                   std::uint64_t n, std::uint32_t sid = 0, std::string msg = "NTH_PACKET");

  std::optional<Alert> observe(const TcpSegment& seg, SimTime now);

  std::uint64_t count(const FiveTuple& conn) const;

 private:
  std::uint32_t service_ip_;
  std::uint16_t service_port_;
  std::uint64_t n_;
  std::uint32_t sid_;
  std::string msg_;
  std::map<FiveTuple, std::uint64_t> counts_;
};

}  // namespace decoy
