#pragma once

// Address, segment and sequence-arithmetic primitives.

#include <compare>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <string>
#include <string_view>

namespace decoy {

/// Simulated time in integer microseconds.
using SimTime = std::int64_t;

constexpr SimTime kMillisecond = 1000;
constexpr SimTime kSecond = 1000 * kMillisecond;

struct HostAddr {
  std::uint32_t ip = 0;
  std::uint64_t mac = 0;  // low 48 bits

  friend bool operator==(const HostAddr&, const HostAddr&) = default;
};

std::uint32_t parse_ip(std::string_view dotted);
std::string format_ip(std::uint32_t ip);
std::string format_mac(std::uint64_t mac);

/// 32-bit TCP sequence number. Arithmetic wraps modulo 2^32.
struct SeqNum {
  std::uint32_t value = 0;

  friend bool operator==(SeqNum, SeqNum) = default;
};

constexpr SeqNum seq_add(SeqNum s, std::uint32_t delta) {
  return SeqNum{static_cast<std::uint32_t>(s.value + delta)};
}

/// (a - b) mod 2^32.
constexpr std::uint32_t seq_diff(SeqNum a, SeqNum b) {
  return static_cast<std::uint32_t>(a.value - b.value);
}

/// Windowed circular order: a precedes b iff b lies within 2^31 - 1 steps
/// ahead of a.
constexpr bool seq_lt(SeqNum a, SeqNum b) {
  return static_cast<std::int32_t>(a.value - b.value) < 0;
}

constexpr bool seq_leq(SeqNum a, SeqNum b) { return a == b || seq_lt(a, b); }

enum class Proto : std::uint8_t { tcp, icmp };

enum class TcpFlag : std::uint8_t {
  syn = 0x01,
  ack = 0x02,
  fin = 0x04,
  rst = 0x08,
  psh = 0x10,
};

class TcpFlags {
 public:
  constexpr TcpFlags() = default;
  constexpr TcpFlags(std::initializer_list<TcpFlag> flags) {
    for (auto f : flags) bits_ |= static_cast<std::uint8_t>(f);
  }
  static constexpr TcpFlags from_bits(std::uint8_t bits) {
    TcpFlags f;
    f.bits_ = bits & 0x1f;
    return f;
  }

  constexpr bool has(TcpFlag f) const {
    return (bits_ & static_cast<std::uint8_t>(f)) != 0;
  }
  /// True iff every flag in `required` is set here.
  constexpr bool contains(TcpFlags required) const {
    return (bits_ & required.bits_) == required.bits_;
  }
  constexpr bool empty() const { return bits_ == 0; }
  constexpr std::uint8_t bits() const { return bits_; }

  constexpr TcpFlags& set(TcpFlag f) {
    bits_ |= static_cast<std::uint8_t>(f);
    return *this;
  }

  friend constexpr bool operator==(TcpFlags, TcpFlags) = default;

 private:
  std::uint8_t bits_ = 0;
};

/// Compact flag rendering in tcpdump order, e.g. "SA", "PA", "R".
std::string format_flags(TcpFlags f);

struct TcpSegment {
  Proto proto = Proto::tcp;
  HostAddr src;
  HostAddr dst;
  std::uint16_t sport = 0;
  std::uint16_t dport = 0;
  SeqNum seq;
  SeqNum ack;
  TcpFlags flags;
  std::string payload;
  SimTime ts_sent = 0;
};

/// Sequence units consumed: payload bytes plus one each for SYN and FIN.
std::uint32_t seg_span(const TcpSegment& seg);

/// Throws std::invalid_argument on structurally invalid segments
/// (SYN and FIN together).
void validate(const TcpSegment& seg);

std::string describe(const TcpSegment& seg);

/// Transport five-tuple. For ICMP the ports carry the echo identifier.
struct FiveTuple {
  Proto proto = Proto::tcp;
  std::uint32_t src_ip = 0;
  std::uint32_t dst_ip = 0;
  std::uint16_t sport = 0;
  std::uint16_t dport = 0;

  static FiveTuple of(const TcpSegment& seg) {
    return {seg.proto, seg.src.ip, seg.dst.ip, seg.sport, seg.dport};
  }
  FiveTuple reversed() const { return {proto, dst_ip, src_ip, dport, sport}; }

  friend bool operator==(const FiveTuple&, const FiveTuple&) = default;
  friend auto operator<=>(const FiveTuple&, const FiveTuple&) = default;
};

std::string format_tuple(const FiveTuple& t);

struct FiveTupleHash {
  std::size_t operator()(const FiveTuple& t) const noexcept;
};

/// 64-bit FNV-1a; used for stream derivation and deterministic app content.
constexpr std::uint64_t fnv1a64(std::string_view s,
                                std::uint64_t h = 0xcbf29ce484222325ULL) {
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

constexpr std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

}  // namespace decoy
