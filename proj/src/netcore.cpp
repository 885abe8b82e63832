#include "decoy/netcore.hpp"

#include <charconv>
#include <cstdio>
#include <stdexcept>

namespace decoy {

std::uint32_t parse_ip(std::string_view dotted) {
  std::uint32_t ip = 0;
  const char* p = dotted.data();
  const char* end = dotted.data() + dotted.size();
  for (int octet = 0; octet < 4; ++octet) {
    unsigned v = 0;
    auto [next, ec] = std::from_chars(p, end, v);
    if (ec != std::errc{} || v > 255 || next == p)
      throw std::invalid_argument("bad IPv4 address: " + std::string(dotted));
    ip = (ip << 8) | v;
    p = next;
    if (octet < 3) {
      if (p == end || *p != '.')
        throw std::invalid_argument("bad IPv4 address: " + std::string(dotted));
      ++p;
    }
  }
  if (p != end)
    throw std::invalid_argument("bad IPv4 address: " + std::string(dotted));
  return ip;
}

std::string format_ip(std::uint32_t ip) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "%u.%u.%u.%u", (ip >> 24) & 0xff,
                (ip >> 16) & 0xff, (ip >> 8) & 0xff, ip & 0xff);
  return buf;
}

std::string format_mac(std::uint64_t mac) {
  char buf[18];
  std::snprintf(buf, sizeof buf, "%02x:%02x:%02x:%02x:%02x:%02x",
                unsigned((mac >> 40) & 0xff), unsigned((mac >> 32) & 0xff),
                unsigned((mac >> 24) & 0xff), unsigned((mac >> 16) & 0xff),
                unsigned((mac >> 8) & 0xff), unsigned(mac & 0xff));
  return buf;
}

std::string format_flags(TcpFlags f) {
  std::string out;
  if (f.has(TcpFlag::syn)) out += 'S';
  if (f.has(TcpFlag::fin)) out += 'F';
  if (f.has(TcpFlag::rst)) out += 'R';
  if (f.has(TcpFlag::psh)) out += 'P';
  if (f.has(TcpFlag::ack)) out += 'A';
  if (out.empty()) out = ".";
  return out;
}

std::uint32_t seg_span(const TcpSegment& seg) {
  auto span = static_cast<std::uint32_t>(seg.payload.size());
  if (seg.flags.has(TcpFlag::syn)) ++span;
  if (seg.flags.has(TcpFlag::fin)) ++span;
  return span;
}

void validate(const TcpSegment& seg) {
  if (seg.flags.has(TcpFlag::syn) && seg.flags.has(TcpFlag::fin))
    throw std::invalid_argument("segment carries both SYN and FIN");
}

std::string describe(const TcpSegment& seg) {
  std::string s = seg.proto == Proto::tcp ? "tcp " : "icmp ";
  s += format_ip(seg.src.ip) + ":" + std::to_string(seg.sport) + " > " +
       format_ip(seg.dst.ip) + ":" + std::to_string(seg.dport);
  s += " [" + format_flags(seg.flags) + "] seq=" + std::to_string(seg.seq.value) +
       " ack=" + std::to_string(seg.ack.value) +
       " len=" + std::to_string(seg.payload.size());
  return s;
}

std::string format_tuple(const FiveTuple& t) {
  return format_ip(t.src_ip) + ":" + std::to_string(t.sport) + ">" +
         format_ip(t.dst_ip) + ":" + std::to_string(t.dport);
}

std::size_t FiveTupleHash::operator()(const FiveTuple& t) const noexcept {
  std::uint64_t h = splitmix64((std::uint64_t{t.src_ip} << 32) | t.dst_ip);
  h ^= splitmix64((std::uint64_t{t.sport} << 24) | (std::uint64_t{t.dport} << 8) |
                  static_cast<std::uint64_t>(t.proto));
  return static_cast<std::size_t>(h);
}

}  // namespace decoy
