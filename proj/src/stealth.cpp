#include "decoy/stealth.hpp"

namespace decoy {

void StealthMonitor::on_send(const TcpSegment& seg, const ConnectionState&) {
  const std::uint32_t span = seg_span(seg);
  if (span > 0) boundaries_.insert(seq_add(seg.seq, span).value);
}

void StealthMonitor::flag(SimTime at, std::string kind, const TcpSegment& seg) {
  violations_.push_back({at, std::move(kind), describe(seg)});
}

void StealthMonitor::on_receive(const TcpSegment& seg, const ConnectionState& before,
                                SimTime now) {
  if (seg.proto != Proto::tcp) return;
  ++checked_;
  if (seg.flags.has(TcpFlag::rst)) flag(now, "rst_received", seg);
  if (seg.flags.has(TcpFlag::fin)) flag(now, "fin_received", seg);

  if (seg.flags.has(TcpFlag::ack)) {
    if (!boundaries_.count(seg.ack.value)) flag(now, "ack_not_a_boundary", seg);
    if (last_ack_ && seq_lt(seg.ack, *last_ack_)) flag(now, "ack_regressed", seg);
    if (seq_lt(before.snd_nxt(), seg.ack)) flag(now, "ack_beyond_snd_nxt", seg);
    last_ack_ = seg.ack;
  }

  if (before.state() == TcpState::syn_sent) return;  // peer ISN is learned here
  if (seg.flags.has(TcpFlag::syn)) flag(now, "syn_after_handshake", seg);
  if (seg.seq != before.rcv_nxt()) flag(now, "seq_gap", seg);
}

}  // namespace decoy
