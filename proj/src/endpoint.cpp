#include "decoy/endpoint.hpp"

#include <cstdio>

namespace decoy {

const char* to_string(TcpState s) {
  switch (s) {
    case TcpState::closed: return "CLOSED";
    case TcpState::syn_sent: return "SYN_SENT";
    case TcpState::syn_rcvd: return "SYN_RCVD";
    case TcpState::established: return "ESTABLISHED";
    case TcpState::fin_wait: return "FIN_WAIT";
    case TcpState::close_wait: return "CLOSE_WAIT";
    case TcpState::closed_final: return "CLOSED_FINAL";
  }
  return "?";
}

SeqNum IssPolicy::next() {
  if (fixed_) return SeqNum{*fixed_};
  return SeqNum{rng_.next_u32()};
}

TcpSegment ConnectionState::make_segment(TcpFlags flags, SimTime now) const {
  TcpSegment seg;
  seg.src = local_.host;
  seg.dst = remote_.host;
  seg.sport = local_.port;
  seg.dport = remote_.port;
  seg.seq = snd_nxt_;
  seg.ack = flags.has(TcpFlag::ack) ? rcv_nxt_ : SeqNum{};
  seg.flags = flags;
  seg.ts_sent = now;
  return seg;
}

TcpSegment ConnectionState::open(SocketAddr local, SocketAddr remote, IssPolicy& iss,
                                 SimTime now) {
  if (state_ != TcpState::closed)
    throw InvalidState(std::string("open in state ") + to_string(state_));
  local_ = local;
  remote_ = remote;
  iss_ = iss.next();
  snd_una_ = iss_;
  snd_nxt_ = iss_;
  TcpSegment syn = make_segment({TcpFlag::syn}, now);
  snd_nxt_ = seq_add(iss_, 1);
  state_ = TcpState::syn_sent;
  return syn;
}

TcpSegment ConnectionState::accept(SocketAddr local, const TcpSegment& syn,
                                   IssPolicy& iss, SimTime now) {
  if (state_ != TcpState::closed)
    throw InvalidState(std::string("accept in state ") + to_string(state_));
  if (!syn.flags.has(TcpFlag::syn) || syn.flags.has(TcpFlag::ack))
    throw InvalidState("accept requires a bare SYN");
  local_ = local;
  remote_ = SocketAddr{syn.src, syn.sport};
  irs_ = syn.seq;
  rcv_nxt_ = seq_add(syn.seq, 1);
  iss_ = iss.next();
  snd_una_ = iss_;
  snd_nxt_ = iss_;
  TcpSegment synack = make_segment({TcpFlag::syn, TcpFlag::ack}, now);
  snd_nxt_ = seq_add(iss_, 1);
  state_ = TcpState::syn_rcvd;
  return synack;
}

SegmentOutcome ConnectionState::on_segment(const TcpSegment& seg, SimTime now) {
  SegmentOutcome out;
  if (seg.proto != Proto::tcp || seg.dst.ip != local_.host.ip || seg.dport != local_.port)
    return out;
  if (state_ == TcpState::closed || state_ == TcpState::closed_final) return out;

  if (seg.flags.has(TcpFlag::rst)) {
    const bool acceptable = state_ == TcpState::syn_sent
                                ? seg.flags.has(TcpFlag::ack) && seg.ack == snd_nxt_
                                : seg.seq == rcv_nxt_;
    if (acceptable) state_ = TcpState::closed_final;
    return out;
  }

  switch (state_) {
    case TcpState::syn_sent:
      if (seg.flags.has(TcpFlag::syn) && seg.flags.has(TcpFlag::ack) &&
          seg.ack == snd_nxt_) {
        irs_ = seg.seq;
        rcv_nxt_ = seq_add(seg.seq, 1);
        snd_una_ = seg.ack;
        state_ = TcpState::established;
        out.emitted.push_back(make_segment({TcpFlag::ack}, now));
      }
      return out;

    case TcpState::syn_rcvd:
      if (seg.flags.has(TcpFlag::syn) || !seg.flags.has(TcpFlag::ack) ||
          seg.ack != snd_nxt_)
        return out;
      snd_una_ = seg.ack;
      state_ = TcpState::established;
      process_data(seg, out, now);
      return out;

    default:
      if (seg.flags.has(TcpFlag::syn)) {
        out.emitted.push_back(make_segment({TcpFlag::ack}, now));
        return out;
      }
      if (seg.flags.has(TcpFlag::ack) && seq_lt(snd_una_, seg.ack) &&
          seq_leq(seg.ack, snd_nxt_))
        snd_una_ = seg.ack;
      process_data(seg, out, now);
      return out;
  }
}

void ConnectionState::process_data(const TcpSegment& seg, SegmentOutcome& out,
                                   SimTime now) {
  if (seg_span(seg) == 0) return;
  const auto len = static_cast<std::uint32_t>(seg.payload.size());
  if (len > 0) {
    const SeqNum end = seq_add(seg.seq, len);
    if (seq_leq(seg.seq, rcv_nxt_) && seq_lt(rcv_nxt_, end)) {
      const std::uint32_t skip = seq_diff(rcv_nxt_, seg.seq);
      out.delivered.assign(seg.payload, skip, std::string::npos);
      rcvd_stream_ += out.delivered;
      rcv_nxt_ = end;
    }
  }
  if (seg.flags.has(TcpFlag::fin) && seq_add(seg.seq, len) == rcv_nxt_) {
    rcv_nxt_ = seq_add(rcv_nxt_, 1);
    if (state_ == TcpState::established)
      state_ = TcpState::close_wait;
    else if (state_ == TcpState::fin_wait)
      state_ = TcpState::closed_final;
  }
  out.emitted.push_back(make_segment({TcpFlag::ack}, now));
}

TcpSegment ConnectionState::app_send(std::string_view data, SimTime now) {
  if (state_ != TcpState::established)
    throw InvalidState(std::string("send in state ") + to_string(state_));
  if (data.empty()) throw EmptyPayload();
  TcpSegment seg = make_segment({TcpFlag::psh, TcpFlag::ack}, now);
  seg.payload.assign(data);
  sent_log_.push_back({snd_nxt_, seg.payload, now});
  snd_nxt_ = seq_add(snd_nxt_, static_cast<std::uint32_t>(data.size()));
  return seg;
}

TcpSegment ConnectionState::close(SimTime now) {
  if (state_ != TcpState::established && state_ != TcpState::close_wait)
    throw InvalidState(std::string("close in state ") + to_string(state_));
  TcpSegment fin = make_segment({TcpFlag::fin, TcpFlag::ack}, now);
  snd_nxt_ = seq_add(snd_nxt_, 1);
  state_ = state_ == TcpState::established ? TcpState::fin_wait : TcpState::closed_final;
  return fin;
}

TcpSegment ConnectionState::abort(SimTime now) {
  if (state_ == TcpState::closed || state_ == TcpState::closed_final)
    throw InvalidState(std::string("abort in state ") + to_string(state_));
  TcpSegment rst = make_segment({TcpFlag::rst}, now);
  state_ = TcpState::closed_final;
  return rst;
}

std::string ServerApp::response_for(std::string_view app_id, std::string_view request,
                                    std::uint64_t count) {
  char digest[17];
  std::snprintf(digest, sizeof digest, "%016llx",
                static_cast<unsigned long long>(fnv1a64(request, fnv1a64(app_id))));
  std::string out;
  out.reserve(app_id.size() + request.size() + 40);
  out.append(app_id).append("#").append(std::to_string(count)).append(":");
  out.append(digest).append(":");
  out.append(request.rbegin(), request.rend());
  return out;
}

std::string ServerApp::respond(std::string_view request) {
  ++count_;
  return response_for(app_id_, request, count_);
}

ServerHost::ServerHost(Engine& engine, ServerConfig config, IssPolicy iss)
    : engine_(&engine),
      config_(std::move(config)),
      iss_(std::move(iss)),
      app_(config_.app_id) {}

const ConnectionState* ServerHost::connection(const SocketAddr& peer) const {
  auto it = conns_.find(peer_key(peer));
  return it == conns_.end() ? nullptr : &it->second;
}

void ServerHost::receive(TcpSegment seg) {
  if (seg.proto != Proto::tcp) return;
  if (seg.dst.ip != config_.service.host.ip || seg.dport != config_.service.port) return;
  const SocketAddr peer{seg.src, seg.sport};
  const std::uint64_t key = peer_key(peer);
  const SimTime now = engine_->now();

  auto it = conns_.find(key);
  const bool live = it != conns_.end() && it->second.state() != TcpState::closed_final;
  if (!live) {
    if (seg.flags.has(TcpFlag::rst)) return;
    if (seg.flags.has(TcpFlag::syn) && !seg.flags.has(TcpFlag::ack) && config_.accepting) {
      ConnectionState conn;
      TcpSegment synack = conn.accept(config_.service, seg, iss_, now);
      conns_.insert_or_assign(key, std::move(conn));
      ++accepted_;
      send(std::move(synack));
      return;
    }
    // Refused or unknown connection.
    TcpSegment rst;
    rst.src = config_.service.host;
    rst.dst = seg.src;
    rst.sport = config_.service.port;
    rst.dport = seg.sport;
    if (seg.flags.has(TcpFlag::ack)) {
      rst.seq = seg.ack;
      rst.flags = TcpFlags{TcpFlag::rst};
    } else {
      rst.ack = seq_add(seg.seq, seg_span(seg));
      rst.flags = TcpFlags{TcpFlag::rst, TcpFlag::ack};
    }
    rst.ts_sent = now;
    send(std::move(rst));
    return;
  }

  ConnectionState& conn = it->second;
  const bool was_rst = seg.flags.has(TcpFlag::rst);
  SegmentOutcome out = conn.on_segment(seg, now);
  if (was_rst && conn.state() == TcpState::closed_final) ++resets_;
  for (auto& s : out.emitted) send(std::move(s));

  if (!out.delivered.empty()) {
    log_.push_back({now, peer, out.delivered});
    std::string response = app_.respond(out.delivered);
    engine_->schedule_in(
        config_.processing_delay,
        [this, key, response = std::move(response)] {
          auto c = conns_.find(key);
          if (c == conns_.end() || c->second.state() != TcpState::established) return;
          send(c->second.app_send(response, engine_->now()));
        },
        "server.respond");
  }
  if (conn.state() == TcpState::close_wait) send(conn.close(now));
}

AttackerClient::AttackerClient(Engine& engine, ClientConfig config, IssPolicy iss,
                               RngStream payload_rng)
    : engine_(&engine),
      config_(config),
      iss_(std::move(iss)),
      payload_rng_(std::move(payload_rng)) {
  requests_.reserve(config_.total_requests);
}

void AttackerClient::send(TcpSegment seg) {
  if (sent_hook_) sent_hook_(seg, conn_);
  if (tx_) tx_(std::move(seg));
}

void AttackerClient::start() {
  engine_->schedule(
      config_.start_at,
      [this] { send(conn_.open(config_.local, config_.server, iss_, engine_->now())); },
      "client.open");
}

std::string AttackerClient::make_request(std::uint32_t index) {
  const auto len = static_cast<std::size_t>(
      payload_rng_.uniform_int(config_.min_request_bytes, config_.max_request_bytes));
  std::string req = "Q" + std::to_string(index) + ":";
  while (req.size() < len)
    req += static_cast<char>('a' + payload_rng_.uniform_int(0, 25));
  req.resize(len);
  return req;
}

void AttackerClient::send_next_request() {
  const auto index = static_cast<std::uint32_t>(requests_.size() + 1);
  if (index > config_.total_requests) return;
  RequestRecord rec;
  rec.index = index;
  rec.send_us = engine_->now();
  rec.request = make_request(index);
  TcpSegment seg = conn_.app_send(rec.request, engine_->now());
  requests_.push_back(std::move(rec));
  send(std::move(seg));
  if (index < config_.total_requests)
    engine_->schedule_in(config_.interval, [this] { send_next_request(); }, "client.request");
}

void AttackerClient::receive(TcpSegment seg) {
  if (recv_hook_) recv_hook_(seg, conn_);
  const bool was_established = conn_.state() == TcpState::established;
  SegmentOutcome out = conn_.on_segment(seg, engine_->now());
  for (auto& s : out.emitted) send(std::move(s));

  if (!was_established && conn_.state() == TcpState::established && requests_.empty()) {
    send_next_request();
    return;
  }
  if (!out.delivered.empty() && answered_ < requests_.size()) {
    RequestRecord& rec = requests_[answered_++];
    rec.recv_us = engine_->now();
    rec.response = std::move(out.delivered);
    if (complete() && complete_hook_) complete_hook_();
  }
}

}  // namespace decoy
