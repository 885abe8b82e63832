#include "decoy/controller.hpp"

#include <memory>

namespace decoy {

AlertForUnknownConnection::AlertForUnknownConnection(const FiveTuple& t)
    : std::invalid_argument("alert for unknown connection " + format_tuple(t)) {}

const char* to_string(Phase p) {
  switch (p) {
    case Phase::idle: return "IDLE";
    case Phase::cloning: return "CLONING";
    case Phase::splicing: return "SPLICING";
    case Phase::redirected: return "REDIRECTED";
    case Phase::restored: return "RESTORED";
    case Phase::fallback: return "FALLBACK";
  }
  return "?";
}

// ---------------------------------------------------------------- ledger

ConnLedger::Entry* ConnLedger::find(const FiveTuple& conn) {
  auto it = entries_.find(conn);
  return it == entries_.end() ? nullptr : &it->second;
}

const ConnLedger::Entry* ConnLedger::find(const FiveTuple& conn) const {
  auto it = entries_.find(conn);
  return it == entries_.end() ? nullptr : &it->second;
}

ConnLedger::Entry& ConnLedger::client_segment(const FiveTuple& conn, const TcpSegment& seg,
                                              PortId port) {
  Entry& e = entries_[conn];
  if (seg.flags.has(TcpFlag::syn) && !seg.flags.has(TcpFlag::ack)) {
    e = Entry{};
    e.attacker = seg.src;
    e.iss = seg.seq;
    e.end = seq_add(seg.seq, 1);
    e.attacker_port = port;
    return e;
  }
  if (e.attacker_port == 0) {
    e.attacker = seg.src;
    e.attacker_port = port;
  }
  if (seg.seq != e.end) return e;  // only new bytes extend the log
  if (!seg.payload.empty()) {
    e.payloads.push_back({seg.seq, seg.payload});
    e.end = seq_add(e.end, static_cast<std::uint32_t>(seg.payload.size()));
  }
  if (seg.flags.has(TcpFlag::fin)) e.end = seq_add(e.end, 1);
  return e;
}

void ConnLedger::server_segment(const FiveTuple& conn, const TcpSegment& seg, PortId port) {
  Entry* e = find(conn);
  if (!e) return;
  if (seg.flags.has(TcpFlag::syn) && seg.flags.has(TcpFlag::ack)) {
    e->servers[port] = ServerSide{seg.seq, seq_add(seg.seq, 1), 0};
    return;
  }
  auto it = e->servers.find(port);
  if (it == e->servers.end() || seg.seq != it->second.end) return;
  ServerSide& s = it->second;
  if (!seg.payload.empty()) {
    ++s.responses;
    s.end = seq_add(s.end, static_cast<std::uint32_t>(seg.payload.size()));
  }
  if (seg.flags.has(TcpFlag::fin)) s.end = seq_add(s.end, 1);
}

std::vector<const ConnLedger::Payload*> ConnLedger::range(const Entry& e, SeqNum base,
                                                          SeqNum cut) {
  std::vector<const Payload*> out;
  for (const auto& p : e.payloads)
    if (seq_leq(base, p.seq) && seq_lt(p.seq, cut)) out.push_back(&p);
  return out;
}

// ------------------------------------------------------------ controller

Controller::Controller(Engine& engine, Switch& sw, ControllerConfig config, ServiceLayout layout)
    : engine_(&engine), sw_(&sw), config_(config), layout_(std::move(layout)) {}

void Controller::use_clone_manager(CloneManager& mgr, VictimSpec spec, CloneKind kind) {
  clones_ = &mgr;
  clone_spec_ = std::move(spec);
  clone_kind_ = kind;
}

void Controller::log(std::string event, std::string detail) {
  for (char& ch : detail)
    if (ch == ',') ch = ';';
  events_.push_back({engine_->now(), std::move(event), std::move(detail)});
}

void Controller::set_phase(Conn& c, Phase p) {
  log("phase", std::string(to_string(c.rec.phase)) + "->" + to_string(p));
  c.rec.phase = p;
  c.rec.history.push_back({p, engine_->now()});
  if (phase_hook_) phase_hook_(c.rec.conn, p);
}

void Controller::submit(std::function<void()> fn) {
  const SimTime arrival = engine_->now() + config_.control_delay;
  const SimTime start = std::max(arrival, busy_until_);
  busy_until_ = start + config_.service_time;
  engine_->schedule(busy_until_, std::move(fn), "controller");
}

void Controller::to_switch(std::vector<SwitchMsg> batch) {
  if (batch.empty()) return;
  auto shared = std::make_shared<std::vector<SwitchMsg>>(std::move(batch));
  engine_->schedule_in(
      config_.control_delay, [this, shared] { sw_->apply(std::move(*shared)); }, "switch.apply");
}

std::optional<PortId> Controller::route(std::uint32_t ip) const {
  auto it = routes_.find(ip);
  if (it != routes_.end()) return it->second;
  return sw_->port_of(ip);
}

std::optional<FiveTuple> Controller::conn_of(const FiveTuple& t) const {
  if (t.proto != Proto::tcp) return std::nullopt;
  const auto& svc = layout_.service;
  auto is_service = [&](std::uint32_t ip, std::uint16_t port) {
    return port == svc.port && (ip == svc.host.ip || ip == layout_.honey.host.ip);
  };
  if (is_service(t.dst_ip, t.dport))
    return FiveTuple{Proto::tcp, t.src_ip, svc.host.ip, t.sport, svc.port};
  if (is_service(t.src_ip, t.sport))
    return FiveTuple{Proto::tcp, t.dst_ip, svc.host.ip, t.dport, svc.port};
  return std::nullopt;
}

void Controller::observe(const TcpSegment& seg, PortId in_port) {
  if (seg.proto != Proto::tcp) return;
  const auto key = conn_of(FiveTuple::of(seg));
  if (!key) return;
  const bool from_server = in_port == layout_.victim_port || in_port == layout_.honey_port;
  if (!from_server) {
    ledger_.client_segment(*key, seg, in_port);
    return;
  }
  ledger_.server_segment(*key, seg, in_port);
  auto it = conns_.find(*key);
  if (it != conns_.end() && it->second.waiting_quiet) maybe_start_splice(it->second);
}

void Controller::on_packet_in(PacketIn pin) {
  submit([this, pin = std::move(pin)] {
    ++packet_ins_;
    const TcpSegment& seg = pin.segment;
    if (pin.reason == PacketInReason::action) {
      if (auto key = conn_of(FiveTuple::of(seg)); key && conns_.count(*key))
        on_diverted(*key, seg);
      return;
    }
    // Honey servers never get reactive paths; their traffic is spliced.
    if (pin.in_port == layout_.honey_port && layout_.honey_port != layout_.victim_port) return;
    const auto out = route(seg.dst.ip);
    if (!out) return;
    const FiveTuple flow = FiveTuple::of(seg);
    std::vector<SwitchMsg> batch;
    if (installed_.insert({flow, pin.in_port}).second) {
      batch.push_back(InstallMsg{FlowRule{10, FlowMatch::exact(flow, pin.in_port),
                                          {Output{*out}}, next_cookie_++}});
      if (installed_.insert({flow.reversed(), *out}).second)
        batch.push_back(InstallMsg{FlowRule{10, FlowMatch::exact(flow.reversed(), *out),
                                            {Output{pin.in_port}}, next_cookie_++}});
    }
    batch.push_back(ReleaseHeldMsg{flow});
    to_switch(std::move(batch));
  });
}

FlowRule Controller::make_buffer_rule(Conn& c) {
  const ConnLedger::Entry* e = ledger_.find(c.rec.conn);
  c.queue = next_queue_++;
  c.buffer_rule = next_cookie_++;
  return FlowRule{200, FlowMatch::exact(c.rec.conn, e->attacker_port), {Buffer{c.queue}},
                  c.buffer_rule};
}

void Controller::hold_attacker(Conn& c, SeqNum cut) {
  sw_->install_rule(make_buffer_rule(c));
  c.pending_cut = cut;
  c.cut_known = true;
  log("hold", "cut=" + std::to_string(cut.value));
}

void Controller::on_alert(const Alert& alert) {
  const auto key = conn_of(alert.tuple);
  const ConnLedger::Entry* entry = key ? ledger_.find(*key) : nullptr;
  if (!entry) throw AlertForUnknownConnection(alert.tuple);

  Conn& c = conns_[*key];
  if (c.rec.phase != Phase::idle) {
    log("alert_ignored", "sid=" + std::to_string(alert.sid) + " phase=" + to_string(c.rec.phase));
    return;
  }
  log("alert", "sid=" + std::to_string(alert.sid) + " ordinal=" + std::to_string(alert.ordinal));
  c.rec.conn = *key;
  c.rec.victim = layout_.service;
  c.rec.honey = layout_.honey;
  c.rec.history.push_back({Phase::idle, engine_->now()});
  if (auto v = entry->servers.find(layout_.victim_port); v != entry->servers.end())
    c.rec.victim_isn = v->second.isn;
  c.active_port = layout_.victim_port;
  c.active_server = layout_.service;
  c.active_delta = 0;
  c.active_replayed = 0;
  c.active_live_start = seq_add(entry->iss, 1);
  set_phase(c, Phase::cloning);

  if (config_.cutover == CutoverPolicy::immediate) {
    // The alerting segment is still in the switch; holding it here keeps it
    // away from the victim.
    const bool own = FiveTuple::of(alert.segment) == *key && !alert.segment.payload.empty();
    hold_attacker(c, own ? alert.segment.seq : entry->end);
  }
  request_honey(c);
}

void Controller::request_honey(Conn& c) {
  const FiveTuple key = c.rec.conn;
  if (!clones_) {
    submit([this, key] { clone_ready(key); });
    return;
  }
  c.rec.clone_requested_at = engine_->now();
  log("clone_requested", std::string("kind=") + to_string(clone_kind_));
  try {
    clones_->request_clone(clone_spec_, clone_kind_, [this, key](const CloneHandle& h) {
      Conn& c = conns_.at(key);
      c.rec.clone_ready_at = engine_->now();
      log("clone_instantiated", std::string("kind=") + to_string(h.kind) +
                                    " latency_us=" + std::to_string(h.ready_at - h.requested_at));
      submit([this, key] { clone_ready(key); });
    });
  } catch (const CloneFailed& e) {
    log("clone_failed", e.what());
    engine_->schedule_in(config_.fallback_timeout, [this, key] { fallback(key); },
                         "controller.fallback");
  }
}

void Controller::clone_ready(const FiveTuple& key) {
  Conn& c = conns_.at(key);
  if (c.rec.phase != Phase::cloning) return;
  c.clone_ready = true;
  if (c.cut_known) {
    maybe_start_splice(c);
    return;
  }
  // Deferred hold: the rule and the cut are taken in one switch step, so no
  // attacker segment falls between them.
  FlowRule rule = make_buffer_rule(c);
  std::vector<SwitchMsg> batch;
  batch.push_back(InstallMsg{std::move(rule)});
  batch.push_back(CallbackMsg{[this, key] {
    Conn& c = conns_.at(key);
    c.pending_cut = ledger_.find(key)->end;
    c.cut_known = true;
    log("hold", "cut=" + std::to_string(c.pending_cut.value));
    maybe_start_splice(c);
  }});
  to_switch(std::move(batch));
}

bool Controller::old_server_quiet(const Conn& c) const {
  const ConnLedger::Entry* e = ledger_.find(c.rec.conn);
  const std::uint64_t requests =
      c.active_replayed + ConnLedger::range(*e, c.active_live_start, c.pending_cut).size();
  auto s = e->servers.find(c.active_port);
  const std::uint64_t responses = s == e->servers.end() ? 0 : s->second.responses;
  return responses >= requests;
}

void Controller::maybe_start_splice(Conn& c) {
  if (!c.clone_ready || !c.cut_known || c.splice_scheduled) return;
  if (!old_server_quiet(c)) {
    c.waiting_quiet = true;
    return;
  }
  c.waiting_quiet = false;
  c.splice_scheduled = true;
  const FiveTuple key = c.rec.conn;
  submit([this, key] { start_splice(key); });
}

TcpSegment Controller::forged_rst(const Conn& c, const SocketAddr& server, SeqNum seq) const {
  const ConnLedger::Entry* e = ledger_.find(c.rec.conn);
  TcpSegment rst;
  rst.src = e->attacker;
  rst.dst = server.host;
  rst.sport = c.rec.conn.sport;
  rst.dport = server.port;
  rst.seq = seq;
  rst.flags = TcpFlags{TcpFlag::rst};
  rst.ts_sent = engine_->now();
  return rst;
}

void Controller::start_splice(const FiveTuple& key) {
  Conn& c = conns_.at(key);
  const ConnLedger::Entry* e = ledger_.find(key);
  Splice s;
  s.to_victim = c.restoring;
  s.cut = c.pending_cut;
  s.old_port = c.active_port;
  s.old_server = c.active_server;
  if (s.to_victim) {
    s.target_port = layout_.victim_port;
    s.target = layout_.service;
    s.base = c.rec.cut;  // the victim already consumed everything before it
  } else {
    s.target_port = layout_.honey_port;
    s.target = layout_.honey;
    s.base = config_.replay ? seq_add(e->iss, 1) : s.cut;
  }
  for (const auto* p : ConnLedger::range(*e, s.base, s.cut)) s.replay.push_back(p->data);

  // The forged SYN sits just below the first replayed byte, so attacker
  // seq numbers are valid at the target unchanged.
  IssPolicy iss = IssPolicy::fixed(s.base.value - 1);
  TcpSegment syn = s.imp.open(SocketAddr{e->attacker, key.sport}, s.target, iss, engine_->now());

  const FiveTuple back{Proto::tcp, s.target.host.ip, key.src_ip, s.target.port, key.sport};
  c.divert_rule = next_cookie_++;
  std::vector<SwitchMsg> batch;
  batch.push_back(InstallMsg{FlowRule{150, FlowMatch::exact(back, s.target_port),
                                      {ToController{}}, c.divert_rule}});
  batch.push_back(PacketOutMsg{std::move(syn), s.target_port});

  if (!c.restoring) set_phase(c, Phase::splicing);
  log("splice_start", std::string("target=") + (s.to_victim ? "victim" : "honey") +
                          " base=" + std::to_string(s.base.value) +
                          " cut=" + std::to_string(s.cut.value) +
                          " replay=" + std::to_string(s.replay.size()));
  c.splice = std::move(s);
  to_switch(std::move(batch));
}

void Controller::on_diverted(const FiveTuple& key, const TcpSegment& seg) {
  Conn& c = conns_.at(key);
  if (!c.splice || c.splice->done) return;
  Splice& s = *c.splice;
  const TcpState before = s.imp.state();
  SegmentOutcome out = s.imp.on_segment(seg, engine_->now());
  std::vector<SwitchMsg> batch;
  for (auto& emitted : out.emitted) batch.push_back(PacketOutMsg{std::move(emitted), s.target_port});

  if (s.imp.state() == TcpState::closed_final) {
    splice_failed(c, batch);
    to_switch(std::move(batch));
    return;
  }
  if (before != TcpState::established && s.imp.state() == TcpState::established) {
    if (s.to_victim)
      c.rec.victim_isn = s.imp.irs();
    else
      c.rec.honey_isn = s.imp.irs();
    log("target_established", "isn=" + std::to_string(s.imp.irs().value));
    for (const auto& payload : s.replay)
      batch.push_back(PacketOutMsg{s.imp.app_send(payload, engine_->now()), s.target_port});
    s.replay_sent = true;
    if (s.to_victim)
      c.rec.restore_replayed = static_cast<std::uint32_t>(s.replay.size());
    else
      c.rec.replay_buffer = s.replay;
  }
  if (!out.delivered.empty()) ++s.responses;
  if (s.replay_sent && s.responses >= s.replay.size()) cutover(c, batch);
  to_switch(std::move(batch));
}

void Controller::cutover(Conn& c, std::vector<SwitchMsg>& batch) {
  Splice& s = *c.splice;
  const ConnLedger::Entry* e = ledger_.find(c.rec.conn);
  const FiveTuple& key = c.rec.conn;

  // Where the attacker believes the server stream is, and where the target's
  // stream actually is.
  const SeqNum old_end = e->servers.at(s.old_port).end;
  const SeqNum attacker_view{old_end.value - c.active_delta};
  const std::uint32_t d = seq_diff(s.imp.rcv_nxt(), attacker_view);
  const bool readdress = !(s.target.host == layout_.service.host);

  Rewrite fwd_rw;
  fwd_rw.ack_delta = d;
  if (readdress) fwd_rw.new_dst = s.target.host;
  Rewrite rev_rw;
  rev_rw.seq_delta = 0u - d;
  if (readdress) rev_rw.new_src = layout_.service.host;

  const FiveTuple back{Proto::tcp, s.target.host.ip, key.src_ip, s.target.port, key.sport};
  if (c.fwd_rule) batch.push_back(RemoveMsg{c.fwd_rule});
  if (c.rev_rule) batch.push_back(RemoveMsg{c.rev_rule});
  batch.push_back(RemoveMsg{c.divert_rule});
  c.fwd_rule = next_cookie_++;
  c.rev_rule = next_cookie_++;
  batch.push_back(InstallMsg{FlowRule{100, FlowMatch::exact(key, e->attacker_port),
                                      {fwd_rw, Output{s.target_port}}, c.fwd_rule}});
  batch.push_back(InstallMsg{FlowRule{100, FlowMatch::exact(back, s.target_port),
                                      {rev_rw, Output{e->attacker_port}}, c.rev_rule}});
  // Silent closure of the server that is being left.
  batch.push_back(PacketOutMsg{forged_rst(c, s.old_server, s.cut), s.old_port});
  batch.push_back(RemoveMsg{c.buffer_rule});
  batch.push_back(ReleaseBufferMsg{c.queue, std::nullopt});

  c.active_port = s.target_port;
  c.active_server = s.target;
  c.active_delta = d;
  c.active_replayed = s.replay.size();
  c.active_live_start = s.cut;
  c.rec.seq_delta = d;
  c.rec.ack_delta = 0u - d;
  c.buffer_rule = 0;
  c.divert_rule = 0;
  c.cut_known = false;
  c.splice_scheduled = false;
  s.done = true;

  log("cutover", "seq_delta=" + std::to_string(d) + " target=" + (s.to_victim ? "victim" : "honey"));
  if (s.to_victim)
    c.rec.restore_cut = s.cut;
  else
    c.rec.cut = s.cut;
  // The new phase holds once the switch has applied the batch.
  batch.push_back(CallbackMsg{[this, key, to_victim = s.to_victim] {
    Conn& conn = conns_.at(key);
    if (to_victim) conn.restoring = false;
    set_phase(conn, to_victim ? Phase::restored : Phase::redirected);
  }});
}

void Controller::splice_failed(Conn& c, std::vector<SwitchMsg>& batch) {
  Splice& s = *c.splice;
  s.done = true;
  batch.push_back(RemoveMsg{c.divert_rule});
  c.divert_rule = 0;
  c.splice_scheduled = false;
  if (s.to_victim) {
    // The connection stays on the honey server.
    c.rec.restore_failed = true;
    c.restoring = false;
    c.cut_known = false;
    log("restore_failed", "victim refused connection");
    batch.push_back(RemoveMsg{c.buffer_rule});
    batch.push_back(ReleaseBufferMsg{c.queue, std::nullopt});
    c.buffer_rule = 0;
    return;
  }
  log("splice_failed", "honey refused connection");
  fallback_batch(c, batch);
}

void Controller::fallback(const FiveTuple& key) {
  Conn& c = conns_.at(key);
  if (c.rec.phase != Phase::cloning) return;
  std::vector<SwitchMsg> batch;
  fallback_batch(c, batch);
  to_switch(std::move(batch));
}

void Controller::fallback_batch(Conn& c, std::vector<SwitchMsg>& batch) {
  const ConnLedger::Entry* e = ledger_.find(c.rec.conn);
  set_phase(c, Phase::fallback);
  if (config_.fail_policy == FailPolicy::fail_open) {
    log("fallback", "policy=fail_open");
    if (c.buffer_rule) {
      batch.push_back(RemoveMsg{c.buffer_rule});
      batch.push_back(ReleaseBufferMsg{c.queue, std::nullopt});
    }
  } else {
    log("fallback", "policy=fail_closed");
    batch.push_back(InstallMsg{FlowRule{
        200, FlowMatch::exact(c.rec.conn, e->attacker_port), {Drop{}}, next_cookie_++}});
    if (c.buffer_rule) {
      batch.push_back(RemoveMsg{c.buffer_rule});
      batch.push_back(DropBufferMsg{c.queue});
    }
    const SeqNum seq = c.cut_known ? c.pending_cut : e->end;
    batch.push_back(PacketOutMsg{forged_rst(c, layout_.service, seq), layout_.victim_port});
  }
  c.buffer_rule = 0;
}

void Controller::restore_original(const FiveTuple& conn, std::optional<SeqNum> cut) {
  auto it = conns_.find(conn);
  const Phase phase = it == conns_.end() ? Phase::idle : it->second.rec.phase;
  if (phase != Phase::redirected || it->second.restoring)
    throw InvalidPhase(std::string("restore needs phase REDIRECTED, connection is ") +
                       to_string(phase));
  Conn& c = it->second;
  const ConnLedger::Entry* e = ledger_.find(conn);
  c.restoring = true;
  log("restore_requested");
  hold_attacker(c, cut.value_or(e->end));
  c.clone_ready = true;
  maybe_start_splice(c);
}

const MigrationRecord* Controller::migration(const FiveTuple& conn) const {
  auto it = conns_.find(conn);
  return it == conns_.end() ? nullptr : &it->second.rec;
}

std::vector<const MigrationRecord*> Controller::migrations() const {
  std::vector<const MigrationRecord*> out;
  for (const auto& [key, c] : conns_) out.push_back(&c.rec);
  return out;
}

}  // namespace decoy
