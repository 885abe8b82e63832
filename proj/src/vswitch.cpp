#include "decoy/vswitch.hpp"

#include <string>

namespace decoy {

UnknownCookie::UnknownCookie(Cookie c)
    : std::out_of_range("unknown flow cookie " + std::to_string(c)) {}

UnknownQueue::UnknownQueue(QueueId q)
    : std::out_of_range("unknown buffer queue " + std::to_string(q)) {}

bool FlowMatch::matches(const TcpSegment& seg, PortId port) const {
  if (in_port && *in_port != port) return false;
  if (proto && *proto != seg.proto) return false;
  if (src_ip && *src_ip != seg.src.ip) return false;
  if (dst_ip && *dst_ip != seg.dst.ip) return false;
  if (sport && *sport != seg.sport) return false;
  if (dport && *dport != seg.dport) return false;
  return seg.flags.contains(flags);
}

FlowMatch FlowMatch::exact(const FiveTuple& t, std::optional<PortId> port) {
  FlowMatch m;
  m.in_port = port;
  m.proto = t.proto;
  m.src_ip = t.src_ip;
  m.dst_ip = t.dst_ip;
  m.sport = t.sport;
  m.dport = t.dport;
  return m;
}

void Rewrite::apply(TcpSegment& seg) const {
  seg.seq = seq_add(seg.seq, seq_delta);
  seg.ack = seq_add(seg.ack, ack_delta);
  if (new_dst) seg.dst = *new_dst;
  if (new_src) seg.src = *new_src;
}

std::optional<FlowTable::IndexKey> FlowTable::index_key(const FlowMatch& m) {
  if (!m.proto || !m.src_ip || !m.dst_ip || !m.sport || !m.dport || !m.flags.empty())
    return std::nullopt;
  return IndexKey{FiveTuple{*m.proto, *m.src_ip, *m.dst_ip, *m.sport, *m.dport},
                  m.in_port ? int{*m.in_port} : -1};
}

Cookie FlowTable::install(FlowRule rule) {
  if (rule.cookie == 0) rule.cookie = next_cookie_++;
  const Cookie cookie = rule.cookie;
  if (rules_.count(cookie)) remove(cookie);
  const auto key = index_key(rule.match);
  rules_.emplace(cookie, Entry{std::move(rule), next_order_++});
  if (key)
    exact_[*key].push_back(cookie);
  else
    wildcard_.push_back(cookie);
  return cookie;
}

bool FlowTable::remove(Cookie cookie) {
  auto it = rules_.find(cookie);
  if (it == rules_.end()) throw UnknownCookie(cookie);
  if (auto key = index_key(it->second.rule.match)) {
    auto bucket = exact_.find(*key);
    std::erase(bucket->second, cookie);
    if (bucket->second.empty()) exact_.erase(bucket);
  } else {
    std::erase(wildcard_, cookie);
  }
  rules_.erase(it);
  return true;
}

const FlowRule* FlowTable::lookup(const TcpSegment& seg, PortId in_port) const {
  const Entry* best = nullptr;
  auto consider = [&](Cookie c) {
    const Entry& e = rules_.at(c);
    if (!e.rule.match.matches(seg, in_port)) return;
    if (!best || better(e, *best)) best = &e;
  };
  const FiveTuple t = FiveTuple::of(seg);
  for (int port : {int{in_port}, -1}) {
    auto it = exact_.find(IndexKey{t, port});
    if (it != exact_.end())
      for (Cookie c : it->second) consider(c);
  }
  for (Cookie c : wildcard_) consider(c);
  return best ? &best->rule : nullptr;
}

Switch::Switch(Engine& engine, SwitchConfig config) : engine_(&engine), config_(config) {}

std::function<void(TcpSegment)> Switch::connect(PortId port, LinkModel model,
                                                std::function<void(TcpSegment)> rx) {
  Port p;
  p.egress = std::make_unique<Link>(*engine_, model,
                                    engine_->stream("link.down." + std::to_string(port)),
                                    std::move(rx));
  p.ingress = std::make_unique<Link>(
      *engine_, model, engine_->stream("link.up." + std::to_string(port)),
      [this, port](TcpSegment seg) { process(std::move(seg), port); });
  Link* ingress = p.ingress.get();
  ports_.insert_or_assign(port, std::move(p));
  return [ingress](TcpSegment seg) { ingress->send(std::move(seg)); };
}

std::function<void(TcpSegment)> Switch::attach(const HostAddr& addr,
                                               std::function<void(TcpSegment)> rx) {
  while (ports_.count(next_fabric_port_)) ++next_fabric_port_;
  const PortId port = next_fabric_port_++;
  ip_ports_[addr.ip] = port;
  return connect(port, LinkModel{}, std::move(rx));
}

std::optional<PortId> Switch::port_of(std::uint32_t ip) const {
  auto it = ip_ports_.find(ip);
  if (it == ip_ports_.end()) return std::nullopt;
  return it->second;
}

Link* Switch::egress_link(PortId port) {
  auto it = ports_.find(port);
  return it == ports_.end() ? nullptr : it->second.egress.get();
}

Cookie Switch::install_rule(FlowRule rule) {
  for (const auto& action : rule.actions)
    if (const auto* buf = std::get_if<Buffer>(&action)) queues_[buf->queue];
  return table_.install(std::move(rule));
}

void Switch::process(TcpSegment seg, PortId in_port) {
  ++stats_.received;
  // The tap sees the segment as it arrived, before any rule runs. The tap
  // may reprogram the table; the lookup below then sees the new table.
  if (mirror_) {
    ++stats_.mirrored;
    mirror_(seg, in_port);
  }
  dispatch(std::move(seg), in_port);
}

void Switch::dispatch(TcpSegment seg, PortId in_port) {
  const FlowRule* rule = table_.lookup(seg, in_port);
  if (rule) {
    execute(*rule, std::move(seg), in_port);
    return;
  }
  // Table miss: hold the segment until the controller programs the flow.
  const FiveTuple flow = FiveTuple::of(seg);
  Held& held = held_[flow];
  if (held.segments.empty()) {
    held.generation = next_generation_++;
    const std::uint64_t gen = held.generation;
    engine_->schedule_in(
        config_.miss_hold_timeout,
        [this, flow, gen] {
          auto it = held_.find(flow);
          if (it == held_.end() || it->second.generation != gen) return;
          stats_.held_expired += it->second.segments.size();
          held_.erase(it);
        },
        "switch.hold_timeout");
  }
  held.segments.emplace_back(seg, in_port);
  ++stats_.packet_ins;
  if (packet_in_) packet_in_(PacketIn{std::move(seg), in_port, PacketInReason::table_miss});
}

void Switch::execute(const FlowRule& rule, TcpSegment seg, PortId in_port) {
  for (const auto& action : rule.actions) {
    if (const auto* out = std::get_if<Output>(&action)) {
      emit(seg, out->port);
    } else if (const auto* rw = std::get_if<Rewrite>(&action)) {
      rw->apply(seg);
    } else if (const auto* buf = std::get_if<Buffer>(&action)) {
      ++stats_.buffered;
      queues_[buf->queue].emplace_back(std::move(seg), in_port);
      return;
    } else if (std::holds_alternative<Drop>(action)) {
      ++stats_.dropped;
      return;
    } else if (std::holds_alternative<ToController>(action)) {
      ++stats_.packet_ins;
      if (packet_in_) packet_in_(PacketIn{seg, in_port, PacketInReason::action});
    }
  }
}

void Switch::emit(TcpSegment seg, PortId port) {
  auto it = ports_.find(port);
  if (it == ports_.end()) {
    ++stats_.dropped;
    return;
  }
  ++stats_.forwarded;
  it->second.egress->send(std::move(seg));
}

std::size_t Switch::release_buffer(QueueId queue, const std::optional<Rewrite>& rewrite) {
  auto it = queues_.find(queue);
  if (it == queues_.end()) throw UnknownQueue(queue);
  auto pending = std::move(it->second);
  it->second.clear();
  for (auto& [seg, port] : pending) {
    if (rewrite) rewrite->apply(seg);
    dispatch(std::move(seg), port);
  }
  return pending.size();
}

std::size_t Switch::drop_buffer(QueueId queue) {
  auto it = queues_.find(queue);
  if (it == queues_.end()) throw UnknownQueue(queue);
  const std::size_t n = it->second.size();
  stats_.dropped += n;
  it->second.clear();
  return n;
}

std::size_t Switch::buffered(QueueId queue) const {
  auto it = queues_.find(queue);
  return it == queues_.end() ? 0 : it->second.size();
}

void Switch::packet_out(TcpSegment seg, PortId port) {
  ++stats_.packet_outs;
  emit(std::move(seg), port);
}

std::size_t Switch::release_held(const FiveTuple& flow) {
  auto it = held_.find(flow);
  if (it == held_.end()) return 0;
  auto segments = std::move(it->second.segments);
  held_.erase(it);
  for (auto& [seg, port] : segments) {
    const FlowRule* rule = table_.lookup(seg, port);
    if (rule)
      execute(*rule, std::move(seg), port);
    else
      ++stats_.dropped;
  }
  return segments.size();
}

void Switch::apply(std::vector<SwitchMsg> batch) {
  for (auto& msg : batch) {
    std::visit(
        [this](auto& m) {
          using T = std::decay_t<decltype(m)>;
          if constexpr (std::is_same_v<T, InstallMsg>) {
            install_rule(std::move(m.rule));
          } else if constexpr (std::is_same_v<T, RemoveMsg>) {
            if (table_.contains(m.cookie)) table_.remove(m.cookie);
          } else if constexpr (std::is_same_v<T, ReleaseBufferMsg>) {
            if (queues_.count(m.queue)) release_buffer(m.queue, m.rewrite);
          } else if constexpr (std::is_same_v<T, DropBufferMsg>) {
            if (queues_.count(m.queue)) drop_buffer(m.queue);
          } else if constexpr (std::is_same_v<T, PacketOutMsg>) {
            packet_out(std::move(m.segment), m.port);
          } else if constexpr (std::is_same_v<T, ReleaseHeldMsg>) {
            release_held(m.flow);
          } else if constexpr (std::is_same_v<T, CallbackMsg>) {
            if (m.fn) m.fn();
          }
        },
        msg);
  }
}

}  // namespace decoy
