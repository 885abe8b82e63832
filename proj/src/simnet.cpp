#include "decoy/simnet.hpp"

#include <cmath>
#include <numbers>

namespace decoy {

SchedulingInPast::SchedulingInPast(SimTime at, SimTime now)
    : std::logic_error("cannot schedule at t=" + std::to_string(at) +
                       "us, clock is at " + std::to_string(now) + "us") {}

std::int64_t RngStream::uniform_int(std::int64_t lo, std::int64_t hi) {
  if (hi <= lo) return lo;
  const auto range = static_cast<std::uint64_t>(hi - lo) + 1;
  if (range == 0) return static_cast<std::int64_t>(engine_());
  // Rejection sampling keeps the draw unbiased and independent of the
  // standard library's distribution implementation.
  const std::uint64_t limit = UINT64_MAX - UINT64_MAX % range;
  std::uint64_t x;
  do {
    x = engine_();
  } while (x >= limit);
  return lo + static_cast<std::int64_t>(x % range);
}

double RngStream::uniform01() {
  return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
}

double RngStream::normal(double mean, double sd) {
  // Box-Muller, one variate per call.
  double u1 = uniform01();
  while (u1 <= 0.0) u1 = uniform01();
  const double u2 = uniform01();
  const double z =
      std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
  return mean + sd * z;
}

EventId Engine::schedule(SimTime at, Action fn, std::string_view label) {
  if (at < now_) throw SchedulingInPast(at, now_);
  const EventId id = next_id_++;
  queue_.push(Event{at, id, std::move(fn), std::string(label)});
  live_.insert(id);
  return id;
}

bool Engine::cancel(EventId id) { return live_.erase(id) > 0; }

bool Engine::dispatch_next(SimTime limit) {
  while (!queue_.empty()) {
    if (queue_.top().at > limit) return false;
    Event ev = std::move(const_cast<Event&>(queue_.top()));
    queue_.pop();
    if (live_.erase(ev.id) == 0) continue;  // cancelled
    now_ = ev.at;
    if (trace_) trace_(now_, ev.id, ev.label);
    ++dispatched_total_;
    ev.fn();
    return true;
  }
  return false;
}

std::size_t Engine::run_until(SimTime t_end) {
  stopped_ = false;
  std::size_t n = 0;
  while (!stopped_ && dispatch_next(t_end)) ++n;
  if (!stopped_ && !live_.empty() && now_ < t_end) now_ = t_end;
  return n;
}

std::size_t Engine::run() {
  stopped_ = false;
  std::size_t n = 0;
  while (!stopped_ && dispatch_next(INT64_MAX)) ++n;
  return n;
}

LinkModel LinkModel::uniform_pct(SimTime base, double fraction) {
  const auto spread = static_cast<SimTime>(std::llround(base * fraction));
  return LinkModel{base, UniformJitter{-spread, spread}};
}

Link::Link(Engine& engine, LinkModel model, RngStream rng, Sink sink)
    : engine_(&engine), model_(model), rng_(std::move(rng)), sink_(std::move(sink)) {}

SimTime Link::sample_delay() {
  SimTime d = model_.base_delay;
  if (const auto* u = std::get_if<UniformJitter>(&model_.jitter)) {
    d += rng_.uniform_int(u->lo, u->hi);
  } else if (const auto* n = std::get_if<NormalJitter>(&model_.jitter)) {
    d += static_cast<SimTime>(std::llround(rng_.normal(n->mean, n->sd)));
  }
  return d < 0 ? 0 : d;
}

void Link::send(TcpSegment seg) {
  const SimTime sent = engine_->now();
  SimTime at = sent + sample_delay();
  if (at < last_delivery_) at = last_delivery_;
  last_delivery_ = at;
  ++sent_;
  if (record_) transits_.push_back({sent, at});
  engine_->schedule(at, [this, seg = std::move(seg)]() mutable { sink_(std::move(seg)); },
                    "link");
}

HostAddr BackgroundLoad::host_addr(std::uint32_t base_ip, std::uint32_t host) {
  return HostAddr{base_ip + host, 0x020000100000ULL + base_ip + host};
}

BackgroundLoad::BackgroundLoad(Engine& engine, Fabric& fabric,
                               BackgroundLoadSpec spec, std::uint32_t base_ip)
    : engine_(&engine), spec_(spec) {
  if (spec_.procs_per_host == 0) spec_.n_hosts = 0;
  hosts_.reserve(spec_.n_hosts);
  for (std::uint32_t h = 0; h < spec_.n_hosts; ++h) {
    Host host;
    host.addr = host_addr(base_ip, h);
    host.tx = fabric.attach(host.addr,
                            [this, h](TcpSegment seg) { on_receive(h, std::move(seg)); });
    hosts_.push_back(std::move(host));
  }
  const std::uint32_t total = spec_.n_hosts * spec_.procs_per_host;
  flow_ids_.reserve(total);
  next_seq_.assign(total, 0);
  for (FlowId f = 0; f < total; ++f) {
    flow_ids_.push_back(f);
    auto rng = engine.stream("bg.flow." + std::to_string(f));
    const SimTime phase = rng.uniform_int(0, spec_.msg_interval - 1);
    engine.schedule(engine.now() + phase, [this, f] { send_echo(f); }, "bg.echo");
  }
}

// Requests carry the flow's ICMP identifier in sport (dport 0); replies
// swap the two.
void BackgroundLoad::send_echo(FlowId flow) {
  const std::uint32_t src = flow / spec_.procs_per_host;
  const std::uint32_t dst = (src + 1) % spec_.n_hosts;
  TcpSegment seg;
  seg.proto = Proto::icmp;
  seg.src = hosts_[src].addr;
  seg.dst = hosts_[dst].addr;
  seg.sport = static_cast<std::uint16_t>(flow + 1);
  seg.dport = 0;
  seg.seq = SeqNum{next_seq_[flow]++};
  seg.payload.assign(spec_.payload_bytes, 'p');
  seg.ts_sent = engine_->now();
  ++requests_sent_;
  hosts_[src].tx(std::move(seg));
  engine_->schedule_in(spec_.msg_interval, [this, flow] { send_echo(flow); }, "bg.echo");
}

void BackgroundLoad::on_receive(std::uint32_t host, TcpSegment seg) {
  if (seg.proto != Proto::icmp) return;
  if (seg.dport == 0) {
    TcpSegment reply = seg;
    std::swap(reply.src, reply.dst);
    std::swap(reply.sport, reply.dport);
    reply.ts_sent = engine_->now();
    hosts_[host].tx(std::move(reply));
  } else {
    ++replies_received_;
  }
}

std::unique_ptr<BackgroundLoad> spawn_background_load(Engine& engine, Fabric& fabric,
                                                      const BackgroundLoadSpec& spec) {
  return std::make_unique<BackgroundLoad>(engine, fabric, spec);
}

}  // namespace decoy
