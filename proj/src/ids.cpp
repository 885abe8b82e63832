#include "decoy/ids.hpp"

#include <cctype>
#include <charconv>
#include <fstream>
#include <set>
#include <sstream>

namespace decoy {

ParseError::ParseError(std::size_t offset, std::string reason)
    : std::runtime_error("rule parse error at byte " + std::to_string(offset) + ": " +
                         reason),
      offset_(offset),
      reason_(std::move(reason)) {}

bool IdsRule::matches(const TcpSegment& seg) const {
  if (seg.proto != Proto::tcp) return false;
  if (src_ip && *src_ip != seg.src.ip) return false;
  if (src_port && *src_port != seg.sport) return false;
  if (dst_ip && *dst_ip != seg.dst.ip) return false;
  if (dst_port && *dst_port != seg.dport) return false;
  return seg.flags.contains(flags);
}

namespace {

class Cursor {
 public:
  explicit Cursor(std::string_view text) : text_(text) {}

  std::size_t pos() const { return pos_; }
  bool done() const { return pos_ >= text_.size(); }
  char peek() const { return done() ? '\0' : text_[pos_]; }
  void skip_ws() {
    while (!done() && std::isspace(static_cast<unsigned char>(text_[pos_]))) ++pos_;
  }
  [[noreturn]] void fail(std::string reason) const { throw ParseError(pos_, std::move(reason)); }
  [[noreturn]] void fail_at(std::size_t at, std::string reason) const {
    throw ParseError(at, std::move(reason));
  }

  bool consume(char c) {
    if (peek() != c) return false;
    ++pos_;
    return true;
  }
  void expect(char c, const char* what) {
    skip_ws();
    if (!consume(c)) fail(std::string("expected ") + what);
  }

  /// Run of non-space characters that are not structural.
  std::string_view token() {
    const std::size_t start = pos_;
    while (!done()) {
      const char c = text_[pos_];
      if (std::isspace(static_cast<unsigned char>(c)) || c == '(' || c == ')') break;
      ++pos_;
    }
    return text_.substr(start, pos_ - start);
  }

  std::string_view word() {
    const std::size_t start = pos_;
    while (!done() && (std::isalpha(static_cast<unsigned char>(text_[pos_])) || text_[pos_] == '_'))
      ++pos_;
    return text_.substr(start, pos_ - start);
  }

  std::uint64_t number(const char* what) {
    const std::size_t start = pos_;
    std::uint64_t v = 0;
    auto [p, ec] = std::from_chars(text_.data() + pos_, text_.data() + text_.size(), v);
    if (ec != std::errc{}) fail_at(start, std::string("expected number for ") + what);
    pos_ = static_cast<std::size_t>(p - text_.data());
    return v;
  }

  std::string quoted() {
    skip_ws();
    if (!consume('"')) fail("expected quoted string");
    std::string out;
    while (!done()) {
      char c = text_[pos_++];
      if (c == '"') return out;
      if (c == '\\') {
        if (done()) break;
        c = text_[pos_++];
        if (c != '"' && c != '\\' && c != ';') fail_at(pos_ - 1, "bad escape in string");
      }
      out += c;
    }
    fail("unterminated string");
  }

 private:
  std::string_view text_;
  std::size_t pos_ = 0;
};

std::optional<std::uint32_t> parse_addr(std::string_view tok, std::size_t at) {
  if (tok == "any") return std::nullopt;
  try {
    return parse_ip(tok);
  } catch (const std::invalid_argument&) {
    throw ParseError(at, "bad address '" + std::string(tok) + "'");
  }
}

std::optional<std::uint16_t> parse_port(std::string_view tok, std::size_t at) {
  if (tok == "any") return std::nullopt;
  unsigned v = 0;
  auto [p, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
  if (ec != std::errc{} || p != tok.data() + tok.size() || v > 65535)
    throw ParseError(at, "bad port '" + std::string(tok) + "'");
  return static_cast<std::uint16_t>(v);
}

TcpFlags parse_flags(Cursor& cur) {
  cur.skip_ws();
  const std::size_t start = cur.pos();
  TcpFlags flags;
  while (true) {
    const char c = cur.peek();
    TcpFlag f;
    switch (c) {
      case 'S': f = TcpFlag::syn; break;
      case 'A': f = TcpFlag::ack; break;
      case 'F': f = TcpFlag::fin; break;
      case 'R': f = TcpFlag::rst; break;
      case 'P': f = TcpFlag::psh; break;
      default: goto done;
    }
    cur.consume(c);
    flags.set(f);
    cur.consume('.');
  }
done:
  if (flags.empty()) cur.fail_at(start, "expected flag letters from SAFRP");
  return flags;
}

Threshold parse_threshold(Cursor& cur) {
  std::optional<std::uint64_t> count, seconds;
  bool type_seen = false, track_seen = false;
  while (true) {
    cur.skip_ws();
    const std::size_t at = cur.pos();
    const std::string_view key = cur.word();
    cur.skip_ws();
    if (key == "type") {
      const std::size_t vat = cur.pos();
      if (cur.word() != "threshold") cur.fail_at(vat, "only 'type threshold' is supported");
      type_seen = true;
    } else if (key == "track") {
      const std::size_t vat = cur.pos();
      if (cur.word() != "by_dst") cur.fail_at(vat, "only 'track by_dst' is supported");
      track_seen = true;
    } else if (key == "count") {
      count = cur.number("count");
      if (*count < 1) cur.fail_at(at, "count must be >= 1");
    } else if (key == "seconds") {
      seconds = cur.number("seconds");
      if (*seconds < 1) cur.fail_at(at, "seconds must be >= 1");
    } else {
      cur.fail_at(at, "unknown threshold field '" + std::string(key) + "'");
    }
    cur.skip_ws();
    if (cur.consume(',')) continue;
    break;
  }
  if (!type_seen || !track_seen || !count || !seconds)
    cur.fail("threshold needs type, track, count and seconds");
  if (*count > UINT32_MAX || *seconds > UINT32_MAX) cur.fail("threshold value out of range");
  return Threshold{static_cast<std::uint32_t>(*count), static_cast<std::uint32_t>(*seconds)};
}

}  // namespace

IdsRule parse_rule(std::string_view text) {
  Cursor cur(text);
  IdsRule rule;

  cur.skip_ws();
  if (cur.word() != "alert") cur.fail_at(0, "expected 'alert'");
  cur.skip_ws();
  {
    const std::size_t at = cur.pos();
    if (cur.token() != "tcp") cur.fail_at(at, "only the 'tcp' protocol is supported");
  }

  // Header: SRC [SPORT] -> DST [DPORT]
  std::vector<std::pair<std::string_view, std::size_t>> left, right;
  bool arrow = false;
  while (true) {
    cur.skip_ws();
    if (cur.done()) cur.fail("expected '(' before end of rule");
    if (cur.peek() == '(') break;
    const std::size_t at = cur.pos();
    const std::string_view tok = cur.token();
    if (tok == "->") {
      if (arrow) cur.fail_at(at, "duplicate '->'");
      arrow = true;
    } else if (tok == "<>" || tok == "<-") {
      cur.fail_at(at, "only '->' direction is supported");
    } else {
      (arrow ? right : left).emplace_back(tok, at);
    }
  }
  if (!arrow) cur.fail("expected '->'");
  if (left.empty() || left.size() > 2) cur.fail("source must be 'addr' or 'addr port'");
  if (right.empty() || right.size() > 2) cur.fail("destination must be 'addr' or 'addr port'");
  rule.src_ip = parse_addr(left[0].first, left[0].second);
  if (left.size() == 2) rule.src_port = parse_port(left[1].first, left[1].second);
  rule.dst_ip = parse_addr(right[0].first, right[0].second);
  if (right.size() == 2) rule.dst_port = parse_port(right[1].first, right[1].second);

  cur.expect('(', "'('");
  std::set<std::string, std::less<>> seen;
  bool have_sid = false, have_msg = false;
  while (true) {
    cur.skip_ws();
    if (cur.consume(')')) break;
    if (cur.done()) cur.fail("expected ')'");
    const std::size_t at = cur.pos();
    const std::string_view name = cur.word();
    if (name.empty()) cur.fail("expected option name");
    if (!seen.insert(std::string(name)).second)
      cur.fail_at(at, "duplicate option '" + std::string(name) + "'");
    cur.skip_ws();
    const bool colon = cur.consume(':');
    if (name == "msg") {
      if (!colon) cur.fail("expected ':' after msg");
      rule.msg = cur.quoted();
      have_msg = true;
    } else if (name == "flags") {
      if (!colon) cur.fail("expected ':' after flags");
      rule.flags = parse_flags(cur);
    } else if (name == "threshold") {
      if (!colon) cur.fail("expected ':' after threshold");
      rule.threshold = parse_threshold(cur);
    } else if (name == "sid") {
      // `sid:N`, and also the colon-less `sidN` / `sid N` spelling.
      cur.skip_ws();
      const std::uint64_t sid = cur.number("sid");
      if (sid == 0 || sid > UINT32_MAX) cur.fail_at(at, "sid out of range");
      rule.sid = static_cast<std::uint32_t>(sid);
      have_sid = true;
    } else {
      cur.fail_at(at, "unsupported option '" + std::string(name) + "'");
    }
    cur.expect(';', "';' after option");
  }
  cur.skip_ws();
  if (!cur.done()) cur.fail("trailing text after ')'");
  if (!have_sid) cur.fail("rule has no sid");
  (void)have_msg;
  return rule;
}

std::string render_rule(const IdsRule& rule) {
  std::ostringstream os;
  os << "alert tcp " << (rule.src_ip ? format_ip(*rule.src_ip) : "any") << ' '
     << (rule.src_port ? std::to_string(*rule.src_port) : "any") << " -> "
     << (rule.dst_ip ? format_ip(*rule.dst_ip) : "any") << ' '
     << (rule.dst_port ? std::to_string(*rule.dst_port) : "any") << " (";
  os << "msg:\"";
  for (char c : rule.msg) {
    if (c == '"' || c == '\\' || c == ';') os << '\\';
    os << c;
  }
  os << "\";";
  if (!rule.flags.empty()) {
    os << " flags:";
    for (char c : format_flags(rule.flags)) os << c << '.';
    os << ';';
  }
  if (rule.threshold)
    os << " threshold: type threshold, track by_dst, count " << rule.threshold->count
       << ", seconds " << rule.threshold->seconds << ';';
  os << " sid:" << rule.sid << ";)";
  return os.str();
}

std::vector<IdsRule> parse_ruleset(std::string_view text) {
  std::vector<IdsRule> rules;
  std::set<std::uint32_t> sids;
  std::size_t line_start = 0;
  while (line_start <= text.size()) {
    std::size_t line_end = text.find('\n', line_start);
    if (line_end == std::string_view::npos) line_end = text.size();
    std::string_view line = text.substr(line_start, line_end - line_start);
    std::size_t first = line.find_first_not_of(" \t\r");
    if (first != std::string_view::npos && line[first] != '#') {
      if (line.back() == '\r') line.remove_suffix(1);
      try {
        IdsRule r = parse_rule(line);
        if (!sids.insert(r.sid).second)
          throw ParseError(0, "duplicate sid " + std::to_string(r.sid));
        rules.push_back(std::move(r));
      } catch (const ParseError& e) {
        throw ParseError(line_start + e.offset(), e.reason());
      }
    }
    if (line_end == text.size()) break;
    line_start = line_end + 1;
  }
  return rules;
}

std::vector<IdsRule> load_ruleset(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open ruleset " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_ruleset(ss.str());
}

RuleEngine::RuleEngine(std::vector<IdsRule> rules)
    : rules_(std::move(rules)), tracks_(rules_.size()) {}

std::vector<Alert> RuleEngine::observe(const TcpSegment& seg, SimTime now) {
  std::vector<Alert> alerts;
  for (std::size_t i = 0; i < rules_.size(); ++i) {
    const IdsRule& rule = rules_[i];
    if (!rule.matches(seg)) continue;
    Track& track = tracks_[i][seg.dst.ip];
    ++track.matches;
    bool fire = true;
    if (rule.threshold) {
      const SimTime horizon = now - SimTime{rule.threshold->seconds} * kSecond;
      while (!track.window.empty() && track.window.front() <= horizon) track.window.pop_front();
      track.window.push_back(now);
      fire = track.window.size() >= rule.threshold->count;
      if (fire) track.window.clear();
    }
    if (fire)
      alerts.push_back(Alert{rule.sid, rule.msg, seg, FiveTuple::of(seg), now, track.matches});
  }
  return alerts;
}

NthPacketTrigger::NthPacketTrigger(std::uint32_t service_ip, std::uint16_t service_port,
                                   std::uint64_t n, std::uint32_t sid, std::string msg)
    : service_ip_(service_ip),
      service_port_(service_port),
      n_(n),
      sid_(sid),
      msg_(std::move(msg)) {
  if (n_ < 1) throw std::invalid_argument("n must be >= 1");
}

std::optional<Alert> NthPacketTrigger::observe(const TcpSegment& seg, SimTime now) {
  if (seg.proto != Proto::tcp || seg.dst.ip != service_ip_ || seg.dport != service_port_)
    return std::nullopt;
  if (seg.payload.empty() || !seg.flags.contains({TcpFlag::psh, TcpFlag::ack}))
    return std::nullopt;
  const FiveTuple conn = FiveTuple::of(seg);
  const std::uint64_t c = ++counts_[conn];
  if (c != n_) return std::nullopt;
  return Alert{sid_, msg_, seg, conn, now, c};
}

std::uint64_t NthPacketTrigger::count(const FiveTuple& conn) const {
  auto it = counts_.find(conn);
  return it == counts_.end() ? 0 : it->second;
}

}  // namespace decoy
