#include "decoy/clonemgr.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include <json.hpp>

namespace decoy {

namespace {

constexpr std::pair<CloneKind, const char*> kNames[] = {
    {CloneKind::info_config, "INFO_CONFIG"},
    {CloneKind::victim_image, "VICTIM_IMAGE"},
    {CloneKind::suspended, "SUSPENDED"},
    {CloneKind::disk_copy, "DISK_COPY"},
};

}  // namespace

const char* to_string(CloneKind k) {
  for (auto [kind, name] : kNames)
    if (kind == k) return name;
  return "?";
}

CloneKind parse_clone_kind(std::string_view name) {
  for (auto [kind, n] : kNames)
    if (name == n) return kind;
  throw std::invalid_argument("unknown clone strategy '" + std::string(name) + "'");
}

double LatencyDist::mean() const {
  switch (shape) {
    case Shape::fixed: return a;
    case Shape::uniform: return (a + b) / 2;
    case Shape::normal: return a;
  }
  return a;
}

SimTime LatencyDist::sample(RngStream& rng) const {
  double v = a;
  switch (shape) {
    case Shape::fixed: break;
    case Shape::uniform:
      v = static_cast<double>(rng.uniform_int(std::llround(a), std::llround(b)));
      break;
    case Shape::normal: v = rng.normal(a, b); break;
  }
  return std::max<SimTime>(0, std::llround(v));
}

CostTable::CostTable(std::vector<CloneStrategy> strategies) : strategies_(std::move(strategies)) {
  for (std::size_t i = 0; i < strategies_.size(); ++i)
    for (std::size_t j = i + 1; j < strategies_.size(); ++j)
      if (strategies_[i].kind == strategies_[j].kind)
        throw std::invalid_argument(std::string("duplicate strategy ") +
                                    to_string(strategies_[i].kind));
}

CostTable CostTable::defaults() {
  return CostTable({
      {CloneKind::info_config, LatencyDist::fixed(20000), 50, 20, 0,
       "services match, data may be stale between scans"},
      {CloneKind::victim_image, LatencyDist::fixed(2500), 0, 10, 0,
       "as old as the last image"},
      {CloneKind::suspended, LatencyDist::fixed(500), 5000, 1, 0,
       "drifts from the victim while suspended"},
      {CloneKind::disk_copy, LatencyDist::fixed(45000), 0, 40, 0, "current at copy time"},
  });
}

namespace {

LatencyDist latency_from_json(const nlohmann::json& j, const std::string& path) {
  if (j.is_number()) return LatencyDist::fixed(j.get<double>());
  if (!j.is_object()) throw std::invalid_argument(path + ": expected number or object");
  const std::string dist = j.value("dist", "fixed");
  auto num = [&](const char* key) {
    if (!j.contains(key) || !j[key].is_number())
      throw std::invalid_argument(path + "." + key + ": expected number");
    return j[key].get<double>();
  };
  if (dist == "fixed") return LatencyDist::fixed(num("value"));
  if (dist == "uniform") return LatencyDist::uniform(num("lo"), num("hi"));
  if (dist == "normal") return LatencyDist::normal(num("mean"), num("sd"));
  throw std::invalid_argument(path + ".dist: unknown distribution '" + dist + "'");
}

CostTable table_from_json(const nlohmann::json& doc) {
  if (!doc.contains("strategies") || !doc["strategies"].is_array())
    throw std::invalid_argument("strategies: expected array");
  std::vector<CloneStrategy> out;
  std::size_t i = 0;
  for (const auto& j : doc["strategies"]) {
    const std::string path = "strategies[" + std::to_string(i++) + "]";
    CloneStrategy s;
    try {
      s.kind = parse_clone_kind(j.at("kind").get<std::string>());
    } catch (const std::exception& e) {
      throw std::invalid_argument(path + ".kind: " + e.what());
    }
    if (!j.contains("latency_us")) throw std::invalid_argument(path + ".latency_us: missing");
    s.latency = latency_from_json(j["latency_us"], path + ".latency_us");
    s.steady_cost = j.value("steady_cost", 0.0);
    s.per_clone_cost = j.value("per_clone_cost", 0.0);
    s.failure_probability = j.value("failure_probability", 0.0);
    s.staleness_risk = j.value("staleness_risk", "");
    if (s.steady_cost < 0 || s.per_clone_cost < 0)
      throw std::invalid_argument(path + ": costs must be >= 0");
    if (s.failure_probability < 0 || s.failure_probability > 1)
      throw std::invalid_argument(path + ".failure_probability: must be in [0, 1]");
    if (s.latency.mean() < 0) throw std::invalid_argument(path + ".latency_us: must be >= 0");
    out.push_back(std::move(s));
  }
  return CostTable(std::move(out));
}

}  // namespace

CostTable CostTable::from_json_text(std::string_view text) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw std::invalid_argument(std::string("cost table: ") + e.what());
  }
  return table_from_json(doc);
}

CostTable CostTable::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::invalid_argument("cannot open cost table " + path);
  nlohmann::json doc;
  try {
    in >> doc;
  } catch (const nlohmann::json::exception& e) {
    throw std::invalid_argument(path + ": " + e.what());
  }
  return table_from_json(doc);
}

const CloneStrategy& CostTable::at(CloneKind kind) const {
  for (const auto& s : strategies_)
    if (s.kind == kind) return s;
  throw std::out_of_range(std::string("strategy not configured: ") + to_string(kind));
}

bool CostTable::has(CloneKind kind) const {
  return std::any_of(strategies_.begin(), strategies_.end(),
                     [kind](const CloneStrategy& s) { return s.kind == kind; });
}

double strategy_cost(const CloneStrategy& s, double horizon_s, std::uint32_t clones) {
  if (horizon_s < 0) throw std::invalid_argument("horizon must be >= 0");
  return s.steady_cost * horizon_s + s.per_clone_cost * clones;
}

double selection_score(const CloneStrategy& s, SelectionWeights w) {
  return w.w_latency * s.latency.mean() + w.w_cost * s.steady_cost;
}

CloneKind select_strategy(const CostTable& table, SelectionWeights w) {
  if (w.w_latency < 0 || w.w_cost < 0 || (w.w_latency == 0 && w.w_cost == 0))
    throw std::invalid_argument("weights must be >= 0 and not both zero");
  if (table.strategies().empty()) throw std::invalid_argument("empty cost table");
  const CloneStrategy* best = nullptr;
  double best_score = 0;
  for (const auto& s : table.strategies()) {
    const double score = selection_score(s, w);
    if (!best || score < best_score || (score == best_score && s.kind < best->kind)) {
      best = &s;
      best_score = score;
    }
  }
  return best->kind;
}

CloneManager::CloneManager(Engine& engine, CostTable table, RngStream rng, Provisioner provision)
    : engine_(&engine), table_(std::move(table)), rng_(std::move(rng)), provision_(std::move(provision)) {}

CloneHandle CloneManager::request_clone(const VictimSpec& spec, CloneKind kind, ReadyFn on_ready) {
  const CloneStrategy& s = table_.at(kind);
  CloneHandle h;
  h.id = next_id_++;
  h.kind = kind;
  h.requested_at = engine_->now();
  // Both draws happen on every request so outcomes do not shift later ones.
  const double fail_draw = rng_.uniform01();
  h.latency = s.latency.sample(rng_);
  if (fail_draw < s.failure_probability) {
    ++failures_;
    throw CloneFailed(std::string("clone of ") + spec.app_id + " via " + to_string(kind) +
                      " failed");
  }
  h.ready_at = h.requested_at + h.latency;
  engine_->schedule(
      h.ready_at,
      [this, spec, h, on_ready = std::move(on_ready)] {
        if (provision_) provision_(spec, h);
        completed_.push_back(h);
        if (on_ready) on_ready(h);
      },
      "clone.ready");
  return h;
}

}  // namespace decoy
