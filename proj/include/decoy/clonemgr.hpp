#pragma once

// Honey-server cloning strategies: instantiation latency and resource cost
// models, strategy selection, and the asynchronous clone manager.

#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "decoy/netcore.hpp"
#include "decoy/simnet.hpp"

namespace decoy {

enum class CloneKind { info_config, victim_image, suspended, disk_copy };

const char* to_string(CloneKind k);
/// Accepts the upper-case names, e.g. "VICTIM_IMAGE". Throws
/// std::invalid_argument.
CloneKind parse_clone_kind(std::string_view name);

/// Instantiation latency in microseconds. Samples are clamped at 0.
struct LatencyDist {
  enum class Shape { fixed, uniform, normal };
  Shape shape = Shape::fixed;
  double a = 0;  // fixed value, uniform lo, or normal mean
  double b = 0;  // uniform hi or normal sd

  static LatencyDist fixed(double us) { return {Shape::fixed, us, 0}; }
  static LatencyDist uniform(double lo, double hi) { return {Shape::uniform, lo, hi}; }
  static LatencyDist normal(double mean, double sd) { return {Shape::normal, mean, sd}; }

  double mean() const;
  SimTime sample(RngStream& rng) const;
};

struct CloneStrategy {
  CloneKind kind = CloneKind::victim_image;
  LatencyDist latency;
  double steady_cost = 0;     // units per second while idle
  double per_clone_cost = 0;  // units per instantiation
  double failure_probability = 0;
  std::string staleness_risk;
};

class CostTable {
 public:
  CostTable() = default;
  explicit CostTable(std::vector<CloneStrategy> strategies);

  /// The shipped defaults; config/cost_table.json holds the same values.
  static CostTable defaults();
  /// Throws std::invalid_argument naming the offending field.
  static CostTable from_json_text(std::string_view text);
  static CostTable load(const std::string& path);

  const std::vector<CloneStrategy>& strategies() const { return strategies_; }
  /// Throws std::out_of_range when the kind is not configured.
  const CloneStrategy& at(CloneKind kind) const;
  bool has(CloneKind kind) const;

 private:
  std::vector<CloneStrategy> strategies_;
};

/// steady_cost * horizon + per_clone_cost * clones.
double strategy_cost(const CloneStrategy& s, double horizon_s, std::uint32_t clones = 0);

struct SelectionWeights {
  double w_latency = 1;
  double w_cost = 1;
};

/// w_latency * E[latency us] + w_cost * steady_cost.
double selection_score(const CloneStrategy& s, SelectionWeights w);

/// Argmin of selection_score; ties go to the earlier enum value.
CloneKind select_strategy(const CostTable& table, SelectionWeights w = {});

struct VictimSpec {
  HostAddr addr;
  std::string app_id;
  std::vector<std::uint16_t> ports;
  std::string image_tag = "v1";
};

class CloneFailed : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct CloneHandle {
  std::uint64_t id = 0;
  CloneKind kind = CloneKind::victim_image;
  SimTime requested_at = 0;
  SimTime latency = 0;
  SimTime ready_at = 0;
};

class CloneManager {
 public:
  /// Brings the clone into existence (attaches a honey endpoint).
  using Provisioner = std::function<void(const VictimSpec&, const CloneHandle&)>;
  using ReadyFn = std::function<void(const CloneHandle&)>;

  CloneManager(Engine& engine, CostTable table, RngStream rng, Provisioner provision = {});

  /// Samples the strategy's latency; after it elapses the provisioner runs
  /// and then `on_ready`. Throws CloneFailed on a failure draw.
  CloneHandle request_clone(const VictimSpec& spec, CloneKind kind, ReadyFn on_ready);

  const CostTable& table() const { return table_; }
  const std::vector<CloneHandle>& completed() const { return completed_; }
  std::uint32_t clones_created() const { return static_cast<std::uint32_t>(completed_.size()); }
  std::uint32_t failures() const { return failures_; }

 private:
  Engine* engine_;
  CostTable table_;
  RngStream rng_;
  Provisioner provision_;
  std::uint64_t next_id_ = 1;
  std::vector<CloneHandle> completed_;
  std::uint32_t failures_ = 0;
};

}  // namespace decoy
