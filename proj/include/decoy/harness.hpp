#pragma once

// Scenario files, the per-repetition testbed, latency traces, statistics
// and CSV export.

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "decoy/clonemgr.hpp"
#include "decoy/controller.hpp"
#include "decoy/endpoint.hpp"
#include "decoy/ids.hpp"
#include "decoy/simnet.hpp"
#include "decoy/stealth.hpp"

namespace decoy {

class ConfigError : public std::runtime_error {
 public:
  ConfigError(std::string field, std::string reason);
  const std::string& field() const { return field_; }

 private:
  std::string field_;
};

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class TriggerKind { nth_packet, threshold };
enum class CloneMode { static_honey, on_demand };
enum class HoneyAddressing { same, distinct };

struct Scenario {
  std::string name = "scenario";
  std::uint64_t seed = 1;
  std::uint32_t repetitions = 1;

  LinkModel link;
  SimTime control_delay = 50;
  SimTime controller_service = 5;
  SimTime server_processing = 200;
  HoneyAddressing honey_addressing = HoneyAddressing::same;

  TriggerKind trigger = TriggerKind::nth_packet;
  std::uint32_t trigger_n = 100;
  std::string ruleset;  // path; required for threshold triggers
  std::vector<IdsRule> rules;

  std::uint32_t total_packets = 120;
  std::uint32_t min_request_bytes = 32;
  std::uint32_t max_request_bytes = 32;
  SimTime request_interval = 10 * kMillisecond;
  bool random_iss = true;

  std::optional<BackgroundLoadSpec> background;

  CloneMode clone_mode = CloneMode::static_honey;
  CloneKind strategy = CloneKind::victim_image;
  std::string cost_table;  // empty: built-in defaults
  CostTable costs = CostTable::defaults();
  CutoverPolicy cutover = CutoverPolicy::immediate;
  FailPolicy fail_policy = FailPolicy::fail_open;

  bool replay = true;
  bool migrate = true;
  std::optional<std::uint32_t> restore_at;
};

/// Relative paths inside the document resolve against `base_dir`.
Scenario parse_scenario(std::string_view json_text, const std::string& base_dir = ".");
Scenario load_scenario(const std::string& path);
/// Throws ConfigError on the first broken invariant.
void validate(const Scenario& s);

std::uint64_t repetition_seed(std::uint64_t seed, std::uint32_t rep);

struct PacketRecord {
  std::uint32_t index = 0;
  SimTime send_us = 0;
  SimTime recv_us = 0;  // -1 when never answered
  SimTime rtt_us = 0;
};

struct LatencyTrace {
  std::uint32_t rep = 0;
  std::vector<PacketRecord> packets;
  std::vector<ControllerEvent> events;
  std::uint32_t trigger_index = 0;  // 0: no migration alert
};

struct RepetitionResult {
  LatencyTrace trace;
  std::vector<StealthViolation> violations;
  std::string attacker_stream;  // every byte the attacker received
  std::vector<std::string> victim_requests;
  std::vector<std::string> honey_requests;
  std::vector<std::string> attacker_requests;
  std::optional<MigrationRecord> migration;
  std::uint64_t packet_ins = 0;
  std::size_t background_flows = 0;
  std::uint32_t clones_created = 0;
  bool completed = false;
};

RepetitionResult run_repetition(const Scenario& s, std::uint32_t rep);

struct ExperimentResult {
  std::vector<RepetitionResult> reps;

  std::vector<LatencyTrace> traces() const;
  std::size_t violation_count() const;
};

/// Repetitions run on up to `threads` workers; results are in rep order.
ExperimentResult run_experiment(const Scenario& s, unsigned threads = 0);

struct IndexStats {
  std::uint32_t index = 0;
  std::size_t n = 0;
  double mean = 0;
  double min = 0;
  double max = 0;
  double sd = 0;  // population
};

struct Summary {
  std::vector<IndexStats> per_index;
  std::uint32_t trigger_index = 0;
  double pre_mean = 0;   // indices below the trigger
  double post_mean = 0;  // indices above the trigger
  double ratio = 0;      // post / pre
  std::vector<SimTime> clone_latencies;
};

/// Throws std::invalid_argument on an empty trace list.
Summary summarize(const std::vector<LatencyTrace>& traces);

std::string attacker_csv(const std::vector<LatencyTrace>& traces);
std::string controller_csv(const std::vector<LatencyTrace>& traces);
std::string summary_csv(const Summary& s);
/// Throws IoError.
void write_file(const std::string& path, const std::string& content);
void export_csv(const std::vector<LatencyTrace>& traces, const std::string& dir);
/// Reads attacker.csv and controller.csv written by export_csv.
std::vector<LatencyTrace> read_traces(const std::string& dir);

}  // namespace decoy
