// decoy: run, summarize and check redirection scenarios.
//
// Exit codes: 0 success, 1 invariant violation, 2 configuration error.

#include <cstdio>
#include <filesystem>
#include <iostream>

#include <CLI11.hpp>

#include "decoy/harness.hpp"

namespace {

constexpr int kOk = 0;
constexpr int kViolation = 1;
constexpr int kConfig = 2;

void print_summary(const decoy::Summary& s) {
  std::printf("trigger index   %u\n", s.trigger_index);
  std::printf("pre mean rtt    %.3f us\n", s.pre_mean);
  std::printf("post mean rtt   %.3f us\n", s.post_mean);
  std::printf("post/pre ratio  %.6f\n", s.ratio);
  if (!s.clone_latencies.empty()) {
    double total = 0;
    for (auto l : s.clone_latencies) total += static_cast<double>(l);
    std::printf("clones          %zu (mean latency %.1f us)\n", s.clone_latencies.size(),
                total / static_cast<double>(s.clone_latencies.size()));
  }
}

int report_violations(const decoy::ExperimentResult& r) {
  std::size_t shown = 0;
  for (const auto& rep : r.reps)
    for (const auto& v : rep.violations)
      if (shown++ < 20)
        std::fprintf(stderr, "rep %u: %s at %lld us: %s\n", rep.trace.rep, v.kind.c_str(),
                     static_cast<long long>(v.at), v.detail.c_str());
  const std::size_t n = r.violation_count();
  std::printf("stealth         %s (%zu violations over %zu repetitions)\n",
              n == 0 ? "PASS" : "FAIL", n, r.reps.size());
  return n == 0 ? kOk : kViolation;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Simulator for IDS-triggered stealthy TCP redirection to honey servers"};
  app.require_subcommand(1);

  std::string scenario_path, out_dir, trace_dir;
  std::optional<std::uint64_t> seed;
  std::optional<std::uint32_t> reps;
  unsigned threads = 0;

  auto* run = app.add_subcommand("run", "Run a scenario and export traces");
  run->add_option("scenario", scenario_path, "Scenario file")->required();
  run->add_option("--seed", seed, "Override the root seed");
  run->add_option("--reps", reps, "Override the repetition count");
  run->add_option("--out", out_dir, "Output directory for CSV traces");
  run->add_option("--threads", threads, "Worker threads (0: all cores)");

  auto* summarize = app.add_subcommand("summarize", "Aggregate an exported trace directory");
  summarize->add_option("trace-dir", trace_dir, "Directory written by run --out")->required();

  auto* check = app.add_subcommand("check", "Run the stealth suite on a scenario");
  check->add_option("scenario", scenario_path, "Scenario file")->required();
  check->add_option("--threads", threads, "Worker threads (0: all cores)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kConfig;
  }

  try {
    if (*summarize) {
      const auto traces = decoy::read_traces(trace_dir);
      if (traces.empty()) {
        std::fprintf(stderr, "no traces in %s\n", trace_dir.c_str());
        return kConfig;
      }
      const auto s = decoy::summarize(traces);
      print_summary(s);
      decoy::write_file((std::filesystem::path(trace_dir) / "summary.csv").string(),
                        decoy::summary_csv(s));
      return kOk;
    }

    decoy::Scenario scenario = decoy::load_scenario(scenario_path);
    if (seed) scenario.seed = *seed;
    if (reps) scenario.repetitions = *reps;
    decoy::validate(scenario);

    const auto result = decoy::run_experiment(scenario, threads);
    std::printf("scenario        %s\n", scenario.name.c_str());
    if (*run) {
      const auto traces = result.traces();
      const auto s = decoy::summarize(traces);
      print_summary(s);
      if (!out_dir.empty()) {
        decoy::export_csv(traces, out_dir);
        decoy::write_file((std::filesystem::path(out_dir) / "summary.csv").string(),
                          decoy::summary_csv(s));
      }
    }
    return report_violations(result);
  } catch (const decoy::ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return kConfig;
  } catch (const decoy::IoError& e) {
    std::fprintf(stderr, "i/o error: %s\n", e.what());
    return kConfig;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kViolation;
  }
}
