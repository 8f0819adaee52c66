#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "h2scope/analyzer/analyzer.hpp"
#include "h2scope/common/json_io.hpp"
#include "h2scope/common/time.hpp"
#include "h2scope/fetcher/fetcher.hpp"
#include "h2scope/fixtures/link_emulator.hpp"
#include "h2scope/http/message.hpp"

namespace h2scope::bench {

struct NetworkScenario {
  std::string label;
  std::optional<std::int64_t> bandwidth_kbps;
  std::optional<std::int64_t> extra_delay_ms;
  std::optional<double> loss_pct;
  // Shell command lines; empty means the environment is already shaped.
  std::string setup_hook;
  std::string teardown_hook;

  // Throws Error(InvalidArgument).
  void validate() const;
};

// baseline, 1 Mbps, +100 ms, 0.5% loss, and the combined mobile-like cell.
std::vector<NetworkScenario> default_scenarios();

// Scenario files use a small TOML subset:
//
//   [[scenario]]
//   label = "slow"
//   bandwidth_kbps = 1000
//   setup_hook = "tc qdisc add ..."
//
// Throws Error(ParseError) with the offending line number.
std::vector<NetworkScenario> parse_scenarios(std::string_view text);
std::vector<NetworkScenario> load_scenarios(const std::filesystem::path& path);

struct BenchResult {
  std::string site;
  std::string scenario;
  http::Protocol protocol = http::Protocol::H1;
  std::vector<Micros> plt_samples;
  // Start instant of each successful sample, parallel to plt_samples.
  std::vector<UtcTime> sample_starts;
  Micros mean_plt{0};
  int failures = 0;
};

struct ScenarioAbort {
  std::string scenario;
  std::string detail;
};

struct MatrixRun {
  std::vector<BenchResult> results;
  std::vector<ScenarioAbort> aborted;
};

enum class BenchEventKind { Setup, Teardown, Sample };

struct BenchEvent {
  BenchEventKind kind;
  std::string scenario;
  std::string site;
  http::Protocol protocol = http::Protocol::H1;
  int repetition = 0;
  bool ok = true;
};

struct MatrixOptions {
  int repetitions = 3;
  fetcher::FetchConfig fetch;
  // In-process shaping, configured from the scenario after its setup hook
  // and cleared after teardown.
  std::shared_ptr<fixtures::LinkEmulator> link;
  // Loss draws of scenario i use seed + i.
  std::uint64_t seed = 1;
  // Held with flock() for the whole run. Empty picks a per-user default.
  std::filesystem::path lock_path;
  std::function<void(const BenchEvent&)> observer;
};

std::filesystem::path default_lock_path();

// Scenario-major, site-minor; protocols alternate within each repetition.
// Each scenario's setup hook runs once before its first site and the
// teardown hook once after its last, including when the setup hook fails.
// Throws Error(ConcurrentRun) if another run holds the lock.
MatrixRun run_matrix(const std::vector<std::string>& sites, const std::vector<NetworkScenario>& scenarios,
                     const std::vector<http::Protocol>& protocols, const MatrixOptions& opts);

// Sites given as bare host names become https://host/.
std::string site_url(const std::string& site);

struct ComparisonRow {
  std::string site;
  std::string scenario;
  Micros mean_h1{0};
  Micros mean_h2{0};
  Micros delta{0};  // mean_h1 - mean_h2
};

struct Comparison {
  // Sorted by scenario, then site.
  std::vector<ComparisonRow> rows;
  // Distribution of delta in milliseconds over all rows.
  analyzer::DistributionSummary delta_ms;
};

// Throws Error(NoPairedResults) when no (site, scenario) has successful
// samples for both protocols.
Comparison compare(std::span<const BenchResult> results);

Micros mean_of(std::span<const Micros> samples);

json to_json(const NetworkScenario& s);
json to_json(const BenchResult& r);
BenchResult bench_result_from_json(const json& j);
json to_json(const Comparison& c);

}  // namespace h2scope::bench
