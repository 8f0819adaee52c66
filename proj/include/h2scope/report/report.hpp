#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "h2scope/analyzer/analyzer.hpp"
#include "h2scope/bench/bench.hpp"
#include "h2scope/common/json_io.hpp"
#include "h2scope/prober/prober.hpp"
#include "h2scope/verifier/verifier.hpp"

namespace h2scope::report {

// Token under which every h2-family announcement is aggregated.
inline constexpr const char* kH2Aggregate = "h2*";

struct DatedProbes {
  std::string date;  // YYYY-MM-DD, UTC run date
  std::vector<prober::ProbeRecord> records;
};

struct DatedVerdicts {
  std::string date;
  std::vector<verifier::VerdictRecord> records;
};

struct AdoptionPoint {
  std::string date;
  std::string token;
  std::int64_t announced_count = 0;
  // Hosts announcing the token whose root was served over H2 that day.
  // Always 0 for tokens outside the h2 family.
  std::int64_t serving_count = 0;
};

// Groups records by the UTC date of their timestamps.
std::vector<DatedProbes> group_probes_by_date(const std::vector<prober::ProbeRecord>& records);
std::vector<DatedVerdicts> group_verdicts_by_date(const std::vector<verifier::VerdictRecord>& records);

// One point per (date, token) that at least one host announced, plus the
// h2* aggregate on dates where any h2-family token appears. Hosts are counted
// once per date. Sorted by date, then token.
std::vector<AdoptionPoint> adoption_series(const std::vector<DatedProbes>& probes,
                                           const std::vector<DatedVerdicts>& verdicts);

enum class AttributionSource { CERT_SUBJECT, REGISTRABLE_DOMAIN };
std::string_view to_string(AttributionSource s) noexcept;

struct OrgAttribution {
  std::string site;
  std::string organization;
  AttributionSource source = AttributionSource::CERT_SUBJECT;
};

// Maps verbatim organization strings to a chosen name ("Google LLC" -> "Google").
using MergeMap = std::map<std::string, std::string>;

MergeMap load_merge_map(const std::filesystem::path& path);

// Certificate organization wins; the registrable domain is the fallback.
// Throws Error(NoAttributionSource) when neither is usable.
OrgAttribution attribute_org(const std::string& site, const std::optional<std::string>& cert_org,
                             const std::optional<std::string>& registrable_domain, const MergeMap& merge = {});
// Derives the registrable domain of |site| from the public suffix list.
OrgAttribution attribute_org(const std::string& site, const std::optional<std::string>& cert_org,
                             const MergeMap& merge = {});

// Sites per organization, organizations sorted by name.
std::map<std::string, std::int64_t> org_counts(const std::vector<OrgAttribution>& attributions);

enum class ExportFormat { CSV, JSON };

struct ExportBundle {
  std::vector<analyzer::MetricVector> metrics;
  std::vector<AdoptionPoint> series;
  std::vector<bench::BenchResult> bench;
  std::vector<OrgAttribution> orgs;
};

// Reads NDJSON inputs, checking every record's schema_version.
// Throws Error(SchemaMismatch) on the first record from another version.
ExportBundle load_bundle(const std::vector<std::filesystem::path>& metric_files,
                         const std::vector<std::filesystem::path>& series_files,
                         const std::vector<std::filesystem::path>& bench_files);

// Writes the metrics, summary, cdf, adoption, orgs, bench and delta_plt tables into
// |out_dir| and returns the paths in that order. Rows are sorted, so equal
// inputs give byte-identical files. Empty inputs give header-only tables.
std::vector<std::filesystem::path> export_reports(const ExportBundle& bundle, ExportFormat format,
                                                  const std::filesystem::path& out_dir);

json to_json(const AdoptionPoint& p);
AdoptionPoint adoption_point_from_json(const json& j);
json to_json(const OrgAttribution& a);

}  // namespace h2scope::report
