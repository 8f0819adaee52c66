#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "h2scope/common/json_io.hpp"
#include "h2scope/fetcher/fetcher.hpp"
#include "h2scope/http/message.hpp"

namespace h2scope::analyzer {

struct MetricVector {
  std::string site;
  http::Protocol protocol = http::Protocol::H1;
  std::int64_t object_count = 0;  // root included
  // Registrable-domain granularity.
  std::int64_t distinct_domains = 0;
  double mean_objects_per_domain = 0;
  // Full-hostname granularity.
  std::int64_t distinct_hosts = 0;
  double mean_objects_per_host = 0;
  double inline_ratio = 0;
  std::int64_t connection_count = 0;
  std::int64_t total_bytes = 0;
  double protocol_consistency = 0;
  std::int64_t plt_us = 0;
};

// Metric names accepted by summarize() and reported by stability_report().
const std::vector<std::string>& metric_names();

// Throws Error(UnknownMetric).
double metric_value(const MetricVector& v, const std::string& metric);

struct DistributionSummary {
  std::string metric;
  std::size_t count = 0;
  double min = 0;
  double median = 0;
  double mean = 0;
  double p90 = 0;
  double max = 0;
  // (value, fraction of samples <= value) at every distinct value.
  std::vector<std::pair<double, double>> cdf_points;
};

struct StabilityReport {
  std::size_t joined = 0;
  // nullopt when exactly one side of the aligned column is all zeros.
  std::map<std::string, std::optional<double>> similarity;
};

MetricVector compute_metrics(const fetcher::PageSnapshot& snapshot);

DistributionSummary summarize(std::span<const MetricVector> vectors, const std::string& metric);
DistributionSummary summarize_values(std::vector<double> values, const std::string& metric = "value");

// Nearest-rank percentile of sorted data, p in (0, 100].
double nearest_rank(const std::vector<double>& sorted, double p);

double cosine_similarity(std::span<const double> u, std::span<const double> v);

// Joins on site; only sites present in both lists are compared.
StabilityReport stability_report(std::span<const MetricVector> week_a, std::span<const MetricVector> week_b);

json to_json(const MetricVector& v);
MetricVector metric_vector_from_json(const json& j);
json to_json(const DistributionSummary& s);
json to_json(const StabilityReport& r);

}  // namespace h2scope::analyzer
