#include "h2scope/analyzer/analyzer.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include "h2scope/analyzer/kernels.hpp"
#include "h2scope/common/error.hpp"
#include "h2scope/net/public_suffix.hpp"

namespace h2scope::analyzer {

const std::vector<std::string>& metric_names() {
  static const std::vector<std::string> kNames = {
      "object_count",     "distinct_domains", "mean_objects_per_domain", "distinct_hosts",
      "mean_objects_per_host", "inline_ratio", "connection_count", "total_bytes", "protocol_consistency", "plt_ms"};
  return kNames;
}

double metric_value(const MetricVector& v, const std::string& m) {
  if (m == "object_count") return static_cast<double>(v.object_count);
  if (m == "distinct_domains") return static_cast<double>(v.distinct_domains);
  if (m == "mean_objects_per_domain") return v.mean_objects_per_domain;
  if (m == "distinct_hosts") return static_cast<double>(v.distinct_hosts);
  if (m == "mean_objects_per_host") return v.mean_objects_per_host;
  if (m == "inline_ratio") return v.inline_ratio;
  if (m == "connection_count") return static_cast<double>(v.connection_count);
  if (m == "total_bytes") return static_cast<double>(v.total_bytes);
  if (m == "protocol_consistency") return v.protocol_consistency;
  if (m == "plt_ms") return static_cast<double>(v.plt_us) / 1000.0;
  throw Error(ErrorCode::UnknownMetric, m);
}

namespace {

bool counts_as_failed_delivery(const fetcher::FetchErrorRecord& e) {
  return e.kind != "ObjectCap" && e.kind != "PushRejected";
}

}  // namespace

MetricVector compute_metrics(const fetcher::PageSnapshot& s) {
  if (!s.root) throw Error(ErrorCode::DegenerateSnapshot, "snapshot of " + s.root_url + " has no root object");
  MetricVector v;
  auto root = http::parse_url(s.root_url);
  v.site = root ? root->host : s.root_url;
  v.protocol = s.protocol;
  v.object_count = static_cast<std::int64_t>(s.objects.size()) + 1;

  std::set<std::string> domains{s.root->domain.empty() ? net::registrable_or_host(s.root->host) : s.root->domain};
  std::set<std::string> hosts{s.root->host};
  std::int64_t delivered = s.root->protocol == s.protocol ? 1 : 0;
  for (const auto& o : s.objects) {
    domains.insert(o.domain.empty() ? net::registrable_or_host(o.host) : o.domain);
    hosts.insert(o.host);
    delivered += o.protocol == s.protocol ? 1 : 0;
  }
  v.distinct_domains = static_cast<std::int64_t>(domains.size());
  v.distinct_hosts = static_cast<std::int64_t>(hosts.size());
  v.mean_objects_per_domain = static_cast<double>(v.object_count) / static_cast<double>(v.distinct_domains);
  v.mean_objects_per_host = static_cast<double>(v.object_count) / static_cast<double>(v.distinct_hosts);
  v.inline_ratio =
      s.html_bytes > 0 ? static_cast<double>(s.inline_css_js_bytes) / static_cast<double>(s.html_bytes) : 0.0;
  v.connection_count = static_cast<std::int64_t>(s.connections.size());
  v.total_bytes = s.total_bytes();
  std::int64_t failed = std::count_if(s.fetch_errors.begin(), s.fetch_errors.end(), counts_as_failed_delivery);
  v.protocol_consistency = static_cast<double>(delivered) / static_cast<double>(v.object_count + failed);
  v.plt_us = s.plt.count();
  return v;
}

double nearest_rank(const std::vector<double>& sorted, double p) {
  if (sorted.empty()) throw Error(ErrorCode::EmptyInput, "percentile of nothing");
  if (!(p > 0 && p <= 100)) throw Error(ErrorCode::InvalidArgument, "percentile outside (0, 100]");
  auto rank = static_cast<std::size_t>(std::ceil(p / 100.0 * static_cast<double>(sorted.size())));
  rank = std::clamp<std::size_t>(rank, 1, sorted.size());
  return sorted[rank - 1];
}

DistributionSummary summarize_values(std::vector<double> values, const std::string& metric) {
  if (values.empty()) throw Error(ErrorCode::EmptyInput, "summarize needs at least one value");
  std::sort(values.begin(), values.end());
  const std::size_t n = values.size();
  DistributionSummary s;
  s.metric = metric;
  s.count = n;
  s.min = values.front();
  s.max = values.back();
  s.median = n % 2 == 1 ? values[n / 2] : (values[n / 2 - 1] + values[n / 2]) / 2.0;
  double sum = 0;
  for (double x : values) sum += x;
  s.mean = std::clamp(sum / static_cast<double>(n), s.min, s.max);
  s.p90 = nearest_rank(values, 90);
  for (std::size_t i = 0; i < n; ++i) {
    if (i + 1 < n && values[i + 1] == values[i]) continue;
    s.cdf_points.emplace_back(values[i], i + 1 == n ? 1.0 : static_cast<double>(i + 1) / static_cast<double>(n));
  }
  return s;
}

DistributionSummary summarize(std::span<const MetricVector> vectors, const std::string& metric) {
  if (vectors.empty()) throw Error(ErrorCode::EmptyInput, "summarize needs at least one vector");
  std::vector<double> values;
  values.reserve(vectors.size());
  for (const auto& v : vectors) values.push_back(metric_value(v, metric));
  return summarize_values(std::move(values), metric);
}

double cosine_similarity(std::span<const double> u, std::span<const double> v) {
  if (u.size() != v.size())
    throw Error(ErrorCode::DimensionMismatch, std::to_string(u.size()) + " vs " + std::to_string(v.size()));
  if (u.empty()) throw Error(ErrorCode::DimensionMismatch, "empty vectors");
  auto r = kernels::dot_norms(u.data(), v.data(), u.size());
  if (r.uu == 0 || r.vv == 0) throw Error(ErrorCode::ZeroVector, "cosine similarity of a zero vector");
  // sqrt of the product keeps sim(u, u) exactly 1.
  double sim = r.dot / std::sqrt(r.uu * r.vv);
  if (!std::isfinite(sim)) sim = r.dot / (std::sqrt(r.uu) * std::sqrt(r.vv));
  return std::clamp(sim, -1.0, 1.0);
}

StabilityReport stability_report(std::span<const MetricVector> week_a, std::span<const MetricVector> week_b) {
  auto index = [](std::span<const MetricVector> week) {
    std::map<std::string, const MetricVector*> by_site;
    for (const auto& v : week) {
      if (!by_site.emplace(v.site, &v).second)
        throw Error(ErrorCode::InvalidArgument, "site listed twice in one week: " + v.site);
    }
    return by_site;
  };
  auto a = index(week_a);
  auto b = index(week_b);
  std::vector<std::pair<const MetricVector*, const MetricVector*>> joined;
  for (const auto& [site, va] : a) {
    if (auto it = b.find(site); it != b.end()) joined.emplace_back(va, it->second);
  }
  if (joined.empty()) throw Error(ErrorCode::EmptyIntersection, "no site appears in both weeks");

  StabilityReport r;
  r.joined = joined.size();
  for (const auto& metric : metric_names()) {
    std::vector<double> u;
    std::vector<double> v;
    for (const auto& [x, y] : joined) {
      u.push_back(metric_value(*x, metric));
      v.push_back(metric_value(*y, metric));
    }
    if (u == v) {
      r.similarity[metric] = 1.0;
      continue;
    }
    try {
      r.similarity[metric] = cosine_similarity(u, v);
    } catch (const Error& e) {
      if (e.code() != ErrorCode::ZeroVector) throw;
      r.similarity[metric] = std::nullopt;
    }
  }
  return r;
}

json to_json(const MetricVector& v) {
  return {{"schema_version", kSchemaVersion},
          {"site", v.site},
          {"protocol", http::to_string(v.protocol)},
          {"object_count", v.object_count},
          {"distinct_domains", v.distinct_domains},
          {"mean_objects_per_domain", v.mean_objects_per_domain},
          {"distinct_hosts", v.distinct_hosts},
          {"mean_objects_per_host", v.mean_objects_per_host},
          {"inline_ratio", v.inline_ratio},
          {"connection_count", v.connection_count},
          {"total_bytes", v.total_bytes},
          {"protocol_consistency", v.protocol_consistency},
          {"plt_us", v.plt_us}};
}

MetricVector metric_vector_from_json(const json& j) {
  check_schema(j);
  try {
    MetricVector v;
    v.site = j.at("site").get<std::string>();
    auto p = http::parse_protocol(j.at("protocol").get<std::string>());
    if (!p) throw Error(ErrorCode::ParseError, "bad protocol in metric vector");
    v.protocol = *p;
    v.object_count = j.at("object_count").get<std::int64_t>();
    v.distinct_domains = j.at("distinct_domains").get<std::int64_t>();
    v.mean_objects_per_domain = j.at("mean_objects_per_domain").get<double>();
    v.distinct_hosts = j.at("distinct_hosts").get<std::int64_t>();
    v.mean_objects_per_host = j.at("mean_objects_per_host").get<double>();
    v.inline_ratio = j.at("inline_ratio").get<double>();
    v.connection_count = j.at("connection_count").get<std::int64_t>();
    v.total_bytes = j.at("total_bytes").get<std::int64_t>();
    v.protocol_consistency = j.at("protocol_consistency").get<double>();
    v.plt_us = j.value("plt_us", std::int64_t{0});
    return v;
  } catch (const json::exception& e) {
    throw Error(ErrorCode::ParseError, std::string("metric vector: ") + e.what());
  }
}

json to_json(const DistributionSummary& s) {
  json cdf = json::array();
  for (const auto& [x, f] : s.cdf_points) cdf.push_back({x, f});
  return {{"metric", s.metric}, {"count", s.count}, {"min", s.min},   {"median", s.median},
          {"mean", s.mean},     {"p90", s.p90},     {"max", s.max},   {"cdf", cdf}};
}

json to_json(const StabilityReport& r) {
  json sim = json::object();
  for (const auto& [k, v] : r.similarity) sim[k] = v ? json(*v) : json(nullptr);
  return {{"joined_sites", r.joined}, {"similarity", sim}};
}

}  // namespace h2scope::analyzer
