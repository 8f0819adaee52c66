#include "h2scope/report/report.hpp"

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>

#include <fmt/format.h>

#include "h2scope/common/error.hpp"
#include "h2scope/net/public_suffix.hpp"

namespace h2scope::report {

namespace fs = std::filesystem;

std::vector<DatedProbes> group_probes_by_date(const std::vector<prober::ProbeRecord>& records) {
  std::map<std::string, DatedProbes> by;
  for (const auto& r : records) {
    auto d = utc_date(r.timestamp);
    by[d].date = d;
    by[d].records.push_back(r);
  }
  std::vector<DatedProbes> out;
  for (auto& [d, g] : by) out.push_back(std::move(g));
  return out;
}

std::vector<DatedVerdicts> group_verdicts_by_date(const std::vector<verifier::VerdictRecord>& records) {
  std::map<std::string, DatedVerdicts> by;
  for (const auto& r : records) {
    auto d = utc_date(r.timestamp);
    by[d].date = d;
    by[d].records.push_back(r);
  }
  std::vector<DatedVerdicts> out;
  for (auto& [d, g] : by) out.push_back(std::move(g));
  return out;
}

std::vector<AdoptionPoint> adoption_series(const std::vector<DatedProbes>& probes,
                                           const std::vector<DatedVerdicts>& verdicts) {
  // date -> token -> hosts
  std::map<std::string, std::map<std::string, std::set<std::string>>> announced;
  std::map<std::string, std::set<std::string>> serving;
  for (const auto& day : probes) {
    auto& tokens = announced[day.date];
    for (const auto& r : day.records) {
      bool h2 = false;
      for (const auto& t : r.announced) {
        tokens[t].insert(r.host);
        h2 = h2 || prober::is_h2_family(t);
      }
      if (h2) tokens[kH2Aggregate].insert(r.host);
    }
  }
  for (const auto& day : verdicts) {
    for (const auto& v : day.records)
      if (v.serves_h2) serving[day.date].insert(v.host);
  }
  std::vector<AdoptionPoint> out;
  for (const auto& [date, tokens] : announced) {
    const auto& served = serving[date];
    for (const auto& [token, hosts] : tokens) {
      AdoptionPoint p{date, token, static_cast<std::int64_t>(hosts.size()), 0};
      if (token == kH2Aggregate || prober::is_h2_family(token)) {
        for (const auto& h : hosts) p.serving_count += served.count(h) ? 1 : 0;
      }
      out.push_back(std::move(p));
    }
  }
  return out;
}

std::string_view to_string(AttributionSource s) noexcept {
  return s == AttributionSource::CERT_SUBJECT ? "CERT_SUBJECT" : "REGISTRABLE_DOMAIN";
}

MergeMap load_merge_map(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::IoError, "cannot read " + path.string());
  json j = json::parse(in, nullptr, false);
  if (j.is_discarded() || !j.is_object()) throw Error(ErrorCode::ParseError, path.string() + " is not a JSON object");
  MergeMap m;
  for (const auto& [k, v] : j.items()) {
    if (!v.is_string()) throw Error(ErrorCode::ParseError, "merge target for " + k + " is not a string");
    m[k] = v.get<std::string>();
  }
  return m;
}

OrgAttribution attribute_org(const std::string& site, const std::optional<std::string>& cert_org,
                             const std::optional<std::string>& registrable_domain, const MergeMap& merge) {
  auto merged = [&](const std::string& name) {
    auto it = merge.find(name);
    return it == merge.end() ? name : it->second;
  };
  if (cert_org && !cert_org->empty()) return {site, merged(*cert_org), AttributionSource::CERT_SUBJECT};
  if (registrable_domain && !registrable_domain->empty())
    return {site, merged(*registrable_domain), AttributionSource::REGISTRABLE_DOMAIN};
  throw Error(ErrorCode::NoAttributionSource, "no certificate organization or registrable domain for " + site);
}

OrgAttribution attribute_org(const std::string& site, const std::optional<std::string>& cert_org,
                             const MergeMap& merge) {
  return attribute_org(site, cert_org, net::registrable_domain(site), merge);
}

std::map<std::string, std::int64_t> org_counts(const std::vector<OrgAttribution>& attributions) {
  std::map<std::string, std::int64_t> out;
  for (const auto& a : attributions) ++out[a.organization];
  return out;
}

// --- loading ----------------------------------------------------------------

namespace {

std::vector<json> load_checked(const std::vector<fs::path>& files) {
  std::vector<json> out;
  for (const auto& f : files) {
    for (auto& j : read_ndjson_file(f)) {
      check_schema(j);
      out.push_back(std::move(j));
    }
  }
  return out;
}

}  // namespace

ExportBundle load_bundle(const std::vector<fs::path>& metric_files, const std::vector<fs::path>& series_files,
                         const std::vector<fs::path>& bench_files) {
  ExportBundle b;
  for (const auto& j : load_checked(metric_files)) b.metrics.push_back(analyzer::metric_vector_from_json(j));
  for (const auto& j : load_checked(series_files)) b.series.push_back(adoption_point_from_json(j));
  for (const auto& j : load_checked(bench_files)) b.bench.push_back(bench::bench_result_from_json(j));
  return b;
}

// --- export -----------------------------------------------------------------

namespace {

struct Table {
  std::string name;
  std::vector<std::string> columns;
  std::vector<std::vector<json>> rows;
};

std::string csv_cell(const json& v) {
  std::string s;
  if (v.is_string()) {
    s = v.get<std::string>();
  } else if (v.is_number_float()) {
    s = fmt::format("{}", v.get<double>());
  } else if (v.is_null()) {
    s = "";
  } else {
    s = v.dump();
  }
  if (s.find_first_of(",\"\n\r") == std::string::npos) return s;
  std::string q = "\"";
  for (char c : s) {
    if (c == '"') q += '"';
    q += c;
  }
  return q + "\"";
}

std::string render(const Table& t, ExportFormat f) {
  if (f == ExportFormat::CSV) {
    std::string out;
    for (std::size_t i = 0; i < t.columns.size(); ++i) out += (i ? "," : "") + csv_cell(t.columns[i]);
    out += '\n';
    for (const auto& row : t.rows) {
      for (std::size_t i = 0; i < row.size(); ++i) out += (i ? "," : "") + csv_cell(row[i]);
      out += '\n';
    }
    return out;
  }
  json rows = json::array();
  for (const auto& row : t.rows) {
    json o = json::object();
    for (std::size_t i = 0; i < row.size(); ++i) o[t.columns[i]] = row[i];
    rows.push_back(std::move(o));
  }
  json doc = {{"schema_version", kSchemaVersion}, {"table", t.name}, {"columns", t.columns}, {"rows", rows}};
  return doc.dump(2) + "\n";
}

double ms(Micros d) { return static_cast<double>(d.count()) / 1000.0; }

Table metrics_table(std::vector<analyzer::MetricVector> metrics) {
  Table t{"metrics", {"site", "protocol"}, {}};
  for (const auto& n : analyzer::metric_names()) t.columns.push_back(n);
  std::sort(metrics.begin(), metrics.end(), [](const auto& a, const auto& b) {
    return std::tie(a.site, a.protocol) < std::tie(b.site, b.protocol);
  });
  for (const auto& m : metrics) {
    std::vector<json> row = {m.site, std::string(http::to_string(m.protocol))};
    for (const auto& n : analyzer::metric_names()) row.emplace_back(analyzer::metric_value(m, n));
    t.rows.push_back(std::move(row));
  }
  return t;
}

std::map<http::Protocol, std::vector<analyzer::MetricVector>> by_protocol(const std::vector<analyzer::MetricVector>& ms) {
  std::map<http::Protocol, std::vector<analyzer::MetricVector>> out;
  for (const auto& m : ms) out[m.protocol].push_back(m);
  return out;
}

Table summary_table(const std::vector<analyzer::MetricVector>& metrics) {
  Table t{"summary", {"protocol", "metric", "count", "min", "median", "mean", "p90", "max"}, {}};
  for (const auto& [p, group] : by_protocol(metrics)) {
    for (const auto& n : analyzer::metric_names()) {
      auto s = analyzer::summarize(group, n);
      t.rows.push_back({std::string(http::to_string(p)), n, s.count, s.min, s.median, s.mean, s.p90, s.max});
    }
  }
  return t;
}

Table cdf_table(const std::vector<analyzer::MetricVector>& metrics) {
  Table t{"cdf", {"protocol", "metric", "value", "fraction"}, {}};
  for (const auto& [p, group] : by_protocol(metrics)) {
    for (const auto& n : analyzer::metric_names()) {
      for (const auto& [v, f] : analyzer::summarize(group, n).cdf_points)
        t.rows.push_back({std::string(http::to_string(p)), n, v, f});
    }
  }
  return t;
}

Table adoption_table(std::vector<AdoptionPoint> series) {
  Table t{"adoption", {"date", "token", "announced_count", "serving_count"}, {}};
  std::sort(series.begin(), series.end(),
            [](const auto& a, const auto& b) { return std::tie(a.date, a.token) < std::tie(b.date, b.token); });
  for (const auto& p : series) t.rows.push_back({p.date, p.token, p.announced_count, p.serving_count});
  return t;
}

Table orgs_table(std::vector<OrgAttribution> orgs) {
  Table t{"orgs", {"site", "organization", "source"}, {}};
  std::sort(orgs.begin(), orgs.end(), [](const auto& a, const auto& b) {
    return std::tie(a.site, a.organization) < std::tie(b.site, b.organization);
  });
  for (const auto& o : orgs) t.rows.push_back({o.site, o.organization, std::string(to_string(o.source))});
  return t;
}

Table bench_table(std::vector<bench::BenchResult> results) {
  Table t{"bench", {"scenario", "site", "protocol", "samples_ms", "mean_plt_ms", "failures"}, {}};
  std::sort(results.begin(), results.end(), [](const auto& a, const auto& b) {
    return std::tie(a.scenario, a.site, a.protocol) < std::tie(b.scenario, b.site, b.protocol);
  });
  for (const auto& r : results) {
    std::string samples;
    for (std::size_t i = 0; i < r.plt_samples.size(); ++i)
      samples += (i ? ";" : "") + fmt::format("{}", ms(r.plt_samples[i]));
    t.rows.push_back({r.scenario, r.site, std::string(http::to_string(r.protocol)), samples, ms(r.mean_plt),
                      r.failures});
  }
  return t;
}

Table delta_table(const std::vector<bench::BenchResult>& results) {
  Table t{"delta_plt", {"scenario", "site", "mean_h1_ms", "mean_h2_ms", "delta_ms"}, {}};
  try {
    auto c = bench::compare(results);
    for (const auto& r : c.rows) t.rows.push_back({r.scenario, r.site, ms(r.mean_h1), ms(r.mean_h2), ms(r.delta)});
  } catch (const Error& e) {
    if (e.code() != ErrorCode::NoPairedResults) throw;
  }
  return t;
}

}  // namespace

std::vector<fs::path> export_reports(const ExportBundle& bundle, ExportFormat format, const fs::path& out_dir) {
  fs::create_directories(out_dir);
  std::vector<Table> tables;
  tables.push_back(metrics_table(bundle.metrics));
  tables.push_back(summary_table(bundle.metrics));
  tables.push_back(cdf_table(bundle.metrics));
  tables.push_back(adoption_table(bundle.series));
  tables.push_back(orgs_table(bundle.orgs));
  tables.push_back(bench_table(bundle.bench));
  tables.push_back(delta_table(bundle.bench));
  std::vector<fs::path> out;
  for (const auto& t : tables) {
    fs::path path = out_dir / (t.name + (format == ExportFormat::CSV ? ".csv" : ".json"));
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw Error(ErrorCode::IoError, "cannot write " + path.string());
    f << render(t, format);
    out.push_back(path);
  }
  return out;
}

json to_json(const AdoptionPoint& p) {
  return {{"schema_version", kSchemaVersion},
          {"date", p.date},
          {"token", p.token},
          {"announced_count", p.announced_count},
          {"serving_count", p.serving_count}};
}

AdoptionPoint adoption_point_from_json(const json& j) {
  check_schema(j);
  try {
    return {j.at("date").get<std::string>(), j.at("token").get<std::string>(),
            j.at("announced_count").get<std::int64_t>(), j.at("serving_count").get<std::int64_t>()};
  } catch (const json::exception& e) {
    throw Error(ErrorCode::ParseError, std::string("adoption point: ") + e.what());
  }
}

json to_json(const OrgAttribution& a) {
  return {{"site", a.site}, {"organization", a.organization}, {"source", to_string(a.source)}};
}

}  // namespace h2scope::report
