#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

#include "doctest.h"
#include "h2scope/common/error.hpp"
#include "h2scope/report/report.hpp"

using namespace h2scope;
using namespace h2scope::report;

namespace {

prober::ProbeRecord probe(const std::string& host, std::vector<std::string> announced, UtcTime at = {}) {
  prober::ProbeRecord r;
  r.host = host;
  r.timestamp = at;
  r.mechanism = announced.empty() ? prober::Mechanism::NONE : prober::Mechanism::ALPN;
  r.announced = std::move(announced);
  return r;
}

verifier::VerdictRecord verdict(const std::string& host, bool serves) {
  verifier::VerdictRecord v;
  v.host = host;
  v.serves_h2 = serves;
  v.classification = serves ? verifier::Classification::SERVES_H2 : verifier::Classification::REDIRECT_TO_H1;
  return v;
}

const AdoptionPoint* find(const std::vector<AdoptionPoint>& s, const std::string& date, const std::string& token) {
  for (const auto& p : s)
    if (p.date == date && p.token == token) return &p;
  return nullptr;
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::filesystem::path scratch(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / ("h2scope-report-" + std::to_string(::getpid()) + "-" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace

TEST_CASE("adoption counts for one day") {
  DatedProbes day{"2015-01-10",
                  {probe("a.test", {"h2", "http/1.1"}), probe("b.test", {"h2", "spdy/3.1", "http/1.1"}),
                   probe("c.test", {"h2-14", "h2"}), probe("d.test", {"http/1.1"}), probe("e.test", {})}};
  DatedVerdicts v{"2015-01-10", {verdict("a.test", true), verdict("b.test", false), verdict("c.test", false)}};
  auto s = adoption_series({day}, {v});
  auto h2 = find(s, "2015-01-10", "h2");
  REQUIRE(h2);
  CHECK(h2->announced_count == 3);
  CHECK(h2->serving_count == 1);
  auto agg = find(s, "2015-01-10", kH2Aggregate);
  REQUIRE(agg);
  CHECK(agg->announced_count == 3);
  CHECK(agg->serving_count == 1);
  CHECK(find(s, "2015-01-10", "h2-14")->announced_count == 1);
  CHECK(find(s, "2015-01-10", "h2-14")->serving_count == 0);
  CHECK(find(s, "2015-01-10", "http/1.1")->announced_count == 3);
  CHECK(find(s, "2015-01-10", "http/1.1")->serving_count == 0);
  CHECK(find(s, "2015-01-10", "h2-17") == nullptr);
  CHECK(adoption_series({}, {}).empty());
}

TEST_CASE("a mid-week withdrawal shows on the right date") {
  std::vector<DatedProbes> days;
  std::vector<DatedVerdicts> verdicts;
  for (int d = 0; d < 7; ++d) {
    std::string date = "2014-12-" + std::to_string(12 + d);
    DatedProbes p{date, {}};
    DatedVerdicts v{date, {}};
    for (int h = 0; h < 50; ++h) {
      std::string host = "org" + std::to_string(h) + ".test";
      bool big = h < 40;
      // The 40 hosts of one operator stop announcing from the 15th on.
      bool announces = !big || d < 3;
      p.records.push_back(probe(host, announces ? std::vector<std::string>{"h2", "http/1.1"}
                                                : std::vector<std::string>{"http/1.1"}));
      if (announces) v.records.push_back(verdict(host, h % 5 == 0));
    }
    days.push_back(p);
    verdicts.push_back(v);
  }
  auto s = adoption_series(days, verdicts);
  CHECK(find(s, "2014-12-14", kH2Aggregate)->announced_count == 50);
  CHECK(find(s, "2014-12-15", kH2Aggregate)->announced_count == 10);
  CHECK(find(s, "2014-12-18", kH2Aggregate)->announced_count == 10);
  for (const auto& p : s) CHECK(p.serving_count <= p.announced_count);
}

TEST_CASE("adoption series is a pure fold over each day") {
  std::mt19937_64 rng(8);
  const std::vector<std::string> tokens = {"h2", "h2-14", "h2-16", "h2-17", "spdy/3.1", "http/1.1"};
  DatedProbes day{"2015-02-01", {}};
  DatedVerdicts v{"2015-02-01", {}};
  for (int h = 0; h < 200; ++h) {
    std::vector<std::string> ann;
    for (const auto& t : tokens)
      if (rng() % 2) ann.push_back(t);
    std::string host = "r" + std::to_string(h) + ".test";
    day.records.push_back(probe(host, ann));
    v.records.push_back(verdict(host, rng() % 3 == 0));
  }
  auto reference = adoption_series({day}, {v});
  for (int i = 0; i < 10; ++i) {
    std::shuffle(day.records.begin(), day.records.end(), rng);
    std::shuffle(v.records.begin(), v.records.end(), rng);
    auto again = adoption_series({day}, {v});
    REQUIRE(again.size() == reference.size());
    for (std::size_t k = 0; k < again.size(); ++k) CHECK(to_json(again[k]) == to_json(reference[k]));
  }
  for (const auto& p : reference) CHECK(p.serving_count <= p.announced_count);
}

TEST_CASE("grouping by run date") {
  auto d1 = utc_from_us(1'420'070'400'000'000);  // 2015-01-01T00:00:00Z
  auto d2 = d1 + std::chrono::hours(24);
  auto g = group_probes_by_date({probe("a", {"h2"}, d1), probe("b", {"h2"}, d2), probe("c", {}, d1)});
  REQUIRE(g.size() == 2);
  CHECK(g[0].date == "2015-01-01");
  CHECK(g[0].records.size() == 2);
  CHECK(g[1].date == "2015-01-02");
}

TEST_CASE("organization attribution") {
  auto a = attribute_org("www.example.com", std::string("ExampleCorp"));
  CHECK(a.organization == "ExampleCorp");
  CHECK(a.source == AttributionSource::CERT_SUBJECT);
  auto b = attribute_org("a.b.example.co.uk", std::nullopt);
  CHECK(b.organization == "example.co.uk");
  CHECK(b.source == AttributionSource::REGISTRABLE_DOMAIN);
  CHECK_THROWS_AS(attribute_org("co.uk", std::nullopt), Error);
  CHECK_THROWS_AS(attribute_org("x", std::string(""), std::nullopt), Error);
  MergeMap merge = {{"Google Inc", "Google"}, {"Google LLC", "Google"}};
  auto g1 = attribute_org("a.test", std::string("Google Inc"), merge);
  auto g2 = attribute_org("b.test", std::string("Google LLC"), merge);
  auto t = attribute_org("c.test", std::string("Twitter, Inc."), merge);
  auto counts = org_counts({g1, g2, t});
  CHECK(counts["Google"] == 2);
  CHECK(counts["Twitter, Inc."] == 1);
}

TEST_CASE("exports are deterministic and header-only when empty") {
  auto dir = scratch("empty");
  auto files = export_reports({}, ExportFormat::CSV, dir);
  REQUIRE(files.size() == 7);
  CHECK(slurp(files[0]).find('\n') == slurp(files[0]).size() - 1);
  CHECK(slurp(files[0]).rfind("site,protocol,object_count,", 0) == 0);
  for (const auto& f : files) {
    auto text = slurp(f);
    CHECK(std::count(text.begin(), text.end(), '\n') == 1);
  }

  ExportBundle b;
  for (int i = 0; i < 5; ++i) {
    analyzer::MetricVector m;
    m.site = "s" + std::to_string(4 - i) + ".test";
    m.protocol = i % 2 ? http::Protocol::H1 : http::Protocol::H2;
    m.object_count = 10 + i;
    m.inline_ratio = 0.1 * i;
    m.plt_us = 1234567 + i;
    b.metrics.push_back(m);
  }
  b.series.push_back({"2015-01-02", "h2", 3, 1});
  b.series.push_back({"2015-01-01", kH2Aggregate, 4, 1});
  b.orgs.push_back(attribute_org("x.test", std::string("Quote \"Co\", Ltd")));
  bench::BenchResult h1{"s.test", "base", http::Protocol::H1, {Micros(300000)}, {}, Micros(300000), 0};
  bench::BenchResult h2{"s.test", "base", http::Protocol::H2, {Micros(100000)}, {}, Micros(100000), 0};
  b.bench = {h2, h1};

  auto d1 = scratch("one");
  auto d2 = scratch("two");
  auto first = export_reports(b, ExportFormat::CSV, d1);
  std::reverse(b.metrics.begin(), b.metrics.end());
  std::reverse(b.series.begin(), b.series.end());
  std::reverse(b.bench.begin(), b.bench.end());
  auto second = export_reports(b, ExportFormat::CSV, d2);
  for (std::size_t i = 0; i < first.size(); ++i) CHECK(slurp(first[i]) == slurp(second[i]));
  auto j1 = export_reports(b, ExportFormat::JSON, d1);
  auto j2 = export_reports(b, ExportFormat::JSON, d2);
  for (std::size_t i = 0; i < j1.size(); ++i) CHECK(slurp(j1[i]) == slurp(j2[i]));

  CHECK(slurp(d1 / "delta_plt.csv") == "scenario,site,mean_h1_ms,mean_h2_ms,delta_ms\nbase,s.test,300,100,200\n");
  CHECK(slurp(d1 / "orgs.csv").find("\"Quote \"\"Co\"\", Ltd\"") != std::string::npos);
  CHECK(slurp(d1 / "adoption.csv") ==
        "date,token,announced_count,serving_count\n2015-01-01,h2*,4,1\n2015-01-02,h2,3,1\n");
  for (auto* d : {&dir, &d1, &d2}) std::filesystem::remove_all(*d);
}

TEST_CASE("mixed schema versions are refused") {
  auto dir = scratch("schema");
  {
    std::ofstream f(dir / "series.ndjson");
    write_ndjson_line(f, to_json(AdoptionPoint{"2015-01-01", "h2", 1, 0}));
    auto old = to_json(AdoptionPoint{"2015-01-02", "h2", 1, 0});
    old["schema_version"] = 0;
    write_ndjson_line(f, old);
  }
  try {
    load_bundle({}, {dir / "series.ndjson"}, {});
    FAIL("accepted mixed versions");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::SchemaMismatch);
  }
  {
    std::ofstream f(dir / "ok.ndjson");
    write_ndjson_line(f, to_json(AdoptionPoint{"2015-01-01", "h2", 1, 0}));
  }
  CHECK(load_bundle({}, {dir / "ok.ndjson"}, {}).series.size() == 1);
  std::filesystem::remove_all(dir);
}
