#include <cmath>
#include <random>

#include "doctest.h"
#include "h2scope/analyzer/analyzer.hpp"
#include "h2scope/analyzer/kernels.hpp"
#include "h2scope/analyzer/synthetic.hpp"
#include "h2scope/common/error.hpp"

using namespace h2scope;
using namespace h2scope::analyzer;

namespace {

// Independent oracle: naive long-double accumulation.
double brute_cosine(const std::vector<double>& u, const std::vector<double>& v) {
  long double d = 0, a = 0, b = 0;
  for (std::size_t i = 0; i < u.size(); ++i) {
    d += static_cast<long double>(u[i]) * v[i];
    a += static_cast<long double>(u[i]) * u[i];
    b += static_cast<long double>(v[i]) * v[i];
  }
  return static_cast<double>(d / (std::sqrt(a) * std::sqrt(b)));
}

fetcher::ObjectRecord obj(const std::string& host, int i) {
  fetcher::ObjectRecord o;
  o.url = "https://" + host + "/" + std::to_string(i);
  o.host = host;
  o.domain = host;
  o.status = 200;
  o.size = 100;
  o.protocol = http::Protocol::H2;
  o.connection_id = host;
  o.t_start = Micros(i * 10);
  o.t_end = Micros(i * 10 + 5);
  return o;
}

fetcher::PageSnapshot snapshot(const std::vector<std::pair<std::string, int>>& per_domain) {
  fetcher::PageSnapshot s;
  const std::string root = per_domain.front().first;
  s.root_url = "https://" + root + "/";
  s.protocol = http::Protocol::H2;
  s.root = obj(root, 0);
  s.html_bytes = 1000;
  int i = 1;
  for (const auto& [host, count] : per_domain) {
    s.connections.push_back({host, host, http::Protocol::H2, 0});
    for (int k = 0; k < count - (host == root ? 1 : 0); ++k) s.objects.push_back(obj(host, i++));
  }
  return s;
}

MetricVector vec(const std::string& site, std::int64_t objects, double ratio) {
  MetricVector v;
  v.site = site;
  v.object_count = objects;
  v.distinct_domains = 2;
  v.mean_objects_per_domain = static_cast<double>(objects) / 2;
  v.distinct_hosts = 3;
  v.mean_objects_per_host = static_cast<double>(objects) / 3;
  v.inline_ratio = ratio;
  v.connection_count = 4;
  v.total_bytes = objects * 1000;
  v.protocol_consistency = 1.0;
  v.plt_us = 100000 + objects;
  return v;
}

}  // namespace

TEST_CASE("metrics for six objects over two domains") {
  auto s = snapshot({{"a.test", 4}, {"b.test", 2}});
  auto m = compute_metrics(s);
  CHECK(m.object_count == 6);
  CHECK(m.distinct_domains == 2);
  CHECK(m.mean_objects_per_domain == 3.0);
  CHECK(m.connection_count == 2);
  CHECK(m.protocol_consistency == 1.0);
  CHECK(m.site == "a.test");
}

TEST_CASE("inline ratio and root-only identity") {
  auto s = snapshot({{"solo.test", 1}});
  s.inline_css_js_bytes = 800;
  auto m = compute_metrics(s);
  CHECK(m.inline_ratio == doctest::Approx(0.8).epsilon(1e-12));
  CHECK(m.object_count == 1);
  CHECK(m.distinct_domains == 1);
  CHECK(m.mean_objects_per_domain == 1.0);

  fetcher::PageSnapshot failed;
  failed.root_url = "https://x.test/";
  CHECK_THROWS_AS(compute_metrics(failed), Error);
}

TEST_CASE("registrable and full-host domain counts differ for shards") {
  auto s = snapshot({{"www.shop.test", 1}});
  s.objects.push_back(obj("a.cdn.shop.test", 1));
  s.objects.push_back(obj("b.cdn.shop.test", 2));
  for (auto& o : s.objects) o.domain = "shop.test";
  s.root->domain = "shop.test";
  auto m = compute_metrics(s);
  CHECK(m.distinct_domains == 1);
  CHECK(m.distinct_hosts == 3);
}

TEST_CASE("protocol consistency counts failed deliveries") {
  auto s = snapshot({{"a.test", 4}});
  s.fetch_errors.push_back({"https://old.test/x", "ProtocolUnavailable", "", Micros(5)});
  s.fetch_errors.push_back({"", "ObjectCap", "", Micros(5)});
  auto m = compute_metrics(s);
  CHECK(m.protocol_consistency == doctest::Approx(4.0 / 5.0));
  CHECK(compute_metrics(s).protocol_consistency == m.protocol_consistency);
}

TEST_CASE("summaries of small inputs") {
  auto s = summarize_values({1, 2, 2, 3});
  CHECK(s.median == 2);
  CHECK(s.mean == 2.0);
  CHECK(s.max == 3);
  CHECK(s.p90 == 3);
  REQUIRE(s.cdf_points.size() == 3);
  CHECK(s.cdf_points[0] == std::pair<double, double>(1, 0.25));
  CHECK(s.cdf_points[1] == std::pair<double, double>(2, 0.75));
  CHECK(s.cdf_points[2] == std::pair<double, double>(3, 1.0));

  auto one = summarize_values({7.5});
  CHECK(one.median == 7.5);
  CHECK(one.mean == 7.5);
  CHECK(one.max == 7.5);
  CHECK(one.p90 == 7.5);

  std::vector<MetricVector> vs = {vec("a", 3, 0), vec("b", 5, 0)};
  CHECK_THROWS_AS(summarize(vs, "no_such_metric"), Error);
  CHECK(summarize(vs, "object_count").mean == 4.0);
}

TEST_CASE("summary properties on random data") {
  std::mt19937_64 rng(11);
  for (int iter = 0; iter < 200; ++iter) {
    std::vector<double> xs(1 + rng() % 50);
    for (auto& x : xs) x = std::uniform_real_distribution<double>(-100, 100)(rng);
    auto s = summarize_values(xs);
    CHECK(s.min <= s.median);
    CHECK(s.median <= s.max);
    CHECK(s.min <= s.p90);
    CHECK(s.p90 <= s.max);
    CHECK(s.min <= s.mean);
    CHECK(s.mean <= s.max);
    CHECK(s.cdf_points.back().second == 1.0);
    for (std::size_t i = 1; i < s.cdf_points.size(); ++i) {
      CHECK(s.cdf_points[i].first > s.cdf_points[i - 1].first);
      CHECK(s.cdf_points[i].second > s.cdf_points[i - 1].second);
    }
  }
}

TEST_CASE("synthetic sharded corpus tracks analytic moments") {
  ShardingParams p;
  auto corpus = sharded_corpus(1000, p);
  std::vector<MetricVector> vs;
  for (const auto& snap : corpus) vs.push_back(compute_metrics(snap));
  auto d = summarize(vs, "distinct_domains");
  auto o = summarize(vs, "mean_objects_per_domain");
  auto dm = geometric_moments(p.p_domains);
  auto om = geometric_moments(p.p_objects);
  CHECK(std::abs(d.mean - dm.mean) / dm.mean < 0.01);
  CHECK(std::abs(o.mean - om.mean) / om.mean < 0.01);
  CHECK(d.median == dm.median);
  CHECK(o.median == om.median);
  CHECK(d.p90 == dm.p90);
  CHECK(o.p90 == om.p90);
}

TEST_CASE("cosine similarity examples") {
  std::vector<double> a = {3, 1, 4};
  CHECK(cosine_similarity(a, a) == 1.0);
  CHECK(cosine_similarity(std::vector<double>{1, 0}, std::vector<double>{0, 1}) == 0.0);
  CHECK(cosine_similarity(std::vector<double>{1, 2}, std::vector<double>{2, 1}) == doctest::Approx(0.8).epsilon(1e-15));
  CHECK_THROWS_AS(cosine_similarity(std::vector<double>{1, 2}, std::vector<double>{1}), Error);
  CHECK_THROWS_AS(cosine_similarity(std::vector<double>{0, 0}, std::vector<double>{0, 0}), Error);
  CHECK_THROWS_AS(cosine_similarity(std::vector<double>{}, std::vector<double>{}), Error);
}

TEST_CASE("cosine similarity properties") {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> val(-50, 50);
  for (int iter = 0; iter < 500; ++iter) {
    std::size_t n = 1 + rng() % 40;
    std::vector<double> u(n), v(n);
    for (auto& x : u) x = val(rng);
    for (auto& x : v) x = val(rng);
    double c = std::uniform_real_distribution<double>(0.01, 100)(rng);
    std::vector<double> cu = u;
    for (auto& x : cu) x *= c;
    CHECK(std::abs(cosine_similarity(u, u) - 1.0) <= 1e-12);
    CHECK(std::abs(cosine_similarity(u, v) - cosine_similarity(v, u)) <= 1e-12);
    CHECK(std::abs(cosine_similarity(cu, v) - cosine_similarity(u, v)) <= 1e-12);
    CHECK(std::abs(cosine_similarity(u, v) - brute_cosine(u, v)) <= 1e-9);
  }
}

TEST_CASE("scalar and avx2 kernels agree") {
  std::mt19937_64 rng(99);
  std::uniform_real_distribution<double> val(-1e3, 1e3);
  for (int iter = 0; iter < 2000; ++iter) {
    std::size_t n = rng() % 67;
    std::vector<double> u(n), v(n);
    for (auto& x : u) x = val(rng);
    for (auto& x : v) x = val(rng);
    auto s = kernels::dot_norms_scalar(u.data(), v.data(), n);
    auto a = kernels::dot_norms_avx2(u.data(), v.data(), n);
    double scale = 1.0;
    for (std::size_t i = 0; i < n; ++i) scale += std::abs(u[i] * v[i]) + u[i] * u[i] + v[i] * v[i];
    CHECK(std::abs(s.dot - a.dot) <= 1e-13 * scale);
    CHECK(std::abs(s.uu - a.uu) <= 1e-13 * scale);
    CHECK(std::abs(s.vv - a.vv) <= 1e-13 * scale);
  }
  if (!kernels::avx2_supported()) MESSAGE("AVX2 not available; the vector kernel ran its scalar fallback");
}

TEST_CASE("forced kernel selection gives the same similarities") {
  std::vector<double> u = {1, 2, 3, 4, 5, 6, 7, 8, 9};
  std::vector<double> v = {9, 8, 7, 6, 5, 4, 3, 2, 1};
  kernels::force_isa(kernels::Isa::Scalar);
  CHECK(kernels::active_isa() == kernels::Isa::Scalar);
  double scalar = cosine_similarity(u, v);
  kernels::force_isa(kernels::Isa::Avx2);
  double wide = cosine_similarity(u, v);
  kernels::force_isa(std::nullopt);
  CHECK(std::abs(scalar - wide) <= 1e-15);
  CHECK(scalar == doctest::Approx(brute_cosine(u, v)).epsilon(1e-12));
}

TEST_CASE("stability report joins on site") {
  std::vector<MetricVector> week = {vec("a", 10, 0.5), vec("b", 20, 0.2), vec("c", 30, 0.9)};
  auto same = stability_report(week, week);
  CHECK(same.joined == 3);
  for (const auto& [metric, sim] : same.similarity) {
    REQUIRE(sim);
    CHECK(*sim == 1.0);
  }

  auto changed = week;
  changed[1].object_count *= 2;
  changed.push_back(vec("only-b", 5, 0.1));
  auto r = stability_report(week, changed);
  CHECK(r.joined == 3);
  CHECK(*r.similarity["object_count"] < 1.0);
  CHECK(*r.similarity["object_count"] > 0.0);
  std::vector<double> u = {10, 20, 30}, v = {10, 40, 30};
  CHECK(*r.similarity["object_count"] == doctest::Approx(brute_cosine(u, v)).epsilon(1e-12));
  CHECK(*r.similarity["inline_ratio"] == 1.0);
  CHECK(*r.similarity["total_bytes"] == 1.0);

  std::vector<MetricVector> other = {vec("x", 1, 0), vec("y", 2, 0)};
  CHECK_THROWS_AS(stability_report(week, other), Error);
}

TEST_CASE("metric vectors round-trip through json") {
  auto v = vec("a.test", 12, 0.25);
  CHECK(to_json(metric_vector_from_json(to_json(v))) == to_json(v));
}
