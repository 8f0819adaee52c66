#include <atomic>
#include <filesystem>
#include <fstream>
#include <random>
#include <thread>

#include "doctest.h"
#include "h2scope/bench/bench.hpp"
#include "h2scope/common/error.hpp"
#include "h2scope/fixtures/corpus.hpp"

using namespace h2scope;
using namespace h2scope::bench;
using http::Protocol;
using namespace std::chrono_literals;

namespace {

std::filesystem::path scratch_dir() {
  auto dir = std::filesystem::temp_directory_path() / ("h2scope-bench-test-" + std::to_string(::getpid()));
  std::filesystem::create_directories(dir);
  return dir;
}

BenchResult result(const std::string& site, const std::string& scenario, Protocol p, std::vector<std::int64_t> ms) {
  BenchResult r;
  r.site = site;
  r.scenario = scenario;
  r.protocol = p;
  for (auto v : ms) r.plt_samples.push_back(Micros(v * 1000));
  r.mean_plt = mean_of(r.plt_samples);
  return r;
}

MatrixOptions options_for(const fixtures::Corpus& c, const std::filesystem::path& lock) {
  MatrixOptions o;
  o.fetch.resolver = c.resolver();
  o.fetch.connect_timeout = 5s;
  o.fetch.per_object_timeout = 10s;
  o.lock_path = lock;
  return o;
}

}  // namespace

TEST_CASE("default scenario set") {
  auto s = default_scenarios();
  REQUIRE(s.size() == 5);
  CHECK(s[0].label == "baseline");
  CHECK(s[1].bandwidth_kbps == 1000);
  CHECK(s[2].extra_delay_ms == 100);
  CHECK(s[3].loss_pct == 0.5);
  CHECK(s[4].label == "plausible mobile");
  CHECK(s[4].bandwidth_kbps == 1000);
  CHECK(s[4].loss_pct == 2.0);
  for (const auto& x : s) CHECK_NOTHROW(x.validate());
}

TEST_CASE("scenario file parsing") {
  auto s = parse_scenarios(R"toml(
# two cells
[[scenario]]
label = "slow"          # trailing comment
bandwidth_kbps = 1_000
setup_hook = "tc qdisc add dev eth0 root tbf rate 1mbit"
teardown_hook = 'tc qdisc del dev eth0 root'

[[scenario]]
label = "lossy \"edge\""
loss_pct = 2
extra_delay_ms = 40
)toml");
  REQUIRE(s.size() == 2);
  CHECK(s[0].label == "slow");
  CHECK(s[0].bandwidth_kbps == 1000);
  CHECK_FALSE(s[0].loss_pct.has_value());
  CHECK(s[0].setup_hook == "tc qdisc add dev eth0 root tbf rate 1mbit");
  CHECK(s[0].teardown_hook == "tc qdisc del dev eth0 root");
  CHECK(s[1].label == "lossy \"edge\"");
  CHECK(s[1].loss_pct == 2.0);
  CHECK(s[1].extra_delay_ms == 40);
  CHECK(parse_scenarios("# nothing\n").empty());
}

TEST_CASE("scenario file errors carry line numbers") {
  auto fails_with = [](const std::string& text, const std::string& needle) {
    try {
      parse_scenarios(text);
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::ParseError);
      CHECK(std::string(e.what()).find(needle) != std::string::npos);
      return;
    }
    FAIL("no error for: " << text);
  };
  fails_with("label = \"x\"\n", "line 1");
  fails_with("[[scenario]]\nlabel = \"x\"\nloss_pct = 101\n", "line 1");
  fails_with("[[scenario]]\nlabel = \"x\"\ncolour = 3\n", "line 3");
  fails_with("[[scenario]]\nlabel = \"x\nq", "line 2");
  fails_with("[[scenario]]\nbandwidth_kbps = \"fast\"\n", "line 2");
  fails_with("[[scenario]]\nloss_pct = 1\n", "label");
  fails_with("[network]\n", "line 1");
}

TEST_CASE("compare arithmetic") {
  std::vector<BenchResult> same = {result("a", "base", Protocol::H1, {300, 310, 320}),
                                   result("a", "base", Protocol::H2, {300, 310, 320})};
  auto c = compare(same);
  REQUIRE(c.rows.size() == 1);
  CHECK(c.rows[0].delta == Micros(0));

  std::vector<BenchResult> shifted = {result("a", "base", Protocol::H2, {100, 250, 400}),
                                      result("a", "base", Protocol::H1, {300, 450, 600})};
  c = compare(shifted);
  CHECK(c.rows[0].delta == Micros(200'000));
  CHECK(c.delta_ms.median == 200.0);

  std::vector<BenchResult> one_sided = {result("a", "base", Protocol::H1, {1}), result("b", "base", Protocol::H2, {1})};
  CHECK_THROWS_AS(compare(one_sided), Error);
  std::vector<BenchResult> dup = {result("a", "base", Protocol::H1, {1}), result("a", "base", Protocol::H1, {2})};
  CHECK_THROWS_AS(compare(dup), Error);
}

TEST_CASE("compare ignores result order") {
  std::mt19937_64 rng(3);
  std::vector<BenchResult> rs;
  for (int site = 0; site < 6; ++site) {
    for (const char* sc : {"base", "slow"}) {
      for (auto p : {Protocol::H1, Protocol::H2}) {
        std::vector<std::int64_t> ms;
        for (int i = 0; i < 3; ++i) ms.push_back(100 + static_cast<std::int64_t>(rng() % 900));
        rs.push_back(result("s" + std::to_string(site), sc, p, ms));
      }
    }
  }
  auto reference = to_json(compare(rs));
  CHECK(reference["rows"].size() == 12);
  for (int i = 0; i < 20; ++i) {
    std::shuffle(rs.begin(), rs.end(), rng);
    CHECK(to_json(compare(rs)) == reference);
  }
}

TEST_CASE("bench results round-trip through json") {
  auto r = result("a.test", "slow", Protocol::H2, {10, 20});
  r.sample_starts = {utc_from_us(5), utc_from_us(9)};
  r.failures = 1;
  CHECK(to_json(bench_result_from_json(to_json(r))) == to_json(r));
  auto j = to_json(r);
  j["schema_version"] = 99;
  CHECK_THROWS_AS(bench_result_from_json(j), Error);
}

TEST_CASE("matrix order, alternation, and sequential samples") {
  fixtures::Corpus corpus;
  std::vector<std::string> sites;
  for (const char* host : {"one.bench.test", "two.bench.test"}) {
    fixtures::PageLayout l;
    l.root_host = host;
    l.domains = {host};
    l.objects = 3;
    sites.push_back(corpus.add_page(l).root_url);
  }
  auto dir = scratch_dir();
  auto opts = options_for(corpus, dir / "order.lock");
  opts.repetitions = 3;
  std::vector<BenchEvent> events;
  opts.observer = [&](const BenchEvent& e) { events.push_back(e); };
  std::vector<NetworkScenario> scenarios(2);
  scenarios[0].label = "first";
  scenarios[1].label = "second";
  auto run = run_matrix(sites, scenarios, {Protocol::H2, Protocol::H1}, opts);

  REQUIRE(run.results.size() == 8);
  CHECK(run.aborted.empty());
  for (const auto& r : run.results) {
    CHECK(r.plt_samples.size() == 3);
    CHECK(r.failures == 0);
    CHECK(r.mean_plt == mean_of(r.plt_samples));
    for (std::size_t i = 1; i < r.sample_starts.size(); ++i)
      CHECK(r.sample_starts[i] >= r.sample_starts[i - 1] + r.plt_samples[i - 1]);
  }
  // scenario-major, site-minor
  CHECK(run.results[0].scenario == "first");
  CHECK(run.results[0].site == sites[0]);
  CHECK(run.results[2].site == sites[1]);
  CHECK(run.results[4].scenario == "second");

  std::vector<Protocol> first_site;
  for (const auto& e : events)
    if (e.kind == BenchEventKind::Sample && e.scenario == "first" && e.site == sites[0]) first_site.push_back(e.protocol);
  CHECK(first_site == std::vector<Protocol>{Protocol::H2, Protocol::H1, Protocol::H1, Protocol::H2, Protocol::H2,
                                            Protocol::H1});
  CHECK(events.front().kind == BenchEventKind::Setup);
  CHECK(events.back().kind == BenchEventKind::Teardown);

  auto table = compare(run.results);
  CHECK(table.rows.size() == sites.size() * scenarios.size());
}

TEST_CASE("hooks are balanced and a failing setup aborts only its scenario") {
  fixtures::Corpus corpus;
  fixtures::PageLayout l;
  l.root_host = "hooks.bench.test";
  l.domains = {l.root_host};
  l.objects = 2;
  auto page = corpus.add_page(l);
  auto dir = scratch_dir();
  auto log = dir / "hooks.log";
  std::filesystem::remove(log);
  auto opts = options_for(corpus, dir / "hooks.lock");
  opts.repetitions = 1;

  std::vector<NetworkScenario> s(3);
  s[0].label = "good";
  s[0].setup_hook = "echo setup $H2SCOPE_SCENARIO >> " + log.string();
  s[0].teardown_hook = "echo teardown $H2SCOPE_SCENARIO >> " + log.string();
  s[1].label = "broken";
  s[1].setup_hook = "echo setup broken >> " + log.string() + "; exit 3";
  s[1].teardown_hook = "echo teardown broken >> " + log.string();
  s[2].label = "unreachable";
  s[2].bandwidth_kbps = 5000;
  s[2].setup_hook = "echo setup $H2SCOPE_BANDWIDTH_KBPS >> " + log.string();
  s[2].teardown_hook = "echo teardown $H2SCOPE_SCENARIO >> " + log.string();

  // The third scenario's site does not exist; its failures are recorded, not thrown.
  auto run = run_matrix({page.root_url}, {s[0], s[1]}, {Protocol::H1, Protocol::H2}, opts);
  auto run2 = run_matrix({"https://missing.bench.test/"}, {s[2]}, {Protocol::H2}, opts);

  REQUIRE(run.aborted.size() == 1);
  CHECK(run.aborted[0].scenario == "broken");
  CHECK(run.results.size() == 2);
  REQUIRE(run2.results.size() == 1);
  CHECK(run2.results[0].failures == 1);
  CHECK(run2.results[0].plt_samples.empty());

  std::ifstream in(log);
  std::vector<std::string> lines;
  for (std::string line; std::getline(in, line);) lines.push_back(line);
  CHECK(lines == std::vector<std::string>{"setup good", "teardown good", "setup broken", "teardown broken",
                                          "setup 5000", "teardown unreachable"});
}

TEST_CASE("concurrent runs on one lock are refused") {
  fixtures::Corpus corpus;
  fixtures::PageLayout l;
  l.root_host = "lock.bench.test";
  l.domains = {l.root_host};
  auto page = corpus.add_page(l);
  auto dir = scratch_dir();
  auto opts = options_for(corpus, dir / "shared.lock");
  opts.repetitions = 1;
  std::atomic<bool> inside{false};
  std::atomic<bool> release{false};
  NetworkScenario slow;
  slow.label = "held";
  opts.observer = [&](const BenchEvent& e) {
    if (e.kind != BenchEventKind::Setup) return;
    inside = true;
    while (!release) std::this_thread::sleep_for(1ms);
  };
  std::thread holder([&] { run_matrix({page.root_url}, {slow}, {Protocol::H1}, opts); });
  while (!inside) std::this_thread::sleep_for(1ms);
  auto second = options_for(corpus, dir / "shared.lock");
  try {
    run_matrix({page.root_url}, {slow}, {Protocol::H1}, second);
    FAIL("second run was admitted");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::ConcurrentRun);
  }
  release = true;
  holder.join();
  CHECK_NOTHROW(run_matrix({page.root_url}, {slow}, {Protocol::H1}, second));
}

TEST_CASE("added delay raises page load time") {
  auto link = std::make_shared<fixtures::LinkEmulator>();
  fixtures::CorpusOptions co;
  co.link = link;
  fixtures::Corpus corpus(co);
  fixtures::PageLayout l;
  l.root_host = "delay.bench.test";
  l.domains = {l.root_host, "cdn.delay.bench.test"};
  l.objects = 4;
  auto page = corpus.add_page(l);
  auto opts = options_for(corpus, scratch_dir() / "delay.lock");
  opts.repetitions = 1;
  opts.link = link;
  auto scenarios = default_scenarios();
  auto run = run_matrix({page.root_url}, {scenarios[0], scenarios[2]}, {Protocol::H2, Protocol::H1}, opts);
  REQUIRE(run.results.size() == 4);
  for (int i = 0; i < 2; ++i) {
    const auto& base = run.results[static_cast<std::size_t>(i)];
    const auto& slow = run.results[static_cast<std::size_t>(i + 2)];
    CHECK(base.protocol == slow.protocol);
    CHECK(slow.mean_plt - base.mean_plt >= 100ms);
  }
  CHECK_FALSE(link->shaping());
}
