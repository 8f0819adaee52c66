// End-to-end acceptance checks against hermetic fixtures. One PASS/FAIL line
// per criterion; the live smoke check only warns.

#include <unistd.h>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <map>
#include <random>
#include <string>
#include <thread>
#include <vector>

#include <fmt/format.h>
#include <fmt/ranges.h>
#include <spdlog/spdlog.h>

#include "h2scope/analyzer/analyzer.hpp"
#include "h2scope/analyzer/synthetic.hpp"
#include "h2scope/bench/bench.hpp"
#include "h2scope/common/parallel.hpp"
#include "h2scope/coordinator/cluster.hpp"
#include "h2scope/coordinator/scheduler.hpp"
#include "h2scope/fetcher/fetcher.hpp"
#include "h2scope/fixtures/corpus.hpp"
#include "h2scope/fixtures/fixture_server.hpp"
#include "h2scope/prober/prober.hpp"
#include "h2scope/report/report.hpp"
#include "h2scope/verifier/verifier.hpp"

using namespace h2scope;
using namespace std::chrono_literals;
using http::Protocol;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string join(const std::vector<std::string>& v) {
  std::string out = "[";
  for (std::size_t i = 0; i < v.size(); ++i) out += (i ? "," : "") + v[i];
  return out + "]";
}

std::filesystem::path scratch(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() /
             fmt::format("h2scope-accept-{}-{}", ::getpid(), name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

// Independent reference: long double accumulation, no shared kernels.
long double brute_cosine(const std::vector<double>& u, const std::vector<double>& v) {
  long double dot = 0, nu = 0, nv = 0;
  for (std::size_t i = 0; i < u.size(); ++i) {
    dot += static_cast<long double>(u[i]) * v[i];
    nu += static_cast<long double>(u[i]) * u[i];
    nv += static_cast<long double>(v[i]) * v[i];
  }
  return dot / (std::sqrt(nu) * std::sqrt(nv));
}

Outcome discovery() {
  const std::vector<std::vector<std::string>> lists = {{"h2", "http/1.1"}, {"http/1.1"}, {"h2-17"}};
  auto t0 = std::chrono::steady_clock::now();
  Outcome o{true, ""};
  for (std::size_t i = 0; i < lists.size(); ++i) {
    fixtures::FixtureServerOptions opts;
    opts.alpn = lists[i];
    fixtures::FixtureServer srv(opts);
    std::string host = fmt::format("announce{}.accept.test", i);
    prober::ProbeConfig cfg;
    cfg.resolver.add_override(host, 0, {"127.0.0.1", srv.port()});
    cfg.check_cleartext = false;
    cfg.connect_timeout = 2s;
    cfg.handshake_timeout = 2s;
    auto rec = prober::probe_host(host, srv.port(), cfg);
    bool ok = rec.announced == lists[i] && !rec.error;
    o.pass = o.pass && ok;
    o.detail += fmt::format("{}{}->{}", i ? " " : "", join(lists[i]), join(rec.announced));
  }
  double took = seconds_since(t0);
  o.pass = o.pass && took < 5.0;
  o.detail += fmt::format(" in {:.2f}s", took);
  return o;
}

Outcome announce_serve_gap() {
  fixtures::AnnounceServeFleet fleet(20, 1);
  prober::ProbeConfig pc;
  pc.resolver = fleet.resolver();
  pc.check_cleartext = false;
  pc.check_quic = false;
  std::vector<prober::ProbeRecord> probes(fleet.hosts().size());
  bounded_for_each(probes.size(), 10, [&](std::size_t i) { probes[i] = prober::probe_host(fleet.hosts()[i], 443, pc); });
  std::vector<std::string> announced;
  for (const auto& p : probes)
    if (p.announces_h2()) announced.push_back(p.host);
  verifier::VerifyConfig vc;
  vc.resolver = fleet.resolver();
  auto verdicts = verifier::verify_many(announced, vc);
  auto series = report::adoption_series(report::group_probes_by_date(probes), report::group_verdicts_by_date(verdicts));
  for (const auto& p : series) {
    if (p.token != report::kH2Aggregate) continue;
    double ratio = static_cast<double>(p.serving_count) / static_cast<double>(p.announced_count);
    return {p.announced_count == 20 && p.serving_count == 1 && ratio == 0.05,
            fmt::format("announced {} serving {} ratio {}", p.announced_count, p.serving_count, ratio)};
  }
  return {false, "no h2* point in the series"};
}

Outcome connection_accounting() {
  const int domains = 3, objects = 12, reps = 20;
  fixtures::Corpus corpus;
  fixtures::PageLayout layout;
  layout.root_host = "www.conn.test";
  layout.domains = {"www.conn.test", "img.conn.test", "static.conn.test"};
  layout.objects = objects;
  auto page = corpus.add_page(layout);
  fetcher::FetchConfig cfg;
  cfg.resolver = corpus.resolver();
  const std::size_t upper = static_cast<std::size_t>(std::min(objects + 1, 6 * domains));
  std::size_t bad = 0, h1_min = SIZE_MAX, h1_max = 0;
  for (int r = 0; r < reps; ++r) {
    auto h2 = fetcher::fetch_page(page.root_url, Protocol::H2, cfg);
    auto h1 = fetcher::fetch_page(page.root_url, Protocol::H1, cfg);
    std::size_t c2 = h2.connections.size(), c1 = h1.connections.size();
    h1_min = std::min(h1_min, c1);
    h1_max = std::max(h1_max, c1);
    bool ok = !h2.root_failed() && !h1.root_failed() && h2.fetch_errors.empty() && h1.fetch_errors.empty() &&
              c2 == static_cast<std::size_t>(domains) && c1 >= static_cast<std::size_t>(domains) && c1 <= upper &&
              c2 <= c1;
    if (!ok) ++bad;
  }
  return {bad == 0, fmt::format("D={} O={} h2 conns={} h1 conns in [{},{}] (bound [{},{}]), {} bad of {}", domains,
                                objects, domains, h1_min, h1_max, domains, upper, bad, reps)};
}

Outcome inline_metric() {
  const std::size_t total = 20000;
  fixtures::Corpus corpus;
  fetcher::FetchConfig cfg;
  Outcome o{true, ""};
  int i = 0;
  for (double f : {0.0, 0.5, 0.8, 0.95}) {
    std::string host = fmt::format("inline{}.accept.test", i++);
    auto inline_bytes = static_cast<std::size_t>(std::llround(f * static_cast<double>(total)));
    corpus.add_resource(host, "/", {200, "text/html", fixtures::html_with_inline_bytes(total, inline_bytes), {}});
    cfg.resolver = corpus.resolver();
    auto snap = fetcher::fetch_page("https://" + host + "/", Protocol::H2, cfg);
    if (snap.root_failed()) return {false, host + " root failed"};
    double got = analyzer::compute_metrics(snap).inline_ratio;
    o.pass = o.pass && std::fabs(got - f) <= 1e-9;
    o.detail += fmt::format("{}f={} got {}", o.detail.empty() ? "" : " ", f, got);
  }
  return o;
}

Outcome cosine_oracle() {
  std::mt19937_64 rng(20150101);
  std::uniform_int_distribution<int> len(1, 16);
  std::uniform_real_distribution<double> val(-1000.0, 1000.0);
  double worst = 0;
  for (int i = 0; i < 1000; ++i) {
    std::size_t n = static_cast<std::size_t>(len(rng));
    std::vector<double> u(n), v(n);
    for (auto& x : u) x = val(rng);
    for (auto& x : v) x = val(rng);
    double got = analyzer::cosine_similarity(u, v);
    worst = std::max(worst, static_cast<double>(std::fabs(static_cast<long double>(got) - brute_cosine(u, v))));
  }
  std::vector<analyzer::MetricVector> week;
  for (const auto& s : analyzer::sharded_corpus(200, {}))
    week.push_back(analyzer::compute_metrics(s));
  auto rep = analyzer::stability_report(week, week);
  bool all_one = !rep.similarity.empty();
  for (const auto& [m, sim] : rep.similarity) all_one = all_one && sim && *sim == 1.0;
  return {worst <= 1e-9 && all_one,
          fmt::format("max |diff| {:.3g} over 1000 pairs; identical week: {} metrics all exactly 1.0 = {}", worst,
                      rep.similarity.size(), all_one)};
}

Outcome plt_sensitivity() {
  auto t0 = std::chrono::steady_clock::now();
  auto link = std::make_shared<fixtures::LinkEmulator>();
  fixtures::CorpusOptions co;
  co.link = link;
  fixtures::Corpus corpus(co);
  fixtures::PageLayout layout;
  layout.root_host = "www.delay.test";
  layout.domains = {"www.delay.test", "cdn.delay.test"};
  layout.objects = 8;
  auto page = corpus.add_page(layout);
  bench::MatrixOptions opts;
  opts.repetitions = 3;
  opts.link = link;
  opts.fetch.resolver = corpus.resolver();
  opts.lock_path = scratch("delay") / "bench.lock";
  auto sc = bench::default_scenarios();
  auto run = bench::run_matrix({page.root_url}, {sc[0], sc[2]}, {Protocol::H2, Protocol::H1}, opts);
  if (run.results.size() != 4) return {false, "unexpected matrix size"};
  Outcome o{true, ""};
  for (std::size_t i = 0; i < 2; ++i) {
    const auto& base = run.results[i];
    const auto& slow = run.results[i + 2];
    auto delta = std::chrono::duration_cast<std::chrono::milliseconds>(slow.mean_plt - base.mean_plt);
    bool ok = base.protocol == slow.protocol && base.failures == 0 && slow.failures == 0 && delta >= 100ms;
    o.pass = o.pass && ok;
    o.detail += fmt::format("{}: {} -> {} ms (+{} ms); ", http::to_string(base.protocol), base.mean_plt.count() / 1000,
                            slow.mean_plt.count() / 1000, delta.count());
  }
  double took = seconds_since(t0);
  o.pass = o.pass && took < 120.0;
  o.detail += fmt::format("{:.1f}s", took);
  return o;
}

Outcome mobile_sharded() {
  auto t0 = std::chrono::steady_clock::now();
  auto lock = scratch("mobile") / "bench.lock";
  const auto mobile = bench::default_scenarios()[4];
  int wins = 0;
  std::string trials;
  for (int t = 0; t < 10; ++t) {
    auto link = std::make_shared<fixtures::LinkEmulator>();
    fixtures::CorpusOptions co;
    co.link = link;
    co.extra_chain_certs = 2;
    fixtures::Corpus corpus(co);
    fixtures::PageLayout layout;
    layout.root_host = "www.shard.test";
    layout.domains = {"www.shard.test", "img1.shard.test", "img2.shard.test", "static.shard.test"};
    layout.objects = 20;
    auto page = corpus.add_page(layout);
    bench::MatrixOptions opts;
    opts.repetitions = 3;
    opts.link = link;
    opts.seed = 1000 + static_cast<std::uint64_t>(t);
    opts.fetch.resolver = corpus.resolver();
    opts.lock_path = lock;
    auto run = bench::run_matrix({page.root_url}, {mobile}, {Protocol::H2, Protocol::H1}, opts);
    if (run.results.size() != 2 || run.results[0].plt_samples.empty() || run.results[1].plt_samples.empty()) {
      trials += " x";
      continue;
    }
    auto h2 = run.results[0].mean_plt.count() / 1000, h1 = run.results[1].mean_plt.count() / 1000;
    if (run.results[0].mean_plt < run.results[1].mean_plt) ++wins;
    trials += fmt::format(" {}/{}", h2, h1);
  }
  return {wins >= 8, fmt::format("h2 faster in {}/10 trials (h2/h1 ms:{}) {:.0f}s", wins, trials, seconds_since(t0))};
}

coordinator::WorkerHealth healthy(const std::string& id, double cpu = 5) {
  coordinator::WorkerHealth h;
  h.worker_id = id;
  h.free_memory_mb = 4096;
  h.cpu_load_pct = cpu;
  h.reachable = true;
  return h;
}

std::vector<std::string> sim_hosts(std::size_t n) {
  std::vector<std::string> out;
  for (std::size_t i = 0; i < n; ++i) out.push_back(fmt::format("h{}.cluster.test", i));
  return out;
}

Outcome exactly_once() {
  using namespace coordinator;
  auto t0 = std::chrono::steady_clock::now();
  auto dir = scratch("cluster");
  MasterConfig mc;
  mc.port = 0;
  mc.out_dir = dir;
  mc.scheduler.bootstrap_timeout = 2s;
  mc.scheduler.timeout_floor = 300ms;
  mc.reassign_interval = 50ms;
  mc.idle_retry = 20ms;
  auto targets = sim_hosts(1000);
  Master master(targets, mc);
  std::atomic<bool> stop{false};
  std::vector<std::thread> workers;
  for (int i = 0; i < 5; ++i) {
    WorkerConfig wc;
    wc.worker_id = fmt::format("w{}", i);
    wc.master_port = master.port();
    wc.health = [id = wc.worker_id] { return healthy(id); };
    wc.probe_fn = [](const std::string& h) {
      std::this_thread::sleep_for(1ms);
      prober::ProbeRecord r;
      r.host = h;
      r.timestamp = unique_utc_now();
      r.mechanism = prober::Mechanism::ALPN;
      r.announced = {"h2", "http/1.1"};
      r.negotiated = "h2";
      return r;
    };
    wc.parallel = 10;
    if (i == 0) wc.fault = WorkerFault::Silent;
    if (i == 1) wc.fault = WorkerFault::DuplicateReports;
    workers.emplace_back([wc, &stop] { run_worker(wc, stop); });
  }
  bool done = master.wait_finished(50s);
  stop = true;
  for (auto& t : workers) t.join();
  auto path = master.write_results();
  master.stop();

  std::map<std::string, int> seen;
  std::size_t persisted = 0;
  for (const auto& j : read_ndjson_file(path)) {
    ++seen[j.at("host").get<std::string>()];
    ++persisted;
  }
  std::size_t lost = 0, doubled = 0;
  for (const auto& h : targets) {
    int n = seen.count(h) ? seen[h] : 0;
    lost += n == 0;
    doubled += n > 1;
  }
  auto state = master.snapshot();
  auto reissued = master.reissued();
  bool late_enough = !reissued.empty();
  Micros min_wait = Micros::max();
  for (const auto& [t, when] : reissued) {
    auto old = state.attempts().at(make_task_id(t.chunk, t.attempt - 1));
    min_wait = std::min(min_wait, when - old.issued_at);
    late_enough = late_enough && (when - old.issued_at) >= mc.scheduler.timeout_floor;
  }
  double took = seconds_since(t0);
  std::filesystem::remove_all(dir);
  bool ok = done && persisted == targets.size() && lost == 0 && doubled == 0 && state.duplicates() >= 1 &&
            late_enough && took < 60.0;
  return {ok, fmt::format("{} records for {} hosts, lost {}, doubled {}, duplicates refused {}, {} reissues "
                          "(earliest {} ms after issue, T floor {} ms), {:.1f}s",
                          persisted, targets.size(), lost, doubled, state.duplicates(), reissued.size(),
                          reissued.empty() ? 0 : min_wait.count() / 1000,
                          std::chrono::duration_cast<std::chrono::milliseconds>(mc.scheduler.timeout_floor).count(),
                          took)};
}

Outcome scheduling_arithmetic() {
  using namespace coordinator;
  std::vector<std::size_t> sizes;
  for (const auto& c : chunk_targets(sim_hosts(250))) sizes.push_back(c.hosts.size());
  bool sizes_ok = sizes == std::vector<std::size_t>{100, 100, 50};

  SchedulerConfig cfg;  // bootstrap 300 s, floor 30 s
  SchedulerState s(chunk_targets(sim_hosts(1000)), cfg);
  UtcTime now = utc_from_us(1'420'070'400'000'000);
  bool busy_refused = !s.next_task(healthy("busy", 45), now).has_value();

  const Micros d = 45s;
  int converged_at = 0;
  for (int i = 1; i <= 5; ++i) {
    auto t = s.next_task(healthy("w"), now);
    if (!t) return {false, "no task for a healthy worker"};
    now += d;
    WorkerReport r;
    r.task_id = t->task_id;
    r.worker_id = "w";
    r.completed_at = now;
    for (const auto& h : t->hosts) {
      prober::ProbeRecord rec;
      rec.host = h;
      rec.timestamp = unique_utc_now();
      r.records.push_back(rec);
    }
    s.handle_report(r, now);
    if (converged_at == 0 && s.timeout() == d) converged_at = i;
  }
  bool t_ok = converged_at > 0 && s.timeout() == d;
  return {sizes_ok && busy_refused && t_ok,
          fmt::format("chunks [{}], cpu 45% refused={}, T=d={} s after {} completion(s)",
                      fmt::format("{}", fmt::join(sizes, ",")), busy_refused,
                      std::chrono::duration_cast<std::chrono::seconds>(d).count(), converged_at)};
}

Outcome live_smoke(bool& skipped) {
  const char* gate = std::getenv("H2SCOPE_LIVE_TESTS");
  if (gate && std::string(gate) == "0") {
    skipped = true;
    return {false, "disabled by H2SCOPE_LIVE_TESTS=0"};
  }
  const std::vector<std::string> sites = {"www.google.com", "www.facebook.com", "www.wikipedia.org",
                                          "www.cloudflare.com", "www.youtube.com"};
  prober::ProbeConfig cfg;
  cfg.connect_timeout = 4s;
  cfg.handshake_timeout = 4s;
  cfg.check_cleartext = false;
  cfg.check_quic = false;
  cfg.try_npn = false;
  std::vector<prober::ProbeRecord> recs(sites.size());
  bounded_for_each(sites.size(), sites.size(), [&](std::size_t i) { recs[i] = prober::probe_host(sites[i], 443, cfg); });
  int h2 = 0;
  std::string detail;
  for (const auto& r : recs) {
    bool has = std::find(r.announced.begin(), r.announced.end(), "h2") != r.announced.end();
    h2 += has;
    detail += fmt::format(" {}={}", r.host, r.error ? std::string(prober::to_string(*r.error)) : join(r.announced));
  }
  return {h2 >= 4, fmt::format("{}/5 announce h2:{}", h2, detail)};
}

}  // namespace

int main() {
  spdlog::set_level(spdlog::level::warn);
  struct Criterion {
    int id;
    const char* name;
    std::function<Outcome()> run;
  };
  const std::vector<Criterion> criteria = {
      {1, "protocol discovery", discovery},
      {2, "announce vs serve gap", announce_serve_gap},
      {3, "connection accounting", connection_accounting},
      {4, "inline ratio", inline_metric},
      {5, "cosine oracle and identical-week stability", cosine_oracle},
      {6, "plt sensitivity to +100 ms", plt_sensitivity},
      {7, "sharded page under mobile-like loss", mobile_sharded},
      {8, "coordinator exactly-once", exactly_once},
      {9, "chunking and timeout arithmetic", scheduling_arithmetic},
  };
  int failures = 0;
  for (const auto& c : criteria) {
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failures += !o.pass;
    std::printf("%s criterion %d (%s): %s\n", o.pass ? "PASS" : "FAIL", c.id, c.name, o.detail.c_str());
    std::fflush(stdout);
  }
  bool skipped = false;
  Outcome live;
  try {
    live = live_smoke(skipped);
  } catch (const std::exception& e) {
    live = {false, std::string("exception: ") + e.what()};
  }
  // Non-blocking: a failed or skipped live check never changes the exit code.
  std::printf("%s criterion 10 (live smoke, warning only): %s\n", live.pass ? "PASS" : "FAIL", live.detail.c_str());
  if (!live.pass) std::fprintf(stderr, "warning: live smoke check did not pass%s\n", skipped ? " (skipped)" : "");
  return failures == 0 ? 0 : 1;
}
