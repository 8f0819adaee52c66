#include <filesystem>
#include <fstream>
#include <map>
#include <random>
#include <thread>

#include "doctest.h"
#include "h2scope/common/error.hpp"
#include "h2scope/coordinator/cluster.hpp"
#include "h2scope/coordinator/journal.hpp"
#include "h2scope/coordinator/scheduler.hpp"
#include "h2scope/coordinator/wire.hpp"

using namespace h2scope;
using namespace h2scope::coordinator;
using namespace std::chrono_literals;

namespace {

std::vector<std::string> hosts(std::size_t n, const std::string& suffix = "sim.test") {
  std::vector<std::string> out;
  for (std::size_t i = 0; i < n; ++i) out.push_back("h" + std::to_string(i) + "." + suffix);
  return out;
}

WorkerHealth healthy(const std::string& id) {
  WorkerHealth h;
  h.worker_id = id;
  h.free_memory_mb = 4096;
  h.cpu_load_pct = 5;
  h.reachable = true;
  return h;
}

UtcTime t0() { return utc_from_us(1'700'000'000'000'000); }

WorkerReport report_for(const TaskAssignment& t, const std::string& worker, const std::string& tag = "") {
  WorkerReport r;
  r.task_id = t.task_id;
  r.worker_id = worker;
  for (const auto& h : t.hosts) {
    prober::ProbeRecord rec;
    rec.host = h;
    rec.timestamp = unique_utc_now();
    rec.mechanism = prober::Mechanism::ALPN;
    rec.announced = {"h2", tag.empty() ? "http/1.1" : tag};
    rec.negotiated = "h2";
    r.records.push_back(rec);
  }
  return r;
}

std::filesystem::path scratch(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() /
             ("h2scope-coord-" + std::to_string(::getpid()) + "-" + name);
  std::filesystem::remove_all(dir);
  return dir;
}

SchedulerConfig no_floor(Micros bootstrap) {
  SchedulerConfig c;
  c.bootstrap_timeout = bootstrap;
  c.timeout_floor = Micros(0);
  return c;
}

}  // namespace

TEST_CASE("chunking sizes and order") {
  auto c = chunk_targets(hosts(250));
  REQUIRE(c.size() == 3);
  CHECK(c[0].hosts.size() == 100);
  CHECK(c[1].hosts.size() == 100);
  CHECK(c[2].hosts.size() == 50);
  CHECK(c[1].hosts.front() == "h100.sim.test");
  CHECK(chunk_targets(hosts(100)).size() == 1);
  CHECK_THROWS_AS(chunk_targets({}), Error);
  CHECK_THROWS_AS(chunk_targets(hosts(3), 0), Error);

  std::mt19937 rng(4);
  for (int iter = 0; iter < 50; ++iter) {
    std::size_t n = 1 + rng() % 777;
    std::size_t size = 1 + rng() % 100;
    auto in = hosts(n);
    auto chunks = chunk_targets(in, size);
    CHECK(chunks.size() == (n + size - 1) / size);
    std::vector<std::string> flat;
    for (std::size_t i = 0; i < chunks.size(); ++i) {
      if (i + 1 < chunks.size()) CHECK(chunks[i].hosts.size() == size);
      flat.insert(flat.end(), chunks[i].hosts.begin(), chunks[i].hosts.end());
    }
    CHECK(flat == in);
  }
}

TEST_CASE("worker eligibility gates task handout") {
  SchedulerState s(chunk_targets(hosts(250)));
  auto busy = healthy("busy");
  busy.cpu_load_pct = 45;
  CHECK_FALSE(s.next_task(busy, t0()));
  auto low_mem = healthy("mem");
  low_mem.free_memory_mb = 499;
  CHECK_FALSE(s.next_task(low_mem, t0()));
  auto cut_off = healthy("net");
  cut_off.reachable = false;
  CHECK_FALSE(s.next_task(cut_off, t0()));
  auto edge = healthy("edge");
  edge.free_memory_mb = 500;
  edge.cpu_load_pct = 29.9;
  CHECK(edge.eligible());
  edge.cpu_load_pct = 30;
  CHECK_FALSE(edge.eligible());
  CHECK(s.pending_tasks() == 3);
}

TEST_CASE("handout, completion, duplicates, and rejection") {
  SchedulerState s(chunk_targets(hosts(150)));
  auto a = s.next_task(healthy("w1"), t0());
  REQUIRE(a);
  CHECK(a->task_id == "0.1");
  CHECK(a->issued_at == t0());
  CHECK(s.in_flight_tasks() == 1);
  auto b = s.next_task(healthy("w2"), t0());
  REQUIRE(b);
  CHECK_FALSE(s.next_task(healthy("w3"), t0()));

  auto partial = report_for(*a, "w1");
  partial.records.pop_back();
  CHECK(s.handle_report(partial, t0() + 5s) == ReportOutcome::Rejected);
  CHECK(s.in_flight_tasks() == 2);
  auto doubled = report_for(*a, "w1");
  doubled.records.back().host = doubled.records.front().host;
  CHECK(s.handle_report(doubled, t0() + 5s) == ReportOutcome::Rejected);

  CHECK(s.handle_report(report_for(*a, "w1", "first"), t0() + 10s) == ReportOutcome::Accepted);
  CHECK(s.completed_tasks() == 1);
  CHECK(s.handle_report(report_for(*a, "w1", "second"), t0() + 11s) == ReportOutcome::Duplicate);
  CHECK(s.results().at(0).front().announced.back() == "first");
  CHECK(s.completion_durations() == std::vector<Micros>{Micros(10s)});

  WorkerReport bogus;
  bogus.task_id = "9.1";
  CHECK_THROWS_AS(s.handle_report(bogus, t0()), Error);
}

TEST_CASE("stragglers are reissued after the timeout") {
  SchedulerState s(chunk_targets(hosts(100)), no_floor(60s));
  auto a = s.next_task(healthy("slow"), t0());
  REQUIRE(a);
  CHECK(s.reassign_stragglers(t0() + 59s).empty());
  CHECK(s.reassign_stragglers(t0() + 60s).empty());
  auto re = s.reassign_stragglers(t0() + 61s);
  REQUIRE(re.size() == 1);
  CHECK(re[0].task_id == "0.2");
  CHECK(s.pending_tasks() == 1);
  CHECK(s.in_flight_tasks() == 0);

  // The only pending chunk goes to whoever asks; nobody starves.
  auto again = s.next_task(healthy("fast"), t0() + 62s);
  REQUIRE(again);
  CHECK(again->task_id == "0.2");
  CHECK(again->worker_id == "fast");
  CHECK(again->issued_at == t0() + 62s);

  // The superseded attempt reports late and wins; the reissue becomes a duplicate.
  CHECK(s.handle_report(report_for(*a, "slow", "late"), t0() + 70s) == ReportOutcome::Accepted);
  CHECK(s.handle_report(report_for(*again, "fast"), t0() + 71s) == ReportOutcome::Duplicate);
  CHECK(s.results().at(0).front().announced.back() == "late");
  CHECK(s.finished());
}

TEST_CASE("a reissued chunk prefers a different worker") {
  SchedulerState s(chunk_targets(hosts(300)), no_floor(10s));
  auto a = s.next_task(healthy("w1"), t0());
  REQUIRE(a);
  s.reassign_stragglers(t0() + 11s);
  auto next = s.next_task(healthy("w1"), t0() + 12s);
  REQUIRE(next);
  CHECK(next->chunk != a->chunk);
  auto other = s.next_task(healthy("w2"), t0() + 12s);
  REQUIRE(other);
  CHECK(other->chunk == a->chunk);
}

TEST_CASE("timeout follows the running mean") {
  SchedulerConfig cfg;
  cfg.bootstrap_timeout = 300s;
  cfg.timeout_floor = 30s;
  SchedulerState s(chunk_targets(hosts(1000)), cfg);
  CHECK(s.timeout() == Micros(300s));
  UtcTime now = t0();
  for (int i = 0; i < 5; ++i) {
    auto t = s.next_task(healthy("w"), now);
    REQUIRE(t);
    now += 45s;
    CHECK(s.handle_report(report_for(*t, "w"), now) == ReportOutcome::Accepted);
    CHECK(s.timeout() == Micros(45s));
  }

  SchedulerState quick(chunk_targets(hosts(200)), cfg);
  auto t = quick.next_task(healthy("w"), t0());
  quick.handle_report(report_for(*t, "w"), t0() + 2s);
  CHECK(quick.timeout() == Micros(30s));
}

TEST_CASE("task conservation and no starvation under random schedules") {
  std::mt19937_64 rng(21);
  for (int round = 0; round < 20; ++round) {
    std::size_t n = 50 + rng() % 900;
    SchedulerState s(chunk_targets(hosts(n), 1 + rng() % 100), no_floor(Micros(20s)));
    std::vector<TaskAssignment> live;
    UtcTime now = t0();
    for (int step = 0; step < 400 && !s.finished(); ++step) {
      now += Micros(static_cast<std::int64_t>(rng() % 10'000'000));
      switch (rng() % 4) {
        case 0: {
          bool had_pending = s.pending_tasks() > 0;
          auto t = s.next_task(healthy("w" + std::to_string(rng() % 5)), now);
          CHECK(t.has_value() == had_pending);
          if (t) live.push_back(*t);
          break;
        }
        case 1:
        case 2:
          if (!live.empty()) {
            std::size_t k = rng() % live.size();
            s.handle_report(report_for(live[k], live[k].worker_id), now);
            live.erase(live.begin() + static_cast<std::ptrdiff_t>(k));
          }
          break;
        default:
          s.reassign_stragglers(now);
      }
      CHECK(s.pending_hosts() + s.in_flight_hosts() + s.completed_hosts() == n);
    }
  }
}

TEST_CASE("frames round-trip and reject bad input") {
  Message m{MessageKind::Hello, "w7", {{"health", to_json(healthy("w7"))}}};
  std::string frame = encode_frame(m);
  CHECK(static_cast<unsigned char>(frame[0]) == 0);
  FrameDecoder dec;
  for (char c : frame + frame) {
    dec.feed(std::string_view(&c, 1));
  }
  for (int i = 0; i < 2; ++i) {
    auto got = dec.next();
    REQUIRE(got);
    CHECK(got->kind == MessageKind::Hello);
    CHECK(got->worker_id == "w7");
    CHECK(worker_health_from_json(got->body.at("health")).free_memory_mb == 4096);
  }
  CHECK_FALSE(dec.next());

  auto reject = [](const json& j) {
    std::string payload = j.dump();
    std::string f(4, '\0');
    f[3] = static_cast<char>(payload.size());
    f[2] = static_cast<char>(payload.size() >> 8);
    FrameDecoder d;
    d.feed(f + payload);
    CHECK_THROWS_AS(d.next(), Error);
  };
  reject({{"kind", "hello"}, {"protocol_version", 2}, {"worker_id", "x"}});
  reject({{"kind", "hello"}, {"worker_id", "x"}});
  reject({{"kind", "gossip"}, {"protocol_version", 1}, {"worker_id", "x"}});
  reject({{"kind", "bye"}, {"protocol_version", 1}});
  FrameDecoder big;
  big.feed(std::string("\x7f\xff\xff\xff", 4));
  CHECK_THROWS_AS(big.next(), Error);
}

TEST_CASE("journal replay reproduces the scheduler") {
  auto dir = scratch("journal");
  json before;
  {
    auto d = DurableScheduler::create(dir, chunk_targets(hosts(500)), no_floor(30s), 4);
    UtcTime now = t0();
    std::vector<TaskAssignment> live;
    for (int i = 0; i < 4; ++i) live.push_back(*d.next_task(healthy("w" + std::to_string(i)), now));
    now += 10s;
    d.handle_report(report_for(live[0], "w0"), now);
    d.handle_report(report_for(live[0], "w0"), now);
    now += 40s;
    d.reassign_stragglers(now);
    d.next_task(healthy("w9"), now);
    auto partial = report_for(live[1], "w1");
    partial.records.clear();
    d.handle_report(partial, now);
    d.handle_report(report_for(live[2], "w2"), now + 1s);
    before = d.state().to_json();
  }
  auto r = DurableScheduler::recover(dir, 4);
  CHECK(r.replayed() > 0);
  CHECK(r.state().to_json() == before);
  CHECK(r.state().duplicates() == 1);

  // A torn trailing line is ignored.
  {
    std::ofstream log(dir / "ops.ndjson", std::ios::app);
    log << "{\"op\":\"rep";
  }
  auto again = DurableScheduler::recover(dir, 4);
  CHECK(again.state().to_json() == before);
  std::filesystem::remove_all(dir);
}

TEST_CASE("simulated cluster with a silent and a duplicating worker") {
  auto dir = scratch("cluster");
  MasterConfig mc;
  mc.port = 0;
  mc.out_dir = dir;
  mc.scheduler.bootstrap_timeout = 2s;
  mc.scheduler.timeout_floor = 300ms;
  mc.reassign_interval = 50ms;
  mc.idle_retry = 20ms;
  auto targets = hosts(1000);
  Master master(targets, mc);

  std::atomic<bool> stop{false};
  std::vector<std::thread> workers;
  std::vector<WorkerStats> stats(5);
  for (int i = 0; i < 5; ++i) {
    WorkerConfig wc;
    wc.worker_id = "w" + std::to_string(i);
    wc.master_port = master.port();
    wc.health = [id = wc.worker_id] { return healthy(id); };
    wc.probe_fn = [](const std::string& h) {
      std::this_thread::sleep_for(1ms);
      prober::ProbeRecord r;
      r.host = h;
      r.timestamp = unique_utc_now();
      r.mechanism = prober::Mechanism::ALPN;
      r.announced = {"h2"};
      return r;
    };
    wc.parallel = 10;
    if (i == 0) wc.fault = WorkerFault::Silent;
    if (i == 1) wc.fault = WorkerFault::DuplicateReports;
    workers.emplace_back([&, wc, i] { stats[static_cast<std::size_t>(i)] = run_worker(wc, stop); });
  }
  bool done = master.wait_finished(45s);
  stop = true;
  for (auto& t : workers) t.join();
  REQUIRE(done);

  auto results = master.results();
  std::map<std::string, int> seen;
  for (const auto& r : results) ++seen[r.host];
  CHECK(results.size() == targets.size());
  CHECK(seen.size() == targets.size());
  for (const auto& h : targets) CHECK(seen[h] == 1);

  auto state = master.snapshot();
  CHECK(state.duplicates() >= 1);
  CHECK(stats[0].tasks == 1);
  CHECK(stats[0].reports_sent == 0);
  auto reissued = master.reissued();
  REQUIRE_FALSE(reissued.empty());
  for (const auto& [t, when] : reissued) {
    auto old = state.attempts().at(make_task_id(t.chunk, t.attempt - 1));
    CHECK(when - old.issued_at > mc.scheduler.timeout_floor);
  }
  // The silent worker's chunk was completed by someone else.
  const auto& issued = master.issued();
  auto silent = std::find_if(issued.begin(), issued.end(), [](const auto& t) { return t.worker_id == "w0"; });
  REQUIRE(silent != issued.end());
  CHECK(state.results().count(silent->chunk) == 1);

  auto path = master.write_results();
  CHECK(read_ndjson_file(path).size() == targets.size());
  master.stop();
  std::filesystem::remove_all(dir);
}

TEST_CASE("a restarted master resumes from its log") {
  auto dir = scratch("resume");
  MasterConfig mc;
  mc.port = 0;
  mc.out_dir = dir;
  mc.snapshot_every = 3;
  auto targets = hosts(450);
  std::vector<std::string> first_round;
  {
    Master m(targets, mc);
    auto link = net::connect_tcp(net::Resolver{}, "127.0.0.1", m.port(), net::deadline_after(2s));
    FrameDecoder dec;
    for (int i = 0; i < 2; ++i) {
      send_message(link.get(), {MessageKind::Hello, "manual", {{"health", to_json(healthy("manual"))}}},
                   net::deadline_after(2s));
      auto reply = recv_message(link.get(), dec, net::deadline_after(2s));
      REQUIRE(reply);
      REQUIRE(reply->kind == MessageKind::Task);
      auto t = task_from_json(reply->body.at("task"));
      first_round.push_back(t.task_id);
      send_message(link.get(), {MessageKind::Report, "manual", {{"report", to_json(report_for(t, "manual"))}}},
                   net::deadline_after(2s));
      auto ack = recv_message(link.get(), dec, net::deadline_after(2s));
      REQUIRE(ack);
      CHECK(ack->body.value("reason", "") == "accepted");
    }
  }
  Master m(targets, mc);
  auto s = m.snapshot();
  CHECK(s.completed_tasks() == 2);
  CHECK(s.pending_tasks() == 3);
  CHECK(s.pending_hosts() + s.completed_hosts() == 450);
  std::filesystem::remove_all(dir);
}
