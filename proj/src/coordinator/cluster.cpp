#include "h2scope/coordinator/cluster.hpp"

#include <sys/socket.h>
#include <unistd.h>

#include <fstream>
#include <sstream>

#include <spdlog/spdlog.h>

#include "h2scope/common/error.hpp"
#include "h2scope/common/parallel.hpp"

namespace h2scope::coordinator {

namespace fs = std::filesystem;
using namespace std::chrono_literals;

// --- master -----------------------------------------------------------------

Master::Master(const std::vector<std::string>& targets, MasterConfig cfg) : cfg_(std::move(cfg)) {
  fs::path state_dir = cfg_.out_dir / "state";
  if (cfg_.resume && DurableScheduler::exists(state_dir)) {
    sched_ = std::make_unique<DurableScheduler>(DurableScheduler::recover(state_dir, cfg_.snapshot_every));
    spdlog::info("resumed from {} ({} log entries replayed, {}/{} hosts done)", state_dir.string(),
                 sched_->replayed(), sched_->state().completed_hosts(), sched_->state().total_hosts());
  } else {
    sched_ = std::make_unique<DurableScheduler>(DurableScheduler::create(
        state_dir, chunk_targets(targets, cfg_.chunk_size), cfg_.scheduler, cfg_.snapshot_every));
  }
  listener_ = net::listen_tcp(cfg_.listen_address, cfg_.port, &port_);
  acceptor_ = std::thread([this] { accept_loop(); });
  ticker_ = std::thread([this] { ticker(); });
}

Master::~Master() { stop(); }

void Master::stop() {
  if (stopping_.exchange(true)) return;
  ::shutdown(listener_.get(), SHUT_RDWR);
  done_cv_.notify_all();
  if (acceptor_.joinable()) acceptor_.join();
  if (ticker_.joinable()) ticker_.join();
  std::list<std::thread> conns;
  {
    std::lock_guard lk(conn_mu_);
    for (int fd : live_fds_) ::shutdown(fd, SHUT_RDWR);
    conns.swap(conns_);
  }
  for (auto& t : conns) t.join();
}

bool Master::wait_finished(std::chrono::milliseconds timeout) {
  std::unique_lock lk(mu_);
  return done_cv_.wait_for(lk, timeout, [&] { return sched_->state().finished() || stopping_.load(); }) &&
         sched_->state().finished();
}

SchedulerState Master::snapshot() const {
  std::lock_guard lk(mu_);
  return sched_->state();
}

std::vector<prober::ProbeRecord> Master::results() const {
  std::lock_guard lk(mu_);
  std::vector<prober::ProbeRecord> out;
  for (const auto& [chunk, recs] : sched_->state().results()) out.insert(out.end(), recs.begin(), recs.end());
  return out;
}

fs::path Master::write_results() const {
  fs::path path = cfg_.out_dir / "probes.ndjson";
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::IoError, "cannot write " + path.string());
  for (const auto& r : results()) write_ndjson_line(out, prober::to_json(r));
  return path;
}

std::vector<TaskAssignment> Master::issued() const {
  std::lock_guard lk(mu_);
  return issued_;
}

std::vector<std::pair<TaskAssignment, UtcTime>> Master::reissued() const {
  std::lock_guard lk(mu_);
  return reissued_;
}

void Master::accept_loop() {
  while (!stopping_.load()) {
    if (!net::wait_fd(listener_.get(), false, net::deadline_after(200ms))) continue;
    int fd = ::accept4(listener_.get(), nullptr, nullptr, SOCK_CLOEXEC | SOCK_NONBLOCK);
    if (fd < 0) continue;
    std::lock_guard lk(conn_mu_);
    if (stopping_.load()) {
      ::close(fd);
      break;
    }
    live_fds_.push_back(fd);
    conns_.emplace_back([this, fd] { serve(net::Fd(fd)); });
  }
}

void Master::ticker() {
  while (!stopping_.load()) {
    {
      std::unique_lock lk(mu_);
      done_cv_.wait_for(lk, cfg_.reassign_interval, [&] { return stopping_.load(); });
      if (stopping_.load()) return;
      UtcTime now = unique_utc_now();
      for (auto& t : sched_->reassign_stragglers(now)) {
        spdlog::info("task {} reissued as {} after {} ms", make_task_id(t.chunk, t.attempt - 1), t.task_id,
                     sched_->state().timeout().count() / 1000);
        reissued_.emplace_back(t, now);
      }
    }
  }
}

Message Master::handle(const Message& m) {
  Message reply;
  reply.worker_id = m.worker_id;
  auto bye_with = [&](const char* reason) {
    reply.kind = MessageKind::Bye;
    reply.body = {{"reason", reason}};
    return reply;
  };
  std::lock_guard lk(mu_);
  UtcTime now = unique_utc_now();
  switch (m.kind) {
    case MessageKind::Hello: {
      if (sched_->state().finished()) return bye_with(bye::kFinished);
      WorkerHealth h = worker_health_from_json(m.body.at("health"));
      h.worker_id = m.worker_id;
      h.last_seen = now;
      if (!h.eligible()) {
        bye_with(bye::kIneligible);
        reply.body["retry_after_ms"] = cfg_.idle_retry.count();
        return reply;
      }
      auto task = sched_->next_task(h, now);
      if (!task) {
        bye_with(bye::kWait);
        reply.body["retry_after_ms"] = cfg_.idle_retry.count();
        return reply;
      }
      issued_.push_back(*task);
      reply.kind = MessageKind::Task;
      reply.body = {{"task", to_json(*task)}};
      return reply;
    }
    case MessageKind::Report: {
      WorkerReport r = report_from_json(m.body.at("report"));
      try {
        auto outcome = sched_->handle_report(r, now);
        if (sched_->state().finished()) done_cv_.notify_all();
        switch (outcome) {
          case ReportOutcome::Accepted: return bye_with(bye::kAccepted);
          case ReportOutcome::Duplicate: return bye_with(bye::kDuplicate);
          case ReportOutcome::Rejected: return bye_with(bye::kRejected);
        }
      } catch (const Error& e) {
        if (e.code() != ErrorCode::UnknownTask) throw;
        return bye_with(bye::kUnknownTask);
      }
      return bye_with(bye::kRejected);
    }
    case MessageKind::Task:
    case MessageKind::Bye:
      break;
  }
  return bye_with(bye::kProtocolError);
}

void Master::serve(net::Fd fd) {
  FrameDecoder dec;
  try {
    while (!stopping_.load()) {
      auto m = recv_message(fd.get(), dec, net::deadline_after(5min));
      if (!m || m->kind == MessageKind::Bye) break;
      Message reply;
      try {
        reply = handle(*m);
      } catch (const std::exception& e) {
        spdlog::warn("bad message from {}: {}", m->worker_id, e.what());
        reply = Message{MessageKind::Bye, m->worker_id, {{"reason", bye::kProtocolError}}};
      }
      send_message(fd.get(), reply, net::deadline_after(30s));
      if (reply.kind == MessageKind::Bye && reply.body.value("reason", "") == bye::kProtocolError) break;
    }
  } catch (const Error& e) {
    spdlog::warn("closing worker connection: {}", e.what());
    try {
      send_message(fd.get(), Message{MessageKind::Bye, "", {{"reason", bye::kProtocolError}}},
                   net::deadline_after(1s));
    } catch (const std::exception&) {
    }
  } catch (const std::exception& e) {
    spdlog::debug("worker connection ended: {}", e.what());
  }
  std::lock_guard lk(conn_mu_);
  std::erase(live_fds_, fd.get());
}

// --- worker -----------------------------------------------------------------

WorkerHealth read_local_health(const std::string& worker_id) {
  WorkerHealth h;
  h.worker_id = worker_id;
  h.reachable = true;
  h.last_seen = utc_now();
  std::ifstream mem("/proc/meminfo");
  std::string key;
  std::int64_t kb = 0;
  std::string unit;
  while (mem >> key >> kb) {
    std::getline(mem, unit);
    if (key == "MemAvailable:") {
      h.free_memory_mb = kb / 1024;
      break;
    }
  }
  std::ifstream load("/proc/loadavg");
  double one = 0;
  if (load >> one) {
    long cpus = ::sysconf(_SC_NPROCESSORS_ONLN);
    h.cpu_load_pct = 100.0 * one / static_cast<double>(cpus > 0 ? cpus : 1);
  }
  return h;
}

namespace {

class MasterLink {
 public:
  explicit MasterLink(const WorkerConfig& cfg) : cfg_(cfg) {}

  // Sends |m| and waits for the reply, reconnecting once on a stale socket.
  Message exchange(const Message& m) {
    for (int attempt = 0;; ++attempt) {
      try {
        if (!fd_.valid()) {
          fd_ = net::connect_tcp(net::Resolver{}, cfg_.master_host, cfg_.master_port, net::deadline_after(5s));
          dec_ = FrameDecoder{};
        }
        send_message(fd_.get(), m, net::deadline_after(cfg_.io_timeout));
        auto reply = recv_message(fd_.get(), dec_, net::deadline_after(cfg_.io_timeout));
        if (!reply) throw net::NetError(net::NetErrc::Closed, "master closed the connection");
        return *reply;
      } catch (const net::NetError&) {
        fd_.reset();
        if (attempt >= 1) throw;
      }
    }
  }

  void close() {
    if (!fd_.valid()) return;
    try {
      send_message(fd_.get(), Message{MessageKind::Bye, cfg_.worker_id, {{"reason", "done"}}}, net::deadline_after(1s));
    } catch (const std::exception&) {
    }
    fd_.reset();
  }

 private:
  const WorkerConfig& cfg_;
  net::Fd fd_;
  FrameDecoder dec_;
};

void sleep_unless_stopped(std::chrono::milliseconds d, const std::atomic<bool>& stop) {
  auto until = std::chrono::steady_clock::now() + d;
  while (!stop.load() && std::chrono::steady_clock::now() < until) std::this_thread::sleep_for(10ms);
}

}  // namespace

WorkerStats run_worker(const WorkerConfig& cfg, const std::atomic<bool>& stop) {
  WorkerStats stats;
  MasterLink link(cfg);
  auto health = cfg.health ? cfg.health : [&] { return read_local_health(cfg.worker_id); };
  auto probe = cfg.probe_fn ? cfg.probe_fn
                            : [&](const std::string& host) { return prober::probe_host(host, 443, cfg.probe); };
  int failures = 0;
  while (!stop.load()) {
    Message reply;
    try {
      WorkerHealth h = health();
      h.worker_id = cfg.worker_id;
      reply = link.exchange(Message{MessageKind::Hello, cfg.worker_id, {{"health", to_json(h)}}});
      failures = 0;
    } catch (const std::exception& e) {
      if (++failures >= 5) {
        spdlog::warn("worker {}: master unreachable: {}", cfg.worker_id, e.what());
        stats.last_bye = "unreachable";
        return stats;
      }
      sleep_unless_stopped(500ms, stop);
      continue;
    }

    if (reply.kind == MessageKind::Bye) {
      stats.last_bye = reply.body.value("reason", "");
      if (stats.last_bye == bye::kFinished || stats.last_bye == bye::kProtocolError) break;
      sleep_unless_stopped(std::chrono::milliseconds(reply.body.value("retry_after_ms", 1000)), stop);
      continue;
    }
    if (reply.kind != MessageKind::Task) break;

    TaskAssignment task = task_from_json(reply.body.at("task"));
    ++stats.tasks;
    if (cfg.fault == WorkerFault::Silent) {
      spdlog::debug("worker {} holds {} and goes quiet", cfg.worker_id, task.task_id);
      return stats;
    }
    WorkerReport report;
    report.task_id = task.task_id;
    report.worker_id = cfg.worker_id;
    report.records.resize(task.hosts.size());
    bounded_for_each(task.hosts.size(), cfg.parallel, [&](std::size_t i) {
      try {
        report.records[i] = probe(task.hosts[i]);
      } catch (const std::exception& e) {
        // Invalid names still need a record so coverage stays exact.
        auto& r = report.records[i];
        r.host = task.hosts[i];
        r.timestamp = unique_utc_now();
        r.error = prober::ProbeError::DnsFailure;
        r.error_detail = e.what();
      }
    });
    stats.hosts_probed += task.hosts.size();
    report.completed_at = unique_utc_now();
    int copies = cfg.fault == WorkerFault::DuplicateReports ? 2 : 1;
    for (int c = 0; c < copies; ++c) {
      try {
        auto ack = link.exchange(Message{MessageKind::Report, cfg.worker_id, {{"report", to_json(report)}}});
        ++stats.reports_sent;
        stats.last_bye = ack.body.value("reason", "");
      } catch (const std::exception& e) {
        spdlog::warn("worker {}: report for {} not delivered: {}", cfg.worker_id, task.task_id, e.what());
      }
    }
  }
  link.close();
  return stats;
}

}  // namespace h2scope::coordinator
