#pragma once

#include <atomic>
#include <chrono>
#include <condition_variable>
#include <filesystem>
#include <functional>
#include <list>
#include <memory>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

#include "h2scope/coordinator/journal.hpp"
#include "h2scope/coordinator/scheduler.hpp"
#include "h2scope/coordinator/wire.hpp"
#include "h2scope/net/socket.hpp"
#include "h2scope/prober/prober.hpp"

namespace h2scope::coordinator {

struct MasterConfig {
  std::string listen_address = "127.0.0.1";
  std::uint16_t port = 7070;  // 0 picks an ephemeral port
  std::filesystem::path out_dir = "results";
  SchedulerConfig scheduler;
  std::size_t chunk_size = kDefaultChunkSize;
  std::chrono::milliseconds reassign_interval{1000};
  // Suggested wait for workers that poll while nothing is pending.
  std::chrono::milliseconds idle_retry{1000};
  std::size_t snapshot_every = 256;
  // Continue from out_dir/state when a snapshot is present.
  bool resume = true;
};

// Bye reasons sent by the master.
namespace bye {
inline constexpr const char* kIneligible = "ineligible";
inline constexpr const char* kWait = "wait";
inline constexpr const char* kFinished = "finished";
inline constexpr const char* kAccepted = "accepted";
inline constexpr const char* kDuplicate = "duplicate";
inline constexpr const char* kRejected = "rejected";
inline constexpr const char* kUnknownTask = "unknown_task";
inline constexpr const char* kProtocolError = "protocol_error";
}  // namespace bye

class Master {
 public:
  Master(const std::vector<std::string>& targets, MasterConfig cfg);
  ~Master();
  Master(const Master&) = delete;
  Master& operator=(const Master&) = delete;

  std::uint16_t port() const noexcept { return port_; }
  // True once every chunk has an accepted report.
  bool wait_finished(std::chrono::milliseconds timeout);
  void stop();

  SchedulerState snapshot() const;
  // One record per target host, in chunk order.
  std::vector<prober::ProbeRecord> results() const;
  // Writes out_dir/probes.ndjson.
  std::filesystem::path write_results() const;

  // Every (task, worker) the master has handed out, in order.
  std::vector<TaskAssignment> issued() const;
  // Reissues with the instant they were made.
  std::vector<std::pair<TaskAssignment, UtcTime>> reissued() const;

 private:
  void accept_loop();
  void serve(net::Fd fd);
  void ticker();
  Message handle(const Message& m);

  MasterConfig cfg_;
  mutable std::mutex mu_;
  std::condition_variable done_cv_;
  std::unique_ptr<DurableScheduler> sched_;
  std::vector<TaskAssignment> issued_;
  std::vector<std::pair<TaskAssignment, UtcTime>> reissued_;
  net::Fd listener_;
  std::uint16_t port_ = 0;
  std::atomic<bool> stopping_{false};
  std::thread acceptor_;
  std::thread ticker_;
  std::mutex conn_mu_;
  std::list<std::thread> conns_;
  std::vector<int> live_fds_;
};

enum class WorkerFault {
  None,
  // Takes one task and never reports or polls again.
  Silent,
  // Sends every report twice.
  DuplicateReports,
};

struct WorkerConfig {
  std::string worker_id;
  std::string master_host = "127.0.0.1";
  std::uint16_t master_port = 7070;
  std::size_t parallel = 20;
  // Defaults: read_local_health() and prober::probe_host(host, 443, probe).
  std::function<WorkerHealth()> health;
  std::function<prober::ProbeRecord(const std::string&)> probe_fn;
  prober::ProbeConfig probe;
  std::chrono::milliseconds io_timeout{30'000};
  WorkerFault fault = WorkerFault::None;
};

struct WorkerStats {
  std::size_t tasks = 0;
  std::size_t reports_sent = 0;
  std::size_t hosts_probed = 0;
  std::string last_bye;
};

// Free memory from /proc/meminfo and the one-minute load average scaled by
// the CPU count.
WorkerHealth read_local_health(const std::string& worker_id);

// Polls the master until it says the run is finished, |stop| is set, or the
// master stops answering. Never throws for network failures.
WorkerStats run_worker(const WorkerConfig& cfg, const std::atomic<bool>& stop);

}  // namespace h2scope::coordinator
