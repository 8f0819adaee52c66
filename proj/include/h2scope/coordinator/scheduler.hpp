#pragma once

#include <chrono>
#include <cstdint>
#include <deque>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "h2scope/common/json_io.hpp"
#include "h2scope/common/time.hpp"
#include "h2scope/prober/prober.hpp"

namespace h2scope::coordinator {

inline constexpr std::size_t kDefaultChunkSize = 100;

struct TaskSkeleton {
  std::size_t chunk = 0;
  std::vector<std::string> hosts;
};

// Order-preserving split. Throws Error(EmptyInput) for no hosts and
// Error(InvalidArgument) for a chunk size outside 1..100.
std::vector<TaskSkeleton> chunk_targets(const std::vector<std::string>& hosts,
                                        std::size_t chunk_size = kDefaultChunkSize);

struct WorkerHealth {
  std::string worker_id;
  std::int64_t free_memory_mb = 0;
  double cpu_load_pct = 0;
  bool reachable = true;
  UtcTime last_seen{};

  static constexpr std::int64_t kMinFreeMemoryMb = 500;
  static constexpr double kMaxCpuLoadPct = 30.0;
  bool eligible() const;
};

struct TaskAssignment {
  // "<chunk>.<attempt>"
  std::string task_id;
  std::size_t chunk = 0;
  int attempt = 0;
  std::vector<std::string> hosts;
  UtcTime issued_at{};
  std::string worker_id;
};

std::string make_task_id(std::size_t chunk, int attempt);

struct WorkerReport {
  std::string task_id;
  std::string worker_id;
  std::vector<prober::ProbeRecord> records;
  UtcTime completed_at{};
};

struct SchedulerConfig {
  Micros bootstrap_timeout = std::chrono::seconds(300);
  Micros timeout_floor = std::chrono::seconds(30);
};

enum class ReportOutcome { Accepted, Duplicate, Rejected };
std::string_view to_string(ReportOutcome o) noexcept;

// Single-threaded state machine; callers serialize access. Every mutation
// takes the current instant explicitly so a replayed log reproduces it.
class SchedulerState {
 public:
  SchedulerState() = default;
  SchedulerState(std::vector<TaskSkeleton> chunks, SchedulerConfig cfg = {});

  // Nothing for an ineligible worker or an empty pending queue. A reissued
  // chunk is not handed back to the worker holding its superseded attempt
  // while anything else is pending.
  std::optional<TaskAssignment> next_task(const WorkerHealth& worker, UtcTime now);

  // Throws Error(UnknownTask) for ids that were never issued.
  ReportOutcome handle_report(const WorkerReport& report, UtcTime now);

  // Supersedes every live attempt older than timeout() and queues a new
  // attempt at the front of pending. The returned assignments carry no
  // worker until next_task hands them out.
  std::vector<TaskAssignment> reassign_stragglers(UtcTime now);

  Micros timeout() const;
  bool finished() const { return pending_.empty() && in_flight_.empty(); }

  std::size_t pending_hosts() const;
  std::size_t in_flight_hosts() const;
  std::size_t completed_hosts() const;
  std::size_t total_hosts() const;
  std::size_t pending_tasks() const { return pending_.size(); }
  std::size_t in_flight_tasks() const { return in_flight_.size(); }
  std::size_t completed_tasks() const { return completed_.size(); }
  std::size_t reissues() const { return reissues_; }
  std::size_t duplicates() const { return duplicates_; }
  const std::vector<Micros>& completion_durations() const { return durations_; }

  // Accepted records per chunk, in chunk order.
  const std::map<std::size_t, std::vector<prober::ProbeRecord>>& results() const { return results_; }
  // The live attempt for a chunk, if any.
  std::optional<TaskAssignment> live_attempt(std::size_t chunk) const;
  // Every attempt ever issued or queued, keyed by task id.
  const std::map<std::string, TaskAssignment>& attempts() const { return attempts_; }

  json to_json() const;
  static SchedulerState from_json(const json& j);

 private:
  std::map<std::size_t, TaskSkeleton> chunks_;
  SchedulerConfig cfg_;
  std::deque<std::size_t> pending_;                 // chunk ids
  std::map<std::size_t, std::string> in_flight_;    // chunk -> live task id
  std::set<std::size_t> completed_;
  std::map<std::size_t, int> attempt_count_;
  std::map<std::string, TaskAssignment> attempts_;  // every attempt, live or superseded
  std::map<std::size_t, std::string> queued_;       // chunk -> task id waiting in pending
  std::vector<Micros> durations_;
  std::int64_t duration_sum_us_ = 0;
  std::map<std::size_t, std::vector<prober::ProbeRecord>> results_;
  std::size_t reissues_ = 0;
  std::size_t duplicates_ = 0;
};

json to_json(const WorkerHealth& h);
WorkerHealth worker_health_from_json(const json& j);
json to_json(const TaskAssignment& t);
TaskAssignment task_from_json(const json& j);
json to_json(const WorkerReport& r);
WorkerReport report_from_json(const json& j);

}  // namespace h2scope::coordinator
