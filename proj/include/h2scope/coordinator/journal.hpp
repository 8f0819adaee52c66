#pragma once

#include <cstdio>
#include <filesystem>
#include <optional>
#include <vector>

#include "h2scope/coordinator/scheduler.hpp"

namespace h2scope::coordinator {

// SchedulerState backed by an append-only operation log and a periodically
// compacted snapshot. Each applied mutation is one fsync'd log line, written
// before the caller sees the result. Recovery loads the snapshot and
// re-applies the log entries newer than it.
//
// Layout of |dir|: snapshot.json, ops.ndjson.
class DurableScheduler {
 public:
  // Starts fresh, replacing any earlier state in |dir|.
  static DurableScheduler create(const std::filesystem::path& dir, std::vector<TaskSkeleton> chunks,
                                 SchedulerConfig cfg = {}, std::size_t snapshot_every = 256);
  // Throws Error(IoError) when |dir| holds no snapshot.
  static DurableScheduler recover(const std::filesystem::path& dir, std::size_t snapshot_every = 256);
  static bool exists(const std::filesystem::path& dir);

  DurableScheduler(DurableScheduler&& o) noexcept;
  DurableScheduler& operator=(DurableScheduler&&) = delete;
  ~DurableScheduler();

  std::optional<TaskAssignment> next_task(const WorkerHealth& worker, UtcTime now);
  ReportOutcome handle_report(const WorkerReport& report, UtcTime now);
  std::vector<TaskAssignment> reassign_stragglers(UtcTime now);

  const SchedulerState& state() const { return state_; }
  std::uint64_t sequence() const { return seq_; }
  std::size_t replayed() const { return replayed_; }
  void compact();

 private:
  DurableScheduler(std::filesystem::path dir, SchedulerState state, std::size_t snapshot_every);
  void log(json op);
  void open_log();

  std::filesystem::path dir_;
  SchedulerState state_;
  std::size_t snapshot_every_;
  std::uint64_t seq_ = 0;
  std::size_t since_snapshot_ = 0;
  std::size_t replayed_ = 0;
  std::FILE* log_ = nullptr;
};

}  // namespace h2scope::coordinator
