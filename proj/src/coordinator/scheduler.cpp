#include "h2scope/coordinator/scheduler.hpp"

#include <algorithm>
#include <numeric>

#include <fmt/format.h>

#include "h2scope/common/error.hpp"

namespace h2scope::coordinator {

std::vector<TaskSkeleton> chunk_targets(const std::vector<std::string>& hosts, std::size_t chunk_size) {
  if (hosts.empty()) throw Error(ErrorCode::EmptyInput, "no targets to chunk");
  if (chunk_size == 0 || chunk_size > kDefaultChunkSize)
    throw Error(ErrorCode::InvalidArgument, fmt::format("chunk size {} outside 1..{}", chunk_size, kDefaultChunkSize));
  std::vector<TaskSkeleton> out;
  out.reserve((hosts.size() + chunk_size - 1) / chunk_size);
  for (std::size_t i = 0; i < hosts.size(); i += chunk_size) {
    auto end = std::min(hosts.size(), i + chunk_size);
    out.push_back({out.size(), std::vector<std::string>(hosts.begin() + static_cast<std::ptrdiff_t>(i),
                                                        hosts.begin() + static_cast<std::ptrdiff_t>(end))});
  }
  return out;
}

bool WorkerHealth::eligible() const {
  return free_memory_mb >= kMinFreeMemoryMb && cpu_load_pct < kMaxCpuLoadPct && reachable;
}

std::string make_task_id(std::size_t chunk, int attempt) { return fmt::format("{}.{}", chunk, attempt); }

std::string_view to_string(ReportOutcome o) noexcept {
  switch (o) {
    case ReportOutcome::Accepted: return "accepted";
    case ReportOutcome::Duplicate: return "duplicate";
    case ReportOutcome::Rejected: return "rejected";
  }
  return "rejected";
}

SchedulerState::SchedulerState(std::vector<TaskSkeleton> chunks, SchedulerConfig cfg) : cfg_(cfg) {
  for (auto& c : chunks) {
    if (c.hosts.empty()) throw Error(ErrorCode::InvalidArgument, "empty chunk");
    std::size_t id = c.chunk;
    if (!chunks_.emplace(id, std::move(c)).second)
      throw Error(ErrorCode::InvalidArgument, fmt::format("duplicate chunk id {}", id));
    pending_.push_back(id);
  }
}

Micros SchedulerState::timeout() const {
  if (durations_.empty()) return cfg_.bootstrap_timeout;
  Micros mean(duration_sum_us_ / static_cast<std::int64_t>(durations_.size()));
  return std::max(mean, cfg_.timeout_floor);
}

std::optional<TaskAssignment> SchedulerState::next_task(const WorkerHealth& worker, UtcTime now) {
  if (!worker.eligible() || pending_.empty()) return std::nullopt;
  auto pick = pending_.begin();
  for (auto it = pending_.begin(); it != pending_.end(); ++it) {
    auto q = queued_.find(*it);
    if (q == queued_.end()) {
      pick = it;
      break;
    }
    // Previous holder of this chunk is the worker that went quiet on it.
    int prev = attempts_.at(q->second).attempt - 1;
    auto old = attempts_.find(make_task_id(*it, prev));
    if (old == attempts_.end() || old->second.worker_id != worker.worker_id) {
      pick = it;
      break;
    }
  }
  std::size_t chunk = *pick;
  pending_.erase(pick);

  std::string id;
  if (auto q = queued_.find(chunk); q != queued_.end()) {
    id = q->second;
    queued_.erase(q);
  } else {
    int attempt = ++attempt_count_[chunk];
    id = make_task_id(chunk, attempt);
    attempts_[id] = TaskAssignment{id, chunk, attempt, chunks_.at(chunk).hosts, {}, {}};
  }
  auto& a = attempts_.at(id);
  a.issued_at = now;
  a.worker_id = worker.worker_id;
  in_flight_[chunk] = id;
  return a;
}

ReportOutcome SchedulerState::handle_report(const WorkerReport& report, UtcTime now) {
  auto it = attempts_.find(report.task_id);
  if (it == attempts_.end() || it->second.issued_at == UtcTime{})
    throw Error(ErrorCode::UnknownTask, "no task " + report.task_id);
  const TaskAssignment& a = it->second;
  if (completed_.count(a.chunk)) {
    ++duplicates_;
    return ReportOutcome::Duplicate;
  }
  // Records must cover the task's hosts exactly once each.
  std::vector<std::string> want = a.hosts;
  std::vector<std::string> got;
  got.reserve(report.records.size());
  for (const auto& r : report.records) got.push_back(r.host);
  std::sort(want.begin(), want.end());
  std::sort(got.begin(), got.end());
  if (want != got) return ReportOutcome::Rejected;

  const std::size_t chunk = a.chunk;
  in_flight_.erase(chunk);
  if (auto q = queued_.find(chunk); q != queued_.end()) {
    queued_.erase(q);
    pending_.erase(std::remove(pending_.begin(), pending_.end(), chunk), pending_.end());
  }
  completed_.insert(chunk);
  Micros d = std::max(Micros(0), std::chrono::duration_cast<Micros>(now - a.issued_at));
  durations_.push_back(d);
  duration_sum_us_ += d.count();
  results_[chunk] = report.records;
  return ReportOutcome::Accepted;
}

std::vector<TaskAssignment> SchedulerState::reassign_stragglers(UtcTime now) {
  const Micros t = timeout();
  std::vector<TaskAssignment> out;
  std::vector<std::size_t> stale;
  for (const auto& [chunk, id] : in_flight_) {
    if (now - attempts_.at(id).issued_at > t) stale.push_back(chunk);
  }
  // Oldest chunk first at the head of the queue.
  for (auto it = stale.rbegin(); it != stale.rend(); ++it) {
    std::size_t chunk = *it;
    in_flight_.erase(chunk);
    int attempt = ++attempt_count_[chunk];
    std::string id = make_task_id(chunk, attempt);
    attempts_[id] = TaskAssignment{id, chunk, attempt, chunks_.at(chunk).hosts, {}, {}};
    queued_[chunk] = id;
    pending_.push_front(chunk);
    ++reissues_;
    out.push_back(attempts_[id]);
  }
  std::reverse(out.begin(), out.end());
  return out;
}

std::optional<TaskAssignment> SchedulerState::live_attempt(std::size_t chunk) const {
  auto it = in_flight_.find(chunk);
  if (it == in_flight_.end()) return std::nullopt;
  return attempts_.at(it->second);
}

namespace {

std::size_t hosts_in(const std::map<std::size_t, TaskSkeleton>& chunks, std::size_t id) {
  return chunks.at(id).hosts.size();
}

}  // namespace

std::size_t SchedulerState::pending_hosts() const {
  std::size_t n = 0;
  for (auto c : pending_) n += hosts_in(chunks_, c);
  return n;
}

std::size_t SchedulerState::in_flight_hosts() const {
  std::size_t n = 0;
  for (const auto& [c, id] : in_flight_) n += hosts_in(chunks_, c);
  return n;
}

std::size_t SchedulerState::completed_hosts() const {
  std::size_t n = 0;
  for (auto c : completed_) n += hosts_in(chunks_, c);
  return n;
}

std::size_t SchedulerState::total_hosts() const {
  std::size_t n = 0;
  for (const auto& [c, s] : chunks_) n += s.hosts.size();
  return n;
}

// --- json -------------------------------------------------------------------

json to_json(const WorkerHealth& h) {
  return {{"worker_id", h.worker_id},
          {"free_memory_mb", h.free_memory_mb},
          {"cpu_load_pct", h.cpu_load_pct},
          {"reachable", h.reachable},
          {"last_seen_us", to_us(h.last_seen)}};
}

WorkerHealth worker_health_from_json(const json& j) {
  WorkerHealth h;
  h.worker_id = j.at("worker_id").get<std::string>();
  h.free_memory_mb = j.at("free_memory_mb").get<std::int64_t>();
  h.cpu_load_pct = j.at("cpu_load_pct").get<double>();
  h.reachable = j.at("reachable").get<bool>();
  h.last_seen = utc_from_us(j.value("last_seen_us", std::int64_t{0}));
  return h;
}

json to_json(const TaskAssignment& t) {
  return {{"task_id", t.task_id},       {"chunk", t.chunk},
          {"attempt", t.attempt},       {"hosts", t.hosts},
          {"issued_at_us", to_us(t.issued_at)}, {"worker_id", t.worker_id}};
}

TaskAssignment task_from_json(const json& j) {
  TaskAssignment t;
  t.task_id = j.at("task_id").get<std::string>();
  t.chunk = j.at("chunk").get<std::size_t>();
  t.attempt = j.at("attempt").get<int>();
  t.hosts = j.at("hosts").get<std::vector<std::string>>();
  t.issued_at = utc_from_us(j.at("issued_at_us").get<std::int64_t>());
  t.worker_id = j.at("worker_id").get<std::string>();
  return t;
}

json to_json(const WorkerReport& r) {
  json records = json::array();
  for (const auto& rec : r.records) records.push_back(prober::to_json(rec));
  return {{"task_id", r.task_id},
          {"worker_id", r.worker_id},
          {"records", records},
          {"completed_at_us", to_us(r.completed_at)}};
}

WorkerReport report_from_json(const json& j) {
  WorkerReport r;
  r.task_id = j.at("task_id").get<std::string>();
  r.worker_id = j.at("worker_id").get<std::string>();
  for (const auto& rec : j.at("records")) r.records.push_back(prober::probe_record_from_json(rec));
  r.completed_at = utc_from_us(j.at("completed_at_us").get<std::int64_t>());
  return r;
}

json SchedulerState::to_json() const {
  json chunks = json::array();
  for (const auto& [id, c] : chunks_) chunks.push_back({{"chunk", id}, {"hosts", c.hosts}});
  json attempts = json::array();
  for (const auto& [id, a] : attempts_) attempts.push_back(coordinator::to_json(a));
  json in_flight = json::object();
  for (const auto& [c, id] : in_flight_) in_flight[std::to_string(c)] = id;
  json queued = json::object();
  for (const auto& [c, id] : queued_) queued[std::to_string(c)] = id;
  json counts = json::object();
  for (const auto& [c, n] : attempt_count_) counts[std::to_string(c)] = n;
  json durations = json::array();
  for (auto d : durations_) durations.push_back(d.count());
  json results = json::object();
  for (const auto& [c, recs] : results_) {
    json arr = json::array();
    for (const auto& r : recs) arr.push_back(prober::to_json(r));
    results[std::to_string(c)] = arr;
  }
  return {{"schema_version", kSchemaVersion},
          {"config",
           {{"bootstrap_timeout_us", cfg_.bootstrap_timeout.count()},
            {"timeout_floor_us", cfg_.timeout_floor.count()}}},
          {"chunks", chunks},
          {"pending", std::vector<std::size_t>(pending_.begin(), pending_.end())},
          {"in_flight", in_flight},
          {"completed", std::vector<std::size_t>(completed_.begin(), completed_.end())},
          {"attempt_count", counts},
          {"attempts", attempts},
          {"queued", queued},
          {"durations_us", durations},
          {"results", results},
          {"reissues", reissues_},
          {"duplicates", duplicates_}};
}

SchedulerState SchedulerState::from_json(const json& j) {
  check_schema(j);
  try {
    SchedulerState s;
    s.cfg_.bootstrap_timeout = Micros(j.at("config").at("bootstrap_timeout_us").get<std::int64_t>());
    s.cfg_.timeout_floor = Micros(j.at("config").at("timeout_floor_us").get<std::int64_t>());
    for (const auto& c : j.at("chunks")) {
      auto id = c.at("chunk").get<std::size_t>();
      s.chunks_[id] = TaskSkeleton{id, c.at("hosts").get<std::vector<std::string>>()};
    }
    for (auto c : j.at("pending")) s.pending_.push_back(c.get<std::size_t>());
    for (const auto& [k, v] : j.at("in_flight").items()) s.in_flight_[std::stoul(k)] = v.get<std::string>();
    for (auto c : j.at("completed")) s.completed_.insert(c.get<std::size_t>());
    for (const auto& [k, v] : j.at("attempt_count").items()) s.attempt_count_[std::stoul(k)] = v.get<int>();
    for (const auto& a : j.at("attempts")) {
      auto t = task_from_json(a);
      s.attempts_[t.task_id] = t;
    }
    for (const auto& [k, v] : j.at("queued").items()) s.queued_[std::stoul(k)] = v.get<std::string>();
    for (auto d : j.at("durations_us")) {
      s.durations_.emplace_back(d.get<std::int64_t>());
      s.duration_sum_us_ += d.get<std::int64_t>();
    }
    for (const auto& [k, v] : j.at("results").items()) {
      auto& recs = s.results_[std::stoul(k)];
      for (const auto& r : v) recs.push_back(prober::probe_record_from_json(r));
    }
    s.reissues_ = j.at("reissues").get<std::size_t>();
    s.duplicates_ = j.at("duplicates").get<std::size_t>();
    return s;
  } catch (const json::exception& e) {
    throw Error(ErrorCode::ParseError, std::string("scheduler snapshot: ") + e.what());
  }
}

}  // namespace h2scope::coordinator
